// Copyright 2026 The costate-rl Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// costate-rl {train|eval|ablate|oracle|plot} [flags]

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "costate/experiment.hpp"

namespace {

using namespace costate;

struct CommonFlags {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> env;
  std::optional<std::string> arch;
  std::optional<double> mask_prob;
  std::optional<double> costate_coef;
};

void add_config_flags(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "JSON config file");
  app->add_option("--override", f.overrides, "KEY=VALUE, applied after every other source")->allow_extra_args(false);
  app->add_option("--seed", f.seed, "Training seed");
  app->add_option("--out", f.out, "Output directory");
  app->add_option("--env", f.env, "double_integrator | pendulum_swingup | cartpole_swingup");
  app->add_option("--arch", f.arch, "gru | ctrnn");
  app->add_option("--mask-prob", f.mask_prob, "Training mask probability");
  app->add_option("--costate-coef", f.costate_coef, "Co-state loss coefficient");
}

ExperimentConfig build_config(const CommonFlags& f) {
  ExperimentConfig c = f.config.empty() ? ExperimentConfig{} : load_config(f.config);
  if (f.env) apply_override(c, "env=" + *f.env);
  if (f.arch) apply_override(c, "arch=" + *f.arch);
  if (f.seed) c.train.seed = *f.seed;
  if (f.out) c.out_dir = *f.out;
  if (f.mask_prob) c.train.mask_p_train = *f.mask_prob;
  if (f.costate_coef) c.train.c_costate = *f.costate_coef;
  for (const std::string& o : f.overrides) apply_override(c, o);
  c.validate();
  return c;
}

void print_table(const CsvTable& t) { std::cout << csv_to_string(t); }

std::string one_line(std::string s) {
  for (char& ch : s) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"costate-rl: recurrent PPO with co-state alignment and optimal-control oracles"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  CLI::App* train = app.add_subcommand("train", "Train one run into <out>/<run-id>/");
  add_config_flags(train, train_flags);
  bool quiet = false;
  train->add_flag("--quiet", quiet, "Suppress per-iteration progress");

  CLI::App* eval = app.add_subcommand("eval", "Greedy evaluation of a checkpoint or run directory");
  std::string eval_path;
  std::optional<std::string> eval_env, eval_out;
  std::vector<double> eval_p;
  int eval_episodes = 100;
  std::uint64_t eval_seed = 0;
  bool eval_random = false;
  eval->add_option("checkpoint", eval_path, "Checkpoint JSON or run directory");
  eval->add_option("--env", eval_env, "Environment (defaults to the checkpoint's)");
  eval->add_option("--mask-prob", eval_p, "Evaluation mask probability (repeatable)");
  eval->add_option("--episodes", eval_episodes, "Episodes per mask probability");
  eval->add_option("--seed", eval_seed, "Evaluation seed");
  eval->add_flag("--random", eval_random, "Uniform random policy baseline");
  eval->add_option("--out", eval_out, "Directory for eval_episodes.csv and eval_summary.csv");

  CommonFlags ablate_flags;
  CLI::App* ablate = app.add_subcommand("ablate", "Seed x co-state coefficient grid");
  add_config_flags(ablate, ablate_flags);
  std::optional<int> ablate_episodes;
  ablate->add_option("--episodes", ablate_episodes, "Evaluation episodes per run");

  CLI::App* oracle = app.add_subcommand("oracle", "Optimal-control oracle cross-checks");
  oracle->require_subcommand(1);
  OracleOptions oo;
  std::optional<std::string> oracle_csv;
  auto add_oracle_common = [&](CLI::App* sub) {
    sub->add_option("--csv", oracle_csv, "Also write the table to this CSV file");
    sub->add_option("--seed", oo.seed, "Random seed");
  };
  auto add_lqr = [&](CLI::App* sub) {
    sub->add_option("--A", oo.A, "Matrix, rows separated by ';', entries by ','");
    sub->add_option("--B", oo.B, "Input matrix");
    sub->add_option("--Q", oo.Q, "State weight");
    sub->add_option("--R", oo.R, "Control weight");
  };
  CLI::App* care = oracle->add_subcommand("care", "Continuous algebraic Riccati equation");
  add_lqr(care);
  add_oracle_common(care);
  CLI::App* shoot = oracle->add_subcommand("shoot", "Single shooting TPBVP vs Riccati ODE");
  add_lqr(shoot);
  shoot->add_option("--Pf", oo.P_f, "Terminal weight (default identity)");
  shoot->add_option("--x0", oo.x0, "Initial state, comma separated");
  shoot->add_option("--tf", oo.t_f, "Horizon");
  shoot->add_option("--dt", oo.dt, "Step");
  add_oracle_common(shoot);
  CLI::App* readout = oracle->add_subcommand("readout-check", "Readout laws vs Hamiltonian grid argmin");
  readout->add_option("--draws", oo.draws, "Random (x, lambda) draws per law");
  readout->add_option("--grid", oo.grid_n, "Grid points per control dimension");
  readout->add_option("--ensemble", oo.ensemble, "Ensemble size for the mean Hamiltonian");
  add_oracle_common(readout);
  CLI::App* align = oracle->add_subcommand("costate-align", "Critic gradient vs analytic LQR co-state");
  align->add_option("checkpoint", oo.checkpoint, "Checkpoint JSON or run directory")->required();
  align->add_option("--states", oo.states, "On-policy states to compare");
  align->add_option("--episodes", oo.episodes, "Rollout episodes");
  add_oracle_common(align);

  CLI::App* plot = app.add_subcommand("plot", "SVG learning curves");
  std::vector<std::string> plot_inputs;
  std::string plot_out = "curves.svg";
  int plot_window = 30;
  plot->add_option("inputs", plot_inputs, "metrics.csv files or run directories")->required();
  plot->add_option("--out", plot_out, "Output SVG");
  plot->add_option("--window", plot_window, "Trailing moving-average length");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "ERROR: " << one_line(e.what()) << "\n";
    return 2;
  }

  try {
    if (*train) {
      const ExperimentConfig cfg = build_config(train_flags);
      const TrainRunResult run = cmd_train(cfg, [&](const MetricsRow& r) {
        if (quiet) return;
        std::cerr << "iter " << r.iteration << " steps " << r.env_steps << " return " << format_real(r.mean_return)
                  << " costate " << format_real(r.loss_costate) << "\n";
      });
      std::cout << run.run_dir << "\n";
    } else if (*eval) {
      EvalRequest req;
      if (eval_env) req.env = *eval_env;
      req.p_eval = eval_p.empty() ? std::vector<double>{0.0} : eval_p;
      req.episodes = eval_episodes;
      req.seed = eval_seed;
      req.random_policy = eval_random;
      const EvalReport rep = cmd_eval(eval_path, req);
      print_table(eval_summary_table(rep));
      if (eval_out) {
        std::filesystem::create_directories(*eval_out);
        write_csv(eval_episodes_table(rep), (std::filesystem::path(*eval_out) / "eval_episodes.csv").string());
        write_csv(eval_summary_table(rep), (std::filesystem::path(*eval_out) / "eval_summary.csv").string());
      }
    } else if (*ablate) {
      ExperimentConfig cfg = build_config(ablate_flags);
      if (ablate_episodes) cfg.eval_episodes = *ablate_episodes;
      std::vector<double> c3 = cfg.ablation_c3;
      if (ablate_flags.costate_coef) c3 = {*ablate_flags.costate_coef};
      std::vector<std::uint64_t> seeds;
      const std::uint64_t base = ablate_flags.seed ? *ablate_flags.seed : cfg.seed_base;
      for (int i = 0; i < cfg.n_seeds; ++i) seeds.push_back(base + static_cast<std::uint64_t>(i));
      const auto rows = cmd_ablate(cfg, c3, seeds, worker_count());
      const CsvTable table = ablation_table(rows);
      std::filesystem::create_directories(cfg.out_dir);
      const std::string path = (std::filesystem::path(cfg.out_dir) / "ablation.csv").string();
      write_csv(table, path);
      print_table(table);
      std::cerr << "wrote " << path << "\n";
    } else if (*oracle) {
      CsvTable table;
      if (*care) table = oracle_care(oo);
      if (*shoot) table = oracle_shoot(oo);
      if (*readout) table = oracle_readout_check(oo);
      if (*align) table = oracle_costate_align(oo);
      print_table(table);
      if (oracle_csv) write_csv(table, *oracle_csv);
    } else if (*plot) {
      cmd_plot(plot_inputs, plot_out, plot_window);
      std::cout << plot_out << "\n";
    }
  } catch (const RiccatiError& e) {
    std::cerr << "ERROR: " << one_line(e.what()) << " (residual " << format_real(e.residual()) << ")\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "ERROR: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}
