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

// Experiment driver: configs, run directories, metrics CSV, evaluation,
// ablation grids, oracle cross-checks and SVG learning curves.
//
// Run directory layout:
//
//   <out>/<run-id>/config.json
//                  metrics.csv
//                  manifest.json
//                  checkpoints/iter_000010.json ... final.json

#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "costate/checkpoint.hpp"
#include "costate/pmp.hpp"
#include "costate/trainer.hpp"

namespace costate {

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : std::invalid_argument(what), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct ExperimentConfig {
  TrainConfig train;
  int n_seeds = 3;
  std::uint64_t seed_base = 0;
  int eval_episodes = 100;
  std::vector<double> p_eval{0.5, 0.75};
  std::vector<double> ablation_c3{0.0, 0.01, 0.05, 0.1};
  std::string out_dir = "runs";
  int checkpoint_every = 50;  // iterations; 0 keeps only the final checkpoint
  int plot_window = 30;

  void validate() const;
};

/// Accepted flat keys, in canonical order.
const std::vector<std::string>& config_keys();

/// Unknown keys and ill-typed values raise ConfigError naming the key.
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_json(const ExperimentConfig& config);
/// "key=value"; lists are comma separated. A leading section such as
/// "train." or "eval." is accepted and ignored.
void apply_override(ExperimentConfig& config, std::string_view assignment);

/// 8 hex digits of a 64-bit FNV-1a hash of the canonical config JSON.
std::string config_hash(const ExperimentConfig& config);
/// Same hash with the seed fields neutralized, shared by all seeds of a grid cell.
std::string config_family_hash(const ExperimentConfig& config);
/// "s<seed>-<hash>"
std::string run_id(const ExperimentConfig& config);

std::string version_string();

/// Bounded by COSTATE_RL_THREADS (default 1, i.e. single-worker mode).
int worker_count();
/// Runs fn(0..n-1) on up to `workers` threads; exceptions are captured per index.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

// ---------------------------------------------------------------- CSV

inline constexpr std::string_view kMetricsHeader =
    "iteration,env_steps,mean_return,std_return,loss_actor,loss_critic,loss_entropy,"
    "loss_costate,grad_norm,lr,mask_rate";

/// Shortest round-trip decimal; "nan", "inf", "-inf" for non-finite values.
std::string format_real(double v);
double parse_real(std::string_view text);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};
std::string csv_to_string(const CsvTable& table);
CsvTable csv_from_string(const std::string& text);
void write_csv(const CsvTable& table, const std::string& path);
CsvTable read_csv(const std::string& path);

std::string metrics_row_to_csv(const MetricsRow& row);
MetricsRow metrics_row_from_csv(const std::vector<std::string>& fields);
/// Refuses a mismatched header, naming the first offending column.
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

// ---------------------------------------------------------------- train

struct TrainRunResult {
  std::string run_dir;
  std::vector<MetricsRow> rows;
  TrainerSnapshot final_snapshot;
};

TrainRunResult cmd_train(const ExperimentConfig& config,
                         const std::function<void(const MetricsRow&)>& progress = {});

/// Mean of `pick(row)` over the final ceil(10%) of rows, skipping NaNs.
double final_window_mean(const std::vector<MetricsRow>& rows,
                         const std::function<double(const MetricsRow&)>& pick, double fraction = 0.1);
double initial_window_mean(const std::vector<MetricsRow>& rows,
                           const std::function<double(const MetricsRow&)>& pick, double fraction = 0.1);

// ---------------------------------------------------------------- eval

struct EvalStats {
  std::vector<double> returns;
  double median = 0.0;
  double mean = 0.0;
  double std = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
};
EvalStats summarize_returns(std::vector<double> returns);

struct EvalRequest {
  std::string env;  // empty: the checkpoint's environment
  std::vector<double> p_eval{0.0};
  int episodes = 100;
  std::uint64_t seed = 0;
  bool random_policy = false;
};

struct EvalReport {
  std::string env;
  bool random_policy = false;
  std::uint64_t seed = 0;
  std::vector<double> p_eval;
  std::vector<EvalStats> stats;  // parallel to p_eval
};

EvalReport evaluate_snapshot(const TrainerSnapshot& snapshot, const EvalRequest& request);
/// `path` is a checkpoint file or a run directory. With random_policy and an
/// empty path, request.env selects the environment.
EvalReport cmd_eval(const std::string& path, const EvalRequest& request);
/// p_eval,episode,return
CsvTable eval_episodes_table(const EvalReport& report);
/// p_eval,episodes,median,mean,std,q25,q75
CsvTable eval_summary_table(const EvalReport& report);
/// Resolves a run directory to checkpoints/final.json; files pass through.
std::string resolve_checkpoint(const std::string& path);

// ---------------------------------------------------------------- ablate

struct AblationRow {
  double c_costate = 0.0;
  std::uint64_t seed = 0;
  std::string run_dir;
  bool ok = false;
  std::string error;
  double final_mean_return = 0.0;
  double final_costate_loss = 0.0;
  double eval_median_train_p = 0.0;
  double eval_median_p075 = 0.0;
  double degradation = 0.0;  // train-p median minus p=0.75 median
};

std::vector<AblationRow> cmd_ablate(const ExperimentConfig& config, const std::vector<double>& c3_values,
                                    const std::vector<std::uint64_t>& seeds, int workers);
CsvTable ablation_table(const std::vector<AblationRow>& rows);

// ---------------------------------------------------------------- oracle

struct OracleOptions {
  // Empty matrices select the defaults: the scalar A=0, B=Q=R=1 problem for
  // care, the double integrator with P_f = I for shoot.
  std::string A, B, Q, R;
  std::string P_f;
  double t_f = 5.0;
  double dt = 0.01;
  std::string x0;  // empty: first unit vector
  int draws = 100;
  int grid_n = 401;
  int ensemble = 5;
  std::uint64_t seed = 0;
  std::string checkpoint;
  int states = 1000;
  int episodes = 10;
};

/// "a,b;c,d" -> [[a,b],[c,d]]
Mat parse_matrix(std::string_view text);
std::string format_matrix(const Mat& m);

CsvTable oracle_care(const OracleOptions& options);
CsvTable oracle_shoot(const OracleOptions& options);
CsvTable oracle_readout_check(const OracleOptions& options);
CsvTable oracle_costate_align(const OracleOptions& options);

struct ShootComparison {
  double sup_relative_error = 0.0;
  double terminal_defect = 0.0;
  int newton_iterations = 0;
  bool converged = false;
};
/// Single shooting vs the Riccati-ODE closed loop on the same grid.
ShootComparison compare_shooting_riccati(const Mat& A, const Mat& B, const Mat& Q, const Mat& R,
                                         const Mat& P_f, const Vec& x0, double t_f, double dt);

struct ReadoutCheck {
  std::string law;
  int draws = 0;
  int mismatches = 0;
  int deadzone_violations = 0;
  double max_error = 0.0;
};
/// quadratic, bang_bang, bang_off_bang and mean_hamiltonian on the double integrator.
std::vector<ReadoutCheck> readout_checks(int draws, int grid_n, int ensemble, std::uint64_t seed);

struct CostateAlignment {
  std::vector<double> cosine_partial;  // h held fixed, as in the training target
  std::vector<double> cosine_total;    // through the recurrent cell as well
  double median_partial = 0.0;
  double median_total = 0.0;
};
/// Greedy unmasked rollouts; compares -grad_y V (pulled back through the
/// encoder and the observation normalization) with 2Px from the CARE.
CostateAlignment costate_alignment(const TrainerSnapshot& snapshot, int num_states, int episodes,
                                   std::uint64_t seed);

// ---------------------------------------------------------------- plot

/// Trailing mean over the last `window` finite entries' positions; NaNs are skipped.
std::vector<double> trailing_moving_average(const std::vector<double>& values, int window);

struct CurveBand {
  std::string label;
  std::vector<double> x;
  std::vector<double> mean;
  std::vector<double> std;
};
CurveBand aggregate_curves(const std::string& label, const std::vector<std::vector<MetricsRow>>& seeds,
                           int window);
std::string render_svg(const std::vector<CurveBand>& bands);
/// CSV paths or run directories. Runs sharing a config family form one curve.
void cmd_plot(const std::vector<std::string>& inputs, const std::string& out_svg, int window);

}  // namespace costate
