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

#include "costate/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"

#ifndef COSTATE_VERSION
#define COSTATE_VERSION "0.0.0"
#endif

namespace costate {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(sep, start);
    out.emplace_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

double median_of(std::vector<double> v) {
  if (v.empty()) return kNan;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return kNan;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// ---------------------------------------------------------------- config keys

enum class KeyType { kString, kArch, kInt, kUint, kReal, kBool, kRealList };

struct KeyInfo {
  const char* name;
  KeyType type;
};

const std::vector<KeyInfo>& key_table() {
  static const std::vector<KeyInfo> keys = {
      {"env", KeyType::kString},          {"arch", KeyType::kArch},
      {"num_envs", KeyType::kInt},        {"unroll", KeyType::kInt},
      {"total_steps", KeyType::kInt},     {"lr", KeyType::kReal},
      {"adam_eps", KeyType::kReal},       {"max_grad_norm", KeyType::kReal},
      {"gamma", KeyType::kReal},          {"gae_lambda", KeyType::kReal},
      {"clip_eps", KeyType::kReal},       {"c_value", KeyType::kReal},
      {"c_entropy", KeyType::kReal},      {"c_costate", KeyType::kReal},
      {"ppo_epochs", KeyType::kInt},      {"num_minibatches", KeyType::kInt},
      {"mask_p_train", KeyType::kReal},   {"mask_before_norm", KeyType::kBool},
      {"d_h", KeyType::kInt},             {"seed", KeyType::kUint},
      {"obs_noise", KeyType::kReal},      {"n_seeds", KeyType::kInt},
      {"seed_base", KeyType::kUint},      {"eval_episodes", KeyType::kInt},
      {"p_eval", KeyType::kRealList},     {"ablation_c3", KeyType::kRealList},
      {"out_dir", KeyType::kString},      {"checkpoint_every", KeyType::kInt},
      {"plot_window", KeyType::kInt},
  };
  return keys;
}

const KeyInfo* find_key(std::string_view name) {
  for (const KeyInfo& k : key_table()) {
    if (name == k.name) return &k;
  }
  return nullptr;
}

Json get_key(const ExperimentConfig& c, std::string_view key) {
  const TrainConfig& t = c.train;
  if (key == "env") return t.env;
  if (key == "arch") return std::string(arch_name(t.arch));
  if (key == "num_envs") return t.num_envs;
  if (key == "unroll") return t.unroll;
  if (key == "total_steps") return t.total_steps;
  if (key == "lr") return t.lr;
  if (key == "adam_eps") return t.adam_eps;
  if (key == "max_grad_norm") return t.max_grad_norm;
  if (key == "gamma") return t.gamma;
  if (key == "gae_lambda") return t.gae_lambda;
  if (key == "clip_eps") return t.clip_eps;
  if (key == "c_value") return t.c_value;
  if (key == "c_entropy") return t.c_entropy;
  if (key == "c_costate") return t.c_costate;
  if (key == "ppo_epochs") return t.ppo_epochs;
  if (key == "num_minibatches") return t.num_minibatches;
  if (key == "mask_p_train") return t.mask_p_train;
  if (key == "mask_before_norm") return t.mask_before_norm;
  if (key == "d_h") return t.d_h;
  if (key == "seed") return t.seed;
  if (key == "obs_noise") return t.obs_noise;
  if (key == "n_seeds") return c.n_seeds;
  if (key == "seed_base") return c.seed_base;
  if (key == "eval_episodes") return c.eval_episodes;
  if (key == "p_eval") return c.p_eval;
  if (key == "ablation_c3") return c.ablation_c3;
  if (key == "out_dir") return c.out_dir;
  if (key == "checkpoint_every") return c.checkpoint_every;
  if (key == "plot_window") return c.plot_window;
  throw ConfigError(std::string(key), "unknown config key '" + std::string(key) + "'");
}

void set_key(ExperimentConfig& c, const std::string& key, const Json& v) {
  const KeyInfo* info = find_key(key);
  if (!info) throw ConfigError(key, "unknown config key '" + key + "'");
  auto bad = [&](const char* expected) {
    return ConfigError(key, "config key '" + key + "': expected " + expected + ", got " + v.dump());
  };
  TrainConfig& t = c.train;
  switch (info->type) {
    case KeyType::kString: {
      if (!v.is_string()) throw bad("a string");
      const std::string s = v.get<std::string>();
      if (key == "env") t.env = s;
      if (key == "out_dir") c.out_dir = s;
      return;
    }
    case KeyType::kArch: {
      if (!v.is_string()) throw bad("\"gru\" or \"ctrnn\"");
      try {
        t.arch = parse_arch(v.get<std::string>());
      } catch (const std::invalid_argument&) {
        throw bad("\"gru\" or \"ctrnn\"");
      }
      return;
    }
    case KeyType::kInt: {
      if (!v.is_number_integer()) throw bad("an integer");
      const long n = v.get<long>();
      if (key == "total_steps") {
        t.total_steps = n;
        return;
      }
      if (n < std::numeric_limits<int>::min() || n > std::numeric_limits<int>::max()) throw bad("a 32-bit integer");
      const int i = static_cast<int>(n);
      if (key == "num_envs") t.num_envs = i;
      if (key == "unroll") t.unroll = i;
      if (key == "ppo_epochs") t.ppo_epochs = i;
      if (key == "num_minibatches") t.num_minibatches = i;
      if (key == "d_h") t.d_h = i;
      if (key == "n_seeds") c.n_seeds = i;
      if (key == "eval_episodes") c.eval_episodes = i;
      if (key == "checkpoint_every") c.checkpoint_every = i;
      if (key == "plot_window") c.plot_window = i;
      return;
    }
    case KeyType::kUint: {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long>() < 0)) {
        throw bad("a non-negative integer");
      }
      const std::uint64_t u = v.get<std::uint64_t>();
      if (key == "seed") t.seed = u;
      if (key == "seed_base") c.seed_base = u;
      return;
    }
    case KeyType::kReal: {
      if (!v.is_number()) throw bad("a number");
      const double d = v.get<double>();
      if (key == "lr") t.lr = d;
      if (key == "adam_eps") t.adam_eps = d;
      if (key == "max_grad_norm") t.max_grad_norm = d;
      if (key == "gamma") t.gamma = d;
      if (key == "gae_lambda") t.gae_lambda = d;
      if (key == "clip_eps") t.clip_eps = d;
      if (key == "c_value") t.c_value = d;
      if (key == "c_entropy") t.c_entropy = d;
      if (key == "c_costate") t.c_costate = d;
      if (key == "mask_p_train") t.mask_p_train = d;
      if (key == "obs_noise") t.obs_noise = d;
      return;
    }
    case KeyType::kBool: {
      if (!v.is_boolean()) throw bad("true or false");
      t.mask_before_norm = v.get<bool>();
      return;
    }
    case KeyType::kRealList: {
      if (!v.is_array()) throw bad("a list of numbers");
      std::vector<double> out;
      for (const Json& e : v) {
        if (!e.is_number()) throw bad("a list of numbers");
        out.push_back(e.get<double>());
      }
      if (key == "p_eval") c.p_eval = out;
      if (key == "ablation_c3") c.ablation_c3 = out;
      return;
    }
  }
}

Json parse_scalar_text(const std::string& key, KeyType type, const std::string& text) {
  auto bad = [&] { return ConfigError(key, "config key '" + key + "': cannot parse value '" + text + "'"); };
  switch (type) {
    case KeyType::kString:
    case KeyType::kArch:
      return text;
    case KeyType::kBool:
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw bad();
    case KeyType::kInt:
    case KeyType::kUint: {
      long v = 0;
      const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || p != text.data() + text.size()) throw bad();
      return v;
    }
    case KeyType::kReal:
      try {
        return parse_real(text);
      } catch (const std::invalid_argument&) {
        throw bad();
      }
    case KeyType::kRealList: {
      Json arr = Json::array();
      if (trim(text).empty()) return arr;
      for (const std::string& part : split(text, ',')) {
        try {
          arr.push_back(parse_real(trim(part)));
        } catch (const std::invalid_argument&) {
          throw bad();
        }
      }
      return arr;
    }
  }
  throw bad();
}

}  // namespace

// ---------------------------------------------------------------- config

void ExperimentConfig::validate() const {
  try {
    train.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    const auto a = msg.find('\''), b = msg.find('\'', a + 1);
    const std::string key = a != std::string::npos && b != std::string::npos ? msg.substr(a + 1, b - a - 1) : "";
    throw ConfigError(key, msg);
  }
  if (n_seeds < 1) throw ConfigError("n_seeds", "config key 'n_seeds': must be >= 1");
  if (eval_episodes < 1) throw ConfigError("eval_episodes", "config key 'eval_episodes': must be >= 1");
  for (double p : p_eval) {
    if (!(p >= 0 && p <= 1)) throw ConfigError("p_eval", "config key 'p_eval': every entry must lie in [0, 1]");
  }
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every", "config key 'checkpoint_every': must be >= 0");
  if (plot_window < 1) throw ConfigError("plot_window", "config key 'plot_window': must be >= 1");
  bool known = false;
  for (const auto& n : env_names()) known = known || n == train.env;
  if (!known) throw ConfigError("env", "config key 'env': unknown environment '" + train.env + "'");
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const KeyInfo& info : key_table()) k.emplace_back(info.name);
    return k;
  }();
  return keys;
}

ExperimentConfig config_from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError("", std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("", "config: top level must be a JSON object");
  ExperimentConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) set_key(c, it.key(), it.value());
  return c;
}

ExperimentConfig load_config(const std::string& path) { return config_from_json(read_file(path)); }

std::string config_to_json(const ExperimentConfig& config) {
  Json j = Json::object();
  for (const KeyInfo& k : key_table()) j[k.name] = get_key(config, k.name);
  return j.dump(2) + "\n";
}

void apply_override(ExperimentConfig& config, std::string_view assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError(std::string(assignment), "override '" + std::string(assignment) + "' is not KEY=VALUE");
  }
  std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  for (const char* section : {"train.", "eval.", "experiment.", "ablation.", "plot."}) {
    if (key.rfind(section, 0) == 0) {
      key = key.substr(std::string_view(section).size());
      break;
    }
  }
  const KeyInfo* info = find_key(key);
  if (!info) throw ConfigError(key, "unknown config key '" + key + "'");
  set_key(config, key, parse_scalar_text(key, info->type, value));
}

std::string config_hash(const ExperimentConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(config_to_json(config))));
  return std::string(buf, 8);
}

std::string config_family_hash(const ExperimentConfig& config) {
  ExperimentConfig c = config;
  c.train.seed = 0;
  c.seed_base = 0;
  return config_hash(c);
}

std::string run_id(const ExperimentConfig& config) {
  return "s" + std::to_string(config.train.seed) + "-" + config_hash(config);
}

std::string version_string() { return std::string("v") + COSTATE_VERSION; }

int worker_count() {
  const char* env = std::getenv("COSTATE_RL_THREADS");
  if (!env || !*env) return 1;
  int n = 0;
  const std::string_view s(env);
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
  if (ec != std::errc() || p != s.data() + s.size() || n < 1) {
    throw std::invalid_argument("COSTATE_RL_THREADS must be a positive integer, got '" + std::string(s) + "'");
  }
  return n;
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!first) first = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

// ---------------------------------------------------------------- CSV

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw std::runtime_error("format_real: conversion failed");
  return std::string(buf, p);
}

double parse_real(std::string_view text) {
  if (text == "nan") return kNan;
  if (text == "inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size() || text.empty()) {
    throw std::invalid_argument("not a real number: '" + std::string(text) + "'");
  }
  return v;
}

std::string csv_to_string(const CsvTable& table) {
  std::string out;
  auto line = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out += ',';
      out += fields[i];
    }
    out += '\n';
  };
  line(table.header);
  for (const auto& r : table.rows) line(r);
  return out;
}

CsvTable csv_from_string(const std::string& text) {
  CsvTable t;
  std::vector<std::string> lines = split(text, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw std::runtime_error("CSV: empty input");
  t.header = split(lines[0], ',');
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto fields = split(lines[i], ',');
    if (fields.size() != t.header.size()) {
      throw std::runtime_error("CSV: line " + std::to_string(i + 1) + " has " + std::to_string(fields.size()) +
                               " fields, header has " + std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(fields));
  }
  return t;
}

void write_csv(const CsvTable& table, const std::string& path) { write_file(path, csv_to_string(table)); }
CsvTable read_csv(const std::string& path) { return csv_from_string(read_file(path)); }

std::string metrics_row_to_csv(const MetricsRow& r) {
  std::string s = std::to_string(r.iteration) + "," + std::to_string(r.env_steps);
  for (double v : {r.mean_return, r.std_return, r.loss_actor, r.loss_critic, r.loss_entropy, r.loss_costate,
                   r.grad_norm, r.lr, r.mask_rate}) {
    s += ',';
    s += format_real(v);
  }
  return s;
}

MetricsRow metrics_row_from_csv(const std::vector<std::string>& f) {
  if (f.size() != 11) throw std::runtime_error("metrics row: expected 11 fields");
  MetricsRow r;
  auto integer = [](const std::string& s) {
    long v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw std::runtime_error("metrics row: bad integer '" + s + "'");
    return v;
  };
  r.iteration = integer(f[0]);
  r.env_steps = integer(f[1]);
  double* reals[] = {&r.mean_return, &r.std_return, &r.loss_actor, &r.loss_critic, &r.loss_entropy,
                     &r.loss_costate, &r.grad_norm, &r.lr, &r.mask_rate};
  for (int i = 0; i < 9; ++i) *reals[i] = parse_real(f[i + 2]);
  return r;
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  const CsvTable t = csv_from_string(read_file(path));
  const std::vector<std::string> expected = split(kMetricsHeader, ',');
  for (std::size_t i = 0; i < std::max(expected.size(), t.header.size()); ++i) {
    const std::string got = i < t.header.size() ? t.header[i] : "<missing>";
    const std::string want = i < expected.size() ? expected[i] : "<none>";
    if (got != want) {
      throw std::runtime_error("metrics CSV '" + path + "': column " + std::to_string(i + 1) + " is '" + got +
                               "', expected '" + want + "'");
    }
  }
  std::vector<MetricsRow> rows;
  for (const auto& f : t.rows) rows.push_back(metrics_row_from_csv(f));
  return rows;
}

// ---------------------------------------------------------------- train

TrainRunResult cmd_train(const ExperimentConfig& config, const std::function<void(const MetricsRow&)>& progress) {
  config.validate();
  TrainRunResult result;
  const fs::path dir = fs::path(config.out_dir) / run_id(config);
  fs::create_directories(dir / "checkpoints");
  result.run_dir = dir.string();
  const std::string started = utc_timestamp();
  write_file((dir / "config.json").string(), config_to_json(config));

  std::ofstream metrics((dir / "metrics.csv").string(), std::ios::binary);
  if (!metrics) throw std::runtime_error("cannot write '" + (dir / "metrics.csv").string() + "'");
  metrics << kMetricsHeader << '\n';

  Trainer trainer(config.train);
  while (!trainer.finished()) {
    const MetricsRow row = trainer.iterate();
    metrics << metrics_row_to_csv(row) << '\n';
    metrics.flush();
    result.rows.push_back(row);
    if (config.checkpoint_every > 0 && row.iteration % config.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "iter_%06ld.json", row.iteration);
      save_checkpoint(trainer.snapshot(), (dir / "checkpoints" / name).string());
    }
    if (progress) progress(row);
  }
  metrics.close();
  result.final_snapshot = trainer.snapshot();
  save_checkpoint(result.final_snapshot, (dir / "checkpoints" / "final.json").string());

  Json manifest = Json::object();
  manifest["run_id"] = run_id(config);
  manifest["seed"] = config.train.seed;
  manifest["version"] = version_string() + "-" + config_hash(config);
  manifest["config_hash"] = config_hash(config);
  manifest["env"] = config.train.env;
  manifest["iterations"] = trainer.iteration();
  manifest["env_steps"] = trainer.env_steps();
  manifest["started_at"] = started;
  manifest["finished_at"] = utc_timestamp();
  write_file((dir / "manifest.json").string(), manifest.dump(2) + "\n");
  return result;
}

namespace {
double window_mean(const std::vector<MetricsRow>& rows, const std::function<double(const MetricsRow&)>& pick,
                   double fraction, bool tail) {
  if (rows.empty()) return kNan;
  const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * rows.size())));
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double v = pick(rows[tail ? rows.size() - 1 - i : i]);
    if (std::isfinite(v)) {
      sum += v;
      ++n;
    }
  }
  return n ? sum / n : kNan;
}
}  // namespace

double final_window_mean(const std::vector<MetricsRow>& rows, const std::function<double(const MetricsRow&)>& pick,
                         double fraction) {
  return window_mean(rows, pick, fraction, true);
}

double initial_window_mean(const std::vector<MetricsRow>& rows, const std::function<double(const MetricsRow&)>& pick,
                           double fraction) {
  return window_mean(rows, pick, fraction, false);
}

// ---------------------------------------------------------------- eval

EvalStats summarize_returns(std::vector<double> returns) {
  EvalStats s;
  s.returns = returns;
  if (returns.empty()) {
    s.median = s.mean = s.std = s.q25 = s.q75 = kNan;
    return s;
  }
  std::sort(returns.begin(), returns.end());
  const double n = static_cast<double>(returns.size());
  s.mean = std::accumulate(returns.begin(), returns.end(), 0.0) / n;
  double var = 0.0;
  for (double r : returns) var += (r - s.mean) * (r - s.mean);
  s.std = std::sqrt(var / n);
  s.median = quantile_sorted(returns, 0.5);
  s.q25 = quantile_sorted(returns, 0.25);
  s.q75 = quantile_sorted(returns, 0.75);
  return s;
}

EvalReport evaluate_snapshot(const TrainerSnapshot& snapshot, const EvalRequest& request) {
  if (request.episodes < 1) throw std::invalid_argument("eval: episodes must be >= 1");
  EvalReport report;
  report.env = request.env.empty() ? snapshot.env : request.env;
  report.random_policy = request.random_policy;
  report.seed = request.seed;
  report.p_eval = request.p_eval;
  const EnvSpec env = make_env(report.env, snapshot.obs_noise);
  for (double p : request.p_eval) {
    if (!(p >= 0 && p <= 1)) throw std::invalid_argument("eval: mask probability must lie in [0, 1]");
    EvalOptions opt;
    opt.mask_p = p;
    opt.episodes = request.episodes;
    opt.seed = request.seed;
    opt.random_policy = request.random_policy;
    opt.obs_noise = snapshot.obs_noise;
    report.stats.push_back(
        summarize_returns(evaluate_policy(snapshot.params, snapshot.obs_stats, env, opt, snapshot.mask_before_norm)));
  }
  return report;
}

std::string resolve_checkpoint(const std::string& path) {
  if (fs::is_directory(path)) {
    const fs::path p = fs::path(path) / "checkpoints" / "final.json";
    if (!fs::exists(p)) throw std::runtime_error("run directory '" + path + "' has no checkpoints/final.json");
    return p.string();
  }
  return path;
}

EvalReport cmd_eval(const std::string& path, const EvalRequest& request) {
  if (path.empty()) {
    if (!request.random_policy) throw std::invalid_argument("eval: a checkpoint is required unless --random is set");
    if (request.env.empty()) throw ConfigError("env", "eval: --env is required for a random baseline");
    const EnvSpec env = make_env(request.env);
    TrainerSnapshot snap;
    snap.env = request.env;
    snap.params = init_params(0, {env.d_y, 8, env.d_u}, Arch::kGru);
    snap.obs_stats = RunningStats(env.d_y);
    return evaluate_snapshot(snap, request);
  }
  return evaluate_snapshot(load_checkpoint(resolve_checkpoint(path)), request);
}

CsvTable eval_episodes_table(const EvalReport& report) {
  CsvTable t;
  t.header = {"p_eval", "episode", "return"};
  for (std::size_t k = 0; k < report.p_eval.size(); ++k) {
    const auto& r = report.stats[k].returns;
    for (std::size_t i = 0; i < r.size(); ++i) {
      t.rows.push_back({format_real(report.p_eval[k]), std::to_string(i), format_real(r[i])});
    }
  }
  return t;
}

CsvTable eval_summary_table(const EvalReport& report) {
  CsvTable t;
  t.header = {"p_eval", "episodes", "median", "mean", "std", "q25", "q75"};
  for (std::size_t k = 0; k < report.p_eval.size(); ++k) {
    const EvalStats& s = report.stats[k];
    t.rows.push_back({format_real(report.p_eval[k]), std::to_string(s.returns.size()), format_real(s.median),
                      format_real(s.mean), format_real(s.std), format_real(s.q25), format_real(s.q75)});
  }
  return t;
}

// ---------------------------------------------------------------- ablate

std::vector<AblationRow> cmd_ablate(const ExperimentConfig& config, const std::vector<double>& c3_values,
                                    const std::vector<std::uint64_t>& seeds, int workers) {
  std::vector<AblationRow> rows;
  for (double c3 : c3_values) {
    for (std::uint64_t s : seeds) {
      AblationRow r;
      r.c_costate = c3;
      r.seed = s;
      rows.push_back(r);
    }
  }
  parallel_for(static_cast<int>(rows.size()), workers, [&](int i) {
    AblationRow& r = rows[i];
    try {
      ExperimentConfig c = config;
      c.train.c_costate = r.c_costate;
      c.train.seed = r.seed;
      const TrainRunResult run = cmd_train(c);
      r.run_dir = run.run_dir;
      r.final_mean_return = final_window_mean(run.rows, [](const MetricsRow& m) { return m.mean_return; });
      r.final_costate_loss = final_window_mean(run.rows, [](const MetricsRow& m) { return m.loss_costate; });
      EvalRequest req;
      req.p_eval = {c.train.mask_p_train, 0.75};
      req.episodes = c.eval_episodes;
      req.seed = r.seed;
      const EvalReport rep = evaluate_snapshot(run.final_snapshot, req);
      r.eval_median_train_p = rep.stats[0].median;
      r.eval_median_p075 = rep.stats[1].median;
      r.degradation = r.eval_median_train_p - r.eval_median_p075;
      r.ok = true;
    } catch (const std::exception& e) {
      r.ok = false;
      r.error = e.what();
    }
  });
  return rows;
}

CsvTable ablation_table(const std::vector<AblationRow>& rows) {
  CsvTable t;
  t.header = {"c_costate",        "seed",          "status",          "final_mean_return", "final_costate_loss",
              "eval_median_ptrain", "eval_median_p075", "degradation", "run_dir"};
  for (const AblationRow& r : rows) {
    std::string status = r.ok ? "ok" : "failed:" + r.error;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    t.rows.push_back({format_real(r.c_costate), std::to_string(r.seed), status,
                      format_real(r.ok ? r.final_mean_return : kNan), format_real(r.ok ? r.final_costate_loss : kNan),
                      format_real(r.ok ? r.eval_median_train_p : kNan), format_real(r.ok ? r.eval_median_p075 : kNan),
                      format_real(r.ok ? r.degradation : kNan), r.run_dir});
  }
  return t;
}

// ---------------------------------------------------------------- oracle

Mat parse_matrix(std::string_view text) {
  const std::vector<std::string> rows = split(text, ';');
  std::vector<std::vector<double>> values;
  for (const auto& r : rows) {
    std::vector<double> row;
    for (const auto& f : split(r, ',')) row.push_back(parse_real(trim(f)));
    values.push_back(std::move(row));
  }
  const std::size_t cols = values.front().size();
  Mat m(values.size(), cols);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].size() != cols) throw std::invalid_argument("matrix '" + std::string(text) + "' is ragged");
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = values[i][j];
  }
  return m;
}

std::string format_matrix(const Mat& m) {
  std::string s;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (i) s += ';';
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) s += ' ';
      s += format_real(m(i, j));
    }
  }
  return s;
}

CsvTable oracle_care(const OracleOptions& o) {
  const Mat A = parse_matrix(o.A.empty() ? "0" : o.A);
  const Mat B = parse_matrix(o.B.empty() ? "1" : o.B);
  const Mat Q = parse_matrix(o.Q.empty() ? "1" : o.Q);
  const Mat R = parse_matrix(o.R.empty() ? "1" : o.R);
  const RiccatiSolution sol = solve_care(A, B, Q, R);
  CsvTable t;
  t.header = {"quantity", "value"};
  t.rows = {{"P", format_matrix(sol.P)},
            {"K", format_matrix(sol.K)},
            {"residual", format_real(sol.residual)},
            {"iterations", std::to_string(sol.iterations)}};
  return t;
}

ShootComparison compare_shooting_riccati(const Mat& A, const Mat& B, const Mat& Q, const Mat& R, const Mat& P_f,
                                         const Vec& x0, double t_f, double dt) {
  const HamiltonianSpec spec = lqr_spec(A, B, Q, R, P_f);
  const ShootingResult shot = shoot_tpbvp(spec, x0, t_f, dt, Vec::Zero(A.rows()));
  const RiccatiTrajectory ric = riccati_ode(A, B, Q, R, P_f, t_f, 0.5 * dt);
  const Mat RinvBt = R.llt().solve(B.transpose());
  auto closed = [&](std::size_t half_index, const Vec& x) -> Vec {
    return (A - B * RinvBt * ric.P[half_index]) * x;
  };
  const std::size_t steps = shot.x.size() - 1;
  std::vector<Vec> xr(steps + 1);
  xr[0] = x0;
  for (std::size_t k = 0; k < steps; ++k) {
    const Vec& x = xr[k];
    const Vec k1 = closed(2 * k, x);
    const Vec k2 = closed(2 * k + 1, x + 0.5 * dt * k1);
    const Vec k3 = closed(2 * k + 1, x + 0.5 * dt * k2);
    const Vec k4 = closed(2 * k + 2, x + dt * k3);
    xr[k + 1] = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  double max_err = 0.0, max_ref = 0.0;
  for (std::size_t k = 0; k <= steps; ++k) {
    max_err = std::max(max_err, (shot.x[k] - xr[k]).lpNorm<Eigen::Infinity>());
    max_ref = std::max(max_ref, xr[k].lpNorm<Eigen::Infinity>());
  }
  ShootComparison c;
  c.sup_relative_error = max_err / std::max(max_ref, 1e-300);
  c.terminal_defect = shot.terminal_defect;
  c.newton_iterations = shot.newton_iterations;
  c.converged = shot.converged;
  return c;
}

CsvTable oracle_shoot(const OracleOptions& o) {
  const Mat A = o.A.empty() ? lqr_data::di_A() : parse_matrix(o.A);
  const Mat B = o.B.empty() ? lqr_data::di_B() : parse_matrix(o.B);
  const Mat Q = o.Q.empty() ? lqr_data::di_Q() : parse_matrix(o.Q);
  const Mat R = o.R.empty() ? lqr_data::di_R() : parse_matrix(o.R);
  const Mat P_f = o.P_f.empty() ? Mat(Mat::Identity(A.rows(), A.rows())) : parse_matrix(o.P_f);
  Vec x0;
  if (o.x0.empty()) {
    x0 = Vec::Zero(A.rows());
    x0[0] = 1.0;
  } else {
    x0 = parse_matrix(o.x0).transpose();
  }
  if (x0.size() != A.rows()) throw std::invalid_argument("oracle shoot: x0 has the wrong dimension");
  const ShootComparison c = compare_shooting_riccati(A, B, Q, R, P_f, x0, o.t_f, o.dt);
  CsvTable t;
  t.header = {"quantity", "value"};
  t.rows = {{"terminal_defect", format_real(c.terminal_defect)},
            {"newton_iterations", std::to_string(c.newton_iterations)},
            {"converged", c.converged ? "true" : "false"},
            {"sup_relative_error_vs_riccati", format_real(c.sup_relative_error)}};
  return t;
}

std::vector<ReadoutCheck> readout_checks(int draws, int grid_n, int ensemble, std::uint64_t seed) {
  const EnvSpec env = double_integrator(0.0);
  Rng rng(seed * 7919 + 3);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  auto draw_lambda = [&] {
    Vec l(2);
    const double scale = std::pow(10.0, uni(rng));
    l << uni(rng) * scale, uni(rng) * scale;
    return l;
  };
  auto draw_x = [&] {
    Vec x(2);
    x << 2.0 * uni(rng), 2.0 * uni(rng);
    return x;
  };
  std::vector<ReadoutCheck> out;
  const struct {
    const char* name;
    CostKind kind;
  } laws[] = {{"quadratic", CostKind::kQuadratic}, {"bang_bang", CostKind::kStateOnly},
              {"bang_off_bang", CostKind::kFuel}};
  for (const auto& law : laws) {
    const HamiltonianSpec spec = hamiltonian_spec(env, law.kind);
    const Vec cell = (spec.u_max - spec.u_min) / static_cast<double>(grid_n - 1);
    ReadoutCheck chk;
    chk.law = law.name;
    chk.draws = draws;
    for (int i = 0; i < draws; ++i) {
      const Vec x = draw_x();
      const Vec lambda = draw_lambda();
      const Vec sigma = switching_function(spec, x, lambda);
      Vec u;
      if (law.kind == CostKind::kQuadratic) u = readout_quadratic(sigma, spec.R, spec.u_min, spec.u_max);
      if (law.kind == CostKind::kStateOnly) u = readout_bang_bang(sigma, spec.u_max);
      if (law.kind == CostKind::kFuel) u = readout_bang_off_bang(sigma, spec.u_max);
      const Vec ug = grid_minimize(spec, x, lambda, grid_n);
      const Vec err = (u - ug).cwiseAbs();
      chk.max_error = std::max(chk.max_error, err.maxCoeff());
      if ((err.array() > cell.array() * (1.0 + 1e-9)).any()) ++chk.mismatches;
      if (law.kind == CostKind::kFuel) {
        for (int k = 0; k < sigma.size(); ++k) {
          if (std::abs(sigma[k]) < 1.0 && (u[k] != 0.0 || std::abs(ug[k]) > cell[k] * (1.0 + 1e-9))) {
            ++chk.deadzone_violations;
          }
        }
      }
    }
    out.push_back(chk);
  }

  const HamiltonianSpec spec = hamiltonian_spec(env, CostKind::kQuadratic);
  const Vec cell = (spec.u_max - spec.u_min) / static_cast<double>(grid_n - 1);
  ReadoutCheck chk;
  chk.law = "mean_hamiltonian";
  chk.draws = draws;
  for (int i = 0; i < draws; ++i) {
    const Vec x = draw_x();
    std::vector<Vec> lambdas;
    for (int k = 0; k < ensemble; ++k) lambdas.push_back(draw_lambda());
    const Vec u = mean_hamiltonian_minimize(lambdas, spec.g(x), spec.R, spec.u_min, spec.u_max);
    const Vec ug = grid_minimize(
        [&](const Vec& v) {
          double h = 0.0;
          for (const Vec& l : lambdas) h += hamiltonian(spec, x, l, v);
          return h / static_cast<double>(lambdas.size());
        },
        spec.u_min, spec.u_max, grid_n);
    const Vec err = (u - ug).cwiseAbs();
    chk.max_error = std::max(chk.max_error, err.maxCoeff());
    if ((err.array() > cell.array() * (1.0 + 1e-9)).any()) ++chk.mismatches;
  }
  out.push_back(chk);
  return out;
}

CsvTable oracle_readout_check(const OracleOptions& o) {
  CsvTable t;
  t.header = {"law", "draws", "mismatches", "deadzone_violations", "max_error"};
  int total = 0;
  for (const ReadoutCheck& c : readout_checks(o.draws, o.grid_n, o.ensemble, o.seed)) {
    t.rows.push_back({c.law, std::to_string(c.draws), std::to_string(c.mismatches),
                      std::to_string(c.deadzone_violations), format_real(c.max_error)});
    total += c.mismatches;
  }
  t.rows.push_back({"total", "", std::to_string(total), "", ""});
  return t;
}

CostateAlignment costate_alignment(const TrainerSnapshot& snap, int num_states, int episodes, std::uint64_t seed) {
  if (snap.env != "double_integrator") {
    throw std::invalid_argument("costate-align: requires a double_integrator checkpoint, got '" + snap.env + "'");
  }
  if (num_states < 1 || episodes < 1) throw std::invalid_argument("costate-align: states and episodes must be >= 1");
  const EnvSpec env = make_env(snap.env, snap.obs_noise);
  const PolicyParams& params = snap.params;
  if (params.dims.d_y != env.d_y || params.dims.d_u != env.d_u) {
    throw std::invalid_argument("costate-align: checkpoint dims do not match the environment");
  }
  const RiccatiSolution care = solve_care(lqr_data::di_A(), lqr_data::di_B(), lqr_data::di_Q(), lqr_data::di_R());
  const int d_h = params.dims.d_h;
  const int d_y = env.d_y;

  // Greedy unmasked rollouts, recording (x, y_raw, h_pre).
  Rng seeder(seed * 2654435761ULL + 211);
  std::vector<EnvState> states;
  for (int b = 0; b < episodes; ++b) states.push_back(reset(env, seeder()));
  std::vector<Vec> xs, ys, hs;
  Tensor hidden = Tensor::zeros(Shape::matrix(d_h, episodes));
  std::vector<bool> active(episodes, true);
  for (int t = 0; t < env.episode_len; ++t) {
    Tensor y_tilde(Shape::matrix(d_y, episodes));
    std::vector<Vec> y_raw(episodes);
    for (int b = 0; b < episodes; ++b) {
      if (!active[b]) continue;
      y_raw[b] = observe(env, states[b]);
      const Vec yn = snap.obs_stats.normalize(y_raw[b]);
      for (int i = 0; i < d_y; ++i) y_tilde(i, b) = yn[i];
    }
    Tape tape;
    PolicyGraph graph(tape, params, episodes);
    const Var h = graph.cell_step(graph.encode(tape.constant(y_tilde)), tape.constant(hidden));
    const Tensor mu = tape.value(graph.actor_mean(h));
    bool any = false;
    for (int b = 0; b < episodes; ++b) {
      if (!active[b]) continue;
      xs.push_back(states[b].x);
      ys.push_back(y_raw[b]);
      Vec hp(d_h);
      for (int i = 0; i < d_h; ++i) hp[i] = hidden(i, b);
      hs.push_back(hp);
      Vec u(env.d_u);
      for (int i = 0; i < env.d_u; ++i) u[i] = mu(i, b);
      if (step(env, states[b], u).done) active[b] = false;
      any = any || active[b];
    }
    hidden = tape.value(h);
    if (!any) break;
  }

  // Evenly spaced subsample of the visited states.
  std::vector<std::size_t> picks;
  const std::size_t total = xs.size();
  const std::size_t n = std::min<std::size_t>(num_states, total);
  for (std::size_t k = 0; k < n; ++k) picks.push_back(k * total / n);

  Tensor y_in(Shape::matrix(d_y, n)), h_in(Shape::matrix(d_h, n)), mean_b(Shape::matrix(d_y, n)),
      inv_std_b(Shape::matrix(d_y, n));
  for (std::size_t j = 0; j < n; ++j) {
    for (int i = 0; i < d_y; ++i) {
      y_in(i, j) = ys[picks[j]][i];
      mean_b(i, j) = snap.obs_stats.mean()[i];
      inv_std_b(i, j) = 1.0 / std::sqrt(snap.obs_stats.var()[i] + 1e-8);
    }
    for (int i = 0; i < d_h; ++i) h_in(i, j) = hs[picks[j]][i];
  }
  Tape tape;
  PolicyGraph graph(tape, params, n);
  const Var y = tape.input(y_in);
  const Var y_norm = tape.mul(tape.sub(y, tape.constant(mean_b)), tape.constant(inv_std_b));
  const Var enc = graph.encode(y_norm);
  const Var h_post = graph.cell_step(enc, tape.constant(h_in));
  const Var v_partial = tape.sum(graph.critic_value(enc, tape.stop_gradient(h_post)));
  const Var v_total = tape.sum(graph.critic_value(enc, h_post));
  const Tensor g_partial = tape.grad_wrt(v_partial, y);
  const Tensor g_total = tape.grad_wrt(v_total, y);

  CostateAlignment out;
  for (std::size_t j = 0; j < n; ++j) {
    const Vec& x = xs[picks[j]];
    if (x.norm() < 1e-6) continue;
    const Vec target = lqr_costate(care, x);
    Vec gp(d_y), gt(d_y);
    for (int i = 0; i < d_y; ++i) {
      gp[i] = -g_partial(i, j);
      gt[i] = -g_total(i, j);
    }
    auto cosine = [&](const Vec& g) { return g.dot(target) / ((g.norm() + 1e-12) * (target.norm() + 1e-12)); };
    out.cosine_partial.push_back(cosine(gp));
    out.cosine_total.push_back(cosine(gt));
  }
  out.median_partial = median_of(out.cosine_partial);
  out.median_total = median_of(out.cosine_total);
  return out;
}

CsvTable oracle_costate_align(const OracleOptions& o) {
  if (o.checkpoint.empty()) throw std::invalid_argument("oracle costate-align: a checkpoint is required");
  const CostateAlignment a = costate_alignment(load_checkpoint(resolve_checkpoint(o.checkpoint)), o.states,
                                               o.episodes, o.seed);
  CsvTable t;
  t.header = {"quantity", "value"};
  t.rows = {{"states", std::to_string(a.cosine_partial.size())},
            {"median_cosine", format_real(a.median_partial)},
            {"median_cosine_through_cell", format_real(a.median_total)}};
  return t;
}

// ---------------------------------------------------------------- plot

std::vector<double> trailing_moving_average(const std::vector<double>& values, int window) {
  if (window < 1) throw std::invalid_argument("moving average window must be >= 1");
  std::vector<double> out(values.size(), kNan);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::size_t lo = i + 1 >= static_cast<std::size_t>(window) ? i + 1 - window : 0;
    double sum = 0.0;
    int n = 0;
    for (std::size_t k = lo; k <= i; ++k) {
      if (std::isfinite(values[k])) {
        sum += values[k];
        ++n;
      }
    }
    if (n) out[i] = sum / n;
  }
  return out;
}

CurveBand aggregate_curves(const std::string& label, const std::vector<std::vector<MetricsRow>>& seeds, int window) {
  CurveBand band;
  band.label = label;
  if (seeds.empty()) return band;
  std::size_t len = seeds.front().size();
  for (const auto& s : seeds) len = std::min(len, s.size());
  std::vector<std::vector<double>> smoothed;
  for (const auto& s : seeds) {
    std::vector<double> v;
    for (std::size_t i = 0; i < len; ++i) v.push_back(s[i].mean_return);
    smoothed.push_back(trailing_moving_average(v, window));
  }
  for (std::size_t i = 0; i < len; ++i) {
    band.x.push_back(static_cast<double>(seeds.front()[i].env_steps));
    double sum = 0.0;
    int n = 0;
    for (const auto& s : smoothed) {
      if (std::isfinite(s[i])) {
        sum += s[i];
        ++n;
      }
    }
    const double mean = n ? sum / n : kNan;
    double var = 0.0;
    for (const auto& s : smoothed) {
      if (std::isfinite(s[i])) var += (s[i] - mean) * (s[i] - mean);
    }
    band.mean.push_back(mean);
    band.std.push_back(n ? std::sqrt(var / n) : kNan);
  }
  return band;
}

std::string render_svg(const std::vector<CurveBand>& bands) {
  constexpr double W = 800, H = 480, L = 80, Rm = 200, T = 30, Bm = 60;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const CurveBand& b : bands) {
    for (std::size_t i = 0; i < b.x.size(); ++i) {
      if (!std::isfinite(b.mean[i])) continue;
      x0 = std::min(x0, b.x[i]);
      x1 = std::max(x1, b.x[i]);
      y0 = std::min(y0, b.mean[i] - b.std[i]);
      y1 = std::max(y1, b.mean[i] + b.std[i]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - Rm); };
  auto py = [&](double y) { return H - Bm - (y - y0) / (y1 - y0) * (H - T - Bm); };
  auto num = [](double v) {
    std::ostringstream os;
    os << std::setprecision(6) << v;
    return os.str();
  };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};

  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << " " << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << H - Bm << "\" x2=\"" << W - Rm << "\" y2=\"" << H - Bm
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - Bm << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
    s << "<text x=\"" << px(xv) << "\" y=\"" << H - Bm + 18 << "\" text-anchor=\"middle\">" << num(xv) << "</text>\n";
    s << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << num(yv) << "</text>\n";
  }
  s << "<text x=\"" << (L + W - Rm) / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">env_steps</text>\n";
  s << "<text x=\"18\" y=\"" << (T + H - Bm) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
    << (T + H - Bm) / 2 << ")\">mean_return</text>\n";

  for (std::size_t c = 0; c < bands.size(); ++c) {
    const CurveBand& b = bands[c];
    const char* color = colors[c % (sizeof colors / sizeof colors[0])];
    // Contiguous finite runs are drawn as separate pieces.
    std::size_t i = 0;
    while (i < b.x.size()) {
      while (i < b.x.size() && !std::isfinite(b.mean[i])) ++i;
      std::size_t j = i;
      while (j < b.x.size() && std::isfinite(b.mean[j])) ++j;
      if (j > i) {
        s << "<polygon fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
        for (std::size_t k = i; k < j; ++k) s << px(b.x[k]) << "," << py(b.mean[k] + b.std[k]) << " ";
        for (std::size_t k = j; k-- > i;) s << px(b.x[k]) << "," << py(b.mean[k] - b.std[k]) << " ";
        s << "\"/>\n<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t k = i; k < j; ++k) s << px(b.x[k]) << "," << py(b.mean[k]) << " ";
        s << "\"/>\n";
      }
      i = j;
    }
    const double ly = T + 16 + 18 * static_cast<double>(c);
    s << "<rect x=\"" << W - Rm + 12 << "\" y=\"" << ly - 9 << "\" width=\"12\" height=\"10\" fill=\"" << color
      << "\"/>\n<text x=\"" << W - Rm + 30 << "\" y=\"" << ly << "\">" << b.label << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

void cmd_plot(const std::vector<std::string>& inputs, const std::string& out_svg, int window) {
  if (inputs.empty()) throw std::invalid_argument("plot: no metrics CSVs given");
  std::vector<std::string> labels;
  std::map<std::string, std::vector<std::vector<MetricsRow>>> groups;
  for (const std::string& in : inputs) {
    fs::path csv = in;
    if (fs::is_directory(csv)) csv /= "metrics.csv";
    std::vector<MetricsRow> rows = read_metrics_csv(csv.string());
    const fs::path cfg = csv.parent_path() / "config.json";
    std::string label = csv.parent_path().filename().string();
    if (label.empty()) label = csv.stem().string();
    if (fs::exists(cfg)) {
      const ExperimentConfig c = load_config(cfg.string());
      label = c.train.env + " " + std::string(arch_name(c.train.arch)) + " c3=" + format_real(c.train.c_costate) +
              " [" + config_family_hash(c) + "]";
    }
    if (!groups.count(label)) labels.push_back(label);
    groups[label].push_back(std::move(rows));
  }
  std::vector<CurveBand> bands;
  for (const std::string& l : labels) bands.push_back(aggregate_curves(l, groups[l], window));
  write_file(out_svg, render_svg(bands));
}

}  // namespace costate
