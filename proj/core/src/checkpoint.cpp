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

#include "costate/checkpoint.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace costate {

namespace {

using Json = nlohmann::ordered_json;

Json vec_json(const Vec& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vec json_vec(const Json& a) {
  Vec v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

Json stats_json(const RunningStats& s) {
  Json j;
  j["count"] = s.count();
  j["mean"] = vec_json(s.mean());
  j["var"] = vec_json(s.var());
  return j;
}

RunningStats json_stats(const Json& j) {
  RunningStats s;
  s.restore(j.at("count").get<double>(), json_vec(j.at("mean")), json_vec(j.at("var")));
  return s;
}

}  // namespace

std::string checkpoint_to_string(const TrainerSnapshot& snap) {
  Json j;
  j["format"] = "costate-rl-checkpoint";
  j["format_version"] = kCheckpointFormatVersion;
  j["env"] = snap.env;
  j["obs_noise"] = snap.obs_noise;
  j["mask_before_norm"] = snap.mask_before_norm;
  j["arch"] = std::string(arch_name(snap.params.arch));
  j["dims"] = {{"d_y", snap.params.dims.d_y}, {"d_h", snap.params.dims.d_h}, {"d_u", snap.params.dims.d_u}};
  j["iteration"] = snap.iteration;
  j["env_steps"] = snap.env_steps;
  Json params = Json::object();
  for (const auto& [name, t] : snap.params.named()) {
    Json shape = Json::array();
    for (int k = 0; k < t->shape.rank; ++k) shape.push_back(t->shape.dims[k]);
    params[std::string(name)] = {{"shape", shape}, {"data", t->data}};
  }
  j["params"] = std::move(params);
  j["obs_stats"] = stats_json(snap.obs_stats);
  j["return_stats"] = stats_json(snap.return_stats);
  j["running_returns"] = snap.running_returns;
  j["rng_state"] = snap.rng_state;
  return j.dump(1) + "\n";
}

TrainerSnapshot checkpoint_from_string(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw std::runtime_error(std::string("checkpoint: invalid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "costate-rl-checkpoint") {
      throw std::runtime_error("checkpoint: unrecognized format tag");
    }
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw std::runtime_error("checkpoint: unsupported format_version " + std::to_string(version));
    }
    TrainerSnapshot snap;
    snap.env = j.at("env").get<std::string>();
    snap.obs_noise = j.at("obs_noise").get<double>();
    snap.mask_before_norm = j.at("mask_before_norm").get<bool>();
    snap.params.arch = parse_arch(j.at("arch").get<std::string>());
    const Json& dims = j.at("dims");
    snap.params.dims = {dims.at("d_y").get<int>(), dims.at("d_h").get<int>(), dims.at("d_u").get<int>()};
    snap.iteration = j.at("iteration").get<long>();
    snap.env_steps = j.at("env_steps").get<long>();
    const Json& params = j.at("params");
    for (auto& [name, t] : snap.params.named()) {
      const std::string key(name);
      if (!params.contains(key)) throw std::runtime_error("checkpoint: missing parameter '" + key + "'");
      const Json& entry = params.at(key);
      const Json& shape = entry.at("shape");
      Shape s;
      if (shape.size() == 0) {
        s = Shape::scalar();
      } else if (shape.size() == 1) {
        s = Shape::vector(shape[0].get<std::size_t>());
      } else if (shape.size() == 2) {
        s = Shape::matrix(shape[0].get<std::size_t>(), shape[1].get<std::size_t>());
      } else {
        throw std::runtime_error("checkpoint: parameter '" + key + "' has rank > 2");
      }
      *t = Tensor(s, entry.at("data").get<std::vector<double>>());
    }
    if (params.size() != snap.params.named().size()) {
      throw std::runtime_error("checkpoint: unexpected parameters for arch " + j.at("arch").get<std::string>());
    }
    snap.obs_stats = json_stats(j.at("obs_stats"));
    snap.return_stats = json_stats(j.at("return_stats"));
    snap.running_returns = j.at("running_returns").get<std::vector<double>>();
    snap.rng_state = j.at("rng_state").get<std::string>();
    return snap;
  } catch (const Json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const TrainerSnapshot& snapshot, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  out << checkpoint_to_string(snapshot);
  if (!out) throw std::runtime_error("failed writing checkpoint '" + path + "'");
}

TrainerSnapshot load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_string(ss.str());
}

}  // namespace costate
