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

// JSON checkpoints. The encoding is canonical: save(load(save(s))) is
// byte-identical to save(s).

#pragma once

#include <string>

#include "costate/trainer.hpp"

namespace costate {

inline constexpr int kCheckpointFormatVersion = 1;

std::string checkpoint_to_string(const TrainerSnapshot& snapshot);
/// Throws std::runtime_error on malformed input or a format mismatch.
TrainerSnapshot checkpoint_from_string(const std::string& text);

void save_checkpoint(const TrainerSnapshot& snapshot, const std::string& path);
TrainerSnapshot load_checkpoint(const std::string& path);

}  // namespace costate
