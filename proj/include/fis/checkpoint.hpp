// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint persistence: a text header identifying the run followed by
// named little-endian binary64 tensors, each length-prefixed.

#pragma once

#include "fis/schedule.hpp"
#include "fis/types.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace fis {

struct CheckpointHeader {
  int format_version = 1;
  std::string preset_id;
  std::string target_id;
  int d = 0;
  long step = 0;
  std::uint64_t seed = 0;
};

struct Checkpoint {
  CheckpointHeader header;
  std::vector<std::pair<std::string, VectorXd>> tensors;

  const VectorXd& tensor(const std::string& name) const;
  bool has_tensor(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace fis
