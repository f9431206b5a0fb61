// SPDX-License-Identifier: Apache-2.0

#include "fis/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian");

namespace fis {

namespace {
constexpr char kMagic[] = "FIS-CHECKPOINT";
}

const VectorXd& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, v] : tensors)
    if (n == name) return v;
  throw IncompatibilityError("checkpoint is missing tensor: " + name);
}

bool Checkpoint::has_tensor(const std::string& name) const {
  for (const auto& [n, v] : tensors)
    if (n == name) return true;
  return false;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw NumericalError("cannot open checkpoint for writing: " + path);
  const auto& h = ckpt.header;
  out << kMagic << ' ' << h.format_version << '\n';
  out << "preset_id " << h.preset_id << '\n';
  out << "target_id " << h.target_id << '\n';
  out << "d " << h.d << '\n';
  out << "step " << h.step << '\n';
  out << "seed " << h.seed << '\n';
  for (const auto& [name, v] : ckpt.tensors) {
    out << "tensor " << name << ' ' << v.size() << '\n';
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  out << "end\n";
  if (!out) throw NumericalError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NumericalError("cannot open checkpoint: " + path);
  Checkpoint ckpt;
  std::string line;
  if (!std::getline(in, line))
    throw IncompatibilityError("checkpoint truncated: " + path);
  {
    std::istringstream ss(line);
    std::string magic;
    ss >> magic >> ckpt.header.format_version;
    if (magic != kMagic)
      throw IncompatibilityError("not a checkpoint file: " + path);
    if (ckpt.header.format_version != 1)
      throw IncompatibilityError("unsupported checkpoint format_version");
  }
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "end") return ckpt;
    if (key == "preset_id") ss >> ckpt.header.preset_id;
    else if (key == "target_id") ss >> ckpt.header.target_id;
    else if (key == "d") ss >> ckpt.header.d;
    else if (key == "step") ss >> ckpt.header.step;
    else if (key == "seed") ss >> ckpt.header.seed;
    else if (key == "tensor") {
      std::string name;
      Index n = 0;
      ss >> name >> n;
      VectorXd v(n);
      in.read(reinterpret_cast<char*>(v.data()),
              static_cast<std::streamsize>(n * sizeof(double)));
      if (!in) throw IncompatibilityError("checkpoint tensor truncated: " + name);
      ckpt.tensors.emplace_back(name, std::move(v));
    } else {
      throw IncompatibilityError("unknown checkpoint record: " + key);
    }
  }
  throw IncompatibilityError("checkpoint missing end marker: " + path);
}

}  // namespace fis
