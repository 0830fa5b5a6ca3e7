#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "bat/tensor.hpp"

namespace bat::ad {

inline constexpr int kCheckpointFormatVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

/// Text container of (name, shape, values) triples. Values are written as
/// hexadecimal floats so a save/load round trip is exact.
struct Checkpoint {
  int format_version = kCheckpointFormatVersion;
  std::map<std::string, std::string> meta;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
  const NamedTensor& at(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& text);

}  // namespace bat::ad
