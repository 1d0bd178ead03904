#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace rp3d {

// One named tensor, stored at 32-bit precision in the file.
struct CheckpointEntry {
  std::string name;
  std::vector<int> shape;
  std::vector<double> values;
};

// Container layout: 8-byte magic "RP3DCKP1", little-endian u64 header length,
// JSON header {"meta": ..., "entries": [{name, shape, offset, count}]}, then
// the concatenated little-endian float32 payload.
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const;
};

// The exact double a value becomes after passing through float32.
double round_trip_f32(double v);
std::vector<double> round_trip_f32(std::vector<double> v);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace rp3d
