#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ssam/params.hpp"

namespace ssam::pipeline {

struct CheckpointBlock {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// Ordered named blocks of 32-bit floats. Integers are stored as 16-bit
/// limbs, four per 64-bit value, so every value is exact in a float.
struct Checkpoint {
  std::vector<CheckpointBlock> blocks;

  bool has(const std::string& name) const;
  /// FormatError when absent.
  const CheckpointBlock& at(const std::string& name) const;

  void put(const std::string& name, Shape shape, std::vector<float> values);
  void put(const std::string& name, const Tensor<float>& t);
  void put_u64(const std::string& name, const std::vector<std::uint64_t>& values);
  std::vector<std::uint64_t> get_u64(const std::string& name) const;
  void put_params(const ParamList<float>& params);
  /// Copies block values into every listed tensor. FormatError on a missing
  /// name or shape mismatch.
  void load_params(const ParamList<float>& params) const;
};

/// "SSAM1", u32 block count, then per block: u32 name length, name bytes,
/// u32 rank, u32 dims, u32 value count, little-endian f32 values.
std::string serialize(const Checkpoint& c);
Checkpoint deserialize(const std::string& bytes);

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ssam::pipeline
