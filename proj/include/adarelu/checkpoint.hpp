#pragma once

#include "adarelu/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace adarelu {

enum class Precision : std::uint8_t { f32 = 0, f64 = 1 };

/// One named array. Values are held in double; f32 arrays round-trip exactly because
/// every float is representable as a double.
struct CheckpointArray {
  std::string name;
  Precision precision = Precision::f32;
  std::vector<std::uint64_t> dims;
  std::vector<double> values;
};

/// Layout on disk (little-endian): "ADRL1", u32 count, then per array: u32 name length,
/// name bytes, u8 precision tag, u32 rank, rank x u64 dims, raw values.
struct Checkpoint {
  std::vector<CheckpointArray> arrays;

  const CheckpointArray* find(const std::string& name) const;
  const CheckpointArray& at(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// "config.arch" array that lets a checkpoint rebuild its model.
CheckpointArray encode_arch(const ArchConfig& config);
ArchConfig decode_arch(const CheckpointArray& array);

template <typename Scalar>
Checkpoint model_checkpoint(const TranslationModel<Scalar>& model);

/// Rebuilds a model from "config.arch" and the parameter arrays. Arrays under other
/// prefixes (e.g. "train.") are ignored.
template <typename Scalar>
TranslationModel<Scalar> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace adarelu
