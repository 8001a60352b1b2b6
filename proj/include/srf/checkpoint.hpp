#pragma once

#include <string>
#include <vector>

#include "srf/parameters.hpp"

namespace srf {

// Layout:
//   "SRFCKPT1"
//   u64 LE header length, then that many bytes of UTF-8 text with one line
//     per parameter: "<name>\t<f32|f64>\t<d0>x<d1>...\n", sorted by name
//   raw little-endian payloads in header order

inline constexpr char kCheckpointMagic[] = "SRFCKPT1";

struct CheckpointEntry {
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
  std::vector<double> values;
};

void save_checkpoint(const std::string& path, const ParameterSet& params);

std::vector<CheckpointEntry> read_checkpoint(const std::string& path);

/// Copies checkpoint values into `params`. Every name, dtype and shape must
/// match; otherwise CheckpointMismatchError names the first offending parameter.
void load_checkpoint(const std::string& path, ParameterSet& params);

}  // namespace srf
