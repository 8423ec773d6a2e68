#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "avsync/diffnum/nn.hpp"

namespace avsync::diff {

// Parameter checkpoint, all integers and floats little-endian:
//
//   offset  size  field
//   0       4     magic "AVPC"
//   4       1     version (1)
//   5       4     u32 entry count
//   then per entry:
//           4     u32 path length P
//           P     path bytes (UTF-8, no terminator)
//           4     u32 rank R
//           8*R   u64 extents
//           8*N   f64 payload, N = product of extents, row-major
inline constexpr char kCheckpointMagic[4] = {'A', 'V', 'P', 'C'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string path;
  Shape shape;
  std::vector<double> values;
};

std::vector<std::uint8_t> encode_checkpoint(const ParameterStore& store);
std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const ParameterStore& store, const std::string& file);
std::vector<CheckpointEntry> read_checkpoint(const std::string& file);
/// Overwrites every parameter of `store` from the file; paths and shapes must
/// match exactly.
void load_checkpoint(ParameterStore& store, const std::string& file);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace avsync::diff
