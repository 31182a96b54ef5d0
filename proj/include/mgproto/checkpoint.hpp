#pragma once

// Versioned binary checkpoint.
//
//   offset  size  field
//   0       8     magic "MGPROTO\0"
//   8       4     format version (u32, currently 1)
//   12      4     C  (u32)
//   16      4     M  (u32)
//   20      4     D  (u32)
//   24      ...   per class c: M priors, then M*D means (row-major), f64
//           4     flags (u32); bit 0 set when network parameters follow
//           ...   if bit 0: raw_dim (u32), dim (u32), then every TinyNet
//                 tensor in TinyNet::tensors() order, f64
//
// All integers and floats are little-endian.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mgproto/density.hpp"
#include "mgproto/tiny_net.hpp"

namespace mgproto {

inline constexpr char kCheckpointMagic[8] = {'M', 'G', 'P', 'R', 'O', 'T', 'O', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelHead head;
  std::optional<TinyNet> net;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);

/// Throws FormatError on bad magic, unknown version, truncation or trailing bytes.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Human-readable mirror of the checkpoint contents.
std::string checkpoint_to_json(const Checkpoint& ckpt);

}  // namespace mgproto
