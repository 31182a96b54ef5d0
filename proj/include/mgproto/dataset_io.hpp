#pragma once

// Dataset split files: a binary tensor file plus a JSON sidecar next to it
// (<file>.json) recording shapes, seed and the generating spec.
//
// Binary layout, little-endian:
//   magic "MGPDATA\0" (8 bytes), version u32 = 1, count u32, height u32,
//   width u32, raw_dim u32, then per sample: label i32 followed by
//   height*width*raw_dim f64 values (row-major i, j, d).

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "mgproto/synthetic.hpp"

namespace mgproto {

nlohmann::ordered_json spec_to_json(const SyntheticSpec& spec);

/// Writes `path` and `path.json`. `meta` is merged into the sidecar.
void write_split(const std::filesystem::path& path, const std::vector<Sample>& samples,
                 const nlohmann::ordered_json& meta);

/// Throws FormatError on a malformed file; the sidecar is not required.
std::vector<Sample> read_split(const std::filesystem::path& path);

}  // namespace mgproto
