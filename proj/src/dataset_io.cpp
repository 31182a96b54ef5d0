#include "mgproto/dataset_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mgproto/errors.hpp"
#include "mgproto/rng.hpp"

namespace mgproto {

namespace {

constexpr char kDataMagic[8] = {'M', 'G', 'P', 'D', 'A', 'T', 'A', '\0'};
constexpr std::uint32_t kDataVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<std::uint8_t>(bits >> (8 * k)));
}

struct Cursor {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (bytes.size() - pos < n) throw FormatError("dataset file is truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(bytes[pos++]) << (8 * k);
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(bytes[pos++]) << (8 * k);
    return std::bit_cast<double>(bits);
  }
};

}  // namespace

nlohmann::ordered_json spec_to_json(const SyntheticSpec& spec) {
  nlohmann::ordered_json j;
  j["num_classes"] = spec.num_classes;
  j["parts_per_class"] = spec.parts_per_class;
  j["parts_per_image"] = spec.parts_per_image;
  j["part_weights"] = spec.part_weights;
  j["raw_dim"] = spec.raw_dim;
  j["height"] = spec.height;
  j["width"] = spec.width;
  j["center_scale"] = spec.center_scale;
  j["class_spread"] = spec.class_spread;
  j["part_spread"] = spec.part_spread;
  j["noise_sigma"] = spec.noise_sigma;
  j["background_sigma"] = spec.background_sigma;
  j["train_per_class"] = spec.train_per_class;
  j["test_per_class"] = spec.test_per_class;
  j["ood_samples"] = spec.ood_samples;
  j["ood_shift"] = spec.ood_shift;
  return j;
}

void write_split(const std::filesystem::path& path, const std::vector<Sample>& samples,
                 const nlohmann::ordered_json& meta) {
  require(!samples.empty(), "cannot write an empty split");
  const auto& first = samples.front().raw;
  std::vector<std::uint8_t> bytes(kDataMagic, kDataMagic + sizeof kDataMagic);
  put_u32(bytes, kDataVersion);
  put_u32(bytes, static_cast<std::uint32_t>(samples.size()));
  put_u32(bytes, static_cast<std::uint32_t>(first.height()));
  put_u32(bytes, static_cast<std::uint32_t>(first.width()));
  put_u32(bytes, static_cast<std::uint32_t>(first.dim()));
  for (const auto& s : samples) {
    require(s.raw.height() == first.height() && s.raw.width() == first.width() && s.raw.dim() == first.dim(),
            "all samples in a split must share a shape");
    put_u32(bytes, static_cast<std::uint32_t>(s.label));
    for (double v : s.raw.values()) put_f64(bytes, v);
  }
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }

  nlohmann::ordered_json side;
  side["format"] = "MGPDATA";
  side["version"] = kDataVersion;
  side["count"] = samples.size();
  side["height"] = first.height();
  side["width"] = first.width();
  side["raw_dim"] = first.dim();
  side["rng"] = Rng::kName;
  for (const auto& [key, value] : meta.items()) side[key] = value;
  std::ofstream out(path.string() + ".json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write sidecar for " + path.string());
  out << side.dump(2) << '\n';
}

std::vector<Sample> read_split(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open dataset " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof kDataMagic || std::memcmp(bytes.data(), kDataMagic, sizeof kDataMagic) != 0) {
    throw FormatError("bad magic in dataset " + path.string());
  }
  Cursor cur{bytes, sizeof kDataMagic};
  if (cur.u32() != kDataVersion) throw FormatError("unsupported dataset version");
  const auto count = cur.u32();
  const auto height = cur.u32();
  const auto width = cur.u32();
  const auto raw_dim = cur.u32();
  if (count == 0 || height == 0 || width == 0 || raw_dim == 0) throw FormatError("empty dataset header");
  const std::size_t cell = static_cast<std::size_t>(height) * width * raw_dim;
  if ((bytes.size() - cur.pos) != static_cast<std::size_t>(count) * (4 + 8 * cell)) {
    throw FormatError("dataset payload size does not match header");
  }
  std::vector<Sample> samples;
  samples.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto label = static_cast<std::int32_t>(cur.u32());
    std::vector<double> values(cell);
    for (double& v : values) v = cur.f64();
    samples.push_back(Sample{FeatureGrid(height, width, raw_dim, std::move(values)), label, k});
  }
  return samples;
}

}  // namespace mgproto
