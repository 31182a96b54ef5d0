#include "mgproto/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "mgproto/errors.hpp"

namespace mgproto {

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int k = 0; k < 8; ++k) bytes_.push_back(static_cast<std::uint8_t>(bits >> (8 * k)));
  }
  void raw(const char* data, std::size_t n) { bytes_.insert(bytes_.end(), data, data + n); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * k);
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * k);
    return std::bit_cast<double>(bits);
  }
  bool raw_equals(const char* data, std::size_t n) {
    if (bytes_.size() - pos_ < n) return false;
    const bool same = std::memcmp(bytes_.data() + pos_, data, n) == 0;
    pos_ += n;
    return same;
  }
  bool exhausted() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint is truncated");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

// Guards against absurd headers before allocating.
constexpr std::uint32_t kMaxExtent = 1u << 20;

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  const auto& head = ckpt.head;
  head.validate();
  Writer w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(head.num_classes()));
  w.u32(static_cast<std::uint32_t>(head.num_prototypes()));
  w.u32(static_cast<std::uint32_t>(head.dim()));
  for (const auto& mix : head.classes) {
    for (double p : mix.priors) w.f64(p);
    for (double v : mix.means) w.f64(v);
  }
  w.u32(ckpt.net ? 1u : 0u);
  if (ckpt.net) {
    const auto& net = *ckpt.net;
    require(net.dim() == head.dim(), "network output dim does not match head dim");
    w.u32(static_cast<std::uint32_t>(net.raw_dim()));
    w.u32(static_cast<std::uint32_t>(net.dim()));
    for (auto t : net.tensors()) {
      for (double v : t) w.f64(v);
    }
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (!r.raw_equals(kCheckpointMagic, sizeof kCheckpointMagic)) throw FormatError("bad magic");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto num_classes = r.u32();
  const auto num_prototypes = r.u32();
  const auto dim = r.u32();
  if (num_classes < 2 || num_prototypes < 1 || dim < 1 || num_classes > kMaxExtent ||
      num_prototypes > kMaxExtent || dim > kMaxExtent) {
    throw FormatError("implausible checkpoint header extents");
  }
  Checkpoint ckpt;
  ckpt.head = ModelHead(num_classes, num_prototypes, dim);
  for (auto& mix : ckpt.head.classes) {
    for (double& p : mix.priors) p = r.f64();
    for (double& v : mix.means) v = r.f64();
  }
  const auto flags = r.u32();
  if (flags & ~1u) throw FormatError("unknown checkpoint flags");
  if (flags & 1u) {
    const auto raw_dim = r.u32();
    const auto net_dim = r.u32();
    if (net_dim != dim || raw_dim < 1 || raw_dim > kMaxExtent) {
      throw FormatError("network section does not match head");
    }
    TinyNet net(raw_dim, net_dim);
    for (auto t : net.tensors()) {
      for (double& v : t) v = r.f64();
    }
    ckpt.net = std::move(net);
  }
  if (!r.exhausted()) throw FormatError("trailing bytes after checkpoint payload");
  try {
    ckpt.head.validate();
  } catch (const ContractError& e) {
    throw FormatError(std::string("invalid checkpoint contents: ") + e.what());
  }
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

std::string checkpoint_to_json(const Checkpoint& ckpt) {
  using nlohmann::ordered_json;
  ordered_json doc;
  doc["format"] = "MGPROTO";
  doc["version"] = kCheckpointVersion;
  doc["num_classes"] = ckpt.head.num_classes();
  doc["num_prototypes"] = ckpt.head.num_prototypes();
  doc["dim"] = ckpt.head.dim();
  doc["covariance_diag"] = kCovarianceDiag;
  auto& classes = doc["classes"] = ordered_json::array();
  for (const auto& mix : ckpt.head.classes) {
    ordered_json entry;
    entry["class_id"] = mix.class_id;
    entry["priors"] = mix.priors;
    auto& means = entry["means"] = ordered_json::array();
    for (std::size_t m = 0; m < mix.num_prototypes; ++m) {
      auto mean = mix.mean(m);
      means.push_back(std::vector<double>(mean.begin(), mean.end()));
    }
    classes.push_back(std::move(entry));
  }
  if (ckpt.net) {
    const auto& net = *ckpt.net;
    ordered_json n;
    n["raw_dim"] = net.raw_dim();
    n["dim"] = net.dim();
    n["parameter_count"] = net.parameter_count();
    n["backbone"] = {{"weight", net.backbone.weight}, {"bias", net.backbone.bias}};
    n["add_on1"] = {{"weight", net.add_on1.weight}, {"bias", net.add_on1.bias}};
    n["add_on2"] = {{"weight", net.add_on2.weight}, {"bias", net.add_on2.bias}};
    doc["net"] = std::move(n);
  }
  return doc.dump(2);
}

}  // namespace mgproto
