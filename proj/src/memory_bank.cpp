#include "mgproto/memory_bank.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "mgproto/errors.hpp"

namespace mgproto {

MemoryBank::MemoryBank(std::size_t num_classes, std::size_t capacity, std::size_t dim)
    : capacity_(capacity), dim_(dim), queues_(num_classes) {
  require(num_classes >= 1 && capacity >= 1 && dim >= 1, "memory bank extents must be positive");
  for (auto& q : queues_) q.storage.assign(capacity * dim, 0.0);
}

const MemoryBank::Queue& MemoryBank::queue(std::size_t label) const {
  require(label < queues_.size(), "class label out of range: " + std::to_string(label));
  return queues_[label];
}

void MemoryBank::push(std::size_t label, std::span<const double> feature) {
  require(label < queues_.size(), "class label out of range: " + std::to_string(label));
  require(feature.size() == dim_, "memory bank feature dim mismatch");
  for (double v : feature) require(std::isfinite(v), "memory bank feature is not finite");
  auto& q = queues_[label];
  std::size_t slot;
  if (q.count < capacity_) {
    slot = (q.head + q.count) % capacity_;
    ++q.count;
  } else {
    slot = q.head;
    q.head = (q.head + 1) % capacity_;
  }
  std::copy(feature.begin(), feature.end(), q.storage.begin() + static_cast<std::ptrdiff_t>(slot * dim_));
  ++q.inserted;
}

std::span<const double> MemoryBank::entry(std::size_t label, std::size_t k) const {
  const auto& q = queue(label);
  require(k < q.count, "memory bank slot out of range");
  const std::size_t slot = (q.head + k) % capacity_;
  return {q.storage.data() + slot * dim_, dim_};
}

FeatureMatrix MemoryBank::snapshot(std::size_t label) const {
  const auto& q = queue(label);
  FeatureMatrix out(q.count, dim_);
  for (std::size_t k = 0; k < q.count; ++k) {
    auto src = entry(label, k);
    std::copy(src.begin(), src.end(), out.row(k).begin());
  }
  return out;
}

void MemoryBank::export_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "class_id,slot_index";
  for (std::size_t d = 0; d < dim_; ++d) out << ",f" << d;
  out << '\n';
  char buf[32];
  for (std::size_t c = 0; c < queues_.size(); ++c) {
    for (std::size_t k = 0; k < size(c); ++k) {
      out << c << ',' << k;
      for (double v : entry(c, k)) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << ',' << buf;
      }
      out << '\n';
    }
  }
}

std::vector<std::size_t> most_active_positions(const FeatureGrid& grid, const ClassMixture& mix) {
  require(grid.dim() == mix.dim, "feature dim does not match mixture dim");
  std::vector<std::size_t> best(mix.num_prototypes, 0);
  for (std::size_t m = 0; m < mix.num_prototypes; ++m) {
    double best_dist = squared_distance(grid.at(0), mix.mean(m));
    for (std::size_t p = 1; p < grid.positions(); ++p) {
      const double d = squared_distance(grid.at(p), mix.mean(m));
      if (d < best_dist) {
        best_dist = d;
        best[m] = p;
      }
    }
  }
  return best;
}

void bank_update(MemoryBank& bank, const FeatureGrid& grid, std::size_t label, const ClassMixture& mix) {
  require(grid.dim() == bank.dim(), "feature dim does not match memory bank dim");
  for (std::size_t pos : most_active_positions(grid, mix)) bank.push(label, grid.at(pos));
}

}  // namespace mgproto
