#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mgproto/density.hpp"

namespace mgproto {

/// Row-major N x D matrix of feature vectors.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::size_t dim) : rows(rows), dim(dim), values(rows * dim, 0.0) {}

  std::span<const double> row(std::size_t n) const { return {values.data() + n * dim, dim}; }
  std::span<double> row(std::size_t n) { return {values.data() + n * dim, dim}; }
};

/// Per-class bounded FIFO of feature vectors. Once a queue holds `capacity`
/// vectors every push evicts the oldest one.
class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(std::size_t num_classes, std::size_t capacity, std::size_t dim);

  std::size_t num_classes() const { return queues_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::size_t size(std::size_t label) const { return queue(label).count; }
  /// Total pushes ever made to this class, including evicted ones.
  std::uint64_t insertions(std::size_t label) const { return queue(label).inserted; }

  void push(std::size_t label, std::span<const double> feature);

  /// k-th stored vector of a class, oldest first.
  std::span<const double> entry(std::size_t label, std::size_t k) const;

  /// Immutable copy of a class queue, oldest first.
  FeatureMatrix snapshot(std::size_t label) const;

  /// CSV with columns class_id, slot_index, f0..f{D-1}.
  void export_csv(const std::filesystem::path& path) const;

 private:
  struct Queue {
    std::vector<double> storage;  // capacity x dim ring
    std::size_t head = 0;         // slot of the oldest entry
    std::size_t count = 0;
    std::uint64_t inserted = 0;
  };
  const Queue& queue(std::size_t label) const;

  std::size_t capacity_ = 0;
  std::size_t dim_ = 0;
  std::vector<Queue> queues_;
};

/// Position maximizing the likelihood of each prototype (ties: lowest
/// row-major index). Comparing squared distances keeps the ordering exact even
/// where the likelihood itself underflows.
std::vector<std::size_t> most_active_positions(const FeatureGrid& grid, const ClassMixture& mix);

/// Enqueues, for each prototype of `mix`, the grid feature it likes best into
/// the queue of `label`: M pushes per call, duplicates allowed.
void bank_update(MemoryBank& bank, const FeatureGrid& grid, std::size_t label, const ClassMixture& mix);

}  // namespace mgproto
