#include "mgproto/grounding.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mgproto/errors.hpp"
#include "mgproto/parallel.hpp"

namespace mgproto {

namespace {

struct Candidate {
  double distance = 0.0;
  std::size_t sample = 0;
  std::size_t pos = 0;
  bool found = false;
};

}  // namespace

GroundingResult ground_prototypes(const TinyNet& net, const ModelHead& head, std::span<const Sample> train,
                                  std::size_t threads) {
  head.validate();
  require(net.dim() == head.dim(), "network output dim does not match head dim");
  const std::size_t n_classes = head.num_classes();
  const std::size_t n_protos = head.num_prototypes();

  std::vector<FeatureGrid> features(train.size());
  parallel_for(train.size(), threads, [&](std::size_t k) { features[k] = forward(net, train[k].raw).features; });

  std::vector<std::vector<std::size_t>> by_class(n_classes);
  for (std::size_t k = 0; k < train.size(); ++k) {
    if (train[k].label >= 0 && static_cast<std::size_t>(train[k].label) < n_classes) {
      by_class[static_cast<std::size_t>(train[k].label)].push_back(k);
    }
  }
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (by_class[c].empty()) throw ContractError("class " + std::to_string(c) + " has no training data");
  }

  // Maximum likelihood is minimum squared distance; comparing distances avoids
  // ties caused by exp underflow far from the mean.
  std::vector<Candidate> best(n_classes * n_protos);
  parallel_for(n_classes * n_protos, threads, [&](std::size_t slot) {
    const std::size_t c = slot / n_protos;
    const auto mean = head.classes[c].mean(slot % n_protos);
    Candidate cand;
    for (std::size_t k : by_class[c]) {
      const auto& grid = features[k];
      for (std::size_t pos = 0; pos < grid.positions(); ++pos) {
        const double d = squared_distance(grid.at(pos), mean);
        if (!cand.found || d < cand.distance) cand = {d, k, pos, true};
      }
    }
    best[slot] = cand;
  });

  GroundingResult out{head, {}};
  out.record.reserve(best.size());
  for (std::size_t slot = 0; slot < best.size(); ++slot) {
    const std::size_t c = slot / n_protos;
    const std::size_t m = slot % n_protos;
    const auto& cand = best[slot];
    const auto& grid = features[cand.sample];
    const auto chosen = grid.at(cand.pos);
    auto mean = out.head.classes[c].mean(m);
    std::copy(chosen.begin(), chosen.end(), mean.begin());
    out.record.push_back({c, m, train[cand.sample].id, cand.pos / grid.width(), cand.pos % grid.width(),
                          std::exp(-kPi * cand.distance)});
  }
  return out;
}

GroundingResult ground_prototypes(const TrainState& state, std::span<const Sample> train, std::size_t threads) {
  return ground_prototypes(state.net, state.head, train, threads);
}

GroundingResult hard_replace_baseline(const TrainState& state, std::span<const Sample> train, std::size_t threads) {
  require(state.point_based, "hard replacement applies to point-based training only");
  return ground_prototypes(state.net, state.head, train, threads);
}

ModelHead prune(const ModelHead& head, std::size_t keep, bool renormalize) {
  head.validate();
  const std::size_t n_protos = head.num_prototypes();
  require(keep >= 1 && keep <= n_protos,
          "keep must lie in [1, " + std::to_string(n_protos) + "], got " + std::to_string(keep));
  ModelHead out(head.num_classes(), keep, head.dim());
  for (std::size_t c = 0; c < head.num_classes(); ++c) {
    const auto& src = head.classes[c];
    std::vector<std::size_t> order(n_protos);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return src.priors[a] > src.priors[b]; });
    order.resize(keep);
    std::sort(order.begin(), order.end());
    auto& dst = out.classes[c];
    dst.class_id = src.class_id;
    double mass = 0.0;
    for (std::size_t k = 0; k < keep; ++k) {
      const auto mean = src.mean(order[k]);
      std::copy(mean.begin(), mean.end(), dst.mean(k).begin());
      dst.priors[k] = src.priors[order[k]];
      mass += dst.priors[k];
    }
    if (renormalize && mass > 0.0) {
      for (double& p : dst.priors) p /= mass;
    }
  }
  return out;
}

}  // namespace mgproto
