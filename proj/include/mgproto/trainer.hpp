#pragma once

// Alternating training loop. Each minibatch step first updates the network
// and proxies by gradient descent on L_total with the head frozen, then pushes
// the batch's class-relevant features into the memory bank and refits the
// class mixtures by EM with the network frozen.
//
// In point-based mode there is no EM: prototype means are trained by gradient
// descent on the CE term together with the network, priors stay uniform.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mgproto/em.hpp"
#include "mgproto/memory_bank.hpp"
#include "mgproto/mining.hpp"
#include "mgproto/objective.hpp"
#include "mgproto/proxy_anchor.hpp"
#include "mgproto/rng.hpp"
#include "mgproto/synthetic.hpp"
#include "mgproto/tiny_net.hpp"

namespace mgproto {

struct TrainConfig {
  std::size_t dim = 64;
  std::size_t num_prototypes = 10;
  std::size_t levels = 20;
  std::size_t bank_capacity = 400;
  EmConfig em;
  double lambda1 = 0.2;
  double lambda2 = 0.5;
  double proxy_margin = 0.1;
  double proxy_scale = 32.0;
  bool mining = true;
  bool aux = true;
  bool point_based = false;
  double lr_backbone = 0.005;
  double lr_addon = 0.05;
  double lr_proxy = 0.5;
  double lr_prototype = 0.5;     // point-based mode only
  double lr_decay = 0.4;         // multiplier applied every lr_decay_every epochs
  std::size_t lr_decay_every = 15;
  std::size_t epochs = 30;
  std::size_t batch_size = 10;
  std::size_t warmup_epochs = 1;
  bool init_from_data = true;    // false: means drawn from N(0, init_noise^2)
  double init_noise = 0.01;      // jitter on data-sampled means, or their std when random
  std::size_t threads = 1;

  void validate() const;
  ObjectiveConfig objective() const { return {lambda1, lambda2, levels, mining, aux}; }
};

struct TrainState {
  TinyNet net;
  ModelHead head;
  MemoryBank bank;
  ProxySet proxies;
  Rng rng{0};
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::uint64_t seed = 0;
  bool point_based = false;
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  LossBreakdown loss;
};

/// Identity-initialized network, seeded random proxies, prototype means drawn
/// from random positions of random same-class training grids (plus init_noise
/// jitter), uniform priors and an empty memory bank.
TrainState init_state(const TrainConfig& cfg, std::span<const Sample> train, std::uint64_t seed);

/// Learning-rate multiplier for an epoch under the step-decay schedule.
double lr_multiplier(const TrainConfig& cfg, std::size_t epoch);

/// Gradient step on net and proxies (and means in point-based mode).
/// Throws NumericError naming the offending samples if the loss is not finite.
LossBreakdown net_update(TrainState& state, std::span<const Sample* const> batch, const TrainConfig& cfg);

/// Bank update with the current network, then em_fit when `run_em`. No-op in
/// point-based mode.
EmFitResult prototype_update(TrainState& state, std::span<const Sample* const> batch, const TrainConfig& cfg,
                             bool run_em);

/// Full run: cfg.epochs passes over shuffled minibatches; EM starts after
/// cfg.warmup_epochs. Returns one record per step.
std::vector<StepRecord> train(TrainState& state, std::span<const Sample> train_set, const TrainConfig& cfg);

/// Predicted class for every sample: argmax of the (log) class-conditional
/// densities under the network features, ties to the lowest class.
std::vector<std::size_t> predict(const TinyNet& net, const ModelHead& head, std::span<const Sample> samples,
                                 std::size_t threads = 1);

/// ood_score of every sample under the network features.
std::vector<double> ood_scores(const TinyNet& net, const ModelHead& head, std::span<const Sample> samples,
                               std::size_t threads = 1);

double evaluate_accuracy(const TinyNet& net, const ModelHead& head, std::span<const Sample> samples,
                         std::size_t threads = 1);

}  // namespace mgproto
