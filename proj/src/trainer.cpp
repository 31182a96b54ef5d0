#include "mgproto/trainer.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "mgproto/errors.hpp"
#include "mgproto/parallel.hpp"

namespace mgproto {

namespace {

void descend(std::span<double> params, std::span<const double> grad, double lr) {
  for (std::size_t k = 0; k < params.size(); ++k) params[k] -= lr * grad[k];
}

std::string describe_batch(std::span<const Sample* const> batch, const LossBreakdown& loss) {
  std::ostringstream os;
  os << "non-finite loss (ce=" << loss.ce << ", mining=" << loss.mining << ", aux=" << loss.aux
     << ", total=" << loss.total << ") on batch samples [";
  for (std::size_t k = 0; k < batch.size(); ++k) {
    os << (k ? ", " : "") << batch[k]->id << ":" << batch[k]->label;
  }
  os << "]";
  return os.str();
}

}  // namespace

void TrainConfig::validate() const {
  require(dim >= 1, "dim must be positive");
  require(num_prototypes >= 1, "num_prototypes must be positive");
  require(levels >= 1, "levels must be positive");
  require(!mining || levels >= 2, "mining requires at least two levels");
  require(bank_capacity >= num_prototypes, "bank_capacity must hold at least M vectors");
  em.validate();
  require(lambda1 >= 0.0 && lambda2 >= 0.0, "loss weights must be non-negative");
  require(proxy_scale > 0.0, "proxy scale must be positive");
  for (double lr : {lr_backbone, lr_addon, lr_proxy, lr_prototype}) {
    require(lr >= 0.0 && std::isfinite(lr), "learning rates must be finite and non-negative");
  }
  require(lr_decay > 0.0 && lr_decay <= 1.0, "lr_decay must lie in (0, 1]");
  require(lr_decay_every >= 1, "lr_decay_every must be positive");
  require(batch_size >= 1, "batch_size must be positive");
  require(init_noise >= 0.0, "init_noise must be non-negative");
  require(threads >= 1, "threads must be positive");
}

TrainState init_state(const TrainConfig& cfg, std::span<const Sample> train, std::uint64_t seed) {
  cfg.validate();
  require(!train.empty(), "empty training set");
  const std::size_t raw_dim = train[0].raw.dim();
  int max_label = -1;
  for (const auto& s : train) max_label = std::max(max_label, s.label);
  const std::size_t n_classes = static_cast<std::size_t>(max_label + 1);
  require(n_classes >= 2, "training data must cover at least two classes");
  require(cfg.levels <= train[0].raw.positions(), "levels exceed the number of grid positions");

  TrainState state;
  state.seed = seed;
  state.rng = Rng(seed);
  state.point_based = cfg.point_based;
  state.net = TinyNet::identity(raw_dim, cfg.dim);
  state.bank = MemoryBank(n_classes, cfg.bank_capacity, cfg.dim);
  state.proxies = ProxySet(n_classes, raw_dim);
  state.proxies.margin = cfg.proxy_margin;
  state.proxies.scale = cfg.proxy_scale;
  for (double& v : state.proxies.proxies) v = state.rng.normal();

  std::vector<std::vector<std::size_t>> by_class(n_classes);
  for (std::size_t k = 0; k < train.size(); ++k) {
    require(train[k].label >= 0, "training samples must be labelled");
    by_class[static_cast<std::size_t>(train[k].label)].push_back(k);
  }
  state.head = ModelHead(n_classes, cfg.num_prototypes, cfg.dim);
  for (std::size_t c = 0; c < n_classes; ++c) {
    require(!by_class[c].empty(), "class " + std::to_string(c) + " has no training data");
    auto& mix = state.head.classes[c];
    for (std::size_t m = 0; m < cfg.num_prototypes; ++m) {
      auto mean = mix.mean(m);
      if (!cfg.init_from_data) {
        for (double& v : mean) v = state.rng.normal(0.0, cfg.init_noise);
        continue;
      }
      const auto& sample = train[by_class[c][state.rng.below(by_class[c].size())]];
      const auto acts = forward(state.net, sample.raw);
      const auto pos = static_cast<std::size_t>(state.rng.below(sample.raw.positions()));
      auto feature = acts.features.at(pos);
      for (std::size_t d = 0; d < cfg.dim; ++d) mean[d] = feature[d] + state.rng.normal(0.0, cfg.init_noise);
    }
  }
  return state;
}

double lr_multiplier(const TrainConfig& cfg, std::size_t epoch) {
  return std::pow(cfg.lr_decay, static_cast<double>(epoch / cfg.lr_decay_every));
}

LossBreakdown net_update(TrainState& state, std::span<const Sample* const> batch, const TrainConfig& cfg) {
  const auto obj = evaluate_batch(state.net, state.head, state.proxies, batch, cfg.objective(), true, cfg.threads);
  const auto& loss = obj.loss;
  if (!std::isfinite(loss.total) || !std::isfinite(loss.ce) || !std::isfinite(loss.mining) ||
      !std::isfinite(loss.aux)) {
    throw NumericError(describe_batch(batch, loss));
  }
  const double scale = lr_multiplier(cfg, state.epoch);
  auto params = state.net.tensors();
  auto grads = obj.grad_net.tensors();
  // Tensors 0-1 belong to the backbone, 2-5 to the add-on layers.
  for (std::size_t t = 0; t < params.size(); ++t) {
    descend(params[t], grads[t], scale * (t < 2 ? cfg.lr_backbone : cfg.lr_addon));
  }
  if (cfg.aux) descend(state.proxies.proxies, obj.grad_proxies, scale * cfg.lr_proxy);
  if (state.point_based) {
    const std::size_t per_class = state.head.num_prototypes() * state.head.dim();
    for (std::size_t c = 0; c < state.head.num_classes(); ++c) {
      std::span<const double> g(obj.grad_means.data() + c * per_class, per_class);
      descend(state.head.classes[c].means, g, scale * cfg.lr_prototype);
    }
  }
  if (!state.net.all_finite()) throw NumericError(describe_batch(batch, loss) + " (parameters diverged)");
  return loss;
}

EmFitResult prototype_update(TrainState& state, std::span<const Sample* const> batch, const TrainConfig& cfg,
                             bool run_em) {
  if (state.point_based) return {state.head, {}};
  std::vector<FeatureGrid> features(batch.size());
  parallel_for(batch.size(), cfg.threads, [&](std::size_t k) {
    features[k] = forward(state.net, batch[k]->raw).features;
  });
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto label = static_cast<std::size_t>(batch[k]->label);
    bank_update(state.bank, features[k], label, state.head.classes[label]);
  }
  if (!run_em) return {state.head, {}};
  auto fit = em_fit(state.bank, state.head, cfg.em, cfg.threads);
  state.head = fit.head;
  return fit;
}

std::vector<StepRecord> train(TrainState& state, std::span<const Sample> train_set, const TrainConfig& cfg) {
  cfg.validate();
  require(!train_set.empty(), "empty training set");
  std::vector<StepRecord> history;
  std::vector<std::size_t> order(train_set.size());
  std::vector<const Sample*> batch;
  for (; state.epoch < cfg.epochs; ++state.epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[state.rng.below(i)]);
    }
    const bool run_em = state.epoch >= cfg.warmup_epochs;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k) {
        batch.push_back(&train_set[order[k]]);
      }
      const auto loss = net_update(state, batch, cfg);
      prototype_update(state, batch, cfg, run_em);
      history.push_back({state.step, state.epoch, loss});
      ++state.step;
    }
  }
  return history;
}

std::vector<std::size_t> predict(const TinyNet& net, const ModelHead& head, std::span<const Sample> samples,
                                 std::size_t threads) {
  std::vector<std::size_t> out(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t k) {
    const auto features = forward(net, samples[k].raw).features;
    std::vector<double> logs(head.num_classes());
    for (std::size_t c = 0; c < head.num_classes(); ++c) logs[c] = log_class_conditional(features, head.classes[c]);
    out[k] = argmax(logs);
  });
  return out;
}

std::vector<double> ood_scores(const TinyNet& net, const ModelHead& head, std::span<const Sample> samples,
                               std::size_t threads) {
  std::vector<double> out(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t k) {
    out[k] = ood_score(forward(net, samples[k].raw).features, head);
  });
  return out;
}

double evaluate_accuracy(const TinyNet& net, const ModelHead& head, std::span<const Sample> samples,
                         std::size_t threads) {
  require(!samples.empty(), "cannot evaluate on an empty split");
  const auto pred = predict(net, head, samples, threads);
  std::size_t hits = 0;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    if (samples[k].label >= 0 && pred[k] == static_cast<std::size_t>(samples[k].label)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

}  // namespace mgproto
