#include "mgproto/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "mgproto/em.hpp"
#include "mgproto/mining.hpp"
#include "mgproto/objective.hpp"
#include "mgproto/proxy_anchor.hpp"
#include "mgproto/rng.hpp"
#include "mgproto/synthetic.hpp"
#include "mgproto/tiny_net.hpp"

namespace mgproto {

namespace {

constexpr std::size_t kSide = 3;
constexpr std::size_t kDim = 3;

FeatureGrid random_grid(Rng& rng, std::size_t dim, double sigma) {
  FeatureGrid g(kSide, kSide, dim);
  for (double& v : g.values()) v = rng.normal(0.0, sigma);
  return g;
}

ModelHead random_head(Rng& rng, std::size_t classes, std::size_t protos, double sigma) {
  ModelHead head(classes, protos, kDim);
  for (auto& mix : head.classes) {
    for (double& v : mix.means) v = rng.normal(0.0, sigma);
    double sum = 0.0;
    for (double& p : mix.priors) sum += (p = rng.uniform(0.2, 1.0));
    for (double& p : mix.priors) p /= sum;
  }
  return head;
}

// Compares `analytic` against central differences of `f` over `params`.
double compare(std::vector<double>& params, const std::vector<double>& analytic,
               const std::function<double()>& f, const GradcheckOptions& opts, std::size_t& coords) {
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double saved = params[k];
    params[k] = saved + opts.step;
    const double up = f();
    params[k] = saved - opts.step;
    const double down = f();
    params[k] = saved;
    const double numeric = (up - down) / (2.0 * opts.step);
    worst = std::max(worst, relative_error(analytic[k], numeric, opts.floor));
    ++coords;
  }
  return worst;
}

void record(GradcheckCase& c, double err, std::size_t instance) {
  if (err > c.max_rel_error) {
    c.max_rel_error = err;
    c.worst_instance = instance;
  }
  ++c.instances;
}

// Logit losses: gradient with respect to grid features and prototype means.
GradcheckCase check_logit_loss(const std::string& name, bool mining, const GradcheckOptions& opts) {
  GradcheckCase out{name};
  Rng rng(opts.seed ^ (mining ? 0x51ULL : 0x17ULL));
  const std::size_t levels = 4;
  for (std::size_t inst = 0; inst < opts.instances; ++inst) {
    FeatureGrid grid = random_grid(rng, kDim, 0.4);
    ModelHead head = random_head(rng, 3, 2, 0.4);
    const auto label = static_cast<std::size_t>(rng.below(3));
    auto loss_of = [&] {
      const auto table = build_mining_table(grid, head, levels);
      return mining ? mining_loss(table, label).value : ce_loss(table, label).value;
    };
    const auto table = build_mining_table(grid, head, levels);
    const auto loss = mining ? mining_loss(table, label) : ce_loss(table, label);
    std::vector<double> d_features(grid.values().size(), 0.0);
    std::vector<double> d_means(head.num_classes() * head.num_prototypes() * kDim, 0.0);
    backprop_table(table, grid, head, loss.grad, d_features, d_means);

    double err = compare(grid.values(), d_features, loss_of, opts, out.coordinates);
    // Means live in per-class buffers; check them class by class.
    const std::size_t per_class = head.num_prototypes() * kDim;
    for (std::size_t c = 0; c < head.num_classes(); ++c) {
      std::vector<double> analytic(d_means.begin() + static_cast<long>(c * per_class),
                                   d_means.begin() + static_cast<long>((c + 1) * per_class));
      err = std::max(err, compare(head.classes[c].means, analytic, loss_of, opts, out.coordinates));
    }
    record(out, err, inst);
  }
  return out;
}

GradcheckCase check_aux(const GradcheckOptions& opts) {
  GradcheckCase out{"aux_loss"};
  Rng rng(opts.seed ^ 0xA0ULL);
  for (std::size_t inst = 0; inst < opts.instances; ++inst) {
    const std::size_t classes = 2 + static_cast<std::size_t>(rng.below(2));
    const std::size_t batch = 4;
    FeatureMatrix emb(batch, kDim);
    for (double& v : emb.values) v = rng.normal();
    std::vector<std::size_t> labels(batch);
    for (auto& l : labels) l = static_cast<std::size_t>(rng.below(classes));
    ProxySet proxies(classes, kDim);
    for (double& v : proxies.proxies) v = rng.normal();
    // A smaller scale keeps the softplus terms away from saturation so the
    // comparison exercises the whole gradient rather than near-zero tails.
    proxies.scale = rng.uniform(2.0, 32.0);
    auto loss_of = [&] { return aux_loss(emb, labels, proxies).value; };
    const auto res = aux_loss(emb, labels, proxies);
    double err = compare(emb.values, res.grad_embeddings, loss_of, opts, out.coordinates);
    err = std::max(err, compare(proxies.proxies, res.grad_proxies, loss_of, opts, out.coordinates));
    record(out, err, inst);
  }
  return out;
}

GradcheckCase check_m_step(const GradcheckOptions& opts) {
  GradcheckCase out{"m_step_objective"};
  Rng rng(opts.seed ^ 0xE3ULL);
  for (std::size_t inst = 0; inst < opts.instances; ++inst) {
    const std::size_t n = 12;
    const std::size_t m = 3;
    FeatureMatrix features(n, kDim);
    for (double& v : features.values) v = rng.normal(0.0, 0.8);
    ClassMixture mix(0, m, kDim);
    for (double& v : mix.means) v = rng.normal(0.0, 0.8);
    const auto resp = e_step(features, mix, 0.1);
    std::vector<double> analytic(mix.means.size());
    diverse_objective(resp, features, mix.priors, mix.means, analytic);
    auto value_of = [&] { return diverse_objective(resp, features, mix.priors, mix.means, {}); };
    record(out, compare(mix.means, analytic, value_of, opts, out.coordinates), inst);
  }
  return out;
}

TinyNet random_net(Rng& rng) {
  TinyNet net = TinyNet::identity(kDim, kDim);
  for (auto t : net.tensors()) {
    for (double& v : t) v += rng.normal(0.0, 0.2);
  }
  return net;
}

GradcheckCase check_total(const GradcheckOptions& opts) {
  GradcheckCase out{"total_loss"};
  Rng rng(opts.seed ^ 0x70ULL);
  for (std::size_t inst = 0; inst < opts.instances; ++inst) {
    TinyNet net = random_net(rng);
    ModelHead head = random_head(rng, 2, 2, 0.4);
    ProxySet proxies(2, kDim);
    for (double& v : proxies.proxies) v = rng.normal();
    proxies.scale = 4.0;
    std::vector<Sample> samples;
    for (std::uint32_t k = 0; k < 3; ++k) {
      samples.push_back({random_grid(rng, kDim, 0.4), static_cast<int>(k % 2), k});
    }
    std::vector<const Sample*> batch;
    for (const auto& s : samples) batch.push_back(&s);
    const ObjectiveConfig cfg{0.2, 0.5, 3, true, true};

    const auto obj = evaluate_batch(net, head, proxies, batch, cfg, true);
    auto loss_of = [&] { return evaluate_batch(net, head, proxies, batch, cfg, false).loss.total; };
    double err = 0.0;
    auto params = net.tensors();
    const auto grads = obj.grad_net.tensors();
    for (std::size_t t = 0; t < params.size(); ++t) {
      std::vector<double> buffer(params[t].begin(), params[t].end());
      std::vector<double> analytic(grads[t].begin(), grads[t].end());
      // Perturb through a copy so the span into the live network stays valid.
      auto f = [&] {
        std::copy(buffer.begin(), buffer.end(), params[t].begin());
        return loss_of();
      };
      err = std::max(err, compare(buffer, analytic, f, opts, out.coordinates));
      std::copy(buffer.begin(), buffer.end(), params[t].begin());
    }
    err = std::max(err, compare(proxies.proxies, obj.grad_proxies, loss_of, opts, out.coordinates));
    record(out, err, inst);
  }
  return out;
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

std::vector<GradcheckCase> run_gradcheck(const GradcheckOptions& opts) {
  return {check_logit_loss("ce_loss", false, opts), check_logit_loss("mining_loss", true, opts), check_aux(opts),
          check_m_step(opts), check_total(opts)};
}

}  // namespace mgproto
