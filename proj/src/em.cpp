#include "mgproto/em.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>

#include "mgproto/errors.hpp"
#include "mgproto/parallel.hpp"

namespace mgproto {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_shapes(const Responsibilities& resp, const FeatureMatrix& features, std::size_t components,
                  std::size_t dim) {
  require(resp.rows == features.rows, "responsibilities and features disagree on N");
  require(resp.cols == components, "responsibilities and mixture disagree on M");
  require(features.dim == dim, "feature dim does not match mixture dim");
  require(features.rows > 0, "empty feature set");
}

}  // namespace

void EmConfig::validate() const {
  require(loops >= 1, "em loops must be at least 1");
  require(smoothing_alpha >= 0.0 && std::isfinite(smoothing_alpha), "smoothing alpha must be >= 0");
  require(ema_tau >= 0.0 && ema_tau < 1.0, "ema tau must lie in [0, 1)");
  require(m_step_lr > 0.0 && std::isfinite(m_step_lr), "m-step learning rate must be positive");
  require(m_step_iters >= 1, "m-step iterations must be at least 1");
}

Responsibilities e_step(const FeatureMatrix& features, const ClassMixture& mix, double smoothing_alpha) {
  require(features.rows > 0, "e-step needs a non-empty feature set");
  require(features.dim == mix.dim, "feature dim does not match mixture dim");
  require(smoothing_alpha >= 0.0, "smoothing alpha must be >= 0");
  const std::size_t n_rows = features.rows;
  const std::size_t n_comp = mix.num_prototypes;

  Responsibilities resp;
  resp.rows = n_rows;
  resp.cols = n_comp;
  resp.raw.assign(n_rows * n_comp, 0.0);
  resp.smoothed.assign(n_rows * n_comp, 0.0);

  const double prior_mass = mix.prior_mass();
  std::vector<double> logs(n_comp);
  for (std::size_t n = 0; n < n_rows; ++n) {
    double* raw = resp.raw.data() + n * n_comp;
    double peak = kNegInf;
    for (std::size_t m = 0; m < n_comp; ++m) {
      logs[m] = mix.priors[m] > 0.0
                    ? std::log(mix.priors[m]) + log_gaussian_likelihood(features.row(n), mix.mean(m))
                    : kNegInf;
      peak = std::max(peak, logs[m]);
    }
    if (!std::isfinite(peak)) {
      ++resp.underflow_rows;
      for (std::size_t m = 0; m < n_comp; ++m) raw[m] = mix.priors[m] / prior_mass;
      continue;
    }
    double total = 0.0;
    for (std::size_t m = 0; m < n_comp; ++m) {
      raw[m] = std::exp(logs[m] - peak);
      total += raw[m];
    }
    for (std::size_t m = 0; m < n_comp; ++m) raw[m] /= total;
  }
  if (resp.underflow_rows > 0) {
    std::clog << "e_step: " << resp.underflow_rows
              << " feature(s) underflowed every component; using priors as responsibilities\n";
  }

  const double denom = 1.0 + static_cast<double>(n_comp) * smoothing_alpha;
  for (std::size_t k = 0; k < resp.raw.size(); ++k) {
    resp.smoothed[k] = (resp.raw[k] + smoothing_alpha) / denom;
  }
  return resp;
}

MStepResult m_step_closed_form(const Responsibilities& resp, const FeatureMatrix& features,
                               const ClassMixture& previous) {
  check_shapes(resp, features, previous.num_prototypes, previous.dim);
  const std::size_t n_comp = previous.num_prototypes;
  const std::size_t dim = previous.dim;

  MStepResult out;
  out.means.assign(n_comp * dim, 0.0);
  out.dead.assign(n_comp, false);
  std::vector<double> mass(n_comp, 0.0);
  for (std::size_t n = 0; n < features.rows; ++n) {
    const auto f = features.row(n);
    for (std::size_t m = 0; m < n_comp; ++m) {
      const double g = resp.at(n, m);
      mass[m] += g;
      for (std::size_t d = 0; d < dim; ++d) out.means[m * dim + d] += g * f[d];
    }
  }
  for (std::size_t m = 0; m < n_comp; ++m) {
    if (mass[m] > 0.0) {
      for (std::size_t d = 0; d < dim; ++d) out.means[m * dim + d] /= mass[m];
    } else {
      out.dead[m] = true;
      auto prev = previous.mean(m);
      std::copy(prev.begin(), prev.end(), out.means.begin() + static_cast<std::ptrdiff_t>(m * dim));
    }
  }
  out.iterations = 1;
  return out;
}

double diverse_objective(const Responsibilities& resp, const FeatureMatrix& features,
                         std::span<const double> priors, std::span<const double> means,
                         std::span<double> gradient) {
  const std::size_t n_comp = resp.cols;
  const std::size_t dim = features.dim;
  require(priors.size() == n_comp, "prior count does not match responsibilities");
  require(means.size() == n_comp * dim, "means shape does not match responsibilities");
  require(resp.rows == features.rows && features.rows > 0, "responsibilities and features disagree on N");
  const bool want_grad = !gradient.empty();
  if (want_grad) {
    require(gradient.size() == means.size(), "gradient buffer shape mismatch");
    std::fill(gradient.begin(), gradient.end(), 0.0);
  }
  const double inv_n = 1.0 / static_cast<double>(features.rows);

  // Fit term: (1/N) sum g_nm (log pi_m - pi |f_n - p_m|^2).
  double fit = 0.0;
  for (std::size_t n = 0; n < features.rows; ++n) {
    const auto f = features.row(n);
    for (std::size_t m = 0; m < n_comp; ++m) {
      const double g = resp.at(n, m);
      if (g == 0.0) continue;
      std::span<const double> p(means.data() + m * dim, dim);
      fit += g * (std::log(priors[m]) - kPi * squared_distance(f, p));
      if (want_grad) {
        const double scale = 2.0 * kPi * g * inv_n;
        for (std::size_t d = 0; d < dim; ++d) gradient[m * dim + d] += scale * (f[d] - p[d]);
      }
    }
  }
  fit *= inv_n;

  // Repulsion: -1/(M(M-1)) sum_{a != b} exp(-|p_a - p_b|^2); each unordered pair counted twice.
  double repulsion = 0.0;
  if (n_comp >= 2) {
    const double weight = 1.0 / static_cast<double>(n_comp * (n_comp - 1));
    for (std::size_t a = 0; a < n_comp; ++a) {
      std::span<const double> pa(means.data() + a * dim, dim);
      for (std::size_t b = a + 1; b < n_comp; ++b) {
        std::span<const double> pb(means.data() + b * dim, dim);
        const double k = std::exp(-squared_distance(pa, pb));
        repulsion += 2.0 * weight * k;
        if (want_grad) {
          // d/dp_a of -2w k = 4 w k (p_a - p_b); opposite sign for p_b.
          const double scale = 4.0 * weight * k;
          for (std::size_t d = 0; d < dim; ++d) {
            const double diff = pa[d] - pb[d];
            gradient[a * dim + d] += scale * diff;
            gradient[b * dim + d] -= scale * diff;
          }
        }
      }
    }
  }
  return fit - repulsion;
}

MStepResult m_step_diverse(const Responsibilities& resp, const FeatureMatrix& features,
                           const ClassMixture& mix, double lr, std::size_t iters) {
  check_shapes(resp, features, mix.num_prototypes, mix.dim);
  require(iters >= 1, "m-step iterations must be at least 1");
  require(lr > 0.0, "m-step learning rate must be positive");

  MStepResult out;
  out.means = mix.means;
  out.dead.assign(mix.num_prototypes, false);
  std::vector<double> grad(out.means.size());
  for (std::size_t it = 0; it < iters; ++it) {
    const double value = diverse_objective(resp, features, mix.priors, out.means, grad);
    const bool finite = std::isfinite(value) &&
                        std::all_of(grad.begin(), grad.end(), [](double g) { return std::isfinite(g); });
    if (!finite) {
      std::clog << "m_step_diverse: non-finite objective at iteration " << it
                << "; keeping pre-step means\n";
      out.means = mix.means;
      out.aborted = true;
      return out;
    }
    for (std::size_t k = 0; k < out.means.size(); ++k) out.means[k] += lr * grad[k];
    out.iterations = it + 1;
  }
  if (!std::all_of(out.means.begin(), out.means.end(), [](double v) { return std::isfinite(v); })) {
    out.means = mix.means;
    out.aborted = true;
  }
  return out;
}

std::vector<double> prior_update(const Responsibilities& resp, std::span<const double> previous, double tau) {
  require(previous.size() == resp.cols, "previous priors do not match responsibilities");
  require(resp.rows > 0, "prior update needs responsibilities");
  require(tau >= 0.0 && tau < 1.0, "ema tau must lie in [0, 1)");
  std::vector<double> raw(resp.cols, 0.0);
  for (std::size_t n = 0; n < resp.rows; ++n) {
    for (std::size_t m = 0; m < resp.cols; ++m) raw[m] += resp.at(n, m);
  }
  const double inv_n = 1.0 / static_cast<double>(resp.rows);
  std::vector<double> out(resp.cols);
  double total = 0.0;
  for (std::size_t m = 0; m < resp.cols; ++m) {
    out[m] = tau * previous[m] + (1.0 - tau) * raw[m] * inv_n;
    total += out[m];
  }
  require(total > 0.0, "prior update produced zero mass");
  for (double& p : out) p /= total;
  return out;
}

double bank_log_likelihood(const FeatureMatrix& features, const ClassMixture& mix) {
  require(features.rows > 0, "empty feature set");
  require(features.dim == mix.dim, "feature dim does not match mixture dim");
  double total = 0.0;
  std::vector<double> logs(mix.num_prototypes);
  for (std::size_t n = 0; n < features.rows; ++n) {
    double peak = kNegInf;
    for (std::size_t m = 0; m < mix.num_prototypes; ++m) {
      logs[m] = mix.priors[m] > 0.0
                    ? std::log(mix.priors[m]) + log_gaussian_likelihood(features.row(n), mix.mean(m))
                    : kNegInf;
      peak = std::max(peak, logs[m]);
    }
    double acc = 0.0;
    for (double l : logs) acc += std::exp(l - peak);
    total += peak + std::log(acc);
  }
  return total / static_cast<double>(features.rows);
}

EmFitResult em_fit(const MemoryBank& bank, const ModelHead& head, const EmConfig& cfg, std::size_t threads) {
  cfg.validate();
  require(bank.num_classes() == head.num_classes(), "memory bank and head disagree on class count");
  require(bank.dim() == head.dim(), "memory bank and head disagree on dim");

  EmFitResult result{head, std::vector<ClassFitReport>(head.num_classes())};
  parallel_for(head.num_classes(), threads, [&](std::size_t c) {
    auto& report = result.reports[c];
    const auto& original = head.classes[c];
    if (bank.size(c) < original.num_prototypes) {
      report.warmup_skipped = true;
      return;
    }
    const FeatureMatrix features = bank.snapshot(c);
    ClassMixture mix = original;
    try {
      for (std::size_t loop = 0; loop < cfg.loops; ++loop) {
        const auto resp = e_step(features, mix, cfg.smoothing_alpha);
        report.underflow_rows += resp.underflow_rows;
        MStepResult step = cfg.diversity_enabled
                               ? m_step_diverse(resp, features, mix, cfg.m_step_lr, cfg.m_step_iters)
                               : m_step_closed_form(resp, features, mix);
        if (step.aborted) ++report.aborted_steps;
        report.dead_components += static_cast<std::size_t>(std::count(step.dead.begin(), step.dead.end(), true));
        // Priors are updated with this loop's responsibilities after the means.
        mix.priors = prior_update(resp, mix.priors, cfg.ema_tau);
        mix.means = std::move(step.means);
      }
      mix.validate();
      result.head.classes[c] = std::move(mix);
      report.fitted = true;
    } catch (const std::exception& e) {
      report.error = e.what();
      result.head.classes[c] = original;
    }
  });
  return result;
}

}  // namespace mgproto
