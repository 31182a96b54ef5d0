#pragma once

// Modified EM for the class-wise prototype mixtures: E-step with additive
// smoothing, closed-form or diversity-regularized M-step for the means, and an
// EMA-stabilized prior update.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mgproto/density.hpp"
#include "mgproto/memory_bank.hpp"

namespace mgproto {

struct EmConfig {
  std::size_t loops = 3;         // L_em
  double smoothing_alpha = 0.1;  // additive smoothing of responsibilities
  double ema_tau = 0.99;         // prior EMA factor
  double m_step_lr = 3e-3;       // gradient-ascent step for the diverse M-step
  std::size_t m_step_iters = 10;
  bool diversity_enabled = true;

  void validate() const;
};

/// N x M responsibilities, raw and smoothed. Rows of both sum to 1.
struct Responsibilities {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> raw;
  std::vector<double> smoothed;
  /// Rows where every component likelihood underflowed; those rows use the priors.
  std::size_t underflow_rows = 0;

  double raw_at(std::size_t n, std::size_t m) const { return raw[n * cols + m]; }
  double at(std::size_t n, std::size_t m) const { return smoothed[n * cols + m]; }
};

Responsibilities e_step(const FeatureMatrix& features, const ClassMixture& mix, double smoothing_alpha);

struct MStepResult {
  std::vector<double> means;          // M x D
  std::vector<bool> dead;             // closed form: N_m == 0, mean kept
  bool aborted = false;               // diverse: objective went non-finite
  std::size_t iterations = 0;
};

/// Weighted means p_m = sum_n g_nm f_n / sum_n g_nm using the smoothed
/// responsibilities. Components with zero mass keep `previous` means.
MStepResult m_step_closed_form(const Responsibilities& resp, const FeatureMatrix& features,
                               const ClassMixture& previous);

/// Value of the diversity-regularized M-step objective
///   (1/N) sum_n sum_m g_nm log(pi_m N(f_n; p_m)) - 1/(M(M-1)) sum_{a != b} exp(-|p_a - p_b|^2)
/// at `means`; writes dJ/dmeans into `gradient` when it is non-empty.
/// The repulsion term is absent for M = 1.
double diverse_objective(const Responsibilities& resp, const FeatureMatrix& features,
                         std::span<const double> priors, std::span<const double> means,
                         std::span<double> gradient);

/// `iters` steps of gradient ascent on diverse_objective starting from the
/// current means, with responsibilities and priors held fixed.
MStepResult m_step_diverse(const Responsibilities& resp, const FeatureMatrix& features,
                           const ClassMixture& mix, double lr, std::size_t iters);

/// Closed-form priors (1/N) sum_n g_nm blended as tau * previous + (1 - tau) * raw,
/// then renormalized onto the simplex.
std::vector<double> prior_update(const Responsibilities& resp, std::span<const double> previous, double tau);

/// (1/N) sum_n log sum_m pi_m N(f_n; p_m), evaluated in log space.
double bank_log_likelihood(const FeatureMatrix& features, const ClassMixture& mix);

struct ClassFitReport {
  bool fitted = false;
  bool warmup_skipped = false;     // queue held fewer than M vectors
  std::size_t dead_components = 0;
  std::size_t aborted_steps = 0;
  std::size_t underflow_rows = 0;
  std::string error;               // non-empty when the class fit threw
};

struct EmFitResult {
  ModelHead head;
  std::vector<ClassFitReport> reports;
};

/// Runs L_em rounds of E-step, M-step and prior update for every class on an
/// immutable snapshot of its queue. Classes are independent; a failure in one
/// leaves that class's mixture unchanged and is recorded in its report.
EmFitResult em_fit(const MemoryBank& bank, const ModelHead& head, const EmConfig& cfg,
                   std::size_t threads = 1);

}  // namespace mgproto
