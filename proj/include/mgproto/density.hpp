#pragma once

// Gaussian-distributed prototypes and the forward densities built on them:
// likelihood maps, class-conditional scores, the Bayes posterior and the
// marginal used for out-of-distribution detection.

#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

namespace mgproto {

inline constexpr double kPi = std::numbers::pi;

/// Diagonal value of the shared, fixed covariance. With this value the
/// Gaussian normalizer is exactly 1 in every dimension, so a likelihood
/// reduces to exp(-pi * |f - mean|^2) and peaks at 1.
inline constexpr double kCovarianceDiag = 1.0 / (2.0 * kPi);

/// H x W grid of D-dimensional feature vectors, stored row-major (i, j, d).
class FeatureGrid {
 public:
  FeatureGrid() = default;
  FeatureGrid(std::size_t height, std::size_t width, std::size_t dim);
  FeatureGrid(std::size_t height, std::size_t width, std::size_t dim,
              std::vector<double> values);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t dim() const { return dim_; }
  std::size_t positions() const { return height_ * width_; }

  std::span<const double> at(std::size_t pos) const {
    return {values_.data() + pos * dim_, dim_};
  }
  std::span<double> at(std::size_t pos) { return {values_.data() + pos * dim_, dim_}; }
  std::span<const double> at(std::size_t i, std::size_t j) const { return at(i * width_ + j); }
  std::span<double> at(std::size_t i, std::size_t j) { return at(i * width_ + j); }

  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  bool all_finite() const;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> values_;
};

/// One class's Gaussian mixture: M prototype means (row-major M x D) and
/// their importance priors. The covariance is kCovarianceDiag * I, never learned.
struct ClassMixture {
  std::size_t class_id = 0;
  std::size_t num_prototypes = 0;
  std::size_t dim = 0;
  std::vector<double> means;
  std::vector<double> priors;

  ClassMixture() = default;
  ClassMixture(std::size_t class_id, std::size_t num_prototypes, std::size_t dim);

  std::span<const double> mean(std::size_t m) const { return {means.data() + m * dim, dim}; }
  std::span<double> mean(std::size_t m) { return {means.data() + m * dim, dim}; }

  /// Throws ContractError unless shapes agree, means are finite and priors are
  /// non-negative with mass in (0, 1]. Pruned mixtures may carry mass < 1.
  void validate() const;
  double prior_mass() const;
};

/// M x H x W likelihood values, all in [0, 1].
struct LikelihoodMap {
  std::size_t num_prototypes = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  std::size_t positions() const { return height * width; }
  double at(std::size_t m, std::size_t pos) const { return values[m * positions() + pos]; }
  double at(std::size_t m, std::size_t i, std::size_t j) const { return at(m, i * width + j); }
  std::span<const double> map(std::size_t m) const {
    return {values.data() + m * positions(), positions()};
  }
};

/// All class mixtures of a model. Class prior p(c) is uniform.
struct ModelHead {
  std::vector<ClassMixture> classes;

  ModelHead() = default;
  ModelHead(std::size_t num_classes, std::size_t num_prototypes, std::size_t dim);

  std::size_t num_classes() const { return classes.size(); }
  std::size_t num_prototypes() const { return classes.empty() ? 0 : classes[0].num_prototypes; }
  std::size_t dim() const { return classes.empty() ? 0 : classes[0].dim; }
  double class_prior() const { return 1.0 / static_cast<double>(num_classes()); }

  /// C >= 2, identical M and D everywhere, class ids equal to their index.
  void validate() const;
};

double squared_distance(std::span<const double> a, std::span<const double> b);

/// exp(-pi * |f - mean|^2), the normalized Gaussian under kCovarianceDiag.
double gaussian_likelihood(std::span<const double> f, std::span<const double> mean);

/// -pi * |f - mean|^2. Stays finite where gaussian_likelihood underflows.
double log_gaussian_likelihood(std::span<const double> f, std::span<const double> mean);

LikelihoodMap likelihood_map(const FeatureGrid& grid, const ClassMixture& mix);

/// sum_m pi_m * max_{i,j} H_m(i,j).
double class_conditional(const FeatureGrid& grid, const ClassMixture& mix);

/// log of class_conditional, computed without leaving log space.
double log_class_conditional(const FeatureGrid& grid, const ClassMixture& mix);

std::vector<double> class_densities(const FeatureGrid& grid, const ModelHead& head);

/// Normalizes densities to p(c|x). Throws DegeneratePosterior when all are zero.
std::vector<double> posterior_from_densities(std::span<const double> densities);

/// p(c|x) for every class. Works from log densities, so inputs far from every
/// prototype still get a posterior; throws DegeneratePosterior only when every
/// log density is -inf.
std::vector<double> posterior(const FeatureGrid& grid, const ModelHead& head);

/// sum_c p(x|c). Proportional to the marginal p(x) under the uniform class prior.
double ood_score(const FeatureGrid& grid, const ModelHead& head);

/// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> values);

struct Decision {
  std::optional<std::size_t> label;  // empty means abstain
  double score = 0.0;

  bool abstained() const { return !label.has_value(); }
};

/// Abstains iff ood_score < threshold, otherwise returns the posterior argmax.
Decision classify_or_abstain(const FeatureGrid& grid, const ModelHead& head, double threshold);

}  // namespace mgproto
