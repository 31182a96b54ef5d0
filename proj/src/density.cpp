#include "mgproto/density.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mgproto/errors.hpp"

namespace mgproto {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(std::span<const double> xs) {
  double peak = kNegInf;
  for (double x : xs) peak = std::max(peak, x);
  if (peak == kNegInf) return kNegInf;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - peak);
  return peak + std::log(acc);
}

void check_dims(const FeatureGrid& grid, const ClassMixture& mix) {
  require(grid.dim() == mix.dim, "feature dim " + std::to_string(grid.dim()) +
                                     " does not match mixture dim " + std::to_string(mix.dim));
  require(grid.positions() > 0, "empty feature grid");
}

}  // namespace

FeatureGrid::FeatureGrid(std::size_t height, std::size_t width, std::size_t dim)
    : height_(height), width_(width), dim_(dim), values_(height * width * dim, 0.0) {
  require(height > 0 && width > 0 && dim > 0, "feature grid extents must be positive");
}

FeatureGrid::FeatureGrid(std::size_t height, std::size_t width, std::size_t dim,
                         std::vector<double> values)
    : height_(height), width_(width), dim_(dim), values_(std::move(values)) {
  require(height > 0 && width > 0 && dim > 0, "feature grid extents must be positive");
  require(values_.size() == height * width * dim, "feature grid value count mismatch");
  require(all_finite(), "feature grid contains non-finite values");
}

bool FeatureGrid::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

ClassMixture::ClassMixture(std::size_t class_id, std::size_t num_prototypes, std::size_t dim)
    : class_id(class_id),
      num_prototypes(num_prototypes),
      dim(dim),
      means(num_prototypes * dim, 0.0),
      priors(num_prototypes, 1.0 / static_cast<double>(num_prototypes)) {
  require(num_prototypes >= 1, "a mixture needs at least one prototype");
  require(dim >= 1, "prototype dim must be positive");
}

double ClassMixture::prior_mass() const {
  double s = 0.0;
  for (double p : priors) s += p;
  return s;
}

void ClassMixture::validate() const {
  require(num_prototypes >= 1 && dim >= 1, "mixture extents must be positive");
  require(means.size() == num_prototypes * dim, "mixture means shape mismatch");
  require(priors.size() == num_prototypes, "mixture priors shape mismatch");
  for (double v : means) require(std::isfinite(v), "mixture mean is not finite");
  for (double p : priors) require(std::isfinite(p) && p >= 0.0, "mixture prior is negative");
  const double mass = prior_mass();
  require(mass > 0.0 && mass <= 1.0 + 1e-9, "mixture prior mass outside (0, 1]");
}

ModelHead::ModelHead(std::size_t num_classes, std::size_t num_prototypes, std::size_t dim) {
  classes.reserve(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) classes.emplace_back(c, num_prototypes, dim);
}

void ModelHead::validate() const {
  require(classes.size() >= 2, "a model head needs at least two classes");
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const auto& mix = classes[c];
    mix.validate();
    require(mix.class_id == c, "class id does not match its position");
    require(mix.num_prototypes == classes[0].num_prototypes && mix.dim == classes[0].dim,
            "all classes must share prototype count and dim");
  }
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "dimension mismatch: " + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()));
  double s = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double diff = a[d] - b[d];
    s += diff * diff;
  }
  return s;
}

double gaussian_likelihood(std::span<const double> f, std::span<const double> mean) {
  return std::exp(-kPi * squared_distance(f, mean));
}

double log_gaussian_likelihood(std::span<const double> f, std::span<const double> mean) {
  return -kPi * squared_distance(f, mean);
}

LikelihoodMap likelihood_map(const FeatureGrid& grid, const ClassMixture& mix) {
  check_dims(grid, mix);
  LikelihoodMap out{mix.num_prototypes, grid.height(), grid.width(), {}};
  out.values.resize(mix.num_prototypes * grid.positions());
  for (std::size_t m = 0; m < mix.num_prototypes; ++m) {
    for (std::size_t p = 0; p < grid.positions(); ++p) {
      out.values[m * grid.positions() + p] = gaussian_likelihood(grid.at(p), mix.mean(m));
    }
  }
  return out;
}

double class_conditional(const FeatureGrid& grid, const ClassMixture& mix) {
  check_dims(grid, mix);
  double density = 0.0;
  for (std::size_t m = 0; m < mix.num_prototypes; ++m) {
    double best = 0.0;
    for (std::size_t p = 0; p < grid.positions(); ++p) {
      best = std::max(best, gaussian_likelihood(grid.at(p), mix.mean(m)));
    }
    density += mix.priors[m] * best;
  }
  return density;
}

double log_class_conditional(const FeatureGrid& grid, const ClassMixture& mix) {
  check_dims(grid, mix);
  std::vector<double> terms(mix.num_prototypes, kNegInf);
  for (std::size_t m = 0; m < mix.num_prototypes; ++m) {
    if (mix.priors[m] <= 0.0) continue;
    double best = kNegInf;
    for (std::size_t p = 0; p < grid.positions(); ++p) {
      best = std::max(best, log_gaussian_likelihood(grid.at(p), mix.mean(m)));
    }
    terms[m] = std::log(mix.priors[m]) + best;
  }
  return log_sum_exp(terms);
}

std::vector<double> class_densities(const FeatureGrid& grid, const ModelHead& head) {
  std::vector<double> out(head.num_classes());
  for (std::size_t c = 0; c < head.num_classes(); ++c) {
    out[c] = class_conditional(grid, head.classes[c]);
  }
  return out;
}

std::vector<double> posterior_from_densities(std::span<const double> densities) {
  require(!densities.empty(), "no class densities");
  double total = 0.0;
  for (double d : densities) {
    require(std::isfinite(d) && d >= 0.0, "class density must be finite and non-negative");
    total += d;
  }
  if (total <= 0.0) throw DegeneratePosterior("all class densities are zero");
  std::vector<double> out(densities.begin(), densities.end());
  for (double& v : out) v /= total;
  return out;
}

std::vector<double> posterior(const FeatureGrid& grid, const ModelHead& head) {
  std::vector<double> logs(head.num_classes());
  for (std::size_t c = 0; c < head.num_classes(); ++c) {
    logs[c] = log_class_conditional(grid, head.classes[c]);
  }
  const double norm = log_sum_exp(logs);
  if (norm == kNegInf) throw DegeneratePosterior("all class densities are zero");
  for (double& v : logs) v = std::exp(v - norm);
  return logs;
}

double ood_score(const FeatureGrid& grid, const ModelHead& head) {
  double total = 0.0;
  for (const auto& mix : head.classes) total += class_conditional(grid, mix);
  return total;
}

std::size_t argmax(std::span<const double> values) {
  require(!values.empty(), "argmax of an empty range");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

Decision classify_or_abstain(const FeatureGrid& grid, const ModelHead& head, double threshold) {
  require(threshold >= 0.0, "abstention threshold must be non-negative");
  Decision decision;
  decision.score = ood_score(grid, head);
  if (decision.score < threshold) return decision;
  decision.label = argmax(posterior(grid, head));
  return decision;
}

}  // namespace mgproto
