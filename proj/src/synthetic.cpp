#include "mgproto/synthetic.hpp"

#include <cmath>
#include <numeric>
#include <span>
#include <string>

#include "mgproto/errors.hpp"
#include "mgproto/rng.hpp"

namespace mgproto {

namespace {

constexpr int kMaxCenterDraws = 1000;

void random_unit(std::vector<double>& dir, Rng& rng) {
  double n2 = 0.0;
  while (n2 == 0.0) {
    n2 = 0.0;
    for (double& v : dir) {
      v = rng.normal();
      n2 += v * v;
    }
  }
  const double inv = 1.0 / std::sqrt(n2);
  for (double& v : dir) v *= inv;
}

std::vector<double> draw_centers(const SyntheticSpec& spec, Rng& rng) {
  const std::size_t n_parts = spec.num_classes * spec.parts_per_class;
  const double coord_sigma = spec.center_scale / std::sqrt(static_cast<double>(spec.raw_dim));
  const double min_sep = 4.0 * spec.noise_sigma;
  for (int attempt = 0; attempt < kMaxCenterDraws; ++attempt) {
    std::vector<double> centers(n_parts * spec.raw_dim);
    if (spec.class_spread > 0.0) {
      // Part k of every class = shared base center k + a class-specific offset.
      const double offset_sigma = spec.class_spread / std::sqrt(static_cast<double>(spec.raw_dim));
      std::vector<double> base(spec.parts_per_class * spec.raw_dim);
      for (double& v : base) v = rng.normal(0.0, coord_sigma);
      for (std::size_t part = 0; part < n_parts; ++part) {
        const std::size_t k = part % spec.parts_per_class;
        for (std::size_t d = 0; d < spec.raw_dim; ++d) {
          centers[part * spec.raw_dim + d] = base[k * spec.raw_dim + d] + rng.normal(0.0, offset_sigma);
        }
      }
    } else if (spec.part_spread > 0.0) {
      // Part k of class c = class base center + (part_spread / 2) * u_k, with
      // unit offsets u_k shared by all classes and u_1 = -u_0, so the first two
      // parts of a class are exactly part_spread apart.
      std::vector<double> dirs(spec.parts_per_class * spec.raw_dim);
      std::vector<double> dir(spec.raw_dim);
      for (std::size_t k = 0; k < spec.parts_per_class; ++k) {
        if (k != 1) random_unit(dir, rng);
        const double sign = k == 1 ? -1.0 : 1.0;
        for (std::size_t d = 0; d < spec.raw_dim; ++d) dirs[k * spec.raw_dim + d] = sign * dir[d];
      }
      std::vector<double> base(spec.raw_dim);
      for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (double& v : base) v = rng.normal(0.0, coord_sigma);
        for (std::size_t k = 0; k < spec.parts_per_class; ++k) {
          for (std::size_t d = 0; d < spec.raw_dim; ++d) {
            centers[(c * spec.parts_per_class + k) * spec.raw_dim + d] =
                base[d] + 0.5 * spec.part_spread * dirs[k * spec.raw_dim + d];
          }
        }
      }
    } else {
      for (double& v : centers) v = rng.normal(0.0, coord_sigma);
    }
    bool separated = true;
    for (std::size_t a = 0; a < n_parts && separated; ++a) {
      for (std::size_t b = a + 1; b < n_parts; ++b) {
        if (a / spec.parts_per_class == b / spec.parts_per_class) continue;
        // Compare the planted (weighted) centers, which is what samples carry.
        const double wa = spec.part_weight(a % spec.parts_per_class);
        const double wb = spec.part_weight(b % spec.parts_per_class);
        double d2 = 0.0;
        for (std::size_t d = 0; d < spec.raw_dim; ++d) {
          const double diff = wa * centers[a * spec.raw_dim + d] - wb * centers[b * spec.raw_dim + d];
          d2 += diff * diff;
        }
        if (std::sqrt(d2) < min_sep) {
          separated = false;
          break;
        }
      }
    }
    if (separated) return centers;
  }
  throw ContractError("could not draw part centers separated by 4 * noise_sigma");
}

// Partial Fisher-Yates: first k entries become k distinct positions.
std::vector<std::size_t> pick_positions(std::size_t positions, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(positions);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(positions - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

Sample make_sample(const SyntheticSpec& spec, std::span<const double> class_centers, int label,
                   std::uint32_t id, Rng& rng) {
  const std::size_t dim = spec.raw_dim;
  FeatureGrid raw(spec.height, spec.width, dim);
  for (double& v : raw.values()) v = rng.normal(0.0, spec.background_sigma);

  // Which parts appear, then where.
  std::vector<std::size_t> parts = pick_positions(spec.parts_per_class, spec.planted_per_image(), rng);
  std::vector<std::size_t> where = pick_positions(raw.positions(), parts.size(), rng);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const double w = spec.part_weight(parts[k]);
    auto cell = raw.at(where[k]);
    for (std::size_t d = 0; d < dim; ++d) {
      cell[d] = w * class_centers[parts[k] * dim + d] + rng.normal(0.0, spec.noise_sigma);
    }
  }
  return Sample{std::move(raw), label, id};
}

}  // namespace

void SyntheticSpec::validate() const {
  require(num_classes >= 2, "need at least two classes");
  require(parts_per_class >= 1, "need at least one part per class");
  require(parts_per_image <= parts_per_class, "parts_per_image exceeds parts_per_class");
  require(part_weights.empty() || part_weights.size() == parts_per_class,
          "part_weights must be empty or list one weight per part");
  for (double w : part_weights) require(std::isfinite(w) && w > 0.0, "part weights must be positive");
  require(raw_dim >= 1 && height >= 1 && width >= 1, "grid extents must be positive");
  require(height * width >= planted_per_image(),
          "grid of " + std::to_string(height * width) + " positions is too small to plant " +
              std::to_string(planted_per_image()) + " parts");
  require(center_scale > 0.0 && std::isfinite(center_scale), "center_scale must be positive");
  require(class_spread >= 0.0 && std::isfinite(class_spread), "class_spread must be non-negative");
  require(part_spread >= 0.0 && std::isfinite(part_spread), "part_spread must be non-negative");
  require(class_spread == 0.0 || part_spread == 0.0, "class_spread and part_spread are exclusive");
  require(noise_sigma >= 0.0 && background_sigma >= 0.0, "noise levels must be non-negative");
  require(train_per_class >= 1 && test_per_class >= 1, "need at least one sample per class and split");
  require(ood_shift >= 0.0 && std::isfinite(ood_shift), "ood_shift must be non-negative");
}

Dataset generate_dataset(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng root(seed);
  Rng center_rng = root.fork(1);
  Rng train_rng = root.fork(2);
  Rng test_rng = root.fork(3);
  Rng ood_rng = root.fork(4);

  Dataset data;
  data.seed = seed;
  data.part_centers = draw_centers(spec, center_rng);
  const std::size_t per_class = spec.parts_per_class * spec.raw_dim;
  auto centers_of = [&](std::size_t c) {
    return std::span<const double>(data.part_centers.data() + c * per_class, per_class);
  };

  // Interleave classes so contiguous minibatches stay balanced.
  auto fill = [&](std::vector<Sample>& split, std::size_t per, Rng& rng) {
    split.reserve(per * spec.num_classes);
    for (std::size_t k = 0; k < per; ++k) {
      for (std::size_t c = 0; c < spec.num_classes; ++c) {
        split.push_back(make_sample(spec, centers_of(c), static_cast<int>(c),
                                    static_cast<std::uint32_t>(split.size()), rng));
      }
    }
  };
  fill(data.train, spec.train_per_class, train_rng);
  fill(data.test, spec.test_per_class, test_rng);

  // Shifted copy of every class's parts, each moved ood_shift along its own random direction.
  std::vector<double> shifted = data.part_centers;
  for (std::size_t part = 0; part < spec.num_classes * spec.parts_per_class; ++part) {
    std::vector<double> dir(spec.raw_dim);
    double n2 = 0.0;
    do {
      n2 = 0.0;
      for (double& v : dir) {
        v = ood_rng.normal();
        n2 += v * v;
      }
    } while (n2 == 0.0);
    // Divided by the part weight so the planted vector moves by exactly ood_shift.
    const double inv = spec.ood_shift / (std::sqrt(n2) * spec.part_weight(part % spec.parts_per_class));
    for (std::size_t d = 0; d < spec.raw_dim; ++d) shifted[part * spec.raw_dim + d] += inv * dir[d];
  }
  data.ood.reserve(spec.ood_samples);
  for (std::size_t k = 0; k < spec.ood_samples; ++k) {
    const std::size_t source = static_cast<std::size_t>(ood_rng.below(spec.num_classes));
    std::span<const double> centers(shifted.data() + source * per_class, per_class);
    data.ood.push_back(make_sample(spec, centers, kOodLabel, static_cast<std::uint32_t>(k), ood_rng));
  }
  return data;
}

}  // namespace mgproto
