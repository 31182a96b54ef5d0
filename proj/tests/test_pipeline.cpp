#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "mgproto/checkpoint.hpp"
#include "mgproto/dataset_io.hpp"
#include "mgproto/errors.hpp"
#include "mgproto/grounding.hpp"
#include "mgproto/synthetic.hpp"
#include "mgproto/tiny_net.hpp"
#include "mgproto/trainer.hpp"
#include "oracles.hpp"

using namespace mgproto;
namespace fs = std::filesystem;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.raw_dim = 16;
  s.height = 5;
  s.width = 5;
  s.train_per_class = 30;
  s.test_per_class = 30;
  s.ood_samples = 30;
  return s;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.dim = 16;
  cfg.num_prototypes = 4;
  cfg.levels = 5;
  cfg.bank_capacity = 200;
  cfg.epochs = 10;
  cfg.lr_decay_every = 5;
  return cfg;
}

bool same_values(const FeatureGrid& a, const FeatureGrid& b) { return a.values() == b.values(); }

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("mgproto_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Synthetic, SameSeedIsBitIdentical) {
  const auto a = generate_dataset(small_spec(), 4);
  const auto b = generate_dataset(small_spec(), 4);
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t k = 0; k < a.train.size(); ++k) EXPECT_TRUE(same_values(a.train[k].raw, b.train[k].raw));
  for (std::size_t k = 0; k < a.ood.size(); ++k) EXPECT_TRUE(same_values(a.ood[k].raw, b.ood[k].raw));
  EXPECT_FALSE(same_values(a.train[0].raw, generate_dataset(small_spec(), 5).train[0].raw));
}

TEST(Synthetic, BalancedSplits) {
  SyntheticSpec s = small_spec();
  s.train_per_class = 50;
  const auto data = generate_dataset(s, 1);
  ASSERT_EQ(data.train.size(), 150u);
  std::vector<int> counts(3, 0);
  for (const auto& x : data.train) ++counts[static_cast<std::size_t>(x.label)];
  EXPECT_EQ(counts, (std::vector<int>{50, 50, 50}));
  EXPECT_EQ(data.ood.size(), 30u);
  for (const auto& x : data.ood) EXPECT_EQ(x.label, kOodLabel);
}

TEST(Synthetic, NoiselessPartsAreExactCenters) {
  SyntheticSpec s = small_spec();
  s.noise_sigma = 0.0;
  s.part_weights = {1.0, 0.5};
  const auto data = generate_dataset(s, 2);
  for (const auto& x : data.train) {
    const auto c = static_cast<std::size_t>(x.label);
    for (std::size_t k = 0; k < s.parts_per_class; ++k) {
      const double w = s.part_weight(k);
      bool found = false;
      for (std::size_t p = 0; p < x.raw.positions() && !found; ++p) {
        bool match = true;
        for (std::size_t d = 0; d < s.raw_dim; ++d) {
          match = match && x.raw.at(p)[d] == w * data.part_centers[(c * s.parts_per_class + k) * s.raw_dim + d];
        }
        found = match;
      }
      EXPECT_TRUE(found) << "sample " << x.id << " part " << k;
    }
  }
}

TEST(Synthetic, PartSpreadSetsVariantDistance) {
  SyntheticSpec s = small_spec();
  s.part_spread = 0.9;
  s.center_scale = 0.4;
  s.parts_per_image = 1;
  const auto data = generate_dataset(s, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    std::span<const double> a(data.part_centers.data() + (c * 2) * s.raw_dim, s.raw_dim);
    std::span<const double> b(data.part_centers.data() + (c * 2 + 1) * s.raw_dim, s.raw_dim);
    EXPECT_NEAR(std::sqrt(squared_distance(a, b)), 0.9, 1e-12);
  }
}

TEST(Synthetic, RejectsInconsistentSpecs) {
  SyntheticSpec s = small_spec();
  s.parts_per_image = 3;
  EXPECT_THROW(s.validate(), ContractError);
  s = small_spec();
  s.part_weights = {1.0};
  EXPECT_THROW(s.validate(), ContractError);
  s = small_spec();
  s.height = 1;
  s.width = 1;
  EXPECT_THROW(s.validate(), ContractError);
}

TEST(TinyNet, IdentityProjectsLeadingCoordinates) {
  Rng rng(1);
  const auto raw = oracle::random_grid(2, 2, 5, 1.0, rng);
  const auto net = TinyNet::identity(5, 3);
  const auto acts = forward(net, raw);
  ASSERT_EQ(acts.features.dim(), 3u);
  for (std::size_t p = 0; p < 4; ++p) {
    for (std::size_t d = 0; d < 3; ++d) EXPECT_DOUBLE_EQ(acts.features.at(p)[d], raw.at(p)[d]);
  }
  for (std::size_t d = 0; d < 5; ++d) {
    double mean = 0.0;
    for (std::size_t p = 0; p < 4; ++p) mean += raw.at(p)[d] / 4.0;
    EXPECT_NEAR(acts.embedding[d], mean, 1e-15);
  }
}

TEST(TinyNet, ZeroInputGivesBiasComposition) {
  Rng rng(2);
  TinyNet net(3, 2);
  for (auto t : net.tensors()) {
    for (double& v : t) v = rng.normal();
  }
  const auto acts = forward(net, FeatureGrid(1, 1, 3));
  // Each layer is affine: y = W x + b; compose biases by hand.
  std::vector<double> z(net.backbone.bias), h(2, 0.0), f(2, 0.0);
  for (std::size_t o = 0; o < 2; ++o) {
    h[o] = net.add_on1.bias[o];
    for (std::size_t i = 0; i < 3; ++i) h[o] += net.add_on1.weight[o * 3 + i] * z[i];
  }
  for (std::size_t o = 0; o < 2; ++o) {
    f[o] = net.add_on2.bias[o];
    for (std::size_t i = 0; i < 2; ++i) f[o] += net.add_on2.weight[o * 2 + i] * h[i];
  }
  EXPECT_NEAR(acts.features.at(0)[0], f[0], 1e-12);
  EXPECT_NEAR(acts.features.at(0)[1], f[1], 1e-12);
}

TEST(Trainer, SeparableTaskWithoutAuxTerms) {
  TrainConfig cfg = small_config();
  cfg.lambda1 = 0.0;
  cfg.lambda2 = 0.0;
  cfg.em.diversity_enabled = false;
  const auto data = generate_dataset(small_spec(), 1);
  auto state = init_state(cfg, data.train, 1);
  train(state, data.train, cfg);
  EXPECT_GE(evaluate_accuracy(state.net, state.head, data.test), 0.95);
}

TEST(Trainer, SameSeedSameHistory) {
  TrainConfig cfg = small_config();
  cfg.epochs = 2;
  const auto data = generate_dataset(small_spec(), 2);
  auto a = init_state(cfg, data.train, 9);
  auto b = init_state(cfg, data.train, 9);
  const auto ha = train(a, data.train, cfg);
  cfg.threads = 3;
  const auto hb = train(b, data.train, cfg);
  ASSERT_EQ(ha.size(), hb.size());
  for (std::size_t k = 0; k < ha.size(); ++k) EXPECT_EQ(ha[k].loss.total, hb[k].loss.total);
  EXPECT_EQ(a.head.classes[0].means, b.head.classes[0].means);
}

TEST(Trainer, LrScheduleSteps) {
  TrainConfig cfg;
  cfg.lr_decay = 0.5;
  cfg.lr_decay_every = 3;
  EXPECT_EQ(lr_multiplier(cfg, 2), 1.0);
  EXPECT_EQ(lr_multiplier(cfg, 3), 0.5);
  EXPECT_EQ(lr_multiplier(cfg, 7), 0.25);
}

TEST(Trainer, RandomInitUsesNoiseScale) {
  TrainConfig cfg = small_config();
  cfg.init_from_data = false;
  cfg.init_noise = 0.0;
  const auto data = generate_dataset(small_spec(), 3);
  const auto state = init_state(cfg, data.train, 1);
  for (double v : state.head.classes[2].means) EXPECT_EQ(v, 0.0);
}

TEST(Trainer, NonFiniteLossNamesSamples) {
  TrainConfig cfg = small_config();
  auto data = generate_dataset(small_spec(), 4);
  auto state = init_state(cfg, data.train, 1);
  data.train[3].raw.values()[0] = std::nan("");
  const std::vector<const Sample*> batch = {&data.train[3]};
  try {
    net_update(state, batch, cfg);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("3:"), std::string::npos) << e.what();
  }
}

TEST(Grounding, MeanOnTrainingFeatureIsUnchanged) {
  const auto data = generate_dataset(small_spec(), 5);
  const auto net = TinyNet::identity(16, 16);
  ModelHead head(3, 2, 16);
  Rng rng(1);
  for (std::size_t c = 0; c < 3; ++c) {
    for (double& v : head.classes[c].means) v = rng.normal(0.0, 0.5);
  }
  // Put class 1, prototype 0 exactly on a class-1 training feature.
  const Sample* pick = nullptr;
  for (const auto& s : data.train) {
    if (s.label == 1) {
      pick = &s;
      break;
    }
  }
  const auto grid = forward(net, pick->raw).features;
  const auto feat = grid.at(2, 3);
  std::copy(feat.begin(), feat.end(), head.classes[1].mean(0).begin());
  const auto result = ground_prototypes(net, head, data.train);
  EXPECT_EQ(result.head.classes[1].means[0], head.classes[1].means[0]);
  EXPECT_EQ(std::vector<double>(result.head.classes[1].mean(0).begin(), result.head.classes[1].mean(0).end()),
            std::vector<double>(feat.begin(), feat.end()));
  const auto& e = result.record[2];
  EXPECT_EQ(e.class_id, 1u);
  EXPECT_EQ(e.sample_id, pick->id);
  EXPECT_EQ(e.i, 2u);
  EXPECT_EQ(e.j, 3u);
  EXPECT_EQ(e.likelihood, 1.0);
  for (const auto& r : result.record) {
    EXPECT_LT(r.i, 5u);
    EXPECT_LT(r.j, 5u);
  }
}

TEST(Grounding, MeansComeFromSameClassFeatures) {
  const auto data = generate_dataset(small_spec(), 6);
  TrainConfig cfg = small_config();
  cfg.epochs = 1;
  auto state = init_state(cfg, data.train, 2);
  const auto result = ground_prototypes(state, data.train);
  for (const auto& r : result.record) {
    const auto& sample = data.train[r.sample_id];
    EXPECT_EQ(static_cast<std::size_t>(sample.label), r.class_id);
    const auto f = forward(state.net, sample.raw).features.at(r.i, r.j);
    const auto mean = result.head.classes[r.class_id].mean(r.prototype);
    EXPECT_TRUE(std::equal(f.begin(), f.end(), mean.begin()));
  }
}

TEST(HardReplace, IdempotentAndPointModeOnly) {
  const auto data = generate_dataset(small_spec(), 7);
  TrainConfig cfg = small_config();
  cfg.point_based = true;
  cfg.epochs = 1;
  auto state = init_state(cfg, data.train, 3);
  train(state, data.train, cfg);
  const auto once = hard_replace_baseline(state, data.train);
  TrainState again = state;
  again.head = once.head;
  const auto twice = hard_replace_baseline(again, data.train);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(once.head.classes[c].means, twice.head.classes[c].means);

  cfg.point_based = false;
  const auto mg = init_state(cfg, data.train, 3);
  EXPECT_THROW(hard_replace_baseline(mg, data.train), ContractError);
}

TEST(Prune, KeepsLargestPriorsInOrder) {
  ModelHead head(2, 4, 1);
  head.classes[0].means = {0.0, 1.0, 2.0, 3.0};
  head.classes[0].priors = {0.2, 0.4, 0.1, 0.3};
  const auto pruned = prune(head, 2);
  EXPECT_EQ(pruned.num_prototypes(), 2u);
  EXPECT_EQ(pruned.classes[0].means, (std::vector<double>{1.0, 3.0}));
  EXPECT_EQ(pruned.classes[0].priors, (std::vector<double>{0.4, 0.3}));
  const auto renorm = prune(head, 2, true);
  EXPECT_NEAR(renorm.classes[0].priors[0], 0.4 / 0.7, 1e-15);
  const auto same = prune(head, 4);
  EXPECT_EQ(same.classes[0].means, head.classes[0].means);
  EXPECT_EQ(same.classes[0].priors, head.classes[0].priors);
  EXPECT_THROW(prune(head, 0), ContractError);
  EXPECT_THROW(prune(head, 5), ContractError);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  Rng rng(4);
  const Checkpoint ckpt{oracle::random_head(3, 2, 4, 1.0, rng), TinyNet::identity(6, 4)};
  const auto bytes = encode_checkpoint(ckpt);
  const auto back = decode_checkpoint(bytes);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(back.head.classes[c].means, ckpt.head.classes[c].means);
    EXPECT_EQ(back.head.classes[c].priors, ckpt.head.classes[c].priors);
  }
  ASSERT_TRUE(back.net.has_value());
  EXPECT_EQ(back.net->tensors()[0].size(), 36u);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), FormatError);
  auto cut = bytes;
  cut.resize(cut.size() - 3);
  EXPECT_THROW(decode_checkpoint(cut), FormatError);
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(decode_checkpoint(extra), FormatError);
}

TEST(DatasetIo, RoundTrip) {
  const auto dir = scratch_dir("dataset_io");
  const auto data = generate_dataset(small_spec(), 8);
  write_split(dir / "ood.bin", data.ood, spec_to_json(small_spec()));
  const auto back = read_split(dir / "ood.bin");
  ASSERT_EQ(back.size(), data.ood.size());
  for (std::size_t k = 0; k < back.size(); ++k) {
    EXPECT_EQ(back[k].label, kOodLabel);
    EXPECT_TRUE(same_values(back[k].raw, data.ood[k].raw));
  }
  EXPECT_TRUE(fs::exists(dir / "ood.bin.json"));
  EXPECT_THROW(read_split(dir / "missing.bin"), FormatError);
  fs::remove_all(dir);
}
