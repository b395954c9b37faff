#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "patchdrop/pipeline.hpp"

using namespace patchdrop;

namespace {

const PatchGrid kGrid(32, 32);

Tensor<float> ones_image() {
  Tensor<float> img({1, 32, 32});
  for (auto& v : img.vec()) v = 1.0f;
  return img;
}

std::size_t zero_patch_count(const Tensor<float>& img) {
  const auto ps = extract_patches(img, kGrid);
  std::size_t n = 0;
  for (const auto& p : ps)
    n += std::all_of(p.vec().begin(), p.vec().end(), [](float v) { return v == 0.0f; });
  return n;
}

SyntheticData task() {
  SyntheticSpec spec;
  spec.train_size = 256;
  spec.val_size = 64;
  spec.test_size = 128;
  spec.seed = 11;
  return generate_synthetic(spec);
}

}  // namespace

TEST(TopPatches, HighestFirstTiesToLowerId) {
  std::vector<double> s(16, 0.1);
  s[7] = 0.9;
  s[2] = 0.5;
  s[11] = 0.5;
  EXPECT_EQ(top_patches(ActionProbs(s), 3), (std::vector<std::size_t>{7, 2, 11}));
  EXPECT_EQ(top_patches(ActionProbs::constant(0.3), 4), (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(top_patches(ActionProbs(s), 40).size(), 16u);
}

TEST(HardPositive, ZeroesExactlyTopM) {
  Rng rng(3), prob_rng(4);
  std::vector<std::size_t> seen_m(5, 0);
  for (int t = 0; t < 400; ++t) {
    std::vector<double> s(16);
    for (auto& v : s) v = prob_rng.uniform();
    const ActionProbs probs(s);
    const auto out = hard_positive(ones_image(), probs, kGrid, rng);
    const std::size_t m = out.zeroed.size();
    ASSERT_GE(m, 1u);
    ASSERT_LE(m, 4u);
    ++seen_m[m];
    EXPECT_EQ(out.zeroed, top_patches(probs, m));
    EXPECT_EQ(zero_patch_count(out.image), m);
    // untouched elsewhere
    const auto ps = extract_patches(out.image, kGrid);
    for (std::size_t p = 0; p < kNumPatches; ++p) {
      const bool z = std::find(out.zeroed.begin(), out.zeroed.end(), p) != out.zeroed.end();
      for (float v : ps[p].vec()) ASSERT_EQ(v, z ? 0.0f : 1.0f);
    }
  }
  for (std::size_t m = 1; m <= 4; ++m) EXPECT_GT(seen_m[m], 60u) << m;
}

TEST(Cutout, DistinctUniformPatches) {
  Rng rng(21);
  const int n = 10000;
  std::vector<double> freq(kNumPatches, 0.0);
  std::vector<double> by_m(5, 0.0);
  for (int t = 0; t < n; ++t) {
    const auto out = cutout_control(ones_image(), kGrid, rng);
    const std::size_t m = out.zeroed.size();
    ASSERT_TRUE(m >= 1 && m <= 4);
    ASSERT_TRUE(std::is_sorted(out.zeroed.begin(), out.zeroed.end()));
    ASSERT_EQ(std::adjacent_find(out.zeroed.begin(), out.zeroed.end()), out.zeroed.end());
    ASSERT_EQ(zero_patch_count(out.image), m);
    by_m[m] += 1.0;
    for (auto p : out.zeroed) freq[p] += 1.0;
  }
  // E[M] = 2.5, so each patch is hit with probability 2.5/16
  const double p = 2.5 / 16.0;
  const double sd = std::sqrt(n * p * (1 - p));
  for (std::size_t i = 0; i < kNumPatches; ++i) EXPECT_NEAR(freq[i], n * p, 4 * sd) << i;
  const double sdm = std::sqrt(n * 0.25 * 0.75);
  for (std::size_t m = 1; m <= 4; ++m) EXPECT_NEAR(by_m[m], n * 0.25, 4 * sdm);
}

TEST(Cutout, SeededDraws) {
  Rng a(8), b(8);
  for (int i = 0; i < 50; ++i)
    EXPECT_EQ(cutout_control(ones_image(), kGrid, a).zeroed,
              cutout_control(ones_image(), kGrid, b).zeroed);
}

TEST(AugmentMode, Parse) {
  EXPECT_EQ(parse_augment_mode("none"), AugmentMode::kNone);
  EXPECT_EQ(parse_augment_mode("cutout"), AugmentMode::kCutout);
  EXPECT_EQ(parse_augment_mode("hardpos"), AugmentMode::kHardPositive);
  EXPECT_THROW(parse_augment_mode("mixup"), Error);
}

TEST(AugmentTraining, NoneMatchesPretraining) {
  const auto d = task();
  StageConfig pre = StageConfig::defaults(Stage::kClassifierPretrain);
  pre.epochs = 2;
  pre.learning_rate = 1e-3;
  pre.batch_size = 64;
  pre.rng_seed = 99;
  TrainState st = make_train_state(d.train, 4);
  const Network<float> init = st.hr;
  pretrain_classifiers(d.train, d.val, st, pre);

  AugmentTrainConfig cfg{2, 1e-3, 64, 0.5, 99};
  Network<float> trained;
  const double acc =
      train_with_augmentation(d.train, d.test, init, nullptr, AugmentMode::kNone, cfg, &trained);
  ASSERT_EQ(trained.params().size(), st.hr.params().size());
  for (std::size_t i = 0; i < trained.params().size(); ++i)
    EXPECT_EQ(trained.params()[i]->vec(), st.hr.params()[i]->vec());
  EXPECT_DOUBLE_EQ(acc, stream_accuracy(st.hr, d.test.hr, d.test.labels));
}

TEST(AugmentTraining, DeterministicAndChecked) {
  const auto d = task();
  TrainState st = make_train_state(d.train, 4);
  AugmentTrainConfig cfg{1, 1e-3, 64, 0.5, 5};
  const double a =
      train_with_augmentation(d.train, d.test, st.hr, &st.policy, AugmentMode::kHardPositive, cfg);
  const double b =
      train_with_augmentation(d.train, d.test, st.hr, &st.policy, AugmentMode::kHardPositive, cfg);
  EXPECT_EQ(a, b);
  EXPECT_EQ(train_with_augmentation(d.train, d.test, st.hr, nullptr, AugmentMode::kCutout, cfg),
            train_with_augmentation(d.train, d.test, st.hr, nullptr, AugmentMode::kCutout, cfg));
  EXPECT_THROW(train_with_augmentation(d.train, d.test, st.hr, nullptr,
                                       AugmentMode::kHardPositive, cfg),
               Error);
}

TEST(AugmentTraining, ApplyProbZeroEqualsNone) {
  const auto d = task();
  TrainState st = make_train_state(d.train, 4);
  AugmentTrainConfig cfg{1, 1e-3, 64, 0.0, 5};
  Network<float> a, b;
  train_with_augmentation(d.train, d.test, st.hr, nullptr, AugmentMode::kNone, cfg, &a);
  train_with_augmentation(d.train, d.test, st.hr, nullptr, AugmentMode::kCutout, cfg, &b);
  for (std::size_t i = 0; i < a.params().size(); ++i)
    EXPECT_EQ(a.params()[i]->vec(), b.params()[i]->vec());
}
