#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "patchdrop/pipeline.hpp"

using namespace patchdrop;

namespace {

SyntheticData small_task(std::size_t classes = 4, std::uint64_t seed = 3) {
  SyntheticSpec spec;
  spec.num_classes = classes;
  spec.informative_patches = classes == 2 ? std::vector<std::size_t>{0, 15}
                                          : std::vector<std::size_t>{0, 3, 12, 15};
  spec.train_size = 384;
  spec.val_size = 128;
  spec.test_size = 128;
  spec.seed = seed;
  return generate_synthetic(spec);
}

StageConfig quick(Stage s, std::size_t epochs) {
  StageConfig c = StageConfig::defaults(s);
  c.epochs = epochs;
  c.learning_rate = 1e-3;
  c.batch_size = 64;
  c.rng_seed = 17;
  return c;
}

// Pretrained classifiers shared by the tests that need them.
struct Pretrained {
  SyntheticData data = small_task();
  TrainState state;
  PretrainResult result;
  Pretrained() {
    state = make_train_state(data.train, 5);
    result = pretrain_classifiers(data.train, data.val, state,
                                  quick(Stage::kClassifierPretrain, 6));
  }
};

const Pretrained& pretrained() {
  static const Pretrained p;
  return p;
}

MaskSource constant_masks(PatchMask m) {
  return [m](const Tensor<float>& lr) { return std::vector<PatchMask>(lr.dim(0), m); };
}

}  // namespace

TEST(StageConfig, ProblemsAreExhaustive) {
  StageConfig c;
  c.epochs = 0;
  c.batch_size = 0;
  c.learning_rate = -1;
  c.sigma = -2;
  c.alpha = {0.9, 0.8, 0};
  EXPECT_EQ(c.problems().size(), 5u);
  EXPECT_THROW(c.validate(), Error);
  EXPECT_TRUE(StageConfig::defaults(Stage::kPt).problems().empty());
  EXPECT_EQ(StageConfig::defaults(Stage::kFt1).sigma, 5.0);
  EXPECT_EQ(StageConfig::defaults(Stage::kPt).sigma, 0.5);
}

TEST(StageNames, RoundTrip) {
  for (Stage s : {Stage::kClassifierPretrain, Stage::kPt, Stage::kFt1, Stage::kFt2})
    EXPECT_EQ(parse_stage(stage_name(s)), s);
  EXPECT_THROW(parse_stage("ft3"), Error);
}

TEST(Pretrain, SeparableTwoClassTaskIsLearned) {
  auto d = small_task(2, 9);
  auto st = make_train_state(d.train, 1);
  const auto r = pretrain_classifiers(d.train, d.val, st, quick(Stage::kClassifierPretrain, 5));
  EXPECT_GE(r.hr_accuracy, 0.99);
  EXPECT_TRUE(st.classifiers_ready);
}

// A single untrained network maps each class to some fixed prediction, so
// chance level only holds on average over initializations.
TEST(Pretrain, ZeroEpochsIsNearChance) {
  auto d = small_task();
  double mean = 0.0;
  const int inits = 16;
  for (int seed = 0; seed < inits; ++seed) {
    auto st = make_train_state(d.train, static_cast<std::uint64_t>(seed));
    mean += pretrain_classifiers(d.train, d.val, st, quick(Stage::kClassifierPretrain, 0))
                .hr_accuracy / inits;
  }
  EXPECT_NEAR(mean, 0.25, 0.1);
}

TEST(Pretrain, Deterministic) {
  auto d = small_task();
  auto a = make_train_state(d.train, 1), b = make_train_state(d.train, 1);
  const auto cfg = quick(Stage::kClassifierPretrain, 2);
  const auto ra = pretrain_classifiers(d.train, d.val, a, cfg);
  const auto rb = pretrain_classifiers(d.train, d.val, b, cfg);
  EXPECT_EQ(ra.hr_accuracy, rb.hr_accuracy);
  EXPECT_TRUE(a.hr.params_equal(b.hr));
  EXPECT_TRUE(a.lr.params_equal(b.lr));
}

TEST(Pretrain, LrStreamCanStartFromHrWeights) {
  auto d = small_task();
  d.train.rebuild_lr(1);
  d.val.rebuild_lr(1);
  auto st = make_train_state(d.train, 2);
  st.lr = st.hr;
  auto cfg = quick(Stage::kClassifierPretrain, 1);
  auto copy = st;
  pretrain_classifiers(d.train, d.val, st, cfg, nullptr, true);
  pretrain_classifiers(d.train, d.val, copy, cfg, nullptr, false);
  EXPECT_FALSE(st.lr.params_equal(copy.lr));
}

TEST(ReinforceStep, ZeroAdvantageLeavesPolicyUnchanged) {
  auto st = pretrained().state;
  // Saturated policy with no exploration: every sampled mask equals the
  // greedy one, so A = 0.
  auto& head = st.policy.layer(st.policy.num_layers() - 2);
  head.params()[0].fill(0.0f);
  head.params()[1].fill(50.0f);
  const auto before = st.policy;
  const auto& d = pretrained().data;
  Rng rng(4);
  auto cfg = quick(Stage::kPt, 1);
  const auto m = reinforce_step(d.train.hr.slice(0, 32), d.train.lr.slice(0, 32),
                                std::span(d.train.labels).subspan(0, 32), st, cfg, 1.0, rng);
  EXPECT_EQ(m.mean_advantage, 0.0);
  EXPECT_EQ(m.mean_S, 16.0);
  EXPECT_TRUE(st.policy.params_equal(before));
}

TEST(ReinforceStep, RejectsMismatchedBatch) {
  auto st = pretrained().state;
  const auto& d = pretrained().data;
  Rng rng(1);
  EXPECT_THROW(reinforce_step(d.train.hr.slice(0, 8), d.train.lr.slice(0, 4),
                              std::span(d.train.labels).subspan(0, 8), st,
                              quick(Stage::kPt, 1), 0.8, rng),
               Error);
}

TEST(RunStage, OrderIsEnforced) {
  const auto& d = pretrained().data;
  auto fresh = make_train_state(d.train, 1);
  EXPECT_THROW(run_stage(d.train, d.val, fresh, quick(Stage::kPt, 1)), Error);
  auto st = pretrained().state;
  EXPECT_THROW(run_stage(d.train, d.val, st, quick(Stage::kFt1, 1)), Error);
  EXPECT_THROW(run_stage(d.train, d.val, st, quick(Stage::kFt2, 1)), Error);
  EXPECT_THROW(run_stage(d.train, d.val, st, quick(Stage::kClassifierPretrain, 1)), Error);
}

TEST(RunStage, FreezeContracts) {
  const auto& d = pretrained().data;
  auto st = pretrained().state;
  const auto hr0 = st.hr, lr0 = st.lr, pol0 = st.policy;
  run_stage(d.train, d.val, st, quick(Stage::kPt, 1));
  EXPECT_TRUE(st.hr.params_equal(hr0));
  EXPECT_TRUE(st.lr.params_equal(lr0));
  EXPECT_FALSE(st.policy.params_equal(pol0));
  EXPECT_TRUE(st.pt_done);

  const auto hr1 = st.hr;
  run_stage(d.train, d.val, st, quick(Stage::kFt1, 1));
  EXPECT_TRUE(st.lr.params_equal(lr0));
  EXPECT_FALSE(st.hr.params_equal(hr1));

  const auto hr2 = st.hr;
  run_stage(d.train, d.val, st, quick(Stage::kFt2, 1));
  EXPECT_TRUE(st.lr.params_equal(lr0));
  EXPECT_FALSE(st.hr.params_equal(hr2));
}

TEST(RunStage, ClassifierTargetSwitchChangesUpdate) {
  const auto& d = pretrained().data;
  auto a = pretrained().state;
  run_stage(d.train, d.val, a, quick(Stage::kPt, 1));
  auto b = a;
  auto cfg = quick(Stage::kFt1, 1);
  run_stage(d.train, d.val, a, cfg);
  cfg.classifier_target = ClassifierTarget::kGreedy;
  run_stage(d.train, d.val, b, cfg);
  EXPECT_FALSE(a.hr.params_equal(b.hr));
}

TEST(RunStage, WritesLogAndCheckpoints) {
  const auto& d = pretrained().data;
  auto st = pretrained().state;
  const auto dir = std::filesystem::temp_directory_path() / "patchdrop_test_ckpt";
  std::filesystem::remove_all(dir);
  std::ostringstream os;
  MetricsLog log(&os);
  run_stage(d.train, d.val, st, quick(Stage::kPt, 2), {dir, &log});
  for (const char* f : {"pt_last_policy.pdnn", "pt_last_hr.pdnn", "pt_last_lr.pdnn",
                        "pt_best_policy.pdnn"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  const auto back = load_checkpoint<float>((dir / "pt_last_policy.pdnn").string());
  EXPECT_TRUE(back.params_equal(st.policy));
  std::istringstream lines(os.str());
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("stage"), "pt");
    EXPECT_EQ(j.at("epoch"), n + 1);
    for (const char* k : {"step", "mean_reward", "mean_S", "accuracy"}) EXPECT_TRUE(j.contains(k));
    ++n;
  }
  EXPECT_EQ(n, 2);
  std::filesystem::remove_all(dir);
}

TEST(Evaluate, EndpointPoliciesMatchStreams) {
  const auto& d = pretrained().data;
  auto st = pretrained().state;
  const auto drop = evaluate(d.test, st, ClassifierMode::kTwoStream, constant_masks(PatchMask::none()));
  EXPECT_DOUBLE_EQ(drop.accuracy, stream_accuracy(st.lr, d.test.lr, d.test.labels));
  EXPECT_EQ(drop.mean_S, 0.0);
  const auto keep = evaluate(d.test, st, ClassifierMode::kHrOnly, constant_masks(PatchMask::all()));
  EXPECT_DOUBLE_EQ(keep.accuracy, stream_accuracy(st.hr, d.test.hr, d.test.labels));
  EXPECT_EQ(keep.mean_S, 16.0);
}

TEST(Evaluate, CountingIdentityAndDeterminism) {
  const auto& d = pretrained().data;
  auto st = pretrained().state;
  const auto a = evaluate(d.test, st, ClassifierMode::kHrOnly, learned_policy(st));
  const auto b = evaluate(d.test, st, ClassifierMode::kHrOnly, learned_policy(st));
  double sum = 0.0;
  for (double f : a.patch_frequency) {
    EXPECT_GE(f, 0.0);
    EXPECT_LE(f, 1.0);
    sum += f;
  }
  EXPECT_NEAR(sum, a.mean_S, 1e-9);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.patch_frequency, b.patch_frequency);
  std::size_t total = 0;
  for (auto c : a.count_by_S) total += c;
  EXPECT_EQ(total, d.test.size());

  std::ostringstream acc, freq;
  write_analysis_tables(acc, freq, a);
  EXPECT_EQ(acc.str().rfind("S,count,accuracy\n", 0), 0u);
  EXPECT_EQ(freq.str().rfind("patch,frequency\n", 0), 0u);
}

TEST(ReinforceEstimate, MatchesEnumerationOnSmallToy) {
  const ActionProbs s({0.7, 0.2, 0.55});
  auto r = [](const PatchMask& a, Rng&) { return a[0] * 1.0 - a[1] * 0.5 + a[0] * a[2] * 2.0; };
  // d/ds_i E[R] by enumeration of the 8 masks.
  std::vector<double> exact(3, 0.0);
  for (unsigned bits = 0; bits < 8; ++bits) {
    PatchMask a(3);
    double pi = 1.0;
    for (std::size_t i = 0; i < 3; ++i) {
      a.set(i, (bits >> i) & 1u);
      pi *= a[i] ? s[i] : 1.0 - s[i];
    }
    Rng dummy;
    for (std::size_t i = 0; i < 3; ++i)
      exact[i] += r(a, dummy) * pi * (a[i] ? 1.0 / s[i] : -1.0 / (1.0 - s[i]));
  }
  Rng rng(21);
  const auto est = reinforce_estimate(s, r, 50000, rng, true);
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_NEAR(est.mean[i], exact[i], 4.0 * est.standard_error(i)) << i;
}
