#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "patchdrop/checkpoint.hpp"
#include "patchdrop/gradcheck.hpp"
#include "patchdrop/models.hpp"
#include "patchdrop/optim.hpp"

using namespace patchdrop;

namespace {

Tensor<double> random_tensor(Shape s, Rng& rng, double away_from_zero = 0.0) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.vec()) {
    v = rng.normal();
    if (std::abs(v) < away_from_zero) v += v < 0 ? -away_from_zero : away_from_zero;
  }
  return t;
}

template <typename L>
void randomize(L& layer, Rng& rng) {
  for (auto& p : layer.params())
    for (auto& v : p.vec()) v = 0.5 * rng.normal();
}

}  // namespace

TEST(Tensor, RejectsMismatchedData) {
  EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), Error);
  EXPECT_THROW(Tensor<float>({2, 0}), Error);
  Tensor<float> t({2, 3});
  EXPECT_THROW(t.reshaped({4}), Error);
  EXPECT_EQ(t.reshaped({3, 2}).shape(), (Shape{3, 2}));
}

TEST(Tensor, SliceAndSample) {
  Tensor<float> t({3, 2}, std::vector<float>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.slice(1, 2).vec(), (std::vector<float>{3, 4, 5, 6}));
  EXPECT_EQ(t.sample(2).vec(), (std::vector<float>{5, 6}));
  EXPECT_THROW(t.slice(2, 2), Error);
}

TEST(Conv2d, HandComputedOutput) {
  Conv2d<double> conv(1, 1, 2);
  conv.params()[0].vec() = {1, 0, 0, 1};
  conv.params()[1].vec() = {0.5};
  Tensor<double> x({1, 1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  EXPECT_EQ(conv.forward(x).vec(), (std::vector<double>{6.5, 8.5, 12.5, 14.5}));
}

TEST(Conv2d, PaddingSeesOnlyRealPixels) {
  Conv2d<double> conv(1, 1, 3, 1, 1);
  conv.params()[0].fill(1.0);
  Tensor<double> x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  EXPECT_EQ(conv.forward(x).vec(), (std::vector<double>{10, 10, 10, 10}));
}

TEST(Conv2d, StrideTwoShape) {
  Conv2d<float> conv(3, 8, 2, 2);
  EXPECT_EQ(conv.output_shape({3, 32, 32}), (Shape{8, 16, 16}));
  EXPECT_THROW(conv.output_shape({2, 32, 32}), Error);
  EXPECT_THROW(conv.output_shape({3, 1, 1}), Error);
}

TEST(Dense, HandComputedOutput) {
  Dense<double> d(2, 2);
  d.params()[0].vec() = {1, 2, 3, 4};
  d.params()[1].vec() = {0.5, -1};
  Tensor<double> x({1, 2}, std::vector<double>{1, 1});
  EXPECT_EQ(d.forward(x).vec(), (std::vector<double>{3.5, 6}));
}

TEST(Activations, KnownValues) {
  Softmax<double> sm;
  const auto p = sm.forward(Tensor<double>({1, 2}, std::vector<double>{0, std::log(3.0)}));
  EXPECT_NEAR(p[0], 0.25, 1e-12);
  EXPECT_NEAR(p[1], 0.75, 1e-12);
  Sigmoid<double> sg;
  EXPECT_EQ(sg.forward(Tensor<double>({1, 1}))[0], 0.5);
  GlobalAvgPool<double> gap;
  EXPECT_EQ(gap.forward(Tensor<double>({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}))[0], 2.5);
  Relu<double> r;
  EXPECT_EQ(r.forward(Tensor<double>({1, 3}, std::vector<double>{-1, 0, 2})).vec(),
            (std::vector<double>{0, 0, 2}));
}

TEST(Softmax, LargeLogitsStayFinite) {
  Softmax<float> sm;
  const auto p = sm.forward(Tensor<float>({1, 3}, std::vector<float>{1000, 999, -1000}));
  EXPECT_TRUE(p.all_finite());
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0f, 1e-6);
}

TEST(Layers, BackwardBeforeForwardThrows) {
  Tensor<double> g({1, 2});
  EXPECT_THROW(Dense<double>(2, 2).backward(g), Error);
  EXPECT_THROW(Relu<double>().backward(g), Error);
  EXPECT_THROW(Sigmoid<double>().backward(g), Error);
  EXPECT_THROW(Softmax<double>().backward(g), Error);
  EXPECT_THROW(Flatten<double>().backward(g), Error);
  EXPECT_THROW(GlobalAvgPool<double>().backward(g), Error);
  EXPECT_THROW(Conv2d<double>(1, 1, 1).backward(Tensor<double>({1, 1, 1, 1})), Error);
  Network<double> net({2});
  net.add<Dense<double>>(2, 2);
  EXPECT_THROW(net.backward(g), Error);
}

// Finite differences against backward() for every layer type, a few seeds
// here; the full sweep lives in the acceptance suite.
class LayerGradients : public ::testing::TestWithParam<int> {};

TEST_P(LayerGradients, MatchFiniteDifferences) {
  Rng rng(static_cast<std::uint64_t>(GetParam()));
  auto expect_ok = [&](Layer<double>& layer, Tensor<double> x, const char* name) {
    const auto r = check_gradients(layer, std::move(x), rng);
    EXPECT_LT(r.max_rel_error, 1e-4) << name << ": " << r.worst;
    EXPECT_GT(r.checked, 0u);
  };
  Conv2d<double> c1(2, 3, 3, 1, 1), c2(2, 3, 2, 2, 0), c3(1, 2, 3, 2, 1);
  randomize(c1, rng);
  randomize(c2, rng);
  randomize(c3, rng);
  expect_ok(c1, random_tensor({2, 2, 5, 5}, rng), "conv k3 s1 p1");
  expect_ok(c2, random_tensor({2, 2, 6, 6}, rng), "conv k2 s2");
  expect_ok(c3, random_tensor({2, 1, 7, 6}, rng), "conv k3 s2 p1");
  Dense<double> d(6, 4);
  randomize(d, rng);
  expect_ok(d, random_tensor({3, 6}, rng), "dense");
  Relu<double> relu;
  expect_ok(relu, random_tensor({3, 5}, rng, 1e-2), "relu");
  Sigmoid<double> sg;
  expect_ok(sg, random_tensor({3, 5}, rng), "sigmoid");
  Softmax<double> sm;
  expect_ok(sm, random_tensor({3, 5}, rng), "softmax");
  Flatten<double> fl;
  expect_ok(fl, random_tensor({2, 2, 3, 3}, rng), "flatten");
  GlobalAvgPool<double> gap;
  expect_ok(gap, random_tensor({2, 3, 4, 4}, rng), "gap");
}

INSTANTIATE_TEST_SUITE_P(Seeds, LayerGradients, ::testing::Range(1, 4));

TEST(Network, EndToEndGradientMatchesFiniteDifference) {
  Rng rng(7);
  auto net = make_hr_classifier<double>({1, 8, 8}, 3, rng);
  Tensor<double> x = random_tensor({2, 1, 8, 8}, rng);
  std::vector<std::size_t> y{0, 2};
  auto loss = [&] { return batch_cross_entropy<double>(net.forward(x), y).loss; };
  const auto ce = batch_cross_entropy<double>(net.forward(x), y);
  net.backward(ce.grad);
  auto grads = net.grads();
  auto params = net.params();
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t i = 0; i < params[p]->size(); i += 7) {
      const double keep = (*params[p])[i];
      (*params[p])[i] = keep + 1e-5;
      const double up = loss();
      (*params[p])[i] = keep - 1e-5;
      const double down = loss();
      (*params[p])[i] = keep;
      const double num = (up - down) / 2e-5;
      if (std::abs(num) > 1e-6 || std::abs((*grads[p])[i]) > 1e-6)
        worst = std::max(worst, relative_error((*grads[p])[i], num));
    }
  EXPECT_LT(worst, 1e-4);
}

TEST(Network, BackwardOverwritesGradients) {
  Rng rng(3);
  auto net = make_policy_net<double>({1, 4, 4}, rng);
  Tensor<double> x = random_tensor({2, 1, 4, 4}, rng);
  Tensor<double> g({2, kNumPatches}, 1.0);
  net.forward(x);
  net.backward(g);
  const auto first = *net.grads()[0];
  net.forward(x);
  net.backward(g);
  EXPECT_TRUE(first == *net.grads()[0]);
}

TEST(Network, ShapeErrorsNameTheLayer) {
  Network<float> net({1, 8, 8});
  net.add<Conv2d<float>>(1, 4, 3).add<Flatten<float>>().add<Dense<float>>(99, 2);
  try {
    net.output_shape();
    FAIL() << "expected a shape error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("layer 2 (dense)"), std::string::npos) << e.what();
  }
  Network<float> ok({4});
  ok.add<Dense<float>>(4, 2);
  EXPECT_THROW(ok.forward(Tensor<float>({1, 5})), Error);
}

TEST(Network, CopyIsDeep) {
  Rng rng(1);
  auto a = make_policy_net<float>({1, 8, 8}, rng);
  auto b = a;
  EXPECT_TRUE(a.params_equal(b));
  (*b.params()[0])[0] += 1.0f;
  EXPECT_FALSE(a.params_equal(b));
}

TEST(Network, EmptyNetworkIsIdentity) {
  Network<float> net;
  Tensor<float> x({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  EXPECT_TRUE(net.forward(x) == x);
}

TEST(Init, HeScaleAndZeroBias) {
  Rng rng(11);
  Network<double> net({400});
  net.add<Dense<double>>(400, 200);
  init_he(net, rng);
  const auto& w = *net.params()[0];
  double ss = 0.0;
  for (double v : w.vec()) ss += v * v;
  EXPECT_NEAR(ss / static_cast<double>(w.size()), 2.0 / 400.0, 0.1 * 2.0 / 400.0);
  for (double v : net.params()[1]->vec()) EXPECT_EQ(v, 0.0);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor<double> p({1}, 1.0), g({1}, 0.5);
  AdamState<double> st({0.1});
  adam_step<double>({&p}, {&g}, st);
  EXPECT_NEAR(p[0], 0.9, 1e-7);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, RejectsNonFiniteGradientWithoutUpdating) {
  Tensor<double> p({2}, 1.0), g({2}, std::vector<double>{0.1, NAN});
  AdamState<double> st({0.1});
  EXPECT_THROW(adam_step<double>({&p}, {&g}, st), Error);
  EXPECT_EQ(p[0], 1.0);
}

TEST(CrossEntropy, KnownValues) {
  const auto ce = cross_entropy(Tensor<double>({2}, std::vector<double>{0.25, 0.75}), 1);
  EXPECT_NEAR(ce.loss, -std::log(0.75), 1e-12);
  EXPECT_NEAR(ce.grad[1], -1.0 / 0.75, 1e-12);
  EXPECT_EQ(ce.grad[0], 0.0);
  EXPECT_THROW(cross_entropy(Tensor<double>({2}, std::vector<double>{0.5, 0.5}), 2), Error);
  EXPECT_THROW(cross_entropy(Tensor<double>({2}, std::vector<double>{0.5, 0.6}), 0), Error);
}

TEST(CrossEntropy, BatchMeanAndGradientScale) {
  Tensor<double> p({2, 2}, std::vector<double>{0.5, 0.5, 0.2, 0.8});
  std::vector<std::size_t> y{0, 1};
  const auto ce = batch_cross_entropy<double>(p, y);
  EXPECT_NEAR(ce.loss, (std::log(2.0) - std::log(0.8)) / 2.0, 1e-12);
  EXPECT_NEAR(ce.grad[0], -1.0, 1e-12);
  EXPECT_NEAR(ce.grad[3], -1.0 / 1.6, 1e-12);
}

TEST(Checkpoint, RoundTripIsExact) {
  Rng rng(5);
  auto net = make_hr_classifier<float>({3, 32, 32}, 10, rng);
  std::stringstream ss;
  write_checkpoint(ss, net);
  auto back = read_checkpoint<float>(ss);
  EXPECT_TRUE(back.same_architecture(net));
  EXPECT_TRUE(back.params_equal(net));
  Tensor<float> x({1, 3, 32, 32}, 0.3f);
  EXPECT_TRUE(back.forward(x) == net.forward(x));
}

TEST(Checkpoint, HeaderLayout) {
  Network<float> net({2});
  net.add<Dense<float>>(2, 1);
  std::stringstream ss;
  write_checkpoint(ss, net);
  const std::string s = ss.str();
  ASSERT_GE(s.size(), 8u);
  EXPECT_EQ(s.substr(0, 4), "PDNN");
  EXPECT_EQ(s[4], 1);
  // magic, version, rank, dim, layer count, tag, cfg n, 2 cfg, tensor count,
  // weight (rank, 2 dims, 2 floats), bias (rank, 1 dim, 1 float)
  EXPECT_EQ(s.size(), 4u * (1 + 1 + 1 + 1 + 1 + 1 + 1 + 2 + 1 + 5 + 3));
}

TEST(Checkpoint, CorruptInputsAreRejected) {
  Rng rng(5);
  auto net = make_policy_net<float>({1, 8, 8}, rng);
  std::stringstream ss;
  write_checkpoint(ss, net);
  const std::string good = ss.str();

  std::stringstream truncated(good.substr(0, good.size() - 3));
  EXPECT_THROW(read_checkpoint<float>(truncated), Error);
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  std::stringstream bm(bad_magic);
  EXPECT_THROW(read_checkpoint<float>(bm), Error);
  std::string bad_version = good;
  bad_version[4] = 9;
  std::stringstream bv(bad_version);
  EXPECT_THROW(read_checkpoint<float>(bv), Error);
}
