#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "patchdrop/nn.hpp"
#include "patchdrop/tensor.hpp"

namespace patchdrop {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(AdamConfig cfg) : config(cfg) {}
};

// One Adam update with bias correction. Moments are created lazily on the
// first call. Rejects non-finite gradients before touching any parameter.
template <typename T>
void adam_step(std::vector<Tensor<T>*> params,
               std::vector<Tensor<T>*> grads, AdamState<T>& state) {
  if (params.size() != grads.size())
    throw Error("adam: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  if (state.m.size() != params.size())
    throw Error("adam: state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i]->shape() ||
        params[i]->shape() != state.m[i].shape())
      throw Error("adam: shape mismatch at parameter " + std::to_string(i));
    if (!grads[i]->all_finite())
      throw Error("adam: non-finite gradient at parameter " +
                  std::to_string(i) + " (training diverged)");
  }
  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    const auto& g = *grads[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      const double mj = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
      const double vj = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update =
          c.learning_rate * (mj / bc1) / (std::sqrt(vj / bc2) + c.epsilon);
      p[j] = static_cast<T>(p[j] - update);
    }
  }
}

template <typename T>
void adam_step(Network<T>& net, AdamState<T>& state) {
  adam_step(net.params(), net.grads(), state);
}

template <typename T>
struct LossAndGrad {
  T loss{};
  Tensor<T> grad;  // d loss / d probs
};

// -log p[label] for a single probability vector.
template <typename T>
LossAndGrad<T> cross_entropy(const Tensor<T>& probs, std::size_t label) {
  if (label >= probs.size())
    throw Error("cross_entropy: label " + std::to_string(label) +
                " out of range for " + std::to_string(probs.size()) +
                " classes");
  double total = 0.0;
  for (auto p : probs.vec()) {
    if (p < T{}) throw Error("cross_entropy: negative probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-5)
    throw Error("cross_entropy: probabilities do not sum to 1");
  const T tiny = std::numeric_limits<T>::min();
  const T p = std::max(probs[label], tiny);
  LossAndGrad<T> out{-std::log(p), Tensor<T>(probs.shape())};
  out.grad[label] = -T{1} / p;
  return out;
}

// Mean cross entropy over a batch of probability rows [N, K]; the gradient is
// already divided by N.
template <typename T>
LossAndGrad<T> batch_cross_entropy(const Tensor<T>& probs,
                                   std::span<const std::size_t> labels) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size())
    throw Error("batch_cross_entropy: expected [N,K] with N labels");
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  LossAndGrad<T> out{T{}, Tensor<T>(probs.shape())};
  const T tiny = std::numeric_limits<T>::min();
  for (std::size_t s = 0; s < n; ++s) {
    if (labels[s] >= k) throw Error("batch_cross_entropy: label out of range");
    const T p = std::max(probs[s * k + labels[s]], tiny);
    out.loss += -std::log(p) / static_cast<T>(n);
    out.grad[s * k + labels[s]] = -T{1} / (p * static_cast<T>(n));
  }
  return out;
}

}  // namespace patchdrop
