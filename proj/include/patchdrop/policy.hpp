#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "patchdrop/nn.hpp"
#include "patchdrop/patch_grid.hpp"
#include "patchdrop/rng.hpp"

namespace patchdrop {

// One Bernoulli parameter per patch.
struct ActionProbs {
  std::vector<double> probs;

  ActionProbs() = default;
  explicit ActionProbs(std::vector<double> p) : probs(std::move(p)) {
    for (double v : probs)
      if (!(v >= 0.0 && v <= 1.0))
        throw Error("action probs: entry outside [0,1]");
  }
  static ActionProbs constant(double v, std::size_t n = kNumPatches) {
    return ActionProbs(std::vector<double>(n, v));
  }

  std::size_t size() const { return probs.size(); }
  double operator[](std::size_t i) const { return probs[i]; }
};

// Linear ramp of the exploration parameter over optimizer steps.
struct AlphaSchedule {
  double alpha_start = 0.7;
  double alpha_end = 0.95;
  std::uint64_t total_steps = 1;

  void validate() const {
    if (!(0.0 <= alpha_start && alpha_start <= alpha_end && alpha_end <= 1.0))
      throw Error("alpha schedule: need 0 <= alpha_start <= alpha_end <= 1");
  }

  double at(std::uint64_t step) const {
    if (total_steps <= 1) return step == 0 ? alpha_start : alpha_end;
    const double t = std::min(1.0, static_cast<double>(step) /
                                       static_cast<double>(total_steps - 1));
    return alpha_start + (alpha_end - alpha_start) * t;
  }
};

inline constexpr double kProbClamp = 1e-6;

// s_p = f_p(x_l) for a single LR image [C,h,w]. The network must end in a
// sigmoid and emit one value per patch.
template <typename T>
ActionProbs policy_forward(Network<T>& net, const Tensor<T>& lr) {
  Shape s = lr.shape();
  s.insert(s.begin(), 1);
  const Tensor<T> out = net.forward(lr.reshaped(s));
  std::vector<double> p(out.vec().begin(), out.vec().end());
  return ActionProbs(std::move(p));
}

// Batched forward over [N,C,h,w]; leaves the network ready for backward.
template <typename T>
std::vector<ActionProbs> policy_forward_batch(Network<T>& net,
                                              const Tensor<T>& lr_batch) {
  const Tensor<T> out = net.forward(lr_batch);
  const std::size_t n = out.dim(0), k = out.size() / n;
  std::vector<ActionProbs> res;
  res.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    res.emplace_back(std::vector<double>(out.vec().begin() + i * k,
                                         out.vec().begin() + (i + 1) * k));
  return res;
}

// α s + (1-α)(1-s), elementwise.
inline ActionProbs temperature_scale(const ActionProbs& s, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw Error("temperature_scale: alpha outside [0,1]");
  ActionProbs out = s;
  for (auto& v : out.probs) v = alpha * v + (1.0 - alpha) * (1.0 - v);
  return out;
}

// Independent Bernoulli draw per patch.
inline PatchMask sample_action(const ActionProbs& s, Rng& rng) {
  PatchMask m(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) m.set(i, rng.uniform() < s[i]);
  return m;
}

// Most likely action: bit i set iff s_i > 0.5 (strict).
inline PatchMask greedy_action(const ActionProbs& s) {
  PatchMask m(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) m.set(i, s[i] > 0.5);
  return m;
}

struct LogProb {
  double log_prob = 0.0;
  std::vector<double> grad;  // d log_prob / d s
};

// log π(a|s) = Σ a log s + (1-a) log(1-s) with s clamped to
// [1e-6, 1-1e-6].
inline LogProb log_prob_and_grad(const ActionProbs& s, const PatchMask& a) {
  if (s.size() != a.size())
    throw Error("log_prob: probability/mask length mismatch");
  LogProb out;
  out.grad.resize(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double p = std::clamp(s[i], kProbClamp, 1.0 - kProbClamp);
    if (a[i]) {
      out.log_prob += std::log(p);
      out.grad[i] = 1.0 / p;
    } else {
      out.log_prob += std::log1p(-p);
      out.grad[i] = -1.0 / (1.0 - p);
    }
  }
  return out;
}

// Gradient of the REINFORCE surrogate loss  -A·log π(a | s_scaled)  with
// respect to the raw (unscaled) policy output. With through_scaling == false
// the log-likelihood is scored under the raw probabilities instead.
inline std::vector<double> policy_loss_grad(const ActionProbs& raw,
                                            const PatchMask& action,
                                            double advantage, double alpha,
                                            bool through_scaling = true) {
  if (!through_scaling) {
    auto lp = log_prob_and_grad(raw, action);
    for (auto& g : lp.grad) g *= -advantage;
    return lp.grad;
  }
  auto lp = log_prob_and_grad(temperature_scale(raw, alpha), action);
  const double dscale = 2.0 * alpha - 1.0;
  for (auto& g : lp.grad) g *= -advantage * dscale;
  return lp.grad;
}

}  // namespace patchdrop
