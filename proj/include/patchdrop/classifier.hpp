#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "patchdrop/nn.hpp"
#include "patchdrop/tensor.hpp"

namespace patchdrop {

// A class distribution (softmax output).
struct ClassProbs {
  std::vector<double> probs;

  ClassProbs() = default;
  explicit ClassProbs(std::vector<double> p) : probs(std::move(p)) {}

  std::size_t size() const { return probs.size(); }
  double operator[](std::size_t i) const { return probs[i]; }

  bool is_distribution(double tol = 1e-5) const {
    double s = 0.0;
    for (double v : probs) {
      if (v < 0.0 || !std::isfinite(v)) return false;
      s += v;
    }
    return std::abs(s - 1.0) <= tol;
  }
};

struct Prediction {
  std::size_t label = 0;
  double confidence = 0.0;
};

namespace detail {

template <typename T>
std::vector<ClassProbs> rows_of(const Tensor<T>& out) {
  const std::size_t n = out.dim(0), k = out.size() / n;
  std::vector<ClassProbs> res;
  res.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    res.emplace_back(std::vector<double>(out.vec().begin() + i * k,
                                         out.vec().begin() + (i + 1) * k));
  return res;
}

template <typename T>
ClassProbs classify_one(Network<T>& net, const Tensor<T>& image) {
  Shape s = image.shape();
  s.insert(s.begin(), 1);
  return rows_of(net.forward(image.reshaped(s))).front();
}

}  // namespace detail

// HR stream on a masked image [C,H,W].
template <typename T>
ClassProbs classify_hr(Network<T>& net_h, const Tensor<T>& masked_hr) {
  return detail::classify_one(net_h, masked_hr);
}

// LR stream on an LR image [C,h,w].
template <typename T>
ClassProbs classify_lr(Network<T>& net_l, const Tensor<T>& lr) {
  return detail::classify_one(net_l, lr);
}

template <typename T>
std::vector<ClassProbs> classify_batch(Network<T>& net, const Tensor<T>& batch) {
  return detail::rows_of(net.forward(batch));
}

// (S/P)·hr + (1 - S/P)·lr
inline ClassProbs fuse(const ClassProbs& hr, const ClassProbs& lr,
                       std::size_t sampled, std::size_t total) {
  if (hr.size() != lr.size())
    throw Error("fuse: class count mismatch (" + std::to_string(hr.size()) +
                " vs " + std::to_string(lr.size()) + ")");
  if (total == 0 || sampled > total)
    throw Error("fuse: need 0 <= S <= P and P > 0");
  if (sampled == 0) return lr;
  if (sampled == total) return hr;
  const double w = static_cast<double>(sampled) / static_cast<double>(total);
  ClassProbs out(std::vector<double>(hr.size()));
  for (std::size_t i = 0; i < hr.size(); ++i)
    out.probs[i] = w * hr[i] + (1.0 - w) * lr[i];
  return out;
}

// Argmax; ties resolve to the lowest class index.
inline Prediction predict(const ClassProbs& p) {
  if (p.size() == 0) throw Error("predict: empty distribution");
  Prediction best{0, p[0]};
  for (std::size_t i = 1; i < p.size(); ++i)
    if (p[i] > best.confidence) best = {i, p[i]};
  return best;
}

}  // namespace patchdrop
