#pragma once

// Central finite-difference check of a layer's backward pass.

#include <algorithm>
#include <cmath>
#include <string>

#include "patchdrop/nn.hpp"

namespace patchdrop {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // which entry produced max_rel_error
  std::size_t checked = 0;
};

inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

namespace detail {

// L(x) = <w, f(x)> for a fixed random projection w.
template <typename Fwd>
double projected_loss(Fwd&& f, const Tensor<double>& w) {
  const Tensor<double> y = f();
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
  return s;
}

}  // namespace detail

// Compares backward() against central differences for the input and every
// parameter entry of `layer` at input `x`.
inline GradCheckResult check_gradients(Layer<double>& layer, Tensor<double> x, Rng& rng,
                                       double h = 1e-4) {
  GradCheckResult res;
  const Tensor<double> y0 = layer.forward(x);
  Tensor<double> w(y0.shape());
  for (auto& v : w.vec()) v = rng.normal();
  layer.zero_grad();
  layer.forward(x);
  const Tensor<double> dx = layer.backward(w);
  std::vector<Tensor<double>> dparams = layer.grads();

  auto note = [&](double analytic, double numeric, const std::string& what) {
    const double e = relative_error(analytic, numeric);
    ++res.checked;
    if (e > res.max_rel_error) {
      res.max_rel_error = e;
      res.worst = what + " analytic=" + std::to_string(analytic) +
                  " numeric=" + std::to_string(numeric);
    }
  };
  auto loss = [&] { return detail::projected_loss([&] { return layer.forward(x); }, w); };

  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = loss();
    x[i] = keep - h;
    const double down = loss();
    x[i] = keep;
    note(dx[i], (up - down) / (2.0 * h), "input[" + std::to_string(i) + "]");
  }
  for (std::size_t p = 0; p < layer.params().size(); ++p) {
    auto& param = layer.params()[p];
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double keep = param[i];
      param[i] = keep + h;
      const double up = loss();
      param[i] = keep - h;
      const double down = loss();
      param[i] = keep;
      note(dparams[p][i], (up - down) / (2.0 * h),
           "param" + std::to_string(p) + "[" + std::to_string(i) + "]");
    }
  }
  return res;
}

}  // namespace patchdrop
