#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "patchdrop/rng.hpp"
#include "patchdrop/tensor.hpp"

namespace patchdrop {

// Stable numeric tags; they are written into checkpoints.
enum class LayerKind : std::uint32_t {
  kConv2d = 1,
  kDense = 2,
  kRelu = 3,
  kSigmoid = 4,
  kSoftmax = 5,
  kFlatten = 6,
  kGlobalAvgPool = 7,
};

inline std::string_view layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kDense: return "dense";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kSigmoid: return "sigmoid";
    case LayerKind::kSoftmax: return "softmax";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kGlobalAvgPool: return "global_avg_pool";
  }
  return "unknown";
}

// A layer maps a batch [N, sample...] to a batch [N, out_sample...]. Shapes
// passed to output_shape() exclude the batch axis.
template <typename T>
class Layer {
public:
  virtual ~Layer() = default;

  virtual LayerKind kind() const = 0;
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual Tensor<T> forward(const Tensor<T>& x) = 0;
  // Accumulates parameter gradients and returns the input gradient. Requires
  // a preceding forward().
  virtual Tensor<T> backward(const Tensor<T>& dy) = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;

  // Structural hyperparameters, serialized as the layer's "shape dims".
  virtual std::vector<std::uint32_t> config() const { return {}; }

  std::vector<Tensor<T>>& params() { return params_; }
  const std::vector<Tensor<T>>& params() const { return params_; }
  std::vector<Tensor<T>>& grads() { return grads_; }
  const std::vector<Tensor<T>>& grads() const { return grads_; }

  void zero_grad() {
    for (auto& g : grads_) g.fill(T{});
  }

protected:
  void add_param(Shape s) {
    params_.emplace_back(s);
    grads_.emplace_back(std::move(s));
  }

  std::vector<Tensor<T>> params_;
  std::vector<Tensor<T>> grads_;
};

namespace detail {

inline void require(bool ok, std::string_view layer, const std::string& msg) {
  if (!ok) throw Error(std::string(layer) + ": " + msg);
}

}  // namespace detail

// Square-kernel 2-D convolution with stride and symmetric zero padding.
// Weight [out, in, k, k], bias [out].
template <typename T>
class Conv2d final : public Layer<T> {
public:
  Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
         std::size_t stride = 1, std::size_t pad = 0)
      : in_(in_ch), out_(out_ch), k_(kernel), stride_(stride), pad_(pad) {
    detail::require(in_ch && out_ch && kernel && stride, "conv2d",
                    "zero-sized configuration");
    this->add_param({out_ch, in_ch, kernel, kernel});
    this->add_param({out_ch});
  }

  LayerKind kind() const override { return LayerKind::kConv2d; }

  std::vector<std::uint32_t> config() const override {
    return {static_cast<std::uint32_t>(in_), static_cast<std::uint32_t>(out_),
            static_cast<std::uint32_t>(k_), static_cast<std::uint32_t>(stride_),
            static_cast<std::uint32_t>(pad_)};
  }

  Shape output_shape(const Shape& in) const override {
    detail::require(in.size() == 3 && in[0] == in_, "conv2d",
                    "expected [" + std::to_string(in_) + ",H,W], got " +
                        shape_str(in));
    detail::require(in[1] + 2 * pad_ >= k_ && in[2] + 2 * pad_ >= k_, "conv2d",
                    "input smaller than kernel: " + shape_str(in));
    return {out_, (in[1] + 2 * pad_ - k_) / stride_ + 1,
            (in[2] + 2 * pad_ - k_) / stride_ + 1};
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    detail::require(x.rank() == 4, "conv2d", "expected NCHW batch, got " +
                                                 shape_str(x.shape()));
    const Shape os = output_shape({x.dim(1), x.dim(2), x.dim(3)});
    const std::size_t n = x.dim(0), np = os[1] * os[2], kk = in_ * k_ * k_;
    in_shape_ = x.shape();
    cols_ = im2col(x, os[1], os[2]);
    const auto& wt = this->params_[0];
    const auto& b = this->params_[1];
    std::vector<T> wtr(kk * out_);  // [kk, out]
    for (std::size_t o = 0; o < out_; ++o)
      for (std::size_t q = 0; q < kk; ++q) wtr[q * out_ + o] = wt[o * kk + q];
    Tensor<T> y({n, out_, os[1], os[2]});
    T* yp = y.data().data();
    const T* cp = cols_.data().data();
    std::vector<T> acc(out_);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t p = 0; p < np; ++p) {
        const T* col = cp + (s * np + p) * kk;
        for (std::size_t o = 0; o < out_; ++o) acc[o] = b[o];
        for (std::size_t q = 0; q < kk; ++q) {
          const T cv = col[q];
          const T* wr = wtr.data() + q * out_;
          for (std::size_t o = 0; o < out_; ++o) acc[o] += wr[o] * cv;
        }
        for (std::size_t o = 0; o < out_; ++o) yp[(s * out_ + o) * np + p] = acc[o];
      }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    detail::require(!cols_.empty(), "conv2d", "backward before forward");
    const std::size_t n = in_shape_[0], oh = dy.dim(2), ow = dy.dim(3);
    const std::size_t np = oh * ow, kk = in_ * k_ * k_;
    const T* wt = this->params_[0].data().data();
    T* dw = this->grads_[0].data().data();
    auto& db = this->grads_[1];
    const T* cp = cols_.data().data();
    const T* dyp = dy.data().data();
    std::vector<T> dcol(np * kk);
    Tensor<T> dx(in_shape_);
    for (std::size_t s = 0; s < n; ++s) {
      std::fill(dcol.begin(), dcol.end(), T{});
      for (std::size_t o = 0; o < out_; ++o) {
        const T* g = dyp + (s * out_ + o) * np;
        const T* wr = wt + o * kk;
        T* dwr = dw + o * kk;
        T bsum{};
        for (std::size_t p = 0; p < np; ++p) {
          const T gv = g[p];
          bsum += gv;
          const T* col = cp + (s * np + p) * kk;
          T* dc = dcol.data() + p * kk;
          for (std::size_t q = 0; q < kk; ++q) {
            dwr[q] += gv * col[q];
            dc[q] += gv * wr[q];
          }
        }
        db[o] += bsum;
      }
      col2im_add(dcol, dx, s, oh, ow);
    }
    return dx;
  }

  std::unique_ptr<Layer<T>> clone() const override {
    auto c = std::make_unique<Conv2d>(*this);
    c->cols_ = Tensor<T>{};
    return c;
  }

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  std::size_t kernel() const { return k_; }

private:
  // Signed input coordinate of output position o under kernel tap k.
  std::ptrdiff_t coord(std::size_t o, std::size_t k) const {
    return static_cast<std::ptrdiff_t>(o * stride_ + k) - static_cast<std::ptrdiff_t>(pad_);
  }

  // [N, OH*OW, C*K*K]; taps in the padding are zero.
  Tensor<T> im2col(const Tensor<T>& x, std::size_t oh, std::size_t ow) const {
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3), kk = in_ * k_ * k_;
    Tensor<T> cols({n, oh * ow, kk});
    T* out = cols.data().data();
    const T* xp = x.data().data();
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          T* col = out + ((s * oh + i) * ow + j) * kk;
          for (std::size_t c = 0; c < in_; ++c) {
            const T* plane = xp + (s * in_ + c) * h * w;
            for (std::size_t ki = 0; ki < k_; ++ki) {
              const std::ptrdiff_t r = coord(i, ki);
              const bool row_ok = r >= 0 && r < static_cast<std::ptrdiff_t>(h);
              for (std::size_t kj = 0; kj < k_; ++kj, ++col) {
                const std::ptrdiff_t q = coord(j, kj);
                if (row_ok && q >= 0 && q < static_cast<std::ptrdiff_t>(w))
                  *col = plane[r * static_cast<std::ptrdiff_t>(w) + q];
              }
            }
          }
        }
    return cols;
  }

  void col2im_add(const std::vector<T>& dcol, Tensor<T>& dx, std::size_t s,
                  std::size_t oh, std::size_t ow) const {
    const std::size_t h = dx.dim(2), w = dx.dim(3);
    T* dxp = dx.data().data();
    const T* col = dcol.data();
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        for (std::size_t c = 0; c < in_; ++c) {
          T* plane = dxp + (s * in_ + c) * h * w;
          for (std::size_t ki = 0; ki < k_; ++ki) {
            const std::ptrdiff_t r = coord(i, ki);
            const bool row_ok = r >= 0 && r < static_cast<std::ptrdiff_t>(h);
            for (std::size_t kj = 0; kj < k_; ++kj, ++col) {
              const std::ptrdiff_t q = coord(j, kj);
              if (row_ok && q >= 0 && q < static_cast<std::ptrdiff_t>(w))
                plane[r * static_cast<std::ptrdiff_t>(w) + q] += *col;
            }
          }
        }
  }

  std::size_t in_, out_, k_, stride_, pad_;
  Shape in_shape_;
  Tensor<T> cols_;
};

// y = W x + b. Weight [out, in], bias [out]; input per-sample shape [in].
template <typename T>
class Dense final : public Layer<T> {
public:
  Dense(std::size_t in, std::size_t out) : in_(in), out_(out) {
    detail::require(in && out, "dense", "zero-sized configuration");
    this->add_param({out, in});
    this->add_param({out});
  }

  LayerKind kind() const override { return LayerKind::kDense; }
  std::vector<std::uint32_t> config() const override {
    return {static_cast<std::uint32_t>(in_), static_cast<std::uint32_t>(out_)};
  }

  Shape output_shape(const Shape& in) const override {
    detail::require(in.size() == 1 && in[0] == in_, "dense",
                    "expected [" + std::to_string(in_) + "], got " + shape_str(in));
    return {out_};
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    output_shape({x.size() / x.dim(0)});
    detail::require(x.rank() == 2, "dense", "expected rank-2 batch, got " +
                                                shape_str(x.shape()));
    const std::size_t n = x.dim(0);
    const auto& wt = this->params_[0];
    const auto& b = this->params_[1];
    Tensor<T> y({n, out_});
    for (std::size_t s = 0; s < n; ++s) {
      const T* xs = &x[s * in_];
      for (std::size_t o = 0; o < out_; ++o) {
        const T* wr = &wt[o * in_];
        T acc = b[o];
        for (std::size_t i = 0; i < in_; ++i) acc += wr[i] * xs[i];
        y[s * out_ + o] = acc;
      }
    }
    input_ = x;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    detail::require(!input_.empty(), "dense", "backward before forward");
    const std::size_t n = input_.dim(0);
    const auto& wt = this->params_[0];
    auto& dw = this->grads_[0];
    auto& db = this->grads_[1];
    Tensor<T> dx(input_.shape());
    for (std::size_t s = 0; s < n; ++s) {
      const T* xs = &input_[s * in_];
      T* dxs = &dx[s * in_];
      for (std::size_t o = 0; o < out_; ++o) {
        const T g = dy[s * out_ + o];
        if (g == T{}) continue;
        db[o] += g;
        T* dwr = &dw[o * in_];
        const T* wr = &wt[o * in_];
        for (std::size_t i = 0; i < in_; ++i) {
          dwr[i] += g * xs[i];
          dxs[i] += g * wr[i];
        }
      }
    }
    return dx;
  }

  std::unique_ptr<Layer<T>> clone() const override {
    auto c = std::make_unique<Dense>(*this);
    c->input_ = Tensor<T>{};
    return c;
  }

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

private:
  std::size_t in_, out_;
  Tensor<T> input_;
};

template <typename T>
class Relu final : public Layer<T> {
public:
  LayerKind kind() const override { return LayerKind::kRelu; }
  Shape output_shape(const Shape& in) const override { return in; }

  Tensor<T> forward(const Tensor<T>& x) override {
    input_ = x;
    Tensor<T> y = x;
    for (auto& v : y.vec()) v = v > T{} ? v : T{};
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    detail::require(!input_.empty(), "relu", "backward before forward");
    Tensor<T> dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (!(input_[i] > T{})) dx[i] = T{};
    return dx;
  }

  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<Relu>();
  }

private:
  Tensor<T> input_;
};

template <typename T>
class Sigmoid final : public Layer<T> {
public:
  LayerKind kind() const override { return LayerKind::kSigmoid; }
  Shape output_shape(const Shape& in) const override { return in; }

  Tensor<T> forward(const Tensor<T>& x) override {
    Tensor<T> y = x;
    for (auto& v : y.vec()) v = T{1} / (T{1} + std::exp(-v));
    output_ = y;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    detail::require(!output_.empty(), "sigmoid", "backward before forward");
    Tensor<T> dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i)
      dx[i] *= output_[i] * (T{1} - output_[i]);
    return dx;
  }

  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<Sigmoid>();
  }

private:
  Tensor<T> output_;
};

// Softmax over the per-sample vector.
template <typename T>
class Softmax final : public Layer<T> {
public:
  LayerKind kind() const override { return LayerKind::kSoftmax; }
  Shape output_shape(const Shape& in) const override {
    detail::require(in.size() == 1, "softmax",
                    "expected a vector per sample, got " + shape_str(in));
    return in;
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    detail::require(x.rank() == 2, "softmax", "expected rank-2 batch");
    const std::size_t n = x.dim(0), k = x.dim(1);
    Tensor<T> y = x;
    for (std::size_t s = 0; s < n; ++s) {
      T* row = &y[s * k];
      const T mx = *std::max_element(row, row + k);
      T z{};
      for (std::size_t j = 0; j < k; ++j) z += (row[j] = std::exp(row[j] - mx));
      for (std::size_t j = 0; j < k; ++j) row[j] /= z;
    }
    output_ = y;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    detail::require(!output_.empty(), "softmax", "backward before forward");
    const std::size_t n = output_.dim(0), k = output_.dim(1);
    Tensor<T> dx(output_.shape());
    for (std::size_t s = 0; s < n; ++s) {
      const T* y = &output_[s * k];
      const T* g = &dy[s * k];
      T dot{};
      for (std::size_t j = 0; j < k; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < k; ++j) dx[s * k + j] = y[j] * (g[j] - dot);
    }
    return dx;
  }

  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<Softmax>();
  }

private:
  Tensor<T> output_;
};

template <typename T>
class Flatten final : public Layer<T> {
public:
  LayerKind kind() const override { return LayerKind::kFlatten; }
  Shape output_shape(const Shape& in) const override {
    return {shape_numel(in)};
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    in_shape_ = x.shape();
    return x.reshaped({x.dim(0), x.size() / x.dim(0)});
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    detail::require(!in_shape_.empty(), "flatten", "backward before forward");
    return dy.reshaped(in_shape_);
  }

  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<Flatten>();
  }

private:
  Shape in_shape_;
};

// [C,H,W] -> [C], spatial mean.
template <typename T>
class GlobalAvgPool final : public Layer<T> {
public:
  LayerKind kind() const override { return LayerKind::kGlobalAvgPool; }
  Shape output_shape(const Shape& in) const override {
    detail::require(in.size() == 3, "global_avg_pool",
                    "expected [C,H,W], got " + shape_str(in));
    return {in[0]};
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    output_shape({x.dim(1), x.dim(2), x.dim(3)});
    in_shape_ = x.shape();
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> y({n, c});
    for (std::size_t i = 0; i < n * c; ++i) {
      T acc{};
      for (std::size_t j = 0; j < hw; ++j) acc += x[i * hw + j];
      y[i] = acc / static_cast<T>(hw);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    detail::require(!in_shape_.empty(), "global_avg_pool",
                    "backward before forward");
    Tensor<T> dx(in_shape_);
    const std::size_t nc = in_shape_[0] * in_shape_[1];
    const std::size_t hw = in_shape_[2] * in_shape_[3];
    for (std::size_t i = 0; i < nc; ++i) {
      const T g = dy[i] / static_cast<T>(hw);
      for (std::size_t j = 0; j < hw; ++j) dx[i * hw + j] = g;
    }
    return dx;
  }

  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<GlobalAvgPool>();
  }

private:
  Shape in_shape_;
};

// Sequential network with a declared per-sample input shape. Copies are deep.
template <typename T>
class Network {
public:
  Network() = default;
  explicit Network(Shape input_shape) : input_shape_(std::move(input_shape)) {}

  Network(const Network& other) : input_shape_(other.input_shape_) {
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
  }
  Network& operator=(const Network& other) {
    if (this != &other) {
      Network tmp(other);
      *this = std::move(tmp);
    }
    return *this;
  }
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  const Shape& input_shape() const { return input_shape_; }

  template <typename L, typename... Args>
  Network& add(Args&&... args) {
    layers_.push_back(std::make_unique<L>(std::forward<Args>(args)...));
    return *this;
  }

  Network& add_layer(std::unique_ptr<Layer<T>> layer) {
    layers_.push_back(std::move(layer));
    return *this;
  }

  std::size_t num_layers() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }

  // Per-sample output shape; throws naming the first incompatible layer.
  Shape output_shape() const {
    Shape s = input_shape_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      try {
        s = layers_[i]->output_shape(s);
      } catch (const Error& e) {
        throw Error("layer " + std::to_string(i) + " (" +
                    std::string(layer_kind_name(layers_[i]->kind())) +
                    "): " + e.what());
      }
    }
    return s;
  }

  // Accepts a batch [N, input_shape...] or, for an empty network, anything.
  Tensor<T> forward(const Tensor<T>& input) {
    if (layers_.empty()) return input;
    Shape sample(input.shape().begin() + (input.rank() ? 1 : 0),
                 input.shape().end());
    if (input.rank() != input_shape_.size() + 1 || sample != input_shape_)
      throw Error("layer 0 (" +
                  std::string(layer_kind_name(layers_[0]->kind())) +
                  "): input " + shape_str(input.shape()) +
                  " does not match declared [N]+" + shape_str(input_shape_));
    Tensor<T> x = input;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      try {
        x = layers_[i]->forward(x);
      } catch (const Error& e) {
        throw Error("layer " + std::to_string(i) + " (" +
                    std::string(layer_kind_name(layers_[i]->kind())) +
                    "): " + e.what());
      }
    }
    out_shape_ = x.shape();
    return x;
  }

  // Overwrites parameter gradients with those of <output_grad, output>.
  Tensor<T> backward(const Tensor<T>& output_grad) {
    if (out_shape_.empty()) throw Error("network: backward before forward");
    if (output_grad.shape() != out_shape_)
      throw Error("network: output gradient " + shape_str(output_grad.shape()) +
                  " does not match forward output " + shape_str(out_shape_));
    zero_grad();
    Tensor<T> g = output_grad;
    for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g);
    return g;
  }

  void zero_grad() {
    for (auto& l : layers_) l->zero_grad();
  }

  std::vector<Tensor<T>*> params() {
    std::vector<Tensor<T>*> out;
    for (auto& l : layers_)
      for (auto& p : l->params()) out.push_back(&p);
    return out;
  }
  std::vector<const Tensor<T>*> params() const {
    std::vector<const Tensor<T>*> out;
    for (const auto& l : layers_)
      for (const auto& p : l->params()) out.push_back(&p);
    return out;
  }
  std::vector<Tensor<T>*> grads() {
    std::vector<Tensor<T>*> out;
    for (auto& l : layers_)
      for (auto& g : l->grads()) out.push_back(&g);
    return out;
  }

  std::size_t num_params() const {
    std::size_t n = 0;
    for (const auto* p : params()) n += p->size();
    return n;
  }

  // Same layer kinds and parameter shapes.
  bool same_architecture(const Network& other) const {
    if (input_shape_ != other.input_shape_ ||
        layers_.size() != other.layers_.size())
      return false;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (layers_[i]->kind() != other.layers_[i]->kind() ||
          layers_[i]->config() != other.layers_[i]->config())
        return false;
    }
    return true;
  }

  void copy_params_from(const Network& other) {
    if (!same_architecture(other))
      throw Error("network: cannot copy parameters across architectures");
    auto dst = params();
    auto src = other.params();
    for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] = *src[i];
  }

  bool params_equal(const Network& other) const {
    auto a = params();
    auto b = other.params();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (!(*a[i] == *b[i])) return false;
    return true;
  }

private:
  Shape input_shape_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  Shape out_shape_;
};

// He fan-in initialization for conv/dense weights; biases zero.
template <typename T>
void init_he(Network<T>& net, Rng& rng) {
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    auto& l = net.layer(i);
    if (l.params().empty()) continue;
    auto& w = l.params()[0];
    const std::size_t fan_in = w.size() / w.dim(0);
    const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : w.vec()) v = static_cast<T>(rng.normal() * scale);
    for (std::size_t p = 1; p < l.params().size(); ++p) l.params()[p].fill(T{});
  }
}

}  // namespace patchdrop
