#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "patchdrop/tensor.hpp"

namespace patchdrop {

inline constexpr std::size_t kGridRows = 4;
inline constexpr std::size_t kGridCols = 4;
inline constexpr std::size_t kNumPatches = kGridRows * kGridCols;

// Binary acquisition vector over patches; bit i == 1 means patch i is kept.
class PatchMask {
public:
  PatchMask() : bits_(kNumPatches, 0) {}
  explicit PatchMask(std::size_t length, bool value = false)
      : bits_(length, value ? 1 : 0) {}
  explicit PatchMask(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
    for (auto& b : bits_) b = b ? 1 : 0;
  }

  static PatchMask all(std::size_t length = kNumPatches) {
    return PatchMask(length, true);
  }
  static PatchMask none(std::size_t length = kNumPatches) {
    return PatchMask(length, false);
  }
  static PatchMask from_ids(std::initializer_list<std::size_t> ids,
                            std::size_t length = kNumPatches) {
    PatchMask m(length);
    for (auto id : ids) m.set(id, true);
    return m;
  }

  std::size_t size() const { return bits_.size(); }
  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  bool test(std::size_t i) const { return bits_.at(i) != 0; }
  void set(std::size_t i, bool v) { bits_.at(i) = v ? 1 : 0; }

  // S = |a|_1
  std::size_t count() const {
    std::size_t s = 0;
    for (auto b : bits_) s += b;
    return s;
  }

  // Bitwise subset test.
  bool subset_of(const PatchMask& other) const {
    if (size() != other.size()) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (bits_[i] && !other.bits_[i]) return false;
    return true;
  }

  const std::vector<std::uint8_t>& bits() const { return bits_; }

  std::string to_string() const {
    std::string s;
    for (auto b : bits_) s.push_back(b ? '1' : '0');
    return s;
  }

  friend bool operator==(const PatchMask&, const PatchMask&) = default;

private:
  std::vector<std::uint8_t> bits_;
};

// Fixed 4x4 grid of equal, non-overlapping patches; IDs row-major.
class PatchGrid {
public:
  PatchGrid(std::size_t height, std::size_t width)
      : height_(height), width_(width) {
    if (height == 0 || width == 0 || height % kGridRows || width % kGridCols)
      throw Error("patch grid: image " + std::to_string(height) + "x" +
                  std::to_string(width) + " is not divisible by the 4x4 grid");
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t patch_height() const { return height_ / kGridRows; }
  std::size_t patch_width() const { return width_ / kGridCols; }
  static constexpr std::size_t rows() { return kGridRows; }
  static constexpr std::size_t cols() { return kGridCols; }
  static constexpr std::size_t num_patches() { return kNumPatches; }

  // Patch ID covering pixel (y, x).
  std::size_t patch_of(std::size_t y, std::size_t x) const {
    return (y / patch_height()) * kGridCols + x / patch_width();
  }

  void check_image(const Shape& s) const {
    if (s.size() != 3 || s[1] != height_ || s[2] != width_)
      throw Error("patch grid: image " + shape_str(s) + " does not match grid " +
                  std::to_string(height_) + "x" + std::to_string(width_));
  }

  friend bool operator==(const PatchGrid&, const PatchGrid&) = default;

private:
  std::size_t height_;
  std::size_t width_;
};

inline void check_mask(const PatchMask& mask) {
  if (mask.size() != kNumPatches)
    throw Error("patch mask: expected " + std::to_string(kNumPatches) +
                " bits, got " + std::to_string(mask.size()));
}

// x_h ⊙ a: pixels of dropped patches set to zero. Image is [C,H,W].
template <typename T>
Tensor<T> apply_mask(const Tensor<T>& hr, const PatchMask& mask,
                     const PatchGrid& grid) {
  grid.check_image(hr.shape());
  check_mask(mask);
  Tensor<T> out = hr;
  const std::size_t c = hr.dim(0), h = hr.dim(1), w = hr.dim(2);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (mask[grid.patch_of(y, x)]) continue;
      for (std::size_t ch = 0; ch < c; ++ch) out[(ch * h + y) * w + x] = T{};
    }
  return out;
}

// Batched variant: images [N,C,H,W], one mask per sample.
template <typename T>
Tensor<T> apply_masks(const Tensor<T>& batch, const std::vector<PatchMask>& masks,
                      const PatchGrid& grid) {
  if (batch.rank() != 4 || batch.dim(0) != masks.size())
    throw Error("apply_masks: expected [N,C,H,W] with N masks");
  grid.check_image({batch.dim(1), batch.dim(2), batch.dim(3)});
  Tensor<T> out = batch;
  const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2),
                    w = batch.dim(3);
  for (std::size_t s = 0; s < n; ++s) {
    check_mask(masks[s]);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        if (masks[s][grid.patch_of(y, x)]) continue;
        for (std::size_t ch = 0; ch < c; ++ch) out.at(s, ch, y, x) = T{};
      }
  }
  return out;
}

// ds x ds box average over the two trailing axes. Accepts [C,H,W] or
// [N,C,H,W].
template <typename T>
Tensor<T> downsample(const Tensor<T>& hr, std::size_t ds) {
  if (ds == 0) throw Error("downsample: ratio must be positive");
  if (hr.rank() < 2) throw Error("downsample: expected an image tensor");
  const std::size_t h = hr.dim(hr.rank() - 2), w = hr.dim(hr.rank() - 1);
  if (h % ds || w % ds)
    throw Error("downsample: " + std::to_string(h) + "x" + std::to_string(w) +
                " is not divisible by " + std::to_string(ds));
  if (ds == 1) return hr;
  const std::size_t oh = h / ds, ow = w / ds;
  const std::size_t planes = hr.size() / (h * w);
  Shape s = hr.shape();
  s[s.size() - 2] = oh;
  s[s.size() - 1] = ow;
  Tensor<T> out(s);
  const double inv = 1.0 / static_cast<double>(ds * ds);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double acc = 0.0;
        for (std::size_t a = 0; a < ds; ++a)
          for (std::size_t b = 0; b < ds; ++b)
            acc += hr[(p * h + i * ds + a) * w + j * ds + b];
        out[(p * oh + i) * ow + j] = static_cast<T>(acc * inv);
      }
  return out;
}

// Nearest-neighbour replication, the right inverse of downsample on
// block-constant images.
template <typename T>
Tensor<T> upsample_replicate(const Tensor<T>& lr, std::size_t factor) {
  if (factor == 0 || lr.rank() < 2) throw Error("upsample: bad arguments");
  const std::size_t h = lr.dim(lr.rank() - 2), w = lr.dim(lr.rank() - 1);
  const std::size_t planes = lr.size() / (h * w);
  Shape s = lr.shape();
  s[s.size() - 2] = h * factor;
  s[s.size() - 1] = w * factor;
  Tensor<T> out(s);
  const std::size_t oh = h * factor, ow = w * factor;
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        out[(p * oh + i) * ow + j] = lr[(p * h + i / factor) * w + j / factor];
  return out;
}

// Euclidean distance (px) from the patch centre to the image centre.
inline double patch_center_distance(std::size_t patch_id, const PatchGrid& grid) {
  if (patch_id >= kNumPatches)
    throw Error("patch_center_distance: patch id " + std::to_string(patch_id) +
                " out of range");
  const double ph = static_cast<double>(grid.patch_height());
  const double pw = static_cast<double>(grid.patch_width());
  const double cy = (static_cast<double>(patch_id / kGridCols) + 0.5) * ph;
  const double cx = (static_cast<double>(patch_id % kGridCols) + 0.5) * pw;
  const double dy = cy - static_cast<double>(grid.height()) / 2.0;
  const double dx = cx - static_cast<double>(grid.width()) / 2.0;
  return std::sqrt(dy * dy + dx * dx);
}

// 16 patches [C, H/4, W/4] in ID order.
template <typename T>
std::vector<Tensor<T>> extract_patches(const Tensor<T>& hr, const PatchGrid& grid) {
  grid.check_image(hr.shape());
  const std::size_t c = hr.dim(0), h = hr.dim(1), w = hr.dim(2);
  const std::size_t ph = grid.patch_height(), pw = grid.patch_width();
  std::vector<Tensor<T>> out;
  out.reserve(kNumPatches);
  for (std::size_t id = 0; id < kNumPatches; ++id) {
    const std::size_t y0 = (id / kGridCols) * ph, x0 = (id % kGridCols) * pw;
    Tensor<T> p({c, ph, pw});
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < ph; ++y)
        for (std::size_t x = 0; x < pw; ++x)
          p[(ch * ph + y) * pw + x] = hr[(ch * h + y0 + y) * w + x0 + x];
    out.push_back(std::move(p));
  }
  return out;
}

// Inverse of extract_patches.
template <typename T>
Tensor<T> assemble_patches(const std::vector<Tensor<T>>& patches,
                           const PatchGrid& grid) {
  if (patches.size() != kNumPatches)
    throw Error("assemble_patches: expected 16 patches");
  const std::size_t ph = grid.patch_height(), pw = grid.patch_width();
  const std::size_t c = patches[0].dim(0), h = grid.height(), w = grid.width();
  Tensor<T> out({c, h, w});
  for (std::size_t id = 0; id < kNumPatches; ++id) {
    if (patches[id].shape() != Shape{c, ph, pw})
      throw Error("assemble_patches: patch " + std::to_string(id) +
                  " has wrong shape");
    const std::size_t y0 = (id / kGridCols) * ph, x0 = (id % kGridCols) * pw;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < ph; ++y)
        for (std::size_t x = 0; x < pw; ++x)
          out[(ch * h + y0 + y) * w + x0 + x] = patches[id][(ch * ph + y) * pw + x];
  }
  return out;
}

}  // namespace patchdrop
