#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchdrop/patch_grid.hpp"
#include "patchdrop/rng.hpp"
#include "patchdrop/tensor.hpp"

namespace patchdrop {

// One sample: HR image, its LR version and the label.
struct ImagePair {
  Tensor<float> hr;  // [C,H,W]
  Tensor<float> lr;  // [C,H/ds,W/ds]
  std::size_t label = 0;
  std::size_t ds = 1;
};

struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

// An in-memory split. HR and LR are stored as batches so that minibatches can
// be sliced without copying sample by sample.
struct Dataset {
  std::string split;
  Tensor<float> hr;  // [N,C,H,W]
  Tensor<float> lr;  // [N,C,H/ds,W/ds]
  std::vector<std::size_t> labels;
  std::vector<std::uint64_t> ids;  // provenance index of each sample
  std::size_t num_classes = 0;
  std::size_t ds = 1;
  NormStats norm;

  std::size_t size() const { return labels.size(); }
  Shape hr_sample_shape() const { return {hr.dim(1), hr.dim(2), hr.dim(3)}; }
  Shape lr_sample_shape() const { return {lr.dim(1), lr.dim(2), lr.dim(3)}; }
  PatchGrid grid() const { return PatchGrid(hr.dim(2), hr.dim(3)); }

  ImagePair pair(std::size_t i) const {
    return {hr.sample(i), lr.sample(i), labels.at(i), ds};
  }

  // Samples at `idx`, in order.
  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset out;
    out.split = split;
    out.num_classes = num_classes;
    out.ds = ds;
    out.norm = norm;
    if (idx.empty()) return out;
    std::vector<Tensor<float>> hs, ls;
    for (auto i : idx) {
      hs.push_back(hr.sample(i));
      ls.push_back(lr.sample(i));
      out.labels.push_back(labels.at(i));
      out.ids.push_back(ids.empty() ? i : ids.at(i));
    }
    out.hr = stack(hs);
    out.lr = stack(ls);
    return out;
  }

  Dataset range(std::size_t begin, std::size_t count) const {
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = begin + i;
    return subset(idx);
  }

  // Rebuilds the LR tensor from the HR tensor at a new ratio.
  void rebuild_lr(std::size_t ratio) {
    PatchGrid g = grid();
    if ((g.height() / kGridRows) % ratio || (g.width() / kGridCols) % ratio)
      throw Error("dataset: patch size not divisible by ds=" +
                  std::to_string(ratio));
    ds = ratio;
    lr = downsample(hr, ratio);
  }
};

// Per-channel statistics over a batch [N,C,H,W].
inline NormStats compute_norm_stats(const Tensor<float>& batch) {
  const std::size_t n = batch.dim(0), c = batch.dim(1),
                    hw = batch.dim(2) * batch.dim(3);
  NormStats st{std::vector<double>(c), std::vector<double>(c)};
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < hw; ++j) {
        const double v = batch[(i * c + ch) * hw + j];
        s += v;
        s2 += v * v;
      }
    const double cnt = static_cast<double>(n * hw);
    st.mean[ch] = s / cnt;
    st.stddev[ch] = std::sqrt(std::max(s2 / cnt - st.mean[ch] * st.mean[ch], 1e-12));
  }
  return st;
}

inline void normalize_in_place(Tensor<float>& batch, const NormStats& st) {
  const std::size_t n = batch.dim(0), c = batch.dim(1),
                    hw = batch.dim(2) * batch.dim(3);
  if (st.mean.size() != c) throw Error("normalize: channel count mismatch");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t j = 0; j < hw; ++j) {
        auto& v = batch[(i * c + ch) * hw + j];
        v = static_cast<float>((v - st.mean[ch]) / st.stddev[ch]);
      }
}

// Standardizes every split with the train split's statistics and rebuilds
// the LR images from the normalized HR images.
inline void normalize_splits(Dataset& train, std::vector<Dataset*> others) {
  train.norm = compute_norm_stats(train.hr);
  normalize_in_place(train.hr, train.norm);
  train.lr = downsample(train.hr, train.ds);
  for (auto* d : others) {
    if (d->size() == 0) continue;
    d->norm = train.norm;
    normalize_in_place(d->hr, train.norm);
    d->lr = downsample(d->hr, d->ds);
  }
}

// ---------------------------------------------------------------------------
// Synthetic planted-patch data

struct SyntheticSpec {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  std::size_t num_classes = 4;
  // Class c writes its texture into informative_patches[c % size].
  std::vector<std::size_t> informative_patches{0, 3, 12, 15};
  double noise = 0.1;
  double amplitude = 1.0;
  double label_noise = 0.0;  // fraction of train labels flipped
  std::size_t ds = 4;
  std::size_t train_size = 2048;
  std::size_t val_size = 512;
  std::size_t test_size = 1024;
  std::uint64_t seed = 1;
  bool normalize = true;

  void validate() const {
    PatchGrid g(height, width);
    if (channels == 0 || num_classes < 2)
      throw Error("synthetic: need channels >= 1 and at least 2 classes");
    if (informative_patches.empty())
      throw Error("synthetic: no informative patches");
    for (auto p : informative_patches)
      if (p >= kNumPatches) throw Error("synthetic: informative patch id out of range");
    if (ds == 0 || g.patch_height() % ds || g.patch_width() % ds)
      throw Error("synthetic: patch size not divisible by ds");
    if (noise < 0.0 || label_noise < 0.0 || label_noise > 1.0)
      throw Error("synthetic: bad noise level");
  }
};

// Texture signature k at patch-local pixel (r, c). Every signature has zero
// mean over each aligned 2x2 block, so box-average downsampling (even ds)
// erases it: only the HR image carries the class evidence.
inline double texture_value(std::size_t k, std::size_t r, std::size_t c) {
  const double sr = (r % 2) ? -1.0 : 1.0;
  const double sc = (c % 2) ? -1.0 : 1.0;
  const double br = ((r / 2) % 2) ? -1.0 : 1.0;
  const double bc = ((c / 2) % 2) ? -1.0 : 1.0;
  switch (k % 6) {
    case 0: return sr;            // horizontal stripes
    case 1: return sc;            // vertical stripes
    case 2: return sr * sc;       // checkerboard
    case 3: return sr * bc;       // broken horizontal stripes
    case 4: return sc * br;       // broken vertical stripes
    default: return sr * sc * br * bc;
  }
}

inline std::size_t informative_patch(const SyntheticSpec& spec, std::size_t label) {
  return spec.informative_patches[label % spec.informative_patches.size()];
}

// Single raw (unnormalized) image for sample index `id`.
inline Tensor<float> synthetic_image(const SyntheticSpec& spec, std::size_t label,
                                     Rng& rng) {
  const PatchGrid grid(spec.height, spec.width);
  Tensor<float> img({spec.channels, spec.height, spec.width});
  for (auto& v : img.vec()) v = static_cast<float>(spec.noise * rng.normal());
  const std::size_t pid = informative_patch(spec, label);
  const std::size_t y0 = (pid / kGridCols) * grid.patch_height();
  const std::size_t x0 = (pid % kGridCols) * grid.patch_width();
  for (std::size_t ch = 0; ch < spec.channels; ++ch)
    for (std::size_t r = 0; r < grid.patch_height(); ++r)
      for (std::size_t c = 0; c < grid.patch_width(); ++c)
        img[(ch * spec.height + y0 + r) * spec.width + x0 + c] +=
            static_cast<float>(spec.amplitude * texture_value(label, r, c));
  return img;
}

struct SyntheticData {
  Dataset train, val, test;
};

namespace detail {

inline Dataset synth_split(const SyntheticSpec& spec, const std::string& name,
                           std::uint64_t first_id, std::size_t count,
                           bool noisy_labels) {
  Dataset d;
  d.split = name;
  d.num_classes = spec.num_classes;
  d.ds = spec.ds;
  if (count == 0) return d;
  std::vector<Tensor<float>> imgs;
  imgs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t id = first_id + i;
    Rng rng(derive_seed(spec.seed, id));
    const auto label = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(spec.num_classes) - 1));
    imgs.push_back(synthetic_image(spec, label, rng));
    std::size_t y = label;
    if (noisy_labels && rng.uniform() < spec.label_noise) {
      const auto shift = rng.uniform_int(1, static_cast<std::int64_t>(spec.num_classes) - 1);
      y = (label + static_cast<std::size_t>(shift)) % spec.num_classes;
    }
    d.labels.push_back(y);
    d.ids.push_back(id);
  }
  d.hr = stack(imgs);
  d.lr = downsample(d.hr, spec.ds);
  return d;
}

}  // namespace detail

// Train/val/test splits draw from disjoint sample-index ranges of one seed.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticData out;
  out.train = detail::synth_split(spec, "train", 0, spec.train_size, true);
  out.val = detail::synth_split(spec, "val", spec.train_size, spec.val_size, false);
  out.test = detail::synth_split(spec, "test", spec.train_size + spec.val_size,
                                 spec.test_size, false);
  if (spec.normalize && out.train.size())
    normalize_splits(out.train, {&out.val, &out.test});
  return out;
}

inline nlohmann::json to_json(const SyntheticSpec& s) {
  return {{"height", s.height},         {"width", s.width},
          {"channels", s.channels},     {"num_classes", s.num_classes},
          {"informative_patches", s.informative_patches},
          {"noise", s.noise},           {"amplitude", s.amplitude},
          {"label_noise", s.label_noise}, {"ds", s.ds},
          {"train_size", s.train_size}, {"val_size", s.val_size},
          {"test_size", s.test_size},   {"seed", s.seed},
          {"normalize", s.normalize}};
}

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  s.height = j.at("height");
  s.width = j.at("width");
  s.channels = j.at("channels");
  s.num_classes = j.at("num_classes");
  s.informative_patches = j.at("informative_patches").get<std::vector<std::size_t>>();
  s.noise = j.at("noise");
  s.amplitude = j.at("amplitude");
  s.label_noise = j.at("label_noise");
  s.ds = j.at("ds");
  s.train_size = j.at("train_size");
  s.val_size = j.at("val_size");
  s.test_size = j.at("test_size");
  s.seed = j.at("seed");
  s.normalize = j.at("normalize");
  return s;
}

// Writes <dir>/<split>.json (spec, seed, labels, shape, norm stats) and
// <dir>/<split>.f32 (HR images, little-endian f32).
inline void save_dataset(const std::filesystem::path& dir, const Dataset& d,
                         const SyntheticSpec& spec) {
  std::filesystem::create_directories(dir);
  nlohmann::json h;
  h["spec"] = to_json(spec);
  h["seed"] = spec.seed;
  h["split"] = d.split;
  h["shape"] = d.hr.shape();
  h["labels"] = d.labels;
  h["ids"] = d.ids;
  h["num_classes"] = d.num_classes;
  h["ds"] = d.ds;
  h["norm_mean"] = d.norm.mean;
  h["norm_std"] = d.norm.stddev;
  std::ofstream(dir / (d.split + ".json")) << h.dump(2) << '\n';
  std::ofstream os(dir / (d.split + ".f32"), std::ios::binary);
  for (float v : d.hr.vec()) {
    const auto u = std::bit_cast<std::uint32_t>(v);
    const unsigned char b[4] = {static_cast<unsigned char>(u),
                                static_cast<unsigned char>(u >> 8),
                                static_cast<unsigned char>(u >> 16),
                                static_cast<unsigned char>(u >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
  }
  if (!os) throw Error("save_dataset: write failed under " + dir.string());
}

inline Dataset load_dataset(const std::filesystem::path& dir, const std::string& split) {
  std::ifstream hs(dir / (split + ".json"));
  if (!hs) throw Error("load_dataset: missing " + (dir / (split + ".json")).string());
  const auto h = nlohmann::json::parse(hs);
  Dataset d;
  d.split = h.at("split");
  d.labels = h.at("labels").get<std::vector<std::size_t>>();
  d.ids = h.at("ids").get<std::vector<std::uint64_t>>();
  d.num_classes = h.at("num_classes");
  d.ds = h.at("ds");
  d.norm.mean = h.at("norm_mean").get<std::vector<double>>();
  d.norm.stddev = h.at("norm_std").get<std::vector<double>>();
  const Shape shape = h.at("shape").get<Shape>();
  std::ifstream is(dir / (split + ".f32"), std::ios::binary);
  if (!is) throw Error("load_dataset: missing image file for " + split);
  std::vector<float> data(shape_numel(shape));
  for (auto& v : data) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
      throw Error("load_dataset: truncated image file for " + split);
    v = std::bit_cast<float>(static_cast<std::uint32_t>(b[0]) |
                             (static_cast<std::uint32_t>(b[1]) << 8) |
                             (static_cast<std::uint32_t>(b[2]) << 16) |
                             (static_cast<std::uint32_t>(b[3]) << 24));
  }
  d.hr = Tensor<float>(shape, std::move(data));
  d.lr = downsample(d.hr, d.ds);
  if (d.labels.size() != shape[0]) throw Error("load_dataset: label count mismatch");
  return d;
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary batches

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarImageBytes = 3072;
inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarClasses = 10;

struct CifarRecord {
  std::uint8_t label = 0;
  std::array<std::uint8_t, kCifarImageBytes> pixels{};  // R, G, B planes
};

inline std::vector<CifarRecord> parse_cifar_records(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % kCifarRecordBytes)
    throw Error("cifar: size " + std::to_string(bytes.size()) +
                " is not a multiple of 3073");
  std::vector<CifarRecord> out(bytes.size() / kCifarRecordBytes);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto* rec = bytes.data() + i * kCifarRecordBytes;
    if (rec[0] >= kCifarClasses)
      throw Error("cifar: record " + std::to_string(i) + " has label " +
                  std::to_string(rec[0]));
    out[i].label = rec[0];
    std::copy(rec + 1, rec + kCifarRecordBytes, out[i].pixels.begin());
  }
  return out;
}

inline std::vector<std::uint8_t> serialize_cifar_records(const std::vector<CifarRecord>& recs) {
  std::vector<std::uint8_t> out;
  out.reserve(recs.size() * kCifarRecordBytes);
  for (const auto& r : recs) {
    out.push_back(r.label);
    out.insert(out.end(), r.pixels.begin(), r.pixels.end());
  }
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw Error("cannot open " + p.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(is), {});
}

inline std::vector<CifarRecord> read_cifar_file(const std::filesystem::path& p) {
  const auto bytes = read_file_bytes(p);
  return parse_cifar_records(bytes);
}

// Pixels map to [0,1] by /255; no normalization here.
inline Dataset cifar_to_dataset(const std::vector<CifarRecord>& recs,
                                const std::string& split, std::size_t ds) {
  Dataset d;
  d.split = split;
  d.num_classes = kCifarClasses;
  d.ds = ds;
  if (recs.empty()) return d;
  std::vector<float> px;
  px.reserve(recs.size() * kCifarImageBytes);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    for (auto b : recs[i].pixels) px.push_back(static_cast<float>(b) / 255.0f);
    d.labels.push_back(recs[i].label);
    d.ids.push_back(i);
  }
  d.hr = Tensor<float>({recs.size(), 3, kCifarSide, kCifarSide}, std::move(px));
  d.lr = downsample(d.hr, ds);
  return d;
}

struct CifarData {
  Dataset train, test;
};

// Reads data_batch_1..5.bin and test_batch.bin from `dir`.
inline CifarData load_cifar10(const std::filesystem::path& dir, std::size_t ds = 4,
                              bool normalize = true) {
  std::vector<CifarRecord> train;
  for (int b = 1; b <= 5; ++b) {
    auto r = read_cifar_file(dir / ("data_batch_" + std::to_string(b) + ".bin"));
    train.insert(train.end(), r.begin(), r.end());
  }
  CifarData out{cifar_to_dataset(train, "train", ds),
                cifar_to_dataset(read_cifar_file(dir / "test_batch.bin"), "test", ds)};
  if (normalize) normalize_splits(out.train, {&out.test});
  return out;
}

// ---------------------------------------------------------------------------
// Training augmentation

template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& img) {
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor<T> out(img.shape());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        out[(ch * h + y) * w + x] = img[(ch * h + y) * w + (w - 1 - x)];
  return out;
}

// Crop of the zero-padded image at offset (dy, dx) in [0, 2*pad].
template <typename T>
Tensor<T> crop_padded(const Tensor<T>& img, std::size_t pad, std::size_t dy,
                      std::size_t dx) {
  if (dy > 2 * pad || dx > 2 * pad) throw Error("crop: offset out of range");
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor<T> out(img.shape());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const auto sy = static_cast<std::ptrdiff_t>(y + dy) - static_cast<std::ptrdiff_t>(pad);
        const auto sx = static_cast<std::ptrdiff_t>(x + dx) - static_cast<std::ptrdiff_t>(pad);
        if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(h) ||
            sx >= static_cast<std::ptrdiff_t>(w))
          continue;
        out[(ch * h + y) * w + x] =
            img[(ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
      }
  return out;
}

struct AugmentConfig {
  bool training = true;
  std::size_t pad = 4;
  double flip_prob = 0.5;
};

// Random padded crop plus horizontal flip; identity outside training mode.
template <typename T>
Tensor<T> augment(const Tensor<T>& img, Rng& rng, const AugmentConfig& cfg = {}) {
  if (!cfg.training) return img;
  const auto dy = static_cast<std::size_t>(rng.uniform_int(0, 2 * static_cast<std::int64_t>(cfg.pad)));
  const auto dx = static_cast<std::size_t>(rng.uniform_int(0, 2 * static_cast<std::int64_t>(cfg.pad)));
  Tensor<T> out = crop_padded(img, cfg.pad, dy, dx);
  if (rng.uniform() < cfg.flip_prob) out = flip_horizontal(out);
  return out;
}

}  // namespace patchdrop
