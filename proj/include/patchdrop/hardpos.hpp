#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "patchdrop/policy.hpp"
#include "patchdrop/training.hpp"

namespace patchdrop {

struct MaskedSample {
  Tensor<float> image;
  std::vector<std::size_t> zeroed;  // patch IDs set to zero
};

namespace detail {

inline std::size_t draw_mask_count(Rng& rng) {
  return static_cast<std::size_t>(rng.uniform_int(1, 4));
}

inline Tensor<float> zero_patches(const Tensor<float>& img,
                                  const std::vector<std::size_t>& ids,
                                  const PatchGrid& grid) {
  PatchMask keep = PatchMask::all();
  for (auto id : ids) keep.set(id, false);
  return apply_mask(img, keep, grid);
}

}  // namespace detail

// The `count` highest-probability patches, ties to the lower ID.
inline std::vector<std::size_t> top_patches(const ActionProbs& s, std::size_t count) {
  std::vector<std::size_t> ids(s.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(),
                   [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  ids.resize(std::min(count, ids.size()));
  return ids;
}

// Masks the M ∈ {1..4} patches the policy most wants to acquire.
inline MaskedSample hard_positive(const Tensor<float>& hr, const ActionProbs& s,
                                  const PatchGrid& grid, Rng& rng) {
  const auto ids = top_patches(s, detail::draw_mask_count(rng));
  return {detail::zero_patches(hr, ids, grid), ids};
}

// Patch-aligned CutOut: M ∈ {1..4} distinct uniformly random patches.
inline MaskedSample cutout_control(const Tensor<float>& hr, const PatchGrid& grid,
                                   Rng& rng) {
  const std::size_t m = detail::draw_mask_count(rng);
  std::vector<std::size_t> ids(kNumPatches);
  std::iota(ids.begin(), ids.end(), 0);
  for (std::size_t i = 0; i < m; ++i) {
    const auto j = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(i), kNumPatches - 1));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(m);
  std::sort(ids.begin(), ids.end());
  return {detail::zero_patches(hr, ids, grid), ids};
}

enum class AugmentMode { kNone, kCutout, kHardPositive };

inline AugmentMode parse_augment_mode(const std::string& s) {
  if (s == "none") return AugmentMode::kNone;
  if (s == "cutout") return AugmentMode::kCutout;
  if (s == "hardpos") return AugmentMode::kHardPositive;
  throw Error("unknown augmentation mode '" + s + "' (expected none|cutout|hardpos)");
}

struct AugmentTrainConfig {
  std::size_t epochs = 20;
  double learning_rate = 1e-3;
  std::size_t batch_size = 128;
  double apply_prob = 0.5;
  std::uint64_t rng_seed = 0;
};

// Trains `init` (a copy is taken) on train.hr with the chosen augmentation
// and returns the clean test accuracy. With kNone this is exactly the HR
// stream of pretrain_classifiers under the same seed.
inline double train_with_augmentation(const Dataset& train, const Dataset& test,
                                      const Network<float>& init, Network<float>* policy,
                                      AugmentMode mode, const AugmentTrainConfig& cfg,
                                      Network<float>* trained = nullptr) {
  if (mode == AugmentMode::kHardPositive && policy == nullptr)
    throw Error("augment: hard positives need a trained policy");
  Network<float> net = init;
  AdamState<float> opt({cfg.learning_rate});
  Rng rng(derive_seed(cfg.rng_seed, 0x2001));
  Rng aug_rng(derive_seed(cfg.rng_seed, 0x4001));
  const PatchGrid grid = train.grid();
  std::function<Tensor<float>(Tensor<float>, Rng&)> transform;
  if (mode != AugmentMode::kNone) {
    transform = [&](Tensor<float> x, Rng&) {
      const std::size_t n = x.dim(0);
      std::vector<ActionProbs> probs;
      if (mode == AugmentMode::kHardPositive)
        probs = policy_forward_batch(*policy, downsample(x, train.ds));
      std::vector<Tensor<float>> out;
      out.reserve(n);
      for (std::size_t i = 0; i < n; ++i) {
        Tensor<float> img = x.sample(i);
        if (aug_rng.uniform() < cfg.apply_prob) {
          img = mode == AugmentMode::kHardPositive
                    ? hard_positive(img, probs[i], grid, aug_rng).image
                    : cutout_control(img, grid, aug_rng).image;
        }
        out.push_back(std::move(img));
      }
      return stack(out);
    };
  }
  for (std::size_t e = 0; e < cfg.epochs; ++e)
    train_supervised(net, opt, train.hr, train.labels, cfg.batch_size, rng, transform);
  const double acc = stream_accuracy(net, test.hr, test.labels);
  if (trained) *trained = std::move(net);
  return acc;
}

}  // namespace patchdrop
