#pragma once

// Policy-gated BagNet: a shared patch classifier runs only on the acquired
// patches and their class evidence is summed.

#include <algorithm>
#include <cmath>
#include <vector>

#include "patchdrop/classifier.hpp"
#include "patchdrop/patch_grid.hpp"
#include "patchdrop/policy.hpp"
#include "patchdrop/reward.hpp"
#include "patchdrop/training.hpp"

namespace patchdrop {

enum class BagAggregation { kLogits, kProbabilities };

namespace detail {

inline std::vector<double> softmax(std::vector<double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (auto& v : z) s += (v = std::exp(v - mx));
  for (auto& v : z) v /= s;
  return z;
}

template <typename T>
std::size_t num_outputs(const Network<T>& net) {
  return shape_numel(net.output_shape());
}

}  // namespace detail

// Evaluates patch_net once per selected patch. S = 0 gives the uniform
// distribution.
template <typename T>
ClassProbs bagnet_classify(Network<T>& patch_net, const Tensor<T>& hr,
                           const PatchMask& mask, const PatchGrid& grid,
                           BagAggregation agg = BagAggregation::kLogits) {
  check_mask(mask);
  const std::size_t k = detail::num_outputs(patch_net);
  if (mask.count() == 0)
    return ClassProbs(std::vector<double>(k, 1.0 / static_cast<double>(k)));
  const auto patches = extract_patches(hr, grid);
  std::vector<double> acc(k, 0.0);
  for (std::size_t id = 0; id < kNumPatches; ++id) {
    if (!mask[id]) continue;
    Shape s = patches[id].shape();
    s.insert(s.begin(), 1);
    const Tensor<T> logits = patch_net.forward(patches[id].reshaped(s));
    if (agg == BagAggregation::kLogits) {
      for (std::size_t c = 0; c < k; ++c) acc[c] += logits[c];
    } else {
      const auto p = detail::softmax(std::vector<double>(logits.vec().begin(), logits.vec().end()));
      for (std::size_t c = 0; c < k; ++c) acc[c] += p[c];
    }
  }
  if (agg == BagAggregation::kLogits) return ClassProbs(detail::softmax(std::move(acc)));
  const double s = static_cast<double>(mask.count());
  for (auto& v : acc) v /= s;
  return ClassProbs(std::move(acc));
}

// Ungated BagNet: all 16 patches in one batched forward pass.
template <typename T>
ClassProbs bagnet_full(Network<T>& patch_net, const Tensor<T>& hr, const PatchGrid& grid) {
  const Tensor<T> logits = patch_net.forward(stack(extract_patches(hr, grid)));
  const std::size_t k = logits.dim(1);
  std::vector<double> acc(k, 0.0);
  for (std::size_t p = 0; p < kNumPatches; ++p)
    for (std::size_t c = 0; c < k; ++c) acc[c] += logits[p * k + c];
  return ClassProbs(detail::softmax(std::move(acc)));
}

// Patches processed: the run-time proxy.
inline std::size_t bagnet_cost(const PatchMask& mask) { return mask.count(); }

// Per-patch logits for a batch: [N*16, K], patch-major within each sample.
// Leaves patch_net ready for backward.
inline Tensor<float> bagnet_patch_logits(Network<float>& patch_net,
                                         const Tensor<float>& hr_batch,
                                         const PatchGrid& grid) {
  std::vector<Tensor<float>> patches;
  patches.reserve(hr_batch.dim(0) * kNumPatches);
  for (std::size_t i = 0; i < hr_batch.dim(0); ++i)
    for (auto& p : extract_patches(hr_batch.sample(i), grid)) patches.push_back(std::move(p));
  return patch_net.forward(stack(patches));
}

// Logit-sum aggregation of precomputed per-patch logits.
inline std::vector<ClassProbs> bagnet_aggregate(const Tensor<float>& logits,
                                                const std::vector<PatchMask>& masks) {
  const std::size_t k = logits.dim(1);
  std::vector<ClassProbs> out;
  out.reserve(masks.size());
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (masks[i].count() == 0) {
      out.emplace_back(std::vector<double>(k, 1.0 / static_cast<double>(k)));
      continue;
    }
    std::vector<double> acc(k, 0.0);
    for (std::size_t p = 0; p < kNumPatches; ++p) {
      if (!masks[i][p]) continue;
      for (std::size_t c = 0; c < k; ++c) acc[c] += logits[(i * kNumPatches + p) * k + c];
    }
    out.emplace_back(detail::softmax(std::move(acc)));
  }
  return out;
}

// Backpropagates mean cross entropy of the aggregated distributions into
// patch_net (whose forward cache must hold `logits`) and takes an Adam step.
inline void bagnet_update(Network<float>& patch_net, AdamState<float>& opt,
                          const Tensor<float>& logits, const std::vector<PatchMask>& masks,
                          std::span<const std::size_t> labels) {
  const std::size_t n = masks.size(), k = logits.dim(1);
  const auto probs = bagnet_aggregate(logits, masks);
  Tensor<float> grad(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    if (masks[i].count() == 0) continue;
    for (std::size_t c = 0; c < k; ++c) {
      const double g = (probs[i][c] - (c == labels[i] ? 1.0 : 0.0)) / static_cast<double>(n);
      for (std::size_t p = 0; p < kNumPatches; ++p)
        if (masks[i][p]) grad[(i * kNumPatches + p) * k + c] = static_cast<float>(g);
    }
  }
  patch_net.backward(grad);
  adam_step(patch_net, opt);
}

struct BagNetState {
  Network<float> patch_net;
  AdamState<float> opt;
};

inline BagNetState make_bagnet(const Dataset& d, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x5001));
  const PatchGrid g = d.grid();
  return {make_patch_net<float>({d.hr.dim(1), g.patch_height(), g.patch_width()},
                                d.num_classes, rng),
          {}};
}

// Trains on all 16 patches of every image.
inline void train_bagnet(const Dataset& train, BagNetState& bag, std::size_t epochs,
                         double learning_rate, std::size_t batch_size, std::uint64_t seed) {
  bag.opt = AdamState<float>({learning_rate});
  Rng rng(derive_seed(seed, 0x5002));
  const PatchGrid grid = train.grid();
  for (std::size_t e = 0; e < epochs; ++e) {
    const auto order = detail::shuffled(train.size(), rng);
    for (std::size_t b = 0; b < order.size(); b += batch_size) {
      const std::size_t n = std::min(batch_size, order.size() - b);
      std::span<const std::size_t> idx(order.data() + b, n);
      std::vector<std::size_t> y;
      for (auto i : idx) y.push_back(train.labels[i]);
      const auto logits = bagnet_patch_logits(bag.patch_net, detail::gather(train.hr, idx), grid);
      bagnet_update(bag.patch_net, bag.opt, logits, std::vector<PatchMask>(n, PatchMask::all()), y);
    }
  }
}

struct BagNetMetrics {
  double accuracy = 0.0;
  double mean_cost = 0.0;
};

inline BagNetMetrics evaluate_bagnet(const Dataset& data, BagNetState& bag,
                                     const MaskSource& masks, std::size_t chunk = 256) {
  BagNetMetrics m;
  if (data.size() == 0) return m;
  const PatchGrid grid = data.grid();
  std::size_t correct = 0, cost = 0;
  for (std::size_t b = 0; b < data.size(); b += chunk) {
    const std::size_t n = std::min(chunk, data.size() - b);
    const auto mk = masks(data.lr.slice(b, n));
    const auto probs =
        bagnet_aggregate(bagnet_patch_logits(bag.patch_net, data.hr.slice(b, n), grid), mk);
    for (std::size_t i = 0; i < n; ++i) {
      correct += predict(probs[i]).label == data.labels[b + i];
      cost += bagnet_cost(mk[i]);
    }
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  m.mean_cost = static_cast<double>(cost) / static_cast<double>(data.size());
  return m;
}

// Joint finetuning of the policy and the patch classifier with the BagNet
// as the classifier (the Ft-1 analogue). The policy lives in `st.policy`.
inline void finetune_bagnet(const Dataset& train, TrainState& st, BagNetState& bag,
                            const StageConfig& cfg) {
  cfg.validate();
  const PatchGrid grid = train.grid();
  const std::size_t per_epoch = detail::batches_per_epoch(train.size(), cfg.batch_size);
  AlphaSchedule alpha = cfg.alpha;
  if (alpha.total_steps == 0) alpha.total_steps = per_epoch * cfg.epochs;
  st.policy_opt = AdamState<float>({cfg.learning_rate});
  bag.opt = AdamState<float>({cfg.learning_rate});
  const RewardConfig rcfg{cfg.sigma, kNumPatches};
  Rng rng(derive_seed(cfg.rng_seed, 0x5003));
  std::uint64_t step = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto order = detail::shuffled(train.size(), rng);
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - b);
      std::span<const std::size_t> idx(order.data() + b, n);
      std::vector<std::size_t> y;
      for (auto i : idx) y.push_back(train.labels[i]);
      const double a = alpha.at(step++);
      const auto raw = policy_forward_batch(st.policy, detail::gather(train.lr, idx));
      std::vector<PatchMask> sampled, greedy;
      for (const auto& s : raw) {
        sampled.push_back(sample_action(temperature_scale(s, a), rng));
        greedy.push_back(greedy_action(s));
      }
      const auto logits = bagnet_patch_logits(bag.patch_net, detail::gather(train.hr, idx), grid);
      const auto ps = bagnet_aggregate(logits, sampled);
      const auto pg = bagnet_aggregate(logits, greedy);
      Tensor<float> pgrad({n, kNumPatches});
      for (std::size_t i = 0; i < n; ++i) {
        const double adv = advantage(reward(sampled[i], predict(ps[i]), y[i], rcfg),
                                     reward(greedy[i], predict(pg[i]), y[i], rcfg));
        const auto g = policy_loss_grad(raw[i], sampled[i], adv, a, cfg.grad_through_scaling);
        for (std::size_t p = 0; p < kNumPatches; ++p)
          pgrad[i * kNumPatches + p] = static_cast<float>(g[p] / static_cast<double>(n));
      }
      st.policy.backward(pgrad);
      adam_step(st.policy, st.policy_opt);
      bagnet_update(bag.patch_net, bag.opt, logits, sampled, y);
    }
  }
}

}  // namespace patchdrop
