#pragma once

#include <cstddef>

#include "patchdrop/classifier.hpp"
#include "patchdrop/patch_grid.hpp"

namespace patchdrop {

// sigma is the magnitude of the misclassification penalty; the reward for an
// error is -sigma.
struct RewardConfig {
  double sigma = 0.5;
  std::size_t num_patches = kNumPatches;
};

struct RewardOutcome {
  double reward = 0.0;
  bool correct = false;
  std::size_t sampled = 0;
};

// 1 - (S/P)^2 when correct, -sigma otherwise.
inline RewardOutcome reward(const PatchMask& mask, const Prediction& pred,
                            std::size_t label, const RewardConfig& cfg) {
  if (cfg.sigma < 0.0) throw Error("reward: sigma must be non-negative");
  if (mask.size() != cfg.num_patches)
    throw Error("reward: mask length does not match P");
  RewardOutcome out;
  out.sampled = mask.count();
  out.correct = pred.label == label;
  if (out.correct) {
    const double frac = static_cast<double>(out.sampled) /
                        static_cast<double>(cfg.num_patches);
    out.reward = 1.0 - frac * frac;
  } else {
    out.reward = -cfg.sigma;
  }
  return out;
}

// Self-critical advantage: sampled reward minus greedy-action reward.
inline double advantage(const RewardOutcome& sampled,
                        const RewardOutcome& baseline) {
  return sampled.reward - baseline.reward;
}

}  // namespace patchdrop
