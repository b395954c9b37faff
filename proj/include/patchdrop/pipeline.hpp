#pragma once

// End-to-end helpers shared by the CLI and the acceptance suite.

#include <optional>

#include "patchdrop/baselines.hpp"
#include "patchdrop/config.hpp"
#include "patchdrop/data.hpp"
#include "patchdrop/training.hpp"

namespace patchdrop {

struct Splits {
  Dataset train, val, test;
};

inline Splits load_splits(const RunConfig& cfg) {
  if (cfg.source == "cifar10") {
    auto c = load_cifar10(cfg.cifar_dir, cfg.data.ds);
    // Last 5000 training images serve as validation.
    const std::size_t nval = std::min<std::size_t>(5000, c.train.size() / 10);
    const std::size_t ntr = c.train.size() - nval;
    Splits s{c.train.range(0, ntr), c.train.range(ntr, nval), std::move(c.test)};
    s.val.split = "val";
    return s;
  }
  auto d = generate_synthetic(cfg.data);
  return {std::move(d.train), std::move(d.val), std::move(d.test)};
}

enum class PipelineEnd { kPretrain, kPt, kFt1, kFt2 };

struct PipelineResult {
  TrainState state;
  PretrainResult pretrain;
  std::optional<EvalMetrics> after_pt, after_ft1, after_ft2;
};

// Classifier pretraining, then the policy stages up to `end`, evaluating on
// `eval_on` after each one.
inline PipelineResult run_pipeline(const Splits& data, const RunConfig& cfg, PipelineEnd end,
                                   const Dataset& eval_on, const RunOptions& opts = {}) {
  PipelineResult r{make_train_state(data.train, cfg.seed), {}, {}, {}, {}};
  r.pretrain = pretrain_classifiers(data.train, data.val, r.state, cfg.pretrain, opts.log);
  if (end == PipelineEnd::kPretrain) return r;
  run_stage(data.train, data.val, r.state, cfg.pt, opts);
  r.after_pt = evaluate(eval_on, r.state, ClassifierMode::kHrOnly, learned_policy(r.state),
                        cfg.pt.sigma);
  if (end == PipelineEnd::kPt) return r;
  run_stage(data.train, data.val, r.state, cfg.ft1, opts);
  r.after_ft1 = evaluate(eval_on, r.state, ClassifierMode::kHrOnly, learned_policy(r.state),
                         cfg.ft1.sigma);
  if (end == PipelineEnd::kFt1) return r;
  run_stage(data.train, data.val, r.state, cfg.ft2, opts);
  r.after_ft2 = evaluate(eval_on, r.state, ClassifierMode::kTwoStream, learned_policy(r.state),
                         cfg.ft2.sigma);
  return r;
}

// Standard comparison set: learned policy plus every baseline.
inline std::vector<NamedPolicy> standard_policies(TrainState& st, const RunConfig& cfg,
                                                  const PatchGrid& grid) {
  const double lam = calibrate_stochastic_decay(cfg.eval.stochastic_target_S, grid);
  const std::uint64_t seed = derive_seed(cfg.seed, 0x6001);
  auto fixed = [&](BaselineKind k, std::size_t budget, double decay) {
    BaselinePolicy p{k, budget, decay};
    return NamedPolicy{baseline_name(k), [p, grid, seed] { return baseline_source(p, grid, seed); }};
  };
  return {
      {"learned", [&st] { return learned_policy(st); }},
      fixed(BaselineKind::kFixedH, cfg.eval.fixed_budget, 0.0),
      fixed(BaselineKind::kFixedV, cfg.eval.fixed_budget, 0.0),
      fixed(BaselineKind::kStochasticCenter, 0, lam),
      fixed(BaselineKind::kAllKeep, kNumPatches, 0.0),
      fixed(BaselineKind::kAllDrop, 0, 0.0),
  };
}

}  // namespace patchdrop
