#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "patchdrop/patch_grid.hpp"
#include "patchdrop/rng.hpp"
#include "patchdrop/training.hpp"

namespace patchdrop {

enum class BaselineKind { kFixedH, kFixedV, kStochasticCenter, kAllDrop, kAllKeep };

inline std::string baseline_name(BaselineKind k) {
  switch (k) {
    case BaselineKind::kFixedH: return "fixed-h";
    case BaselineKind::kFixedV: return "fixed-v";
    case BaselineKind::kStochasticCenter: return "stochastic";
    case BaselineKind::kAllDrop: return "all-drop";
    case BaselineKind::kAllKeep: return "all-keep";
  }
  return "?";
}

inline BaselineKind parse_baseline(const std::string& s) {
  if (s == "fixed-h") return BaselineKind::kFixedH;
  if (s == "fixed-v") return BaselineKind::kFixedV;
  if (s == "stochastic") return BaselineKind::kStochasticCenter;
  if (s == "all-drop") return BaselineKind::kAllDrop;
  if (s == "all-keep") return BaselineKind::kAllKeep;
  throw Error("unknown baseline policy '" + s + "'");
}

using PatchOrder = std::array<std::size_t, kNumPatches>;

// Sampling priority of the fixed baselines. The horizontal order is known
// with 15 IDs and no 12; 12 goes last.
inline PatchOrder fixed_order(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::kFixedH:
      return {5, 6, 9, 10, 13, 14, 1, 2, 0, 3, 4, 7, 8, 11, 15, 12};
    case BaselineKind::kFixedV:
      return {4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 0, 1, 2, 3};
    default:
      throw Error("fixed_order: " + baseline_name(kind) + " has no fixed order");
  }
}

struct BaselinePolicy {
  BaselineKind kind = BaselineKind::kAllKeep;
  std::size_t budget = 0;  // S for the fixed kinds
  double decay = 0.0;      // λ for the stochastic kind

  void validate() const {
    if (budget > kNumPatches) throw Error("baseline: budget must lie in [0,16]");
    if (decay < 0.0) throw Error("baseline: decay must be non-negative");
  }
};

// Keep probability exp(-λ d_p / d_max) of each patch under the stochastic
// centre baseline.
inline std::array<double, kNumPatches> stochastic_keep_probs(double decay,
                                                             const PatchGrid& grid) {
  std::array<double, kNumPatches> d{};
  double dmax = 0.0;
  for (std::size_t p = 0; p < kNumPatches; ++p) {
    d[p] = patch_center_distance(p, grid);
    dmax = std::max(dmax, d[p]);
  }
  for (auto& v : d) v = std::exp(-decay * v / dmax);
  return d;
}

// λ such that the stochastic baseline keeps `target` patches on average.
inline double calibrate_stochastic_decay(double target, const PatchGrid& grid) {
  if (!(target > 0.0 && target <= static_cast<double>(kNumPatches)))
    throw Error("calibrate: target mean S must lie in (0,16]");
  auto mean_s = [&](double lam) {
    double s = 0.0;
    for (double p : stochastic_keep_probs(lam, grid)) s += p;
    return s;
  };
  double lo = 0.0, hi = 1.0;
  while (mean_s(hi) > target) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mean_s(mid) > target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline PatchMask baseline_mask(const BaselinePolicy& policy, const PatchGrid& grid,
                               Rng& rng) {
  policy.validate();
  PatchMask m(kNumPatches);
  switch (policy.kind) {
    case BaselineKind::kFixedH:
    case BaselineKind::kFixedV: {
      const auto order = fixed_order(policy.kind);
      for (std::size_t i = 0; i < policy.budget; ++i) m.set(order[i], true);
      break;
    }
    case BaselineKind::kStochasticCenter: {
      const auto keep = stochastic_keep_probs(policy.decay, grid);
      for (std::size_t p = 0; p < kNumPatches; ++p) m.set(p, rng.uniform() < keep[p]);
      break;
    }
    case BaselineKind::kAllDrop: break;
    case BaselineKind::kAllKeep: m = PatchMask::all(); break;
  }
  return m;
}

inline MaskSource baseline_source(BaselinePolicy policy, PatchGrid grid,
                                  std::uint64_t seed) {
  auto rng = std::make_shared<Rng>(seed);
  return [policy, grid, rng](const Tensor<float>& lr) {
    std::vector<PatchMask> out;
    for (std::size_t i = 0; i < lr.dim(0); ++i)
      out.push_back(baseline_mask(policy, grid, *rng));
    return out;
  };
}

struct NamedPolicy {
  std::string name;
  std::function<MaskSource()> make;  // fresh source per evaluation
};

struct ComparisonRow {
  std::string policy;
  double accuracy = 0.0;
  double mean_S = 0.0;
};

// One row per policy, all evaluated on the same data and classifier mode.
inline std::vector<ComparisonRow> compare(const std::vector<NamedPolicy>& policies,
                                          const Dataset& data, TrainState& st,
                                          ClassifierMode mode) {
  std::vector<ComparisonRow> rows;
  for (const auto& p : policies) {
    const auto m = evaluate(data, st, mode, p.make());
    rows.push_back({p.name, m.accuracy, m.mean_S});
  }
  return rows;
}

inline void write_comparison_csv(std::ostream& os, const std::vector<ComparisonRow>& rows) {
  os << "policy,accuracy,mean_S\n";
  for (const auto& r : rows) os << r.policy << ',' << r.accuracy << ',' << r.mean_S << '\n';
}

enum class SweepParam { kSigma, kDs };

inline SweepParam parse_sweep_param(const std::string& s) {
  if (s == "sigma") return SweepParam::kSigma;
  if (s == "ds") return SweepParam::kDs;
  throw Error("unknown sweep parameter '" + s + "' (expected sigma|ds)");
}

struct SweepPoint {
  double value = 0.0;
  double accuracy = 0.0;
  double mean_S = 0.0;
};

struct SweepResult {
  std::vector<SweepPoint> points;

  bool mean_S_non_decreasing() const {
    for (std::size_t i = 1; i < points.size(); ++i)
      if (points[i].mean_S < points[i - 1].mean_S) return false;
    return true;
  }
};

// Runs `train_and_eval` once per value (in the given order).
inline SweepResult sweep(const std::vector<double>& values,
                         const std::function<SweepPoint(double)>& train_and_eval) {
  SweepResult r;
  for (double v : values) {
    SweepPoint p = train_and_eval(v);
    p.value = v;
    r.points.push_back(p);
  }
  return r;
}

inline void write_sweep_csv(std::ostream& os, const SweepResult& r) {
  os << "param_value,accuracy,mean_S\n";
  for (const auto& p : r.points) os << p.value << ',' << p.accuracy << ',' << p.mean_S << '\n';
}

}  // namespace patchdrop
