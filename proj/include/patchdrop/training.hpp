#pragma once

// Staged training: classifier pretraining, policy pretraining against the
// frozen HR classifier (Pt), joint finetuning with the HR stream only (Ft-1)
// and with the fused two-stream classifier (Ft-2).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchdrop/checkpoint.hpp"
#include "patchdrop/classifier.hpp"
#include "patchdrop/data.hpp"
#include "patchdrop/models.hpp"
#include "patchdrop/optim.hpp"
#include "patchdrop/policy.hpp"
#include "patchdrop/reward.hpp"

namespace patchdrop {

enum class Stage { kClassifierPretrain, kPt, kFt1, kFt2 };

inline std::string stage_name(Stage s) {
  switch (s) {
    case Stage::kClassifierPretrain: return "pretrain";
    case Stage::kPt: return "pt";
    case Stage::kFt1: return "ft1";
    case Stage::kFt2: return "ft2";
  }
  return "?";
}

inline Stage parse_stage(const std::string& s) {
  if (s == "pretrain") return Stage::kClassifierPretrain;
  if (s == "pt") return Stage::kPt;
  if (s == "ft1") return Stage::kFt1;
  if (s == "ft2") return Stage::kFt2;
  throw Error("unknown stage '" + s + "' (expected pretrain|pt|ft1|ft2)");
}

// Which masked image the HR classifier is finetuned on in Ft stages.
enum class ClassifierTarget { kSampled, kGreedy, kBoth };

inline ClassifierTarget parse_classifier_target(const std::string& s) {
  if (s == "sampled") return ClassifierTarget::kSampled;
  if (s == "greedy") return ClassifierTarget::kGreedy;
  if (s == "both") return ClassifierTarget::kBoth;
  throw Error("unknown classifier target '" + s + "'");
}

inline std::string classifier_target_name(ClassifierTarget t) {
  switch (t) {
    case ClassifierTarget::kSampled: return "sampled";
    case ClassifierTarget::kGreedy: return "greedy";
    case ClassifierTarget::kBoth: return "both";
  }
  return "?";
}

struct StageConfig {
  Stage stage = Stage::kPt;
  std::size_t epochs = 200;
  double learning_rate = 1e-4;
  std::size_t batch_size = 128;
  double sigma = 0.5;
  // total_steps == 0 means "the whole stage" (epochs x batches per epoch).
  AlphaSchedule alpha{0.7, 0.95, 0};
  std::uint64_t rng_seed = 0;
  bool grad_through_scaling = true;
  ClassifierTarget classifier_target = ClassifierTarget::kSampled;

  static StageConfig defaults(Stage s) {
    StageConfig c;
    c.stage = s;
    c.sigma = (s == Stage::kFt1 || s == Stage::kFt2) ? 5.0 : 0.5;
    if (s == Stage::kClassifierPretrain) {
      c.epochs = 20;
      c.learning_rate = 1e-3;
    }
    return c;
  }

  // All violations, not just the first.
  std::vector<std::string> problems() const {
    std::vector<std::string> p;
    if (epochs < 1) p.push_back("epochs must be >= 1");
    if (batch_size < 1) p.push_back("batch_size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      p.push_back("learning_rate must be > 0");
    if (!(sigma >= 0.0)) p.push_back("sigma must be >= 0");
    if (!(0.0 <= alpha.alpha_start && alpha.alpha_start <= 1.0))
      p.push_back("alpha_start must lie in [0,1]");
    if (!(0.0 <= alpha.alpha_end && alpha.alpha_end <= 1.0))
      p.push_back("alpha_end must lie in [0,1]");
    if (alpha.alpha_start > alpha.alpha_end)
      p.push_back("alpha_start must not exceed alpha_end");
    return p;
  }

  void validate() const {
    const auto p = problems();
    if (p.empty()) return;
    std::string msg = "stage config:";
    for (const auto& s : p) msg += " " + s + ";";
    throw Error(msg);
  }
};

struct MetricRecord {
  std::string stage;
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  double mean_reward = 0.0;
  double mean_S = 0.0;
  double accuracy = 0.0;
};

inline nlohmann::json to_json(const MetricRecord& r) {
  return {{"stage", r.stage},         {"epoch", r.epoch},
          {"step", r.step},           {"mean_reward", r.mean_reward},
          {"mean_S", r.mean_S},       {"accuracy", r.accuracy}};
}

// Newline-delimited JSON sink; a null stream discards records.
class MetricsLog {
public:
  MetricsLog() = default;
  explicit MetricsLog(std::ostream* os) : os_(os) {}
  void write(const MetricRecord& r) {
    if (os_) *os_ << to_json(r).dump() << '\n' << std::flush;
  }

private:
  std::ostream* os_ = nullptr;
};

struct TrainState {
  Network<float> policy;
  Network<float> hr;
  Network<float> lr;
  AdamState<float> policy_opt;
  AdamState<float> hr_opt;
  AdamState<float> lr_opt;
  std::size_t num_classes = 0;
  std::uint64_t step = 0;
  bool classifiers_ready = false;
  bool pt_done = false;
  bool ft1_done = false;
  bool ft2_done = false;
  std::vector<MetricRecord> history;
};

// Fresh networks sized for `d`, all initialized from `seed`.
inline TrainState make_train_state(const Dataset& d, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x1001));
  TrainState s;
  s.num_classes = d.num_classes;
  s.policy = make_policy_net<float>(d.lr_sample_shape(), rng);
  s.hr = make_hr_classifier<float>(d.hr_sample_shape(), d.num_classes, rng);
  s.lr = make_lr_classifier<float>(d.lr_sample_shape(), d.num_classes, rng);
  return s;
}

enum class ClassifierMode { kHrOnly, kTwoStream };

inline ClassifierMode mode_for(Stage s) {
  return s == Stage::kFt2 ? ClassifierMode::kTwoStream : ClassifierMode::kHrOnly;
}

namespace detail {

inline Tensor<float> gather(const Tensor<float>& batch,
                            std::span<const std::size_t> idx) {
  Shape s = batch.shape();
  const std::size_t stride = batch.size() / s[0];
  s[0] = idx.size();
  std::vector<float> out;
  out.reserve(idx.size() * stride);
  for (auto i : idx)
    out.insert(out.end(), batch.vec().begin() + i * stride,
               batch.vec().begin() + (i + 1) * stride);
  return Tensor<float>(std::move(s), std::move(out));
}

inline std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i)
    std::swap(idx[i - 1], idx[static_cast<std::size_t>(
                              rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  return idx;
}

inline std::size_t batches_per_epoch(std::size_t n, std::size_t batch) {
  return (n + batch - 1) / batch;
}

}  // namespace detail

// Class distributions for a masked batch under the given classifier mode.
// `masks` supplies S for the fusion weight.
inline std::vector<ClassProbs> classify_masked(TrainState& st,
                                               const Tensor<float>& masked_hr,
                                               const Tensor<float>& lr,
                                               const std::vector<PatchMask>& masks,
                                               ClassifierMode mode) {
  auto hr = classify_batch(st.hr, masked_hr);
  if (mode == ClassifierMode::kHrOnly) return hr;
  auto lo = classify_batch(st.lr, lr);
  std::vector<ClassProbs> out;
  out.reserve(hr.size());
  for (std::size_t i = 0; i < hr.size(); ++i)
    out.push_back(fuse(hr[i], lo[i], masks[i].count(), kNumPatches));
  return out;
}

// Accuracy of one stream on unmasked data.
inline double stream_accuracy(Network<float>& net, const Tensor<float>& images,
                              const std::vector<std::size_t>& labels,
                              std::size_t chunk = 512) {
  std::size_t correct = 0;
  for (std::size_t b = 0; b < labels.size(); b += chunk) {
    const std::size_t n = std::min(chunk, labels.size() - b);
    auto probs = classify_batch(net, images.slice(b, n));
    for (std::size_t i = 0; i < n; ++i)
      correct += predict(probs[i]).label == labels[b + i];
  }
  return labels.empty() ? 0.0
                        : static_cast<double>(correct) / static_cast<double>(labels.size());
}

// One epoch-loop of supervised cross-entropy training on `images`.
inline void train_supervised(Network<float>& net, AdamState<float>& opt,
                             const Tensor<float>& images,
                             const std::vector<std::size_t>& labels,
                             std::size_t batch_size, Rng& rng,
                             const std::function<Tensor<float>(Tensor<float>, Rng&)>& transform = {}) {
  const auto order = detail::shuffled(labels.size(), rng);
  for (std::size_t b = 0; b < order.size(); b += batch_size) {
    const std::size_t n = std::min(batch_size, order.size() - b);
    std::span<const std::size_t> idx(order.data() + b, n);
    Tensor<float> x = detail::gather(images, idx);
    if (transform) x = transform(std::move(x), rng);
    std::vector<std::size_t> y;
    for (auto i : idx) y.push_back(labels[i]);
    const Tensor<float> probs = net.forward(x);
    const auto ce = batch_cross_entropy<float>(probs, y);
    if (!std::isfinite(ce.loss))
      throw Error("supervised training diverged (non-finite loss)");
    net.backward(ce.grad);
    adam_step(net, opt);
  }
}

struct PretrainResult {
  double hr_accuracy = 0.0;
  double lr_accuracy = 0.0;
};

// Trains the HR stream on full HR images and the LR stream on LR images.
// With `init_lr_from_hr` and matching architectures the LR stream starts
// from the HR weights.
inline PretrainResult pretrain_classifiers(const Dataset& train, const Dataset& val,
                                           TrainState& st, const StageConfig& cfg,
                                           MetricsLog* log = nullptr,
                                           bool init_lr_from_hr = false) {
  if (train.size() == 0) throw Error("pretrain: empty training set");
  if (cfg.batch_size < 1 || !(cfg.learning_rate > 0.0))
    throw Error("pretrain: invalid batch size or learning rate");
  st.hr_opt = AdamState<float>({cfg.learning_rate});
  st.lr_opt = AdamState<float>({cfg.learning_rate});
  Rng hr_rng(derive_seed(cfg.rng_seed, 0x2001));
  Rng lr_rng(derive_seed(cfg.rng_seed, 0x2002));
  const Dataset& eval = val.size() ? val : train;
  PretrainResult res;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    train_supervised(st.hr, st.hr_opt, train.hr, train.labels, cfg.batch_size, hr_rng);
    if (init_lr_from_hr && e == 0 && st.lr.same_architecture(st.hr))
      st.lr.copy_params_from(st.hr);
    train_supervised(st.lr, st.lr_opt, train.lr, train.labels, cfg.batch_size, lr_rng);
    st.step += detail::batches_per_epoch(train.size(), cfg.batch_size);
    res.hr_accuracy = stream_accuracy(st.hr, eval.hr, eval.labels);
    MetricRecord r{"pretrain", e + 1, st.step, 0.0, 16.0, res.hr_accuracy};
    st.history.push_back(r);
    if (log) log->write(r);
  }
  res.hr_accuracy = stream_accuracy(st.hr, eval.hr, eval.labels);
  res.lr_accuracy = stream_accuracy(st.lr, eval.lr, eval.labels);
  st.classifiers_ready = true;
  return res;
}

struct BatchMetrics {
  double mean_reward = 0.0;
  double mean_S = 0.0;
  double accuracy = 0.0;
  double mean_advantage = 0.0;
};

// One REINFORCE update with the self-critical (greedy-action) baseline.
// Updates the policy; in Ft stages also the HR classifier. The LR stream is
// never updated here.
inline BatchMetrics reinforce_step(const Tensor<float>& hr_batch,
                                   const Tensor<float>& lr_batch,
                                   std::span<const std::size_t> labels,
                                   TrainState& st, const StageConfig& cfg,
                                   double alpha, Rng& rng) {
  const std::size_t n = labels.size();
  if (n == 0 || hr_batch.dim(0) != n || lr_batch.dim(0) != n)
    throw Error("reinforce_step: batch size mismatch");
  if (st.policy_opt.config.learning_rate != cfg.learning_rate)
    st.policy_opt.config.learning_rate = cfg.learning_rate;
  const PatchGrid grid(hr_batch.dim(2), hr_batch.dim(3));
  const ClassifierMode mode = mode_for(cfg.stage);
  const bool finetune = cfg.stage == Stage::kFt1 || cfg.stage == Stage::kFt2;
  const RewardConfig rcfg{cfg.sigma, kNumPatches};

  const auto raw = policy_forward_batch(st.policy, lr_batch);
  std::vector<PatchMask> sampled, greedy;
  sampled.reserve(n);
  greedy.reserve(n);
  for (const auto& s : raw) {
    sampled.push_back(sample_action(temperature_scale(s, alpha), rng));
    greedy.push_back(greedy_action(s));
  }

  const Tensor<float> x_greedy = apply_masks(hr_batch, greedy, grid);
  const auto p_greedy = classify_masked(st, x_greedy, lr_batch, greedy, mode);
  const Tensor<float> x_sampled = apply_masks(hr_batch, sampled, grid);
  const auto p_sampled = classify_masked(st, x_sampled, lr_batch, sampled, mode);

  BatchMetrics m;
  Tensor<float> policy_grad({n, kNumPatches});
  for (std::size_t i = 0; i < n; ++i) {
    const auto r_s = reward(sampled[i], predict(p_sampled[i]), labels[i], rcfg);
    const auto r_g = reward(greedy[i], predict(p_greedy[i]), labels[i], rcfg);
    const double a = advantage(r_s, r_g);
    const auto g = policy_loss_grad(raw[i], sampled[i], a, alpha,
                                    cfg.grad_through_scaling);
    for (std::size_t p = 0; p < kNumPatches; ++p)
      policy_grad[i * kNumPatches + p] = static_cast<float>(g[p] / static_cast<double>(n));
    m.mean_reward += r_s.reward;
    m.mean_S += static_cast<double>(r_s.sampled);
    m.accuracy += r_s.correct ? 1.0 : 0.0;
    m.mean_advantage += a;
  }
  const double dn = static_cast<double>(n);
  m.mean_reward /= dn;
  m.mean_S /= dn;
  m.accuracy /= dn;
  m.mean_advantage /= dn;

  st.policy.backward(policy_grad);
  adam_step(st.policy, st.policy_opt);

  if (finetune) {
    st.hr_opt.config.learning_rate = cfg.learning_rate;
    std::vector<std::size_t> y(labels.begin(), labels.end());
    auto update_on = [&](const Tensor<float>& x, const std::vector<PatchMask>& masks) {
      const Tensor<float> lo =
          mode == ClassifierMode::kTwoStream ? st.lr.forward(lr_batch) : Tensor<float>{};
      const Tensor<float> hr_out = st.hr.forward(x);
      Tensor<float> grad({n, st.num_classes});
      if (mode == ClassifierMode::kHrOnly) {
        grad = batch_cross_entropy<float>(hr_out, y).grad;
      } else {
        // Cross entropy of the fused distribution; only the HR stream moves.
        for (std::size_t i = 0; i < n; ++i) {
          const double w = static_cast<double>(masks[i].count()) / kNumPatches;
          const std::size_t k = i * st.num_classes + y[i];
          const double fused = w * hr_out[k] + (1.0 - w) * lo[k];
          grad[k] = static_cast<float>(-w / std::max(fused, 1e-30) / dn);
        }
      }
      st.hr.backward(grad);
      adam_step(st.hr, st.hr_opt);
    };
    switch (cfg.classifier_target) {
      case ClassifierTarget::kSampled: update_on(x_sampled, sampled); break;
      case ClassifierTarget::kGreedy: update_on(x_greedy, greedy); break;
      case ClassifierTarget::kBoth:
        update_on(x_sampled, sampled);
        update_on(x_greedy, greedy);
        break;
    }
  }
  ++st.step;
  return m;
}

// Produces one mask per sample of an LR batch.
using MaskSource = std::function<std::vector<PatchMask>(const Tensor<float>& lr_batch)>;

// Greedy actions of the state's policy.
inline MaskSource learned_policy(TrainState& st) {
  return [&st](const Tensor<float>& lr) {
    std::vector<PatchMask> out;
    for (const auto& s : policy_forward_batch(st.policy, lr))
      out.push_back(greedy_action(s));
    return out;
  };
}

struct EvalMetrics {
  std::size_t count = 0;
  double accuracy = 0.0;
  double mean_S = 0.0;
  double mean_reward = 0.0;
  std::vector<double> patch_frequency = std::vector<double>(kNumPatches, 0.0);
  // Indexed by S = 0..16.
  std::vector<std::size_t> count_by_S = std::vector<std::size_t>(kNumPatches + 1, 0);
  std::vector<std::size_t> correct_by_S = std::vector<std::size_t>(kNumPatches + 1, 0);
};

// Deterministic evaluation: no sampling, masks come from `masks`.
inline EvalMetrics evaluate(const Dataset& data, TrainState& st, ClassifierMode mode,
                            const MaskSource& masks, double sigma = 0.5,
                            std::size_t chunk = 512) {
  EvalMetrics m;
  m.count = data.size();
  if (m.count == 0) return m;
  const PatchGrid grid = data.grid();
  const RewardConfig rcfg{sigma, kNumPatches};
  std::size_t correct = 0, total_S = 0;
  for (std::size_t b = 0; b < data.size(); b += chunk) {
    const std::size_t n = std::min(chunk, data.size() - b);
    const Tensor<float> hr = data.hr.slice(b, n);
    const Tensor<float> lr = data.lr.slice(b, n);
    const auto mk = masks(lr);
    if (mk.size() != n) throw Error("evaluate: mask source returned wrong count");
    const auto probs = classify_masked(st, apply_masks(hr, mk, grid), lr, mk, mode);
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = reward(mk[i], predict(probs[i]), data.labels[b + i], rcfg);
      correct += r.correct;
      total_S += r.sampled;
      m.mean_reward += r.reward;
      m.count_by_S[r.sampled] += 1;
      m.correct_by_S[r.sampled] += r.correct;
      for (std::size_t p = 0; p < kNumPatches; ++p) m.patch_frequency[p] += mk[i][p];
    }
  }
  const double dn = static_cast<double>(m.count);
  m.accuracy = static_cast<double>(correct) / dn;
  m.mean_S = static_cast<double>(total_S) / dn;
  m.mean_reward /= dn;
  for (auto& f : m.patch_frequency) f /= dn;
  return m;
}

// Accuracy-vs-S and per-patch frequency tables as CSV.
inline void write_analysis_tables(std::ostream& acc_vs_S, std::ostream& freq,
                                  const EvalMetrics& m) {
  acc_vs_S << "S,count,accuracy\n";
  for (std::size_t s = 0; s <= kNumPatches; ++s) {
    if (!m.count_by_S[s]) continue;
    acc_vs_S << s << ',' << m.count_by_S[s] << ','
             << static_cast<double>(m.correct_by_S[s]) / static_cast<double>(m.count_by_S[s])
             << '\n';
  }
  freq << "patch,frequency\n";
  for (std::size_t p = 0; p < kNumPatches; ++p)
    freq << p << ',' << m.patch_frequency[p] << '\n';
}

struct RunOptions {
  std::optional<std::filesystem::path> checkpoint_dir;
  MetricsLog* log = nullptr;
};

inline void save_state_checkpoints(const std::filesystem::path& dir, const std::string& tag,
                                   const TrainState& st) {
  std::filesystem::create_directories(dir);
  save_checkpoint((dir / (tag + "_policy.pdnn")).string(), st.policy);
  save_checkpoint((dir / (tag + "_hr.pdnn")).string(), st.hr);
  save_checkpoint((dir / (tag + "_lr.pdnn")).string(), st.lr);
}

// K epochs of reinforce_step. Pt freezes both classifiers, Ft-1 finetunes
// the HR stream on HR-only predictions, Ft-2 finetunes the HR stream under
// fusion with the frozen LR stream.
inline void run_stage(const Dataset& train, const Dataset& val, TrainState& st,
                      const StageConfig& cfg, const RunOptions& opts = {}) {
  cfg.validate();
  switch (cfg.stage) {
    case Stage::kClassifierPretrain:
      throw Error("run_stage: use pretrain_classifiers for classifier pretraining");
    case Stage::kPt:
      if (!st.classifiers_ready)
        throw Error("run_stage: Pt requires pretrained classifiers");
      break;
    case Stage::kFt1:
    case Stage::kFt2:
      if (!st.pt_done)
        throw Error("run_stage: " + stage_name(cfg.stage) + " requires a completed Pt stage");
      break;
  }
  if (train.size() == 0) throw Error("run_stage: empty training set");

  const std::size_t per_epoch = detail::batches_per_epoch(train.size(), cfg.batch_size);
  AlphaSchedule alpha = cfg.alpha;
  if (alpha.total_steps == 0) alpha.total_steps = per_epoch * cfg.epochs;
  st.policy_opt = AdamState<float>({cfg.learning_rate});
  if (cfg.stage != Stage::kPt) st.hr_opt = AdamState<float>({cfg.learning_rate});

  Rng rng(derive_seed(cfg.rng_seed, 0x3000 + static_cast<std::uint64_t>(cfg.stage)));
  const Dataset& eval = val.size() ? val : train;
  const ClassifierMode mode = mode_for(cfg.stage);
  double best_reward = -1e300;
  std::uint64_t stage_step = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto order = detail::shuffled(train.size(), rng);
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - b);
      std::span<const std::size_t> idx(order.data() + b, n);
      std::vector<std::size_t> y;
      for (auto i : idx) y.push_back(train.labels[i]);
      reinforce_step(detail::gather(train.hr, idx), detail::gather(train.lr, idx), y, st,
                     cfg, alpha.at(stage_step), rng);
      ++stage_step;
    }
    const auto ev = evaluate(eval, st, mode, learned_policy(st), cfg.sigma);
    MetricRecord r{stage_name(cfg.stage), e + 1, st.step, ev.mean_reward, ev.mean_S,
                   ev.accuracy};
    st.history.push_back(r);
    if (opts.log) opts.log->write(r);
    if (opts.checkpoint_dir) {
      save_state_checkpoints(*opts.checkpoint_dir, stage_name(cfg.stage) + "_last", st);
      if (ev.mean_reward > best_reward) {
        best_reward = ev.mean_reward;
        save_state_checkpoints(*opts.checkpoint_dir, stage_name(cfg.stage) + "_best", st);
      }
    }
  }
  switch (cfg.stage) {
    case Stage::kPt: st.pt_done = true; break;
    case Stage::kFt1: st.ft1_done = true; break;
    case Stage::kFt2: st.ft2_done = true; break;
    default: break;
  }
}

// ---------------------------------------------------------------------------
// Score-function estimator on an explicit reward function, for checking the
// estimator against enumeration.

struct GradientEstimate {
  std::vector<double> mean;
  std::vector<double> variance;  // per-sample variance of each component
  std::size_t samples = 0;

  double standard_error(std::size_t i) const {
    return std::sqrt(variance[i] / static_cast<double>(samples));
  }
  double total_variance() const {
    return std::accumulate(variance.begin(), variance.end(), 0.0);
  }
};

// Monte-Carlo estimate of d E_{a~π(s)}[R(a)] / ds from per-sample terms
// (R(a) - b)·∇_s log π(a|s). The reward may be stochastic; its Rng stands in
// for the input image, so with self_critical set b = R(greedy(s)) is scored
// on the same draw as R(a).
using StochasticReward = std::function<double(const PatchMask&, Rng&)>;

inline GradientEstimate reinforce_estimate(const ActionProbs& s, const StochasticReward& reward_fn,
                                           std::size_t samples, Rng& rng, bool self_critical) {
  const std::size_t k = s.size();
  const PatchMask greedy = greedy_action(s);
  GradientEstimate est{std::vector<double>(k, 0.0), std::vector<double>(k, 0.0), samples};
  std::vector<double> m2(k, 0.0);
  for (std::size_t t = 0; t < samples; ++t) {
    const std::uint64_t image = rng.next_u64();
    const PatchMask a = sample_action(s, rng);
    Rng r_sampled(image);
    double adv = reward_fn(a, r_sampled);
    if (self_critical) {
      Rng r_greedy(image);
      adv -= reward_fn(greedy, r_greedy);
    }
    const auto lp = log_prob_and_grad(s, a);
    for (std::size_t i = 0; i < k; ++i) {
      const double g = adv * lp.grad[i];
      const double d = g - est.mean[i];
      est.mean[i] += d / static_cast<double>(t + 1);
      m2[i] += d * (g - est.mean[i]);
    }
  }
  for (std::size_t i = 0; i < k; ++i)
    est.variance[i] = samples > 1 ? m2[i] / static_cast<double>(samples - 1) : 0.0;
  return est;
}

}  // namespace patchdrop
