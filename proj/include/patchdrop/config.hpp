#pragma once

// Run configuration: flat `key = value` lines grouped by `[section]`
// headers; `#` starts a comment. Every field has a default, so an empty file
// is a valid configuration.
//
//   [run]      seed
//   [data]     source (synthetic|cifar10), cifar_dir, height, width, channels,
//              num_classes, informative_patches, noise, amplitude,
//              label_noise, ds, train_size, val_size, test_size, normalize
//   [pretrain] epochs, learning_rate, batch_size
//   [pt] [ft1] [ft2]
//              epochs, learning_rate, batch_size, sigma, alpha_start,
//              alpha_end, grad_through_scaling, classifier_target
//   [eval]     fixed_budget, stochastic_target_S
//   [bagnet]   epochs, learning_rate, batch_size, finetune_epochs
//   [augment]  epochs, learning_rate, batch_size, apply_prob, label_noise
//   [sweep]    sigma_values, ds_values

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "patchdrop/data.hpp"
#include "patchdrop/hardpos.hpp"
#include "patchdrop/training.hpp"

namespace patchdrop {

struct EvalConfig {
  std::size_t fixed_budget = 4;
  double stochastic_target_S = 4.0;
};

struct BagNetConfig {
  std::size_t epochs = 10;
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  std::size_t finetune_epochs = 10;
};

struct SweepConfig {
  std::vector<double> sigma_values{0.5, 2.0, 5.0, 10.0};
  std::vector<double> ds_values{2.0, 4.0, 8.0};
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string source = "synthetic";
  std::string cifar_dir;
  SyntheticSpec data;
  StageConfig pretrain = StageConfig::defaults(Stage::kClassifierPretrain);
  StageConfig pt = StageConfig::defaults(Stage::kPt);
  StageConfig ft1 = StageConfig::defaults(Stage::kFt1);
  StageConfig ft2 = StageConfig::defaults(Stage::kFt2);
  EvalConfig eval;
  BagNetConfig bagnet;
  AugmentTrainConfig augment;
  double augment_label_noise = 0.05;
  SweepConfig sweep;

  // Propagates the root seed into every stage.
  void apply_seed(std::uint64_t root) {
    seed = root;
    data.seed = derive_seed(root, 1);
    pretrain.rng_seed = derive_seed(root, 2);
    pt.rng_seed = derive_seed(root, 3);
    ft1.rng_seed = derive_seed(root, 4);
    ft2.rng_seed = derive_seed(root, 5);
    augment.rng_seed = derive_seed(root, 6);
  }
};

struct ConfigResult {
  std::optional<RunConfig> config;
  std::vector<std::string> errors;

  bool ok() const { return config.has_value(); }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

class ConfigReader {
public:
  using Entries = std::map<std::string, std::map<std::string, std::pair<std::string, int>>>;

  ConfigReader(Entries entries, std::vector<std::string>& errors)
      : entries_(std::move(entries)), errors_(errors) {}

  template <typename F>
  void with(const std::string& section, const std::string& key, F&& apply) {
    auto s = entries_.find(section);
    if (s == entries_.end()) return;
    auto k = s->second.find(key);
    if (k == s->second.end()) return;
    const auto [value, line] = k->second;
    s->second.erase(k);
    if (!apply(value))
      errors_.push_back("line " + std::to_string(line) + ": [" + section + "] " + key +
                        ": cannot parse '" + value + "'");
  }

  void real(const std::string& sec, const std::string& key, double& out) {
    with(sec, key, [&](const std::string& v) {
      try {
        std::size_t pos = 0;
        out = std::stod(v, &pos);
        return pos == v.size();
      } catch (...) {
        return false;
      }
    });
  }

  template <typename U>
  void integer(const std::string& sec, const std::string& key, U& out) {
    with(sec, key, [&](const std::string& v) {
      if (!v.empty() && v[0] == '-') return false;
      U tmp{};
      auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), tmp);
      if (ec != std::errc{} || p != v.data() + v.size()) return false;
      out = tmp;
      return true;
    });
  }

  void boolean(const std::string& sec, const std::string& key, bool& out) {
    with(sec, key, [&](const std::string& v) {
      if (v == "true" || v == "1") return out = true, true;
      if (v == "false" || v == "0") return out = false, true;
      return false;
    });
  }

  void text(const std::string& sec, const std::string& key, std::string& out) {
    with(sec, key, [&](const std::string& v) { return out = v, true; });
  }

  template <typename U>
  void list(const std::string& sec, const std::string& key, std::vector<U>& out) {
    with(sec, key, [&](const std::string& v) {
      std::vector<U> vals;
      std::stringstream ss(v);
      std::string item;
      while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) return false;
        try {
          std::size_t pos = 0;
          if constexpr (std::is_floating_point_v<U>) {
            vals.push_back(static_cast<U>(std::stod(item, &pos)));
          } else {
            if (item[0] == '-') return false;
            vals.push_back(static_cast<U>(std::stoull(item, &pos)));
          }
          if (pos != item.size()) return false;
        } catch (...) {
          return false;
        }
      }
      out = std::move(vals);
      return true;
    });
  }

  // Keys nobody consumed.
  void report_unknown() {
    for (const auto& [sec, keys] : entries_)
      for (const auto& [key, vl] : keys)
        errors_.push_back("line " + std::to_string(vl.second) + ": unknown key [" + sec +
                          "] " + key);
  }

private:
  Entries entries_;
  std::vector<std::string>& errors_;
};

inline void read_stage(ConfigReader& r, const std::string& sec, StageConfig& c) {
  r.integer(sec, "epochs", c.epochs);
  r.real(sec, "learning_rate", c.learning_rate);
  r.integer(sec, "batch_size", c.batch_size);
  if (sec == "pretrain") return;
  r.real(sec, "sigma", c.sigma);
  r.real(sec, "alpha_start", c.alpha.alpha_start);
  r.real(sec, "alpha_end", c.alpha.alpha_end);
  r.boolean(sec, "grad_through_scaling", c.grad_through_scaling);
  r.with(sec, "classifier_target", [&](const std::string& v) {
    try {
      c.classifier_target = parse_classifier_target(v);
      return true;
    } catch (const Error&) {
      return false;
    }
  });
}

}  // namespace detail

// Parses and range-checks a configuration. All problems are reported
// together; `config` is set only when there are none.
inline ConfigResult parse_config(std::istream& in) {
  ConfigResult res;
  detail::ConfigReader::Entries entries;
  std::string line, section = "run";
  const std::vector<std::string> sections{"run", "data", "pretrain", "pt", "ft1", "ft2",
                                          "eval", "bagnet", "augment", "sweep"};
  for (int no = 1; std::getline(in, line); ++no) {
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        res.errors.push_back("line " + std::to_string(no) + ": malformed section header");
        continue;
      }
      section = detail::trim(line.substr(1, line.size() - 2));
      if (std::find(sections.begin(), sections.end(), section) == sections.end())
        res.errors.push_back("line " + std::to_string(no) + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      res.errors.push_back("line " + std::to_string(no) + ": expected key = value");
      continue;
    }
    const auto key = detail::trim(line.substr(0, eq));
    if (entries[section].count(key))
      res.errors.push_back("line " + std::to_string(no) + ": duplicate key [" + section + "] " + key);
    entries[section][key] = {detail::trim(line.substr(eq + 1)), no};
  }

  RunConfig c;
  detail::ConfigReader r(std::move(entries), res.errors);
  std::uint64_t seed = c.seed;
  r.integer("run", "seed", seed);
  r.text("data", "source", c.source);
  r.text("data", "cifar_dir", c.cifar_dir);
  r.integer("data", "height", c.data.height);
  r.integer("data", "width", c.data.width);
  r.integer("data", "channels", c.data.channels);
  r.integer("data", "num_classes", c.data.num_classes);
  r.list("data", "informative_patches", c.data.informative_patches);
  r.real("data", "noise", c.data.noise);
  r.real("data", "amplitude", c.data.amplitude);
  r.real("data", "label_noise", c.data.label_noise);
  r.integer("data", "ds", c.data.ds);
  r.integer("data", "train_size", c.data.train_size);
  r.integer("data", "val_size", c.data.val_size);
  r.integer("data", "test_size", c.data.test_size);
  r.boolean("data", "normalize", c.data.normalize);
  for (auto [sec, st] : {std::pair{"pretrain", &c.pretrain}, {"pt", &c.pt},
                         {"ft1", &c.ft1}, {"ft2", &c.ft2}})
    detail::read_stage(r, sec, *st);
  r.integer("eval", "fixed_budget", c.eval.fixed_budget);
  r.real("eval", "stochastic_target_S", c.eval.stochastic_target_S);
  r.integer("bagnet", "epochs", c.bagnet.epochs);
  r.real("bagnet", "learning_rate", c.bagnet.learning_rate);
  r.integer("bagnet", "batch_size", c.bagnet.batch_size);
  r.integer("bagnet", "finetune_epochs", c.bagnet.finetune_epochs);
  r.integer("augment", "epochs", c.augment.epochs);
  r.real("augment", "learning_rate", c.augment.learning_rate);
  r.integer("augment", "batch_size", c.augment.batch_size);
  r.real("augment", "apply_prob", c.augment.apply_prob);
  r.real("augment", "label_noise", c.augment_label_noise);
  r.list("sweep", "sigma_values", c.sweep.sigma_values);
  r.list("sweep", "ds_values", c.sweep.ds_values);
  r.report_unknown();

  // Range checks.
  auto bad = [&](const std::string& m) { res.errors.push_back(m); };
  if (c.source != "synthetic" && c.source != "cifar10")
    bad("[data] source must be synthetic or cifar10");
  if (c.source == "cifar10" && c.cifar_dir.empty()) bad("[data] cifar_dir is required for cifar10");
  try {
    c.data.validate();
  } catch (const Error& e) {
    bad(std::string("[data] ") + e.what());
  }
  if (c.data.train_size == 0) bad("[data] train_size must be >= 1");
  c.pretrain.stage = Stage::kClassifierPretrain;
  for (auto [sec, st] : {std::pair{"pretrain", &c.pretrain}, {"pt", &c.pt},
                         {"ft1", &c.ft1}, {"ft2", &c.ft2}})
    for (const auto& p : st->problems()) bad(std::string("[") + sec + "] " + p);
  if (c.eval.fixed_budget > kNumPatches) bad("[eval] fixed_budget must lie in [0,16]");
  if (!(c.eval.stochastic_target_S > 0.0 && c.eval.stochastic_target_S <= 16.0))
    bad("[eval] stochastic_target_S must lie in (0,16]");
  if (c.bagnet.batch_size < 1 || !(c.bagnet.learning_rate > 0.0))
    bad("[bagnet] batch_size must be >= 1 and learning_rate > 0");
  if (c.augment.batch_size < 1 || !(c.augment.learning_rate > 0.0))
    bad("[augment] batch_size must be >= 1 and learning_rate > 0");
  if (!(c.augment.apply_prob >= 0.0 && c.augment.apply_prob <= 1.0))
    bad("[augment] apply_prob must lie in [0,1]");
  if (!(c.augment_label_noise >= 0.0 && c.augment_label_noise <= 1.0))
    bad("[augment] label_noise must lie in [0,1]");
  for (double v : c.sweep.sigma_values)
    if (!(v >= 0.0)) bad("[sweep] sigma values must be >= 0");
  for (double v : c.sweep.ds_values)
    if (!(v >= 1.0) || v != std::floor(v)) bad("[sweep] ds values must be positive integers");

  if (res.errors.empty()) {
    c.apply_seed(seed);
    res.config = std::move(c);
  }
  return res;
}

inline ConfigResult validate_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) return {std::nullopt, {"cannot open config file " + path}};
  return parse_config(in);
}

namespace detail {

template <typename U>
std::string join(const std::vector<U>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

inline void write_stage(std::ostream& os, const std::string& sec, const StageConfig& c) {
  os << "\n[" << sec << "]\n"
     << "epochs = " << c.epochs << "\n"
     << "learning_rate = " << c.learning_rate << "\n"
     << "batch_size = " << c.batch_size << "\n";
  if (sec == "pretrain") return;
  os << "sigma = " << c.sigma << "\n"
     << "alpha_start = " << c.alpha.alpha_start << "\n"
     << "alpha_end = " << c.alpha.alpha_end << "\n"
     << "grad_through_scaling = " << (c.grad_through_scaling ? "true" : "false") << "\n"
     << "classifier_target = " << classifier_target_name(c.classifier_target) << "\n";
}

}  // namespace detail

// Normalized form with every default filled in; parses back to the same
// configuration.
inline std::string config_to_text(const RunConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "[run]\nseed = " << c.seed << "\n\n[data]\n"
     << "source = " << c.source << "\n";
  if (!c.cifar_dir.empty()) os << "cifar_dir = " << c.cifar_dir << "\n";
  const auto& d = c.data;
  os << "height = " << d.height << "\nwidth = " << d.width << "\nchannels = " << d.channels
     << "\nnum_classes = " << d.num_classes
     << "\ninformative_patches = " << detail::join(d.informative_patches)
     << "\nnoise = " << d.noise << "\namplitude = " << d.amplitude
     << "\nlabel_noise = " << d.label_noise << "\nds = " << d.ds
     << "\ntrain_size = " << d.train_size << "\nval_size = " << d.val_size
     << "\ntest_size = " << d.test_size << "\nnormalize = " << (d.normalize ? "true" : "false")
     << "\n";
  detail::write_stage(os, "pretrain", c.pretrain);
  detail::write_stage(os, "pt", c.pt);
  detail::write_stage(os, "ft1", c.ft1);
  detail::write_stage(os, "ft2", c.ft2);
  os << "\n[eval]\nfixed_budget = " << c.eval.fixed_budget
     << "\nstochastic_target_S = " << c.eval.stochastic_target_S << "\n";
  os << "\n[bagnet]\nepochs = " << c.bagnet.epochs << "\nlearning_rate = " << c.bagnet.learning_rate
     << "\nbatch_size = " << c.bagnet.batch_size
     << "\nfinetune_epochs = " << c.bagnet.finetune_epochs << "\n";
  os << "\n[augment]\nepochs = " << c.augment.epochs
     << "\nlearning_rate = " << c.augment.learning_rate
     << "\nbatch_size = " << c.augment.batch_size << "\napply_prob = " << c.augment.apply_prob
     << "\nlabel_noise = " << c.augment_label_noise << "\n";
  os << "\n[sweep]\nsigma_values = " << detail::join(c.sweep.sigma_values)
     << "\nds_values = " << detail::join(c.sweep.ds_values) << "\n";
  return os.str();
}

}  // namespace patchdrop
