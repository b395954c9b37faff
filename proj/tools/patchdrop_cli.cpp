// patchdrop: command-line driver for every pipeline stage.
//
// Stages chain through <out>/checkpoints: pretrain writes pretrain_*,
// train-policy reads those and writes pt_*, finetune --stage ft1 reads pt_*,
// --stage ft2 reads ft1_*. eval/compare/bagnet/augment-train read whichever
// stage they need from the same directory.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "patchdrop/patchdrop.hpp"

#ifndef PATCHDROP_VERSION
#define PATCHDROP_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace patchdrop;
using nlohmann::json;

namespace {

struct Common {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
};

// Everything a subcommand needs once the config is loaded.
struct Run {
  RunConfig cfg;
  fs::path out;
  std::ofstream metrics_file;
  MetricsLog log;

  fs::path ckpt_dir() const { return out / "checkpoints"; }

  void metric(json j) {
    metrics_file << j.dump() << '\n' << std::flush;
  }
};

void write_manifest(const fs::path& out, const std::string& command, const RunConfig& cfg,
                    const std::vector<std::string>& argv) {
  const fs::path p = out / "manifest.json";
  json m = json::object();
  if (fs::exists(p)) {
    std::ifstream in(p);
    m = json::parse(in, nullptr, false);
    if (m.is_discarded() || !m.is_object()) m = json::object();
  }
  m["code_version"] = PATCHDROP_VERSION;
  m["seed"] = cfg.seed;
  m["config"] = "config.cfg";
  m["invocations"].push_back({{"command", command}, {"seed", cfg.seed}, {"argv", argv}});
  std::ofstream(p) << m.dump(2) << '\n';
}

std::unique_ptr<Run> open_run(const Common& c, const std::string& command,
                              const std::vector<std::string>& argv) {
  auto res = validate_config(c.config_path);
  if (!res.ok()) {
    std::string msg = "invalid configuration " + c.config_path + ":";
    for (const auto& e : res.errors) msg += "\n  " + e;
    throw Error(msg);
  }
  auto run = std::make_unique<Run>();
  run->cfg = *res.config;
  if (c.seed) run->cfg.apply_seed(*c.seed);
  run->out = c.out;
  fs::create_directories(run->out);
  std::ofstream(run->out / "config.cfg") << config_to_text(run->cfg);
  write_manifest(run->out, command, run->cfg, argv);
  run->metrics_file.open(run->out / "metrics.ndjson", std::ios::app);
  run->log = MetricsLog(&run->metrics_file);
  return run;
}

// Loads <dir>/<tag>_{policy,hr,lr}.pdnn into a state sized for `train`.
TrainState load_state(const Run& run, const Dataset& train, const std::string& tag) {
  TrainState st = make_train_state(train, run.cfg.seed);
  auto load = [&](const std::string& part, Network<float>& into) {
    const fs::path p = run.ckpt_dir() / (tag + "_" + part + ".pdnn");
    if (!fs::exists(p))
      throw Error("missing checkpoint " + p.string() + " (run the earlier stage first)");
    Network<float> net = load_checkpoint<float>(p.string());
    if (!net.same_architecture(into))
      throw Error("checkpoint " + p.string() + " does not match the configured data");
    into = std::move(net);
  };
  load("policy", st.policy);
  load("hr", st.hr);
  load("lr", st.lr);
  st.classifiers_ready = true;
  st.pt_done = tag != "pretrain";
  st.ft1_done = tag == "ft1" || tag == "ft2";
  st.ft2_done = tag == "ft2";
  return st;
}

std::string latest_stage(const Run& run) {
  for (const char* tag : {"ft2", "ft1", "pt", "pretrain"})
    if (fs::exists(run.ckpt_dir() / (std::string(tag) + "_policy.pdnn"))) return tag;
  throw Error("no checkpoints under " + run.ckpt_dir().string());
}

ClassifierMode mode_for_tag(const std::string& tag) {
  return tag == "ft2" ? ClassifierMode::kTwoStream : ClassifierMode::kHrOnly;
}

json eval_json(const EvalMetrics& m) {
  return {{"accuracy", m.accuracy},
          {"mean_S", m.mean_S},
          {"mean_reward", m.mean_reward},
          {"count", m.count},
          {"patch_frequency", m.patch_frequency}};
}

MaskSource policy_source(const std::string& name, TrainState& st, const RunConfig& cfg,
                         const PatchGrid& grid) {
  for (auto& p : standard_policies(st, cfg, grid))
    if (p.name == name) return p.make();
  throw Error("unknown policy '" + name + "'");
}

void print_eval(const std::string& label, const EvalMetrics& m) {
  std::cout << label << ": accuracy " << m.accuracy << ", mean S " << m.mean_S << '\n';
}

// ---------------------------------------------------------------------------

void cmd_gen_data(Run& run) {
  const Splits s = load_splits(run.cfg);
  for (const Dataset* d : {&s.train, &s.val, &s.test}) {
    save_dataset(run.out / "data", *d, run.cfg.data);
    run.metric({{"event", "gen-data"}, {"split", d->split}, {"size", d->size()}});
    std::cout << d->split << ": " << d->size() << " images\n";
  }
}

void cmd_pretrain(Run& run) {
  const Splits s = load_splits(run.cfg);
  TrainState st = make_train_state(s.train, run.cfg.seed);
  const auto r = pretrain_classifiers(s.train, s.val, st, run.cfg.pretrain, &run.log);
  save_state_checkpoints(run.ckpt_dir(), "pretrain", st);
  run.metric({{"event", "pretrain"}, {"hr_accuracy", r.hr_accuracy},
              {"lr_accuracy", r.lr_accuracy}});
  std::cout << "pretrain: HR accuracy " << r.hr_accuracy << ", LR accuracy "
            << r.lr_accuracy << '\n';
}

void run_policy_stage(Run& run, const std::string& from, const StageConfig& stage) {
  const Splits s = load_splits(run.cfg);
  TrainState st = load_state(run, s.train, from);
  const std::string tag = stage_name(stage.stage);
  run_stage(s.train, s.val, st, stage, {run.ckpt_dir(), &run.log});
  save_state_checkpoints(run.ckpt_dir(), tag, st);
  const auto m =
      evaluate(s.test, st, mode_for_tag(tag), learned_policy(st), stage.sigma);
  json j = eval_json(m);
  j["event"] = "stage-eval";
  j["stage"] = tag;
  run.metric(j);
  print_eval(tag + " (test)", m);
}

void cmd_eval(Run& run, const std::string& policy, std::string stage) {
  const Splits s = load_splits(run.cfg);
  if (stage.empty()) stage = latest_stage(run);
  if (policy == "learned" && stage == "pretrain")
    throw Error("policy 'learned' needs a trained policy (pt, ft1 or ft2)");
  TrainState st = load_state(run, s.train, stage);
  const auto m = evaluate(s.test, st, mode_for_tag(stage),
                          policy_source(policy, st, run.cfg, s.test.grid()));
  {
    std::ofstream os(run.out / ("eval_" + policy + ".csv"));
    os << "policy,stage,accuracy,mean_S,mean_reward\n"
       << policy << ',' << stage << ',' << m.accuracy << ',' << m.mean_S << ','
       << m.mean_reward << '\n';
  }
  std::ofstream acc(run.out / ("acc_vs_S_" + policy + ".csv"));
  std::ofstream freq(run.out / ("patch_freq_" + policy + ".csv"));
  write_analysis_tables(acc, freq, m);
  json j = eval_json(m);
  j["event"] = "eval";
  j["policy"] = policy;
  j["stage"] = stage;
  run.metric(j);
  print_eval(policy + " @ " + stage, m);
}

void cmd_compare(Run& run, std::string stage) {
  const Splits s = load_splits(run.cfg);
  if (stage.empty()) stage = latest_stage(run);
  TrainState st = load_state(run, s.train, stage);
  const auto rows =
      compare(standard_policies(st, run.cfg, s.test.grid()), s.test, st, mode_for_tag(stage));
  std::ofstream os(run.out / "compare.csv");
  write_comparison_csv(os, rows);
  for (const auto& r : rows) {
    run.metric({{"event", "compare"}, {"stage", stage}, {"policy", r.policy},
                {"accuracy", r.accuracy}, {"mean_S", r.mean_S}});
    std::cout << r.policy << ": accuracy " << r.accuracy << ", mean S " << r.mean_S << '\n';
  }
}

// Each point retrains classifiers and Pt from scratch.
void cmd_sweep(Run& run, const std::string& param) {
  const SweepParam p = parse_sweep_param(param);
  const auto& values = p == SweepParam::kSigma ? run.cfg.sweep.sigma_values
                                               : run.cfg.sweep.ds_values;
  const auto result = sweep(values, [&](double v) {
    RunConfig c = run.cfg;
    if (p == SweepParam::kSigma) c.pt.sigma = v;
    else c.data.ds = static_cast<std::size_t>(v);
    const Splits s = load_splits(c);
    const auto r = run_pipeline(s, c, PipelineEnd::kPt, s.test);
    const auto& m = *r.after_pt;
    run.metric({{"event", "sweep"}, {"param", param}, {"value", v},
                {"accuracy", m.accuracy}, {"mean_S", m.mean_S}});
    std::cout << param << " = " << v << ": accuracy " << m.accuracy << ", mean S "
              << m.mean_S << '\n';
    return SweepPoint{v, m.accuracy, m.mean_S};
  });
  std::ofstream os(run.out / ("sweep_" + param + ".csv"));
  write_sweep_csv(os, result);
}

void cmd_augment(Run& run, const std::string& mode_name) {
  const AugmentMode mode = parse_augment_mode(mode_name);
  RunConfig c = run.cfg;
  c.data.label_noise = c.augment_label_noise;
  const Splits s = load_splits(c);
  std::optional<TrainState> trained;
  if (mode == AugmentMode::kHardPositive) trained = load_state(run, s.train, "pt");
  const Network<float> init = make_train_state(s.train, c.seed).hr;
  Network<float> net;
  const double acc = train_with_augmentation(s.train, s.test, init,
                                             trained ? &trained->policy : nullptr, mode,
                                             c.augment, &net);
  fs::create_directories(run.ckpt_dir());
  save_checkpoint((run.ckpt_dir() / ("augment_" + mode_name + "_hr.pdnn")).string(), net);
  std::ofstream(run.out / ("augment_" + mode_name + ".csv"))
      << "mode,label_noise,accuracy\n"
      << mode_name << ',' << c.augment_label_noise << ',' << acc << '\n';
  run.metric({{"event", "augment-train"}, {"mode", mode_name},
              {"label_noise", c.augment_label_noise}, {"accuracy", acc}});
  std::cout << "augment " << mode_name << ": accuracy " << acc << '\n';
}

void cmd_bagnet(Run& run) {
  const Splits s = load_splits(run.cfg);
  TrainState st = load_state(run, s.train, "pt");
  const auto& bc = run.cfg.bagnet;
  BagNetState bag = make_bagnet(s.train, run.cfg.seed);
  train_bagnet(s.train, bag, bc.epochs, bc.learning_rate, bc.batch_size, run.cfg.seed);
  const MaskSource all = [](const Tensor<float>& lr) {
    return std::vector<PatchMask>(lr.dim(0), PatchMask::all());
  };
  std::vector<std::pair<std::string, BagNetMetrics>> rows;
  rows.emplace_back("full", evaluate_bagnet(s.test, bag, all));
  rows.emplace_back("gated", evaluate_bagnet(s.test, bag, learned_policy(st)));
  if (bc.finetune_epochs > 0) {
    StageConfig ft = run.cfg.ft1;
    ft.epochs = bc.finetune_epochs;
    finetune_bagnet(s.train, st, bag, ft);
    rows.emplace_back("gated-finetuned", evaluate_bagnet(s.test, bag, learned_policy(st)));
    rows.emplace_back("full-finetuned", evaluate_bagnet(s.test, bag, all));
  }
  fs::create_directories(run.ckpt_dir());
  save_checkpoint((run.ckpt_dir() / "bagnet_patch.pdnn").string(), bag.patch_net);
  save_checkpoint((run.ckpt_dir() / "bagnet_policy.pdnn").string(), st.policy);
  std::ofstream os(run.out / "bagnet.csv");
  os << "variant,accuracy,mean_cost\n";
  for (const auto& [name, m] : rows) {
    os << name << ',' << m.accuracy << ',' << m.mean_cost << '\n';
    run.metric({{"event", "bagnet"}, {"variant", name}, {"accuracy", m.accuracy},
                {"mean_cost", m.mean_cost}});
    std::cout << "bagnet " << name << ": accuracy " << m.accuracy << ", mean cost "
              << m.mean_cost << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PatchDrop: learned high-resolution patch acquisition"};
  app.require_subcommand(1);
  Common common;
  std::string stage, policy = "learned", param, mode;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "configuration file")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--out", common.out, "output directory")->required();
    sub->add_option("--seed", common.seed, "root seed (overrides the config)");
    return sub;
  };

  auto* gen = add_common(app.add_subcommand("gen-data", "generate or import the dataset"));
  auto* pre = add_common(app.add_subcommand("pretrain", "pretrain the HR and LR classifiers"));
  auto* pt = add_common(app.add_subcommand("train-policy", "train the policy (Pt)"));
  auto* ft = add_common(app.add_subcommand("finetune", "joint finetuning (Ft-1 / Ft-2)"));
  ft->add_option("--stage", stage, "ft1 or ft2")
      ->required()
      ->check(CLI::IsMember({"ft1", "ft2"}));
  auto* ev = add_common(app.add_subcommand("eval", "evaluate one policy on the test split"));
  ev->add_option("--policy", policy, "policy to evaluate")
      ->check(CLI::IsMember({"learned", "fixed-h", "fixed-v", "stochastic", "all-keep",
                             "all-drop"}));
  ev->add_option("--stage", stage, "checkpoint stage (default: latest)")
      ->check(CLI::IsMember({"pretrain", "pt", "ft1", "ft2"}));
  auto* cmp = add_common(app.add_subcommand("compare", "learned policy vs every baseline"));
  cmp->add_option("--stage", stage, "checkpoint stage (default: latest)")
      ->check(CLI::IsMember({"pretrain", "pt", "ft1", "ft2"}));
  auto* sw = add_common(app.add_subcommand("sweep", "retrain Pt across sigma or ds"));
  sw->add_option("--param", param, "sigma or ds")
      ->required()
      ->check(CLI::IsMember({"sigma", "ds"}));
  auto* aug = add_common(app.add_subcommand("augment-train", "train HR classifier with augmentation"));
  aug->add_option("--mode", mode, "none, cutout or hardpos")
      ->required()
      ->check(CLI::IsMember({"none", "cutout", "hardpos"}));
  auto* bag = add_common(app.add_subcommand("bagnet", "train and evaluate the gated BagNet"));

  CLI11_PARSE(app, argc, argv);

  try {
    auto* sub = app.get_subcommands().front();
    const auto run = open_run(common, sub->get_name(), std::vector<std::string>(argv, argv + argc));
    if (sub == gen) cmd_gen_data(*run);
    else if (sub == pre) cmd_pretrain(*run);
    else if (sub == pt) run_policy_stage(*run, "pretrain", run->cfg.pt);
    else if (sub == ft && stage == "ft1") run_policy_stage(*run, "pt", run->cfg.ft1);
    else if (sub == ft) run_policy_stage(*run, "ft1", run->cfg.ft2);
    else if (sub == ev) cmd_eval(*run, policy, stage);
    else if (sub == cmp) cmd_compare(*run, stage);
    else if (sub == sw) cmd_sweep(*run, param);
    else if (sub == aug) cmd_augment(*run, mode);
    else if (sub == bag) cmd_bagnet(*run);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
