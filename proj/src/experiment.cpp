#include "prunelab/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "prunelab/analysis.hpp"
#include "prunelab/checkpoint.hpp"
#include "prunelab/error.hpp"
#include "prunelab/lottery.hpp"
#include "prunelab/model_zoo.hpp"
#include "prunelab/trainer.hpp"

namespace prunelab {

using nlohmann::json;

ArchitectureSpec ModelConfig::build(int num_classes) const {
  if (family == Family::VGG) {
    const VggTemplate& t = vgg_template(template_name);
    return vgg_spec(t, widths.empty() ? t.default_widths : widths, num_classes);
  }
  return preresnet_spec(depth, widths.empty() ? std::vector<int>{16, 32, 64} : widths, num_classes);
}

int DataConfig::num_classes() const { return source == "synthetic" ? synthetic.classes : 10; }

DatasetSplit DataConfig::load() const {
  if (source == "synthetic") return load_synthetic(synthetic);
  return load_cifar10(path, max_train, max_test);
}

std::string_view to_string(Method method) {
  switch (method) {
    case Method::L1: return "l1";
    case Method::Slimming: return "slimming";
    case Method::Magnitude: return "magnitude";
    case Method::SFP: return "sfp";
    case Method::UniformChannel: return "uniform-channel";
    case Method::UniformSparse: return "uniform-sparse";
  }
  return "?";
}

Method method_from_string(std::string_view name) {
  for (Method m : {Method::L1, Method::Slimming, Method::Magnitude, Method::SFP, Method::UniformChannel,
                   Method::UniformSparse})
    if (to_string(m) == name) return m;
  fail(ErrorKind::InvalidArgument, "unknown pruning method '" + std::string(name) + "'");
}

namespace {

bool structured(Method m) { return m == Method::L1 || m == Method::Slimming || m == Method::SFP; }

json model_json(const ModelConfig& m) {
  json j;
  j["family"] = m.family == Family::VGG ? "vgg" : "preresnet";
  if (m.family == Family::VGG)
    j["template"] = m.template_name;
  else
    j["depth"] = m.depth;
  j["widths"] = m.widths;
  return j;
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  require(j.is_object(), ErrorKind::FormatError, where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    require(ok, ErrorKind::FormatError, "unknown key '" + key + "' in " + where);
  }
}

ModelConfig model_from_json(const json& j) {
  check_keys(j, {"family", "template", "depth", "widths"}, "model");
  ModelConfig m;
  const std::string family = j.value("family", std::string("vgg"));
  require(family == "vgg" || family == "preresnet", ErrorKind::FormatError, "model.family must be vgg or preresnet");
  m.family = family == "vgg" ? Family::VGG : Family::PreResNet;
  m.template_name = j.value("template", m.template_name);
  m.depth = j.value("depth", m.depth);
  m.widths = j.value("widths", m.widths);
  return m;
}

std::string ratio_tag(double r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2) << r;
  return out.str();
}

std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << v;
  return out.str();
}

}  // namespace

void ExperimentConfig::validate() const {
  require(!seeds.empty(), ErrorKind::InvalidArgument, "at least one seed is required");
  require(!ratios.empty(), ErrorKind::InvalidArgument, "at least one prune ratio is required");
  for (double r : ratios) require(r >= 0.0 && r < 1.0, ErrorKind::InvalidArgument, "prune ratios must lie in [0, 1)");
  budget.validate();
  if (finetune_epochs) require(*finetune_epochs >= 1, ErrorKind::InvalidArgument, "finetune_epochs must be >= 1");
  require(scratch_policy.cap >= 1.0, ErrorKind::InvalidArgument, "scratch cap must be >= 1");
  require(lambda >= 0.0, ErrorKind::InvalidArgument, "lambda must be >= 0");
  require(batch_size >= 1, ErrorKind::InvalidArgument, "batch_size must be >= 1");
  require(data.source == "synthetic" || data.source == "cifar10", ErrorKind::InvalidArgument,
          "dataset.source must be synthetic or cifar10");
  if (data.source == "cifar10")
    require(std::filesystem::is_directory(data.path), ErrorKind::Io,
            "dataset directory " + data.path.string() + " does not exist");
  else
    data.synthetic.validate();
  prunelab::validate(model.build(data.num_classes()));
  if (transfer_target) prunelab::validate(transfer_target->build(data.num_classes()));
  for (double r : lottery.ratios)
    require(r > 0.0 && r < 1.0, ErrorKind::InvalidArgument, "lottery ratios must lie in (0, 1)");
  require(lottery.rounds >= 1, ErrorKind::InvalidArgument, "lottery rounds must be >= 1");
  if (lottery.lr) require(*lottery.lr > 0.0, ErrorKind::InvalidArgument, "lottery lr must be positive");
}

json ExperimentConfig::to_json() const {
  json j;
  j["version"] = kConfigVersion;
  j["name"] = name;
  j["model"] = model_json(model);
  json d;
  d["source"] = data.source;
  if (data.source == "synthetic") {
    const SyntheticSpec& s = data.synthetic;
    d["classes"] = s.classes;
    d["train"] = s.train_samples;
    d["test"] = s.test_samples;
    d["seed"] = s.seed;
    d["noise"] = s.noise;
    d["jitter"] = s.jitter;
    d["amplitude"] = s.amplitude;
    d["distractors"] = s.distractors;
  } else {
    d["path"] = data.path.string();
    d["max_train"] = data.max_train;
    d["max_test"] = data.max_test;
  }
  j["dataset"] = d;
  j["method"] = to_string(method);
  j["ratios"] = ratios;
  j["budget"] = {{"epochs", budget.epochs}, {"lr", budget.lr}, {"milestones", budget.milestones}, {"decay", budget.decay}};
  j["finetune_epochs"] = finetune_epochs ? json(*finetune_epochs) : json(nullptr);
  j["scratch"] = {{"policy", scratch_policy.mode == BudgetPolicy::Mode::Capped ? "capped" : "proportional"},
                  {"cap", scratch_policy.cap}};
  j["seeds"] = seeds;
  j["lambda"] = lambda;
  j["batch_size"] = batch_size;
  j["momentum"] = momentum;
  j["weight_decay"] = weight_decay;
  j["augment"] = augment;
  j["mask_scope"] = mask_scope == MaskScope::Global ? "global" : "layer";
  j["recalibrate_bn"] = recalibrate_bn;
  j["guided"] = guided;
  j["transfer_target"] = transfer_target ? model_json(*transfer_target) : json(nullptr);
  j["lottery"] = {{"mode", lottery.iterative ? "iterative" : "oneshot"},
                  {"ratios", lottery.ratios},
                  {"rounds", lottery.rounds},
                  {"lr", lottery.lr ? json(*lottery.lr) : json(nullptr)},
                  {"structured", lottery.structured}};
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  try {
    check_keys(j, {"version", "name", "model", "dataset", "method", "ratios", "budget", "finetune_epochs", "scratch",
                   "seeds", "lambda", "batch_size", "momentum", "weight_decay", "augment", "mask_scope",
                   "recalibrate_bn", "guided", "transfer_target", "lottery"},
               "config");
    require(j.contains("version"), ErrorKind::FormatError, "config lacks a version");
    require(j.at("version").get<int>() == kConfigVersion, ErrorKind::UnsupportedVersion,
            "config version " + j.at("version").dump() + " is not supported");
    ExperimentConfig c;
    c.name = j.value("name", c.name);
    if (j.contains("model")) c.model = model_from_json(j.at("model"));
    if (j.contains("dataset")) {
      const json& d = j.at("dataset");
      check_keys(d, {"source", "classes", "train", "test", "seed", "noise", "jitter", "amplitude", "distractors", "path",
                     "max_train", "max_test"},
                 "dataset");
      c.data.source = d.value("source", c.data.source);
      SyntheticSpec& s = c.data.synthetic;
      s.classes = d.value("classes", s.classes);
      s.train_samples = d.value("train", s.train_samples);
      s.test_samples = d.value("test", s.test_samples);
      s.seed = d.value("seed", s.seed);
      s.noise = d.value("noise", s.noise);
      s.jitter = d.value("jitter", s.jitter);
      s.amplitude = d.value("amplitude", s.amplitude);
      s.distractors = d.value("distractors", s.distractors);
      c.data.path = d.value("path", std::string());
      c.data.max_train = d.value("max_train", c.data.max_train);
      c.data.max_test = d.value("max_test", c.data.max_test);
    }
    if (j.contains("method")) c.method = method_from_string(j.at("method").get<std::string>());
    c.ratios = j.value("ratios", c.ratios);
    if (j.contains("budget")) {
      const json& b = j.at("budget");
      check_keys(b, {"epochs", "lr", "milestones", "decay"}, "budget");
      c.budget.epochs = b.value("epochs", c.budget.epochs);
      c.budget.lr = b.value("lr", c.budget.lr);
      c.budget.milestones = b.value("milestones", c.budget.milestones);
      c.budget.decay = b.value("decay", c.budget.decay);
    }
    if (j.contains("finetune_epochs") && !j.at("finetune_epochs").is_null())
      c.finetune_epochs = j.at("finetune_epochs").get<int>();
    if (j.contains("scratch")) {
      const json& s = j.at("scratch");
      check_keys(s, {"policy", "cap"}, "scratch");
      const std::string policy = s.value("policy", std::string("proportional"));
      require(policy == "proportional" || policy == "capped", ErrorKind::FormatError,
              "scratch.policy must be proportional or capped");
      c.scratch_policy.mode = policy == "capped" ? BudgetPolicy::Mode::Capped : BudgetPolicy::Mode::Proportional;
      c.scratch_policy.cap = s.value("cap", c.scratch_policy.cap);
    }
    c.seeds = j.value("seeds", c.seeds);
    c.lambda = j.value("lambda", c.lambda);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.momentum = j.value("momentum", c.momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.augment = j.value("augment", c.augment);
    const std::string scope = j.value("mask_scope", std::string("global"));
    require(scope == "global" || scope == "layer", ErrorKind::FormatError, "mask_scope must be global or layer");
    c.mask_scope = scope == "global" ? MaskScope::Global : MaskScope::PerLayer;
    c.recalibrate_bn = j.value("recalibrate_bn", c.recalibrate_bn);
    c.guided = j.value("guided", c.guided);
    if (j.contains("transfer_target") && !j.at("transfer_target").is_null())
      c.transfer_target = model_from_json(j.at("transfer_target"));
    if (j.contains("lottery")) {
      const json& l = j.at("lottery");
      check_keys(l, {"mode", "ratios", "rounds", "lr", "structured"}, "lottery");
      const std::string mode = l.value("mode", std::string("oneshot"));
      require(mode == "oneshot" || mode == "iterative", ErrorKind::FormatError,
              "lottery.mode must be oneshot or iterative");
      c.lottery.iterative = mode == "iterative";
      c.lottery.ratios = l.value("ratios", c.lottery.ratios);
      c.lottery.rounds = l.value("rounds", c.lottery.rounds);
      if (l.contains("lr") && !l.at("lr").is_null()) c.lottery.lr = l.at("lr").get<double>();
      c.lottery.structured = l.value("structured", c.lottery.structured);
    }
    return c;
  } catch (const json::exception& e) {
    fail(ErrorKind::FormatError, std::string("malformed config: ") + e.what());
  }
}

std::string ExperimentConfig::hash() const {
  const std::string text = to_json().dump();
  return hex64(fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size())));
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorKind::FormatError, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  ExperimentConfig c = ExperimentConfig::from_json(j);
  c.validate();
  return c;
}

std::string_view to_string(Arm arm) {
  switch (arm) {
    case Arm::Unpruned: return "Unpruned";
    case Arm::FineTuned: return "Fine-tuned";
    case Arm::ScratchE: return "Scratch-E";
    case Arm::ScratchB: return "Scratch-B";
    case Arm::Uniform: return "Uniform";
    case Arm::Guided: return "Guided";
    case Arm::Transferred: return "Transferred";
    case Arm::Ticket: return "Ticket";
    case Arm::RandomInit: return "RandomInit";
  }
  return "?";
}

Arm arm_from_string(std::string_view name) {
  for (Arm a : {Arm::Unpruned, Arm::FineTuned, Arm::ScratchE, Arm::ScratchB, Arm::Uniform, Arm::Guided,
                Arm::Transferred, Arm::Ticket, Arm::RandomInit})
    if (to_string(a) == name) return a;
  fail(ErrorKind::InvalidArgument, "unknown arm '" + std::string(name) + "'");
}

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd out;
  if (values.empty()) return out;
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

std::vector<ArmSummary> ExperimentReport::summaries() const {
  std::vector<ArmSummary> out;
  for (const ReportRow& row : rows) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const ArmSummary& s) { return s.experiment == row.experiment && s.arm == row.arm; });
    if (it == out.end()) {
      out.push_back(ArmSummary{row.experiment, row.arm, {}, {}, 0.0, 0.0});
      it = out.end() - 1;
    }
    it->values.push_back(row.accuracy);
    it->flops += static_cast<double>(row.flops);
    it->params += static_cast<double>(row.params);
  }
  for (ArmSummary& s : out) {
    s.accuracy = mean_std(s.values);
    s.flops /= static_cast<double>(s.values.size());
    s.params /= static_cast<double>(s.values.size());
  }
  return out;
}

std::optional<ArmSummary> ExperimentReport::summary(std::string_view experiment, Arm arm) const {
  for (ArmSummary& s : summaries())
    if (s.experiment == experiment && s.arm == arm) return std::move(s);
  return std::nullopt;
}

std::string ExperimentReport::to_csv() const {
  std::ostringstream out;
  out << "experiment,arm,seed,accuracy,flops,params,epochs,lr_schedule,config_hash\n";
  for (const ReportRow& r : rows)
    out << r.experiment << ',' << to_string(r.arm) << ',' << r.seed << ',' << std::fixed << std::setprecision(4)
        << r.accuracy << std::defaultfloat << ',' << r.flops << ',' << r.params << ',' << r.epochs << ','
        << r.lr_schedule << ',' << config_hash << '\n';
  return out.str();
}

json ExperimentReport::to_json() const {
  json j;
  j["name"] = name;
  j["config_hash"] = config_hash;
  json rs = json::array();
  for (const ReportRow& r : rows)
    rs.push_back({{"experiment", r.experiment}, {"arm", to_string(r.arm)}, {"seed", r.seed}, {"accuracy", r.accuracy},
                  {"flops", r.flops}, {"params", r.params}, {"epochs", r.epochs}, {"lr_schedule", r.lr_schedule}});
  j["rows"] = rs;
  json ss = json::array();
  for (const ArmSummary& s : summaries())
    ss.push_back({{"experiment", s.experiment}, {"arm", to_string(s.arm)}, {"values", s.values},
                  {"mean", s.accuracy.mean}, {"std", s.accuracy.std ? json(*s.accuracy.std) : json(nullptr)},
                  {"flops", s.flops}, {"params", s.params}});
  j["summaries"] = ss;
  json fs = json::array();
  for (const SeedFailure& f : failures) fs.push_back({{"seed", f.seed}, {"error", f.message}});
  j["failures"] = fs;
  return j;
}

void ExperimentReport::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / (name + ".csv"));
  require(static_cast<bool>(csv), ErrorKind::Io, "cannot write report into " + dir.string());
  csv << to_csv();
  std::ofstream js(dir / (name + ".json"));
  js << to_json().dump(2) << '\n';
}

double matched_uniform_ratio(const ArchitectureSpec& spec, std::int64_t target_params) {
  double best = 0.0;
  std::int64_t best_gap = -1;
  for (int i = 0; i < 1000; ++i) {
    const double u = i / 1000.0;
    const std::int64_t gap = std::llabs(count_params(uniform_channel(spec, u)).total_params - target_params);
    if (best_gap < 0 || gap < best_gap) {
      best_gap = gap;
      best = u;
    }
  }
  return best;
}

namespace {

struct Runner {
  const ExperimentConfig& cfg;
  const DatasetSplit& data;
  const Logger& log;
  ExperimentReport& report;

  TrainConfig train_config(const TrainBudget& budget, std::uint64_t seed) const {
    TrainConfig tc;
    tc.budget = budget;
    tc.batch_size = cfg.batch_size;
    tc.momentum = cfg.momentum;
    tc.weight_decay = cfg.weight_decay;
    tc.augment = cfg.augment;
    tc.seed = seed;
    return tc;
  }

  double train_eval(Network<float>& net, TrainConfig tc) const {
    Trainer t(net, data.train, std::move(tc));
    t.run();
    return evaluate(net, data.test);
  }

  ReportRow row(const std::string& experiment, Arm arm, std::uint64_t seed, double accuracy,
                const ArchitectureSpec& spec, const PruneMask* mask, const TrainBudget& budget) const {
    const CostReport cost = count_flops(spec, mask);
    ReportRow r{experiment, arm, seed, accuracy, cost.total_flops, cost.total_params, budget.epochs,
                budget.schedule_string()};
    if (log) {
      std::ostringstream msg;
      msg << "seed " << seed << " " << experiment << " " << to_string(arm) << " acc " << std::fixed
          << std::setprecision(2) << accuracy << "%";
      log(msg.str());
    }
    return r;
  }

  /// Trains from `init` (dense or masked) with `budget` and records the row.
  ReportRow train_arm(Network<float> net, const std::string& experiment, Arm arm, std::uint64_t seed,
                      std::uint64_t stream, const TrainBudget& budget, const std::optional<PruneMask>& mask) const {
    TrainConfig tc = train_config(budget, derive_seed(seed, stream));
    tc.mask = mask;
    const ArchitectureSpec spec = net.spec();
    const double acc = train_eval(net, std::move(tc));
    return row(experiment, arm, seed, acc, spec, mask ? &*mask : nullptr, budget);
  }

  template <typename F>
  void per_seed(F&& body) {
    for (std::uint64_t seed : cfg.seeds) {
      std::vector<ReportRow> rows;
      try {
        body(seed, rows);
        report.rows.insert(report.rows.end(), rows.begin(), rows.end());
      } catch (const std::exception& e) {
        report.failures.push_back(SeedFailure{seed, e.what()});
        if (log) log("seed " + std::to_string(seed) + " failed: " + e.what());
      }
    }
  }
};

SparsityPattern mean_pattern(const std::vector<PruneMask>& masks, const ArchitectureSpec& spec) {
  SparsityPattern out = analyze_kernel_pattern(masks.front(), spec);
  for (std::size_t m = 1; m < masks.size(); ++m) {
    const SparsityPattern p = analyze_kernel_pattern(masks[m], spec);
    for (std::size_t s = 0; s < out.stages.size(); ++s)
      for (std::size_t i = 0; i < 9; ++i) out.stages[s][i] += p.stages[s][i];
  }
  for (auto& grid : out.stages)
    for (double& v : grid) v /= static_cast<double>(masks.size());
  return out;
}

ExperimentReport new_report(const ExperimentConfig& cfg) {
  ExperimentReport report;
  report.name = cfg.name;
  report.config_hash = cfg.hash();
  return report;
}

}  // namespace

ExperimentReport run_pipeline(const ExperimentConfig& cfg, const Logger& log) {
  cfg.validate();
  ExperimentReport report = new_report(cfg);
  const DatasetSplit data = cfg.data.load();
  const ArchitectureSpec spec = cfg.model.build(cfg.data.num_classes());
  const double large_flops = static_cast<double>(count_flops(spec).total_flops);
  const TrainBudget ft_budget = finetune_budget(cfg.budget, cfg.finetune_epochs);
  const TrainBudget scratch_e = scratch_budget(cfg.budget, 1.0, 1.0, cfg.scratch_policy, ScratchKind::E);
  Runner run{cfg, data, log, report};

  std::vector<std::vector<PrunedRun>> keep_runs(cfg.ratios.size());
  std::vector<std::vector<PruneMask>> masks(cfg.ratios.size());

  run.per_seed([&](std::uint64_t seed, std::vector<ReportRow>& rows) {
    Rng init(derive_seed(seed, 1));
    Network<float> large = build_network<float>(spec, init);
    TrainConfig tc = run.train_config(cfg.budget, derive_seed(seed, 2));
    if (cfg.method == Method::Slimming) tc.slimming_lambda = cfg.lambda;
    const double base_acc = run.train_eval(large, tc);
    rows.push_back(run.row("baseline", Arm::Unpruned, seed, base_acc, spec, nullptr, cfg.budget));

    std::vector<PrunedRun> seed_keeps(cfg.ratios.size());
    std::vector<PruneMask> seed_masks(cfg.ratios.size());
    for (std::size_t ri = 0; ri < cfg.ratios.size(); ++ri) {
      const double r = cfg.ratios[ri];
      const std::string tag = std::string(to_string(cfg.method)) + "-r" + ratio_tag(r);
      const std::uint64_t k = ri * 16;
      auto scratch_init = [&](const ArchitectureSpec& s) {
        Rng rng(derive_seed(seed, 100 + k));
        return build_network<float>(s, rng);
      };

      if (structured(cfg.method)) {
        ChannelKeepSet keep;
        Network<float> source;
        if (cfg.method == Method::SFP) {
          Rng sfp_init(derive_seed(seed, 1));
          source = build_network<float>(spec, sfp_init);
          TrainConfig sfp_tc = run.train_config(cfg.budget, derive_seed(seed, 2));
          sfp_tc.sfp = SFPConfig{r};
          run.train_eval(source, sfp_tc);
          keep = l1_keep_set(source, r);
        } else {
          keep = cfg.method == Method::L1 ? l1_keep_set(large, r) : slimming_keep_set(large, r);
        }
        SurgeryResult<float> cut = surgery(cfg.method == Method::SFP ? source : large, keep);
        if (cfg.recalibrate_bn) recalibrate_bn(cut.net, data.train);
        const double pruned_flops = static_cast<double>(count_flops(cut.spec).total_flops);
        rows.push_back(run.train_arm(std::move(cut.net), tag, Arm::FineTuned, seed, 400 + k, ft_budget, {}));
        rows.push_back(run.train_arm(scratch_init(cut.spec), tag, Arm::ScratchE, seed, 200 + k, scratch_e, {}));
        const TrainBudget b = scratch_budget(cfg.budget, large_flops, pruned_flops, cfg.scratch_policy);
        rows.push_back(run.train_arm(scratch_init(cut.spec), tag, Arm::ScratchB, seed, 300 + k, b, {}));
        seed_keeps[ri] = PrunedRun{spec, keep};
      } else if (cfg.method == Method::Magnitude) {
        PruneMask mask = magnitude_mask(conv_weights(large), r, cfg.mask_scope);
        const double pruned_flops = static_cast<double>(count_flops(spec, &mask).total_flops);
        rows.push_back(run.train_arm(large, tag, Arm::FineTuned, seed, 400 + k, ft_budget, mask));
        Rng sparse_rng(derive_seed(seed, 100 + k));
        rows.push_back(run.train_arm(sparse_reinit<float>(spec, mask, sparse_rng), tag, Arm::ScratchE, seed, 200 + k,
                                     scratch_e, mask));
        const TrainBudget b = scratch_budget(cfg.budget, large_flops, pruned_flops, cfg.scratch_policy);
        Rng sparse_rng_b(derive_seed(seed, 100 + k));
        rows.push_back(run.train_arm(sparse_reinit<float>(spec, mask, sparse_rng_b), tag, Arm::ScratchB, seed,
                                     300 + k, b, mask));
        seed_masks[ri] = std::move(mask);
      } else if (cfg.method == Method::UniformChannel) {
        rows.push_back(run.train_arm(scratch_init(uniform_channel(spec, r)), tag, Arm::Uniform, seed, 500 + k,
                                     scratch_e, {}));
      } else {
        Rng mask_rng(derive_seed(seed, 500 + k));
        PruneMask mask = uniform_sparsify(spec, 1.0 - r, mask_rng);
        Rng sparse_rng(derive_seed(seed, 100 + k));
        rows.push_back(run.train_arm(sparse_reinit<float>(spec, mask, sparse_rng), tag, Arm::Uniform, seed, 500 + k,
                                     scratch_e, mask));
      }
    }
    for (std::size_t ri = 0; ri < cfg.ratios.size(); ++ri) {
      if (structured(cfg.method)) keep_runs[ri].push_back(seed_keeps[ri]);
      if (cfg.method == Method::Magnitude) masks[ri].push_back(seed_masks[ri]);
    }
  });

  const bool can_guide = structured(cfg.method) || cfg.method == Method::Magnitude;
  if (!cfg.guided || !can_guide) return report;
  const std::optional<ArchitectureSpec> target =
      cfg.transfer_target ? std::optional(cfg.transfer_target->build(cfg.data.num_classes())) : std::nullopt;

  run.per_seed([&](std::uint64_t seed, std::vector<ReportRow>& rows) {
    for (std::size_t ri = 0; ri < cfg.ratios.size(); ++ri) {
      const std::string tag = std::string(to_string(cfg.method)) + "-r" + ratio_tag(cfg.ratios[ri]);
      const std::uint64_t k = ri * 16;
      if (structured(cfg.method)) {
        if (keep_runs[ri].empty()) continue;
        const StageWidthSummary summary = extract_stage_widths(keep_runs[ri]);
        Rng g(derive_seed(seed, 600 + k));
        rows.push_back(run.train_arm(build_network<float>(guided_architecture(summary, spec), g), tag, Arm::Guided,
                                     seed, 610 + k, scratch_e, {}));
        if (target) {
          Rng t(derive_seed(seed, 700 + k));
          rows.push_back(run.train_arm(build_network<float>(guided_architecture(summary, *target), t), tag,
                                       Arm::Transferred, seed, 710 + k, scratch_e, {}));
        }
      } else {
        if (masks[ri].empty()) continue;
        const SparsityPattern pattern = mean_pattern(masks[ri], spec);
        PruneMask gm = guided_sparsity(pattern, spec, derive_seed(seed, 600 + k));
        Rng g(derive_seed(seed, 620 + k));
        rows.push_back(run.train_arm(sparse_reinit<float>(spec, gm, g), tag, Arm::Guided, seed, 610 + k, scratch_e, gm));
        if (target) {
          PruneMask tm = guided_sparsity(pattern, *target, derive_seed(seed, 700 + k));
          Rng t(derive_seed(seed, 720 + k));
          rows.push_back(run.train_arm(sparse_reinit<float>(*target, tm, t), tag, Arm::Transferred, seed, 710 + k,
                                       scratch_e, tm));
        }
      }
    }
  });
  return report;
}

ExperimentReport run_architecture_study(const ExperimentConfig& cfg, const Logger& log) {
  cfg.validate();
  require(cfg.method == Method::Slimming, ErrorKind::InvalidArgument, "the architecture study uses slimming");
  ExperimentReport report = new_report(cfg);
  const DatasetSplit data = cfg.data.load();
  const ArchitectureSpec spec = cfg.model.build(cfg.data.num_classes());
  const TrainBudget scratch_e = scratch_budget(cfg.budget, 1.0, 1.0, cfg.scratch_policy, ScratchKind::E);
  Runner run{cfg, data, log, report};

  run.per_seed([&](std::uint64_t seed, std::vector<ReportRow>& rows) {
    Rng init(derive_seed(seed, 1));
    Network<float> large = build_network<float>(spec, init);
    TrainConfig tc = run.train_config(cfg.budget, derive_seed(seed, 2));
    tc.slimming_lambda = cfg.lambda;
    const double base_acc = run.train_eval(large, tc);
    rows.push_back(run.row("baseline", Arm::Unpruned, seed, base_acc, spec, nullptr, cfg.budget));
    for (std::size_t ri = 0; ri < cfg.ratios.size(); ++ri) {
      const std::string tag = "archstudy-r" + ratio_tag(cfg.ratios[ri]);
      const std::uint64_t k = ri * 16;
      const ArchitectureSpec pruned = surgery(large, slimming_keep_set(large, cfg.ratios[ri])).spec;
      Rng a(derive_seed(seed, 100 + k));
      rows.push_back(run.train_arm(build_network<float>(pruned, a), tag, Arm::ScratchE, seed, 200 + k, scratch_e, {}));
      const double u = matched_uniform_ratio(spec, count_params(pruned).total_params);
      Rng b(derive_seed(seed, 500 + k));
      rows.push_back(
          run.train_arm(build_network<float>(uniform_channel(spec, u), b), tag, Arm::Uniform, seed, 510 + k, scratch_e, {}));
    }
  });
  return report;
}

ExperimentReport run_lottery(const ExperimentConfig& cfg, const Logger& log) {
  cfg.validate();
  ExperimentReport report = new_report(cfg);
  const DatasetSplit data = cfg.data.load();
  const ArchitectureSpec spec = cfg.model.build(cfg.data.num_classes());
  TrainBudget budget = cfg.budget;
  if (cfg.lottery.lr) budget.lr = *cfg.lottery.lr;
  Runner run{cfg, data, log, report};

  run.per_seed([&](std::uint64_t seed, std::vector<ReportRow>& rows) {
    Rng init(derive_seed(seed, 1));
    Network<float> large = build_network<float>(spec, init);
    const TicketState<float> start = make_ticket(large);
    const double base_acc = run.train_eval(large, run.train_config(budget, derive_seed(seed, 2)));
    rows.push_back(run.row("lottery", Arm::Unpruned, seed, base_acc, spec, nullptr, budget));

    auto ticket_net = [&](const ParamSnapshot<float>& theta0, const PruneMask& mask) {
      Network<float> net(spec);
      reset_to_ticket(net, theta0, mask);
      return net;
    };
    auto random_net = [&](const PruneMask& mask, std::uint64_t stream) {
      Rng rng(derive_seed(seed, stream));
      return sparse_reinit<float>(spec, mask, rng);
    };

    if (cfg.lottery.structured) {
      for (std::size_t ri = 0; ri < cfg.lottery.ratios.size(); ++ri) {
        const double r = cfg.lottery.ratios[ri];
        const std::string tag = "lottery-l1-p" + ratio_tag(r);
        const std::uint64_t k = ri * 16;
        const ChannelKeepSet keep = l1_keep_set(large, r);
        SurgeryResult<float> cut = surgery(ticket_net(start.theta0, full_mask(spec)), keep);
        rows.push_back(run.train_arm(std::move(cut.net), tag, Arm::Ticket, seed, 800 + k, budget, {}));
        Rng rng(derive_seed(seed, 900 + k));
        rows.push_back(run.train_arm(build_network<float>(cut.spec, rng), tag, Arm::RandomInit, seed, 810 + k, budget, {}));
      }
    } else if (cfg.lottery.iterative) {
      TicketState<float> state = start;
      Network<float> current = large;
      for (int i = 1; i <= cfg.lottery.rounds; ++i) {
        state = lottery_prune_iteration(current, state);
        const std::string tag = "lottery-iter" + std::to_string(i) + "-p" + ratio_tag(1.0 - state.surviving_fraction);
        const std::uint64_t k = static_cast<std::uint64_t>(i) * 16;
        Network<float> ticket = ticket_net(state.theta0, state.mask);
        TrainConfig tc = run.train_config(budget, derive_seed(seed, 800 + k));
        tc.mask = state.mask;
        const double acc = run.train_eval(ticket, tc);
        rows.push_back(run.row(tag, Arm::Ticket, seed, acc, spec, &state.mask, budget));
        current = std::move(ticket);
        rows.push_back(run.train_arm(random_net(state.mask, 900 + k), tag, Arm::RandomInit, seed, 810 + k, budget,
                                     state.mask));
      }
    } else {
      for (std::size_t ri = 0; ri < cfg.lottery.ratios.size(); ++ri) {
        const double r = cfg.lottery.ratios[ri];
        const std::string tag = "lottery-oneshot-p" + ratio_tag(r);
        const std::uint64_t k = ri * 16;
        const PruneMask mask = magnitude_mask(conv_weights(large), r, MaskScope::Global);
        rows.push_back(run.train_arm(ticket_net(start.theta0, mask), tag, Arm::Ticket, seed, 800 + k, budget, mask));
        rows.push_back(run.train_arm(random_net(mask, 900 + k), tag, Arm::RandomInit, seed, 810 + k, budget, mask));
      }
    }
  });
  return report;
}

}  // namespace prunelab
