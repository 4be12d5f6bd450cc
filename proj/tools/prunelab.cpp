#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "prunelab/analysis.hpp"
#include "prunelab/checkpoint.hpp"
#include "prunelab/cost_model.hpp"
#include "prunelab/dataset.hpp"
#include "prunelab/error.hpp"
#include "prunelab/experiment.hpp"
#include "prunelab/lottery.hpp"
#include "prunelab/model_zoo.hpp"
#include "prunelab/trainer.hpp"

namespace fs = std::filesystem;
using namespace prunelab;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string out = ".";
  bool deterministic = false;
};

void add_common(CLI::App* cmd, Common& c, bool need_config) {
  auto* opt = cmd->add_option("--config", c.config, "experiment config (JSON)");
  if (need_config) opt->required()->check(CLI::ExistingFile);
  cmd->add_option("--seeds", c.seeds, "seed list, overrides the config")->delimiter(',');
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_flag("--deterministic", c.deterministic, "reference path (single-threaded, fixed reduction order)");
}

ExperimentConfig config_of(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
  if (!c.seeds.empty()) cfg.seeds = c.seeds;
  cfg.validate();
  return cfg;
}

void log_line(const std::string& line) { std::cerr << line << std::endl; }

TrainConfig train_config(const ExperimentConfig& cfg, const TrainBudget& budget, std::uint64_t seed) {
  TrainConfig tc;
  tc.budget = budget;
  tc.batch_size = cfg.batch_size;
  tc.momentum = cfg.momentum;
  tc.weight_decay = cfg.weight_decay;
  tc.augment = cfg.augment;
  tc.seed = seed;
  return tc;
}

fs::path ensure_dir(const std::string& dir) {
  fs::create_directories(dir);
  return fs::path(dir);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << text;
}

int cmd_train(const Common& c) {
  const ExperimentConfig cfg = config_of(c);
  const DatasetSplit data = cfg.data.load();
  const ArchitectureSpec spec = cfg.model.build(cfg.data.num_classes());
  const fs::path out = ensure_dir(c.out);
  for (std::uint64_t seed : cfg.seeds) {
    Rng init(derive_seed(seed, 1));
    Network<float> net = build_network<float>(spec, init);
    Checkpoint theta0 = make_checkpoint(net);
    put_snapshot(theta0, "theta0/", snapshot_init(net));
    TrainConfig tc = train_config(cfg, cfg.budget, derive_seed(seed, 2));
    if (cfg.method == Method::Slimming) tc.slimming_lambda = cfg.lambda;
    Trainer trainer(net, data.train, tc);
    while (!trainer.done()) {
      trainer.run_epoch();
      log_line("seed " + std::to_string(seed) + " epoch " + std::to_string(trainer.epoch()) + " test " +
               std::to_string(evaluate(net, data.test)));
    }
    Checkpoint ckpt = trainer.checkpoint();
    for (const NamedTensor& t : theta0.tensors)
      if (t.name.rfind("theta0/", 0) == 0) ckpt.put_tensor(t.name, t.tensor);
    ckpt.extra["seed"] = seed;
    ckpt.extra["accuracy"] = evaluate(net, data.test);
    const fs::path path = out / ("large-seed" + std::to_string(seed) + ".prlb");
    save_checkpoint(path, ckpt);
    std::cout << path.string() << ',' << ckpt.extra["accuracy"].get<double>() << '\n';
  }
  return 0;
}

int cmd_prune(const std::string& in, const std::string& method, double ratio, const std::string& scope,
              const std::string& out_path) {
  const Checkpoint src = load_checkpoint(in);
  const Network<float> net = network_from(src);
  Checkpoint out;
  const Method m = method_from_string(method);
  if (m == Method::L1 || m == Method::Slimming || m == Method::SFP) {
    const ChannelKeepSet keep = m == Method::Slimming ? slimming_keep_set(net, ratio) : l1_keep_set(net, ratio);
    SurgeryResult<float> cut = surgery(net, keep);
    out = make_checkpoint(cut.net);
    json ks = json::object();
    for (const auto& [layer, kept] : keep) ks[std::to_string(layer)] = kept;
    out.extra["keep"] = ks;
    out.extra["source_spec"] = to_json(net.spec());
  } else if (m == Method::Magnitude) {
    PruneMask mask = magnitude_mask(conv_weights(net), ratio, scope == "layer" ? MaskScope::PerLayer : MaskScope::Global);
    Network<float> masked = net;
    apply_mask(masked, mask);
    out = make_checkpoint(masked);
    out.put_mask("prune_mask", std::move(mask));
  } else {
    fail(ErrorKind::InvalidArgument, "prune supports l1, slimming, sfp and magnitude");
  }
  out.extra["large_flops"] = count_flops(net.spec()).total_flops;
  out.extra["method"] = method;
  out.extra["ratio"] = ratio;
  save_checkpoint(out_path, out);
  const PruneMask* mask = out.find_mask("prune_mask") ? &out.find_mask("prune_mask")->mask : nullptr;
  const CostReport cost = count_flops(out.spec, mask);
  std::cout << out_path << ",flops=" << cost.total_flops << ",params=" << cost.total_params << '\n';
  return 0;
}

int cmd_finetune_or_scratch(const Common& c, const std::string& in, bool scratch, const std::string& kind) {
  const ExperimentConfig cfg = config_of(c);
  const DatasetSplit data = cfg.data.load();
  const Checkpoint src = load_checkpoint(in);
  const fs::path out = ensure_dir(c.out);
  std::optional<PruneMask> mask;
  if (const NamedMask* m = src.find_mask("prune_mask")) mask = m->mask;
  const ArchitectureSpec spec = src.spec;
  TrainBudget budget = finetune_budget(cfg.budget, cfg.finetune_epochs);
  if (scratch) {
    const double large = src.extra.value("large_flops", 0.0);
    const double pruned = static_cast<double>(count_flops(spec, mask ? &*mask : nullptr).total_flops);
    budget = kind == "E" ? scratch_budget(cfg.budget, 1.0, 1.0, cfg.scratch_policy, ScratchKind::E)
                         : scratch_budget(cfg.budget, large > 0 ? large : pruned, pruned, cfg.scratch_policy);
  }
  for (std::uint64_t seed : cfg.seeds) {
    Network<float> net;
    if (!scratch) {
      net = network_from(src);
    } else {
      Rng rng(derive_seed(seed, 100));
      net = mask ? sparse_reinit<float>(spec, *mask, rng) : build_network<float>(spec, rng);
    }
    TrainConfig tc = train_config(cfg, budget, derive_seed(seed, scratch ? 200 : 400));
    tc.mask = mask;
    Trainer trainer(net, data.train, tc);
    trainer.run();
    const double acc = evaluate(net, data.test);
    Checkpoint ckpt = trainer.checkpoint();
    ckpt.extra["accuracy"] = acc;
    const std::string label = scratch ? "scratch-" + kind : "finetune";
    const fs::path path = out / (label + "-seed" + std::to_string(seed) + ".prlb");
    save_checkpoint(path, ckpt);
    std::cout << path.string() << ',' << acc << ',' << budget.epochs << ',' << budget.schedule_string() << '\n';
  }
  return 0;
}

int cmd_analyze(const std::string& in, int bins, bool exclude_zeros) {
  const Checkpoint ckpt = load_checkpoint(in);
  const Network<float> net = network_from(ckpt);
  json out;
  const ArchitectureSpec spec = net.spec();
  out["widths"] = prunable_widths(spec);
  const CostReport cost = count_flops(spec, ckpt.find_mask("prune_mask") ? &ckpt.find_mask("prune_mask")->mask : nullptr);
  out["flops"] = cost.total_flops;
  out["params"] = cost.total_params;
  if (const NamedMask* m = ckpt.find_mask("prune_mask")) {
    json stages = json::array();
    for (const auto& grid : analyze_kernel_pattern(m->mask, spec).stages) stages.push_back(grid);
    out["kernel_pattern"] = stages;
    out["density"] = m->mask.density();
  }
  json hist = json::array();
  for (const WeightHistogram& h : weight_histogram(net, bins, exclude_zeros))
    hist.push_back({{"stage", h.stage}, {"lo", h.lo}, {"hi", h.hi}, {"counts", h.counts}});
  out["histograms"] = hist;
  std::cout << out.dump(2) << '\n';
  return 0;
}

int cmd_report(const Common& c, const std::string& study, bool cost_only) {
  const ExperimentConfig cfg = config_of(c);
  if (cost_only) {
    std::cout << count_flops(cfg.model.build(cfg.data.num_classes())).to_csv();
    return 0;
  }
  const ExperimentReport report =
      study == "architecture" ? run_architecture_study(cfg, log_line) : run_pipeline(cfg, log_line);
  report.write(ensure_dir(c.out));
  std::cout << report.to_csv();
  return report.failures.empty() ? 0 : 3;
}

int cmd_lottery(const Common& c) {
  const ExperimentConfig cfg = config_of(c);
  const ExperimentReport report = run_lottery(cfg, log_line);
  report.write(ensure_dir(c.out));
  std::cout << report.to_csv();
  return report.failures.empty() ? 0 : 3;
}

int cmd_dataset_gen(const SyntheticSpec& spec, const std::string& out_dir) {
  const fs::path out = ensure_dir(out_dir);
  const std::vector<std::uint8_t> train = synthetic_records(spec, spec.train_samples, 1);
  const std::size_t records = train.size() / kRecordBytes;
  for (std::size_t b = 0; b < 5; ++b) {
    const std::size_t lo = records * b / 5, hi = records * (b + 1) / 5;
    std::ofstream f(out / ("data_batch_" + std::to_string(b + 1) + ".bin"), std::ios::binary);
    f.write(reinterpret_cast<const char*>(train.data() + lo * kRecordBytes),
            static_cast<std::streamsize>((hi - lo) * kRecordBytes));
  }
  const std::vector<std::uint8_t> test = synthetic_records(spec, spec.test_samples, 2);
  std::ofstream f(out / "test_batch.bin", std::ios::binary);
  f.write(reinterpret_cast<const char*>(test.data()), static_cast<std::streamsize>(test.size()));
  std::cout << out.string() << ',' << records << ',' << test.size() / kRecordBytes << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prunelab: train, prune and compare small convolutional networks"};
  app.require_subcommand(1);

  Common train_c, ft_c, scratch_c, lottery_c, report_c;
  std::string ckpt_in, prune_out = "pruned.prlb", method = "l1", scope = "global", kind = "B", study = "pipeline";
  double ratio = 0.5;
  int bins = 41;
  bool exclude_zeros = false, cost_only = false;
  SyntheticSpec gen;
  std::string gen_out = "data";

  auto* train = app.add_subcommand("train", "train the large model and save checkpoints");
  add_common(train, train_c, false);

  auto* prune = app.add_subcommand("prune", "prune a trained checkpoint");
  prune->add_option("--checkpoint", ckpt_in, "trained checkpoint")->required()->check(CLI::ExistingFile);
  prune->add_option("--method", method, "l1 | slimming | sfp | magnitude");
  prune->add_option("--ratio", ratio, "prune ratio");
  prune->add_option("--scope", scope, "magnitude scope: global | layer");
  prune->add_option("--out", prune_out, "output checkpoint");

  auto* finetune = app.add_subcommand("finetune", "fine-tune a pruned checkpoint");
  add_common(finetune, ft_c, false);
  finetune->add_option("--checkpoint", ckpt_in, "pruned checkpoint")->required()->check(CLI::ExistingFile);

  auto* scratch = app.add_subcommand("scratch", "train a pruned architecture from scratch");
  add_common(scratch, scratch_c, false);
  scratch->add_option("--checkpoint", ckpt_in, "pruned checkpoint")->required()->check(CLI::ExistingFile);
  scratch->add_option("--kind", kind, "E or B")->check(CLI::IsMember({"E", "B"}));

  auto* lottery = app.add_subcommand("lottery", "winning ticket vs random re-init");
  add_common(lottery, lottery_c, true);

  auto* analyze = app.add_subcommand("analyze", "widths, kernel pattern and weight histograms of a checkpoint");
  analyze->add_option("--checkpoint", ckpt_in, "checkpoint")->required()->check(CLI::ExistingFile);
  analyze->add_option("--bins", bins, "histogram bins");
  analyze->add_flag("--exclude-zeros", exclude_zeros, "leave exact zeros out of the histograms");

  auto* report = app.add_subcommand("report", "run the comparison protocol and write CSV/JSON");
  add_common(report, report_c, false);
  report->add_option("--study", study, "pipeline | architecture")->check(CLI::IsMember({"pipeline", "architecture"}));
  report->add_flag("--cost", cost_only, "print per-layer FLOPs and params of the configured model");

  auto* dataset = app.add_subcommand("dataset", "dataset utilities");
  dataset->require_subcommand(1);
  auto* gen_cmd = dataset->add_subcommand("gen", "write a synthetic dataset in CIFAR-10 binary layout");
  gen_cmd->add_option("--classes", gen.classes);
  gen_cmd->add_option("--train", gen.train_samples);
  gen_cmd->add_option("--test", gen.test_samples);
  gen_cmd->add_option("--seed", gen.seed);
  gen_cmd->add_option("--noise", gen.noise);
  gen_cmd->add_option("--out", gen_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(train_c);
    if (*prune) return cmd_prune(ckpt_in, method, ratio, scope, prune_out);
    if (*finetune) return cmd_finetune_or_scratch(ft_c, ckpt_in, false, kind);
    if (*scratch) return cmd_finetune_or_scratch(scratch_c, ckpt_in, true, kind);
    if (*lottery) return cmd_lottery(lottery_c);
    if (*analyze) return cmd_analyze(ckpt_in, bins, exclude_zeros);
    if (*report) return cmd_report(report_c, study, cost_only);
    if (*gen_cmd) return cmd_dataset_gen(gen, gen_out);
  } catch (const Error& e) {
    std::cerr << json{{"error", {{"kind", to_string(e.kind())}, {"message", e.what()}}}}.dump() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"kind", "Internal"}, {"message", e.what()}}}}.dump() << '\n';
    return 1;
  }
  return 0;
}
