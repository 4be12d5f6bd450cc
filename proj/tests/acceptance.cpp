// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "prunelab/analysis.hpp"
#include "prunelab/checkpoint.hpp"
#include "prunelab/cost_model.hpp"
#include "prunelab/experiment.hpp"
#include "prunelab/gradcheck.hpp"
#include "prunelab/lottery.hpp"
#include "prunelab/model_zoo.hpp"
#include "prunelab/trainer.hpp"

using namespace prunelab;

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr int kGradMaxParams = 5000;
constexpr double kGradSeconds = 60.0;
constexpr double kSurgeryTolerance = 1e-5;
constexpr double kSurgerySeconds = 120.0;
constexpr int kSelectionInstances = 200;
constexpr double kScratchMargin = 0.5;
constexpr double kPipelineSeconds = 30.0 * 60.0;
constexpr double kPatternSigmas = 3.0;
constexpr double kParamMatchGap = 0.05;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  std::vector<std::string> warnings;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " FAILED(" << what << ")";
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void progress(const std::string& line) { std::cerr << "    " << line << std::endl; }

template <typename T>
Tensor<T> random_tensor(const Shape& shape, Rng& rng) {
  Tensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(rng.normal());
  return t;
}

double grid_value(Rng& rng) { return 0.25 * static_cast<double>(rng.uniform_int(-4, 4)); }
double random_ratio(Rng& rng) { return static_cast<double>(rng.uniform_int(0, 19)) / 20.0; }

LayerRecord rec(LayerKind kind, int input, int out = 0, int kernel = 0, int stride = 1, int pad = 0) {
  LayerRecord r;
  r.kind = kind;
  r.input = input;
  r.out_channels = out;
  r.kernel = kernel;
  r.stride = stride;
  r.padding = pad;
  return r;
}

// ---------------------------------------------------------------- 1
void gradient_suite(Outcome& out) {
  const auto t0 = Clock::now();
  ArchitectureSpec pooled;
  pooled.name = "conv-bn-avgpool";
  pooled.input_shape = {2, 6, 6};
  pooled.num_classes = 3;
  auto conv = rec(LayerKind::Conv2D, kNetworkInput, 3, 3, 1, 1);
  conv.bias = true;
  auto dense = rec(LayerKind::Dense, 4, 3);
  dense.bias = true;
  pooled.layers = {conv, rec(LayerKind::BatchNorm, 0), rec(LayerKind::ReLU, 1), rec(LayerKind::AvgPool, 2, 0, 2, 2),
                   rec(LayerKind::Flatten, 3), dense, rec(LayerKind::SoftmaxCrossEntropy, 5)};

  struct Case {
    std::string name;
    ArchitectureSpec spec;
    bool slimming;
  };
  const auto vgg = vgg_spec(VggTemplate{"vgg-tiny", {1, 1}, {4, 6}}, {4, 6}, 4, {3, 8, 8});
  const std::vector<Case> cases{{"conv-bn-avgpool", pooled, false},
                                {"vgg-tiny", vgg, false},
                                {"preresnet-8", preresnet_spec(8, {4, 6, 8}, 3, {3, 8, 8}), false},
                                {"vgg-tiny+slimming", vgg, true}};
  std::set<LayerKind> kinds;
  double worst = 0.0;
  std::size_t max_params = 0;
  for (const auto& c : cases) {
    Rng rng(derive_seed(1, kinds.size() + c.spec.layers.size()));
    auto net = build_network<double>(c.spec, rng);
    for (auto& node : net.layers()) {
      kinds.insert(node.kind());
      if (node.kind() == LayerKind::BatchNorm)
        for (auto& g : node.param("gamma").values()) g = (rng.bernoulli(0.5) ? 1.0 : -1.0) * (0.5 + rng.uniform());
    }
    max_params = std::max(max_params, net.parameter_count());
    GradCheckOptions opt;
    if (c.slimming) {
      opt.regularizer.value = [](const Network<double>& n) { return slimming_penalty(n, 0.05); };
      opt.regularizer.add_grad = [](Network<double>& n) { add_slimming_grad(n, 0.05); };
    }
    const auto& in = c.spec.input_shape;
    const auto x = random_tensor<double>(
        {4, static_cast<std::size_t>(in.channels), static_cast<std::size_t>(in.height), static_cast<std::size_t>(in.width)},
        rng);
    std::vector<int> labels(4);
    for (auto& l : labels) l = static_cast<int>(rng.uniform_int(0, c.spec.num_classes - 1));
    const auto report = finite_diff_check(net, x, labels, kGradTolerance, opt);
    worst = std::max(worst, report.worst());
    out.check(report.passed(), c.name);
  }
  const double secs = seconds_since(t0);
  out.check(kinds.size() == 9, "layer kinds covered " + std::to_string(kinds.size()) + "/9");
  out.check(max_params <= static_cast<std::size_t>(kGradMaxParams), "net too large");
  out.check(secs < kGradSeconds, "runtime");
  out.detail << " nets=" << cases.size() << " kinds=" << kinds.size() << "/9 max_params=" << max_params
             << " worst_rel_err=" << worst << " (<" << kGradTolerance << ") time=" << secs << "s";
}

// ---------------------------------------------------------------- 2
template <typename T>
double surgery_error(const ArchitectureSpec& spec, int trials, Rng& rng) {
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    auto big = build_network<T>(spec, rng);
    for (auto& node : big.layers())
      if (node.kind() == LayerKind::BatchNorm) {
        for (auto& v : node.param("gamma").values()) v = static_cast<T>(rng.normal(1.0, 0.3));
        for (auto& v : node.param("beta").values()) v = static_cast<T>(rng.normal(0.0, 0.3));
        for (auto& v : node.param("running_mean").values()) v = static_cast<T>(rng.normal(0.0, 0.3));
        for (auto& v : node.param("running_var").values()) v = static_cast<T>(0.5 + rng.uniform());
      }
    ChannelKeepSet keep;
    for (int layer : prunable_layers(spec)) {
      const int c = spec.layers[static_cast<std::size_t>(layer)].out_channels;
      const double p = rng.uniform();
      std::vector<int> kept;
      for (int i = 0; i < c; ++i)
        if (rng.bernoulli(p)) kept.push_back(i);
      if (kept.empty()) kept.push_back(static_cast<int>(rng.uniform_int(0, c - 1)));
      keep[layer] = kept;
    }
    auto small = surgery(big, keep);
    oracle::zero_pruned_channels(big, keep);
    const auto x = random_tensor<T>({100, 3, 32, 32}, rng);
    const auto a = small.net.predict(x);
    const auto b = big.predict(x);
    for (std::size_t i = 0; i < a.size(); ++i)
      worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return worst;
}

void surgery_equivalence(Outcome& out) {
  const auto t0 = Clock::now();
  Rng rng(2);
  const auto vgg_mini = vgg_spec(vgg_mini_template(), vgg_mini_template().default_widths, 10);
  const auto resnet = preresnet_spec(20, {16, 32, 64}, 10);
  const double vgg = surgery_error<double>(vgg_mini, 20, rng);
  const double res = surgery_error<double>(resnet, 20, rng);
  const double secs = seconds_since(t0);
  out.check(vgg < kSurgeryTolerance, "vgg-mini");
  out.check(res < kSurgeryTolerance, "preresnet-20");
  out.check(secs < kSurgerySeconds, "runtime");
  Rng frng(2);
  const double vgg32 = surgery_error<float>(vgg_mini, 2, frng);
  const double res32 = surgery_error<float>(resnet, 2, frng);
  out.detail << " keep-sets=20+20 inputs=100 float64 max_inf_err vgg-mini=" << vgg << " preresnet-20=" << res << " (<"
             << kSurgeryTolerance << ") time=" << secs << "s; float32 reference (2+2 keep-sets, not gated) vgg-mini="
             << vgg32 << " preresnet-20=" << res32;
}

// ---------------------------------------------------------------- 3
ArchitectureSpec random_small_vgg(Rng& rng) {
  std::vector<int> widths;
  for (int i = 0; i < 3; ++i) widths.push_back(static_cast<int>(rng.uniform_int(1, 12)));
  return vgg_spec(VggTemplate{"sel", {1, 1, 1}, widths}, widths, 4, {3, 8, 8});
}

void grid_weights(Network<double>& net, Rng& rng) {
  for (int layer : conv_layers(net.spec()))
    for (auto& v : net.layer(layer).param("weight").values()) v = grid_value(rng);
}

void selection_oracles(Outcome& out) {
  const auto t0 = Clock::now();
  Rng rng(3);
  int l1 = 0, slim = 0, mag_g = 0, mag_l = 0, sfp = 0, lottery = 0;
  for (int trial = 0; trial < kSelectionInstances; ++trial) {
    {
      const auto co = static_cast<std::size_t>(rng.uniform_int(1, 32));
      Tensor<double> w({co, static_cast<std::size_t>(rng.uniform_int(1, 4)), 3, 3});
      for (auto& v : w.values()) v = grid_value(rng);
      const double r = random_ratio(rng);
      l1 += l1_filter_select(w, r) == oracle::l1_select(w, r);
    }
    {
      std::map<int, std::vector<double>> gammas;
      const int layers = static_cast<int>(rng.uniform_int(1, 6));
      for (int l = 0; l < layers; ++l) {
        std::vector<double> g(static_cast<std::size_t>(rng.uniform_int(1, 16)));
        for (auto& v : g) v = grid_value(rng);
        gammas[3 * l] = g;
      }
      const double r = random_ratio(rng);
      slim += slimming_select(gammas, r) == oracle::slimming_select(gammas, r);
    }
    {
      std::vector<LayerWeights> weights;
      const int layers = static_cast<int>(rng.uniform_int(1, 4));
      for (int l = 0; l < layers; ++l) {
        const auto n = static_cast<std::size_t>(rng.uniform_int(1, 8));
        LayerWeights lw{3 * l, {n, 2, 3, 3}, std::vector<double>(n * 18)};
        for (auto& v : lw.values) v = grid_value(rng);
        weights.push_back(lw);
      }
      const double r = random_ratio(rng);
      std::vector<double> pooled;
      for (const auto& lw : weights) pooled.insert(pooled.end(), lw.values.begin(), lw.values.end());
      const auto want = oracle::magnitude_keep(pooled, std::vector<bool>(pooled.size(), true), r);
      const auto global = magnitude_mask(weights, r, MaskScope::Global);
      bool ok = true;
      std::size_t at = 0;
      for (const auto& lm : global.layers)
        for (auto bit : lm.keep) ok &= (bit != 0) == want[at++];
      mag_g += ok && at == pooled.size();
      const auto local = magnitude_mask(weights, r, MaskScope::PerLayer);
      ok = local.layers.size() == weights.size();
      for (std::size_t l = 0; ok && l < weights.size(); ++l) {
        const auto& v = weights[l].values;
        const auto want_l = oracle::magnitude_keep(v, std::vector<bool>(v.size(), true), r);
        for (std::size_t i = 0; i < v.size(); ++i) ok &= (local.layers[l].keep[i] != 0) == want_l[i];
      }
      mag_l += ok;
    }
    {
      Rng init(derive_seed(3, static_cast<std::uint64_t>(trial)));
      auto net = build_network<double>(random_small_vgg(rng), init);
      grid_weights(net, rng);
      const auto before = net;
      const double r = random_ratio(rng);
      const auto zeroed = soft_filter_prune_epoch(net, SFPConfig{r});
      bool ok = true;
      for (int layer : prunable_layers(net.spec())) {
        const auto& w0 = before.layer(layer).param("weight");
        const auto& w = net.layer(layer).param("weight");
        const auto kept = oracle::l1_select(w0, r);
        std::vector<bool> alive(w.dim(0), false);
        for (int c : kept) alive[static_cast<std::size_t>(c)] = true;
        std::vector<int> expect;
        for (std::size_t c = 0; c < alive.size(); ++c)
          if (!alive[c]) expect.push_back(static_cast<int>(c));
        auto it = zeroed.find(layer);
        ok &= (it == zeroed.end() ? std::vector<int>{} : it->second) == expect;
        const std::size_t per = w.size() / w.dim(0);
        for (std::size_t i = 0; i < w.size(); ++i) ok &= w[i] == (alive[i / per] ? w0[i] : 0.0);
      }
      sfp += ok;
    }
    {
      Rng init(derive_seed(4, static_cast<std::uint64_t>(trial)));
      auto net = build_network<double>(random_small_vgg(rng), init);
      auto state = make_ticket(net);
      grid_weights(net, rng);
      const double dead = 0.5 * rng.uniform();
      std::vector<double> pooled;
      std::vector<bool> alive;
      for (auto& lm : state.mask.layers) {
        const auto& w = net.layer(lm.layer).param("weight");
        for (std::size_t i = 0; i < w.size(); ++i) {
          lm.keep[i] = rng.bernoulli(dead) ? 0 : 1;
          pooled.push_back(w[i]);
          alive.push_back(lm.keep[i] != 0);
        }
      }
      const auto want = oracle::magnitude_keep(pooled, alive, kLotteryPruneFraction);
      const auto next = lottery_prune_iteration(net, state);
      bool ok = true;
      std::size_t at = 0;
      for (const auto& lm : next.mask.layers)
        for (auto bit : lm.keep) ok &= (bit != 0) == want[at++];
      lottery += ok && next.surviving_fraction == next.mask.density();
    }
  }
  const int n = kSelectionInstances;
  for (auto [name, count] : {std::pair{"l1", l1}, {"slimming", slim}, {"magnitude-global", mag_g},
                             {"magnitude-layer", mag_l}, {"sfp", sfp}, {"lottery", lottery}}) {
    out.check(count == n, name);
    out.detail << " " << name << "=" << count << "/" << n;
  }
  out.detail << " time=" << seconds_since(t0) << "s";
}

// ---------------------------------------------------------------- 4
void budget_rules(Outcome& out) {
  const auto base = cifar_standard_budget();
  const auto prop = scratch_budget(base, 2.5, 1.0, BudgetPolicy{});
  out.check(base.epochs == 160 && base.milestones == std::vector<int>{80, 120}, "base schedule");
  out.check(prop.epochs == 400 && prop.milestones == std::vector<int>{200, 300}, "proportional");
  TrainBudget imagenet;
  imagenet.epochs = 90;
  imagenet.milestones = {30, 60};
  const auto capped = scratch_budget(imagenet, 3.2, 1.0, BudgetPolicy{BudgetPolicy::Mode::Capped, 2.0});
  out.check(capped.epochs == 180, "capped");
  const auto e = scratch_budget(base, 2.5, 1.0, BudgetPolicy{}, ScratchKind::E);
  out.check(e.epochs == 160 && e.milestones == base.milestones, "scratch-e");
  out.detail << " proportional 160->" << prop.epochs << " milestones [80,120]->[" << prop.milestones[0] << ","
             << prop.milestones[1] << "] capped 90->" << capped.epochs << " (ratio 3.2)";
}

// ---------------------------------------------------------------- 5
bool zero_set_preserved(const Network<float>& net, const PruneMask& mask, std::size_t& violations) {
  violations = 0;
  for (const auto& lm : mask.layers) {
    const auto& w = net.layer(lm.layer).param("weight");
    for (std::size_t i = 0; i < w.size(); ++i)
      if (!lm.keep[i] && w[i] != 0.0f) ++violations;
  }
  return violations == 0 && count_zero_conv_weights(net) == mask.total() - mask.kept();
}

void mask_invariants(Outcome& out) {
  const auto t0 = Clock::now();
  SyntheticSpec data_spec;
  data_spec.train_samples = 1024;
  data_spec.test_samples = 256;
  const auto data = load_synthetic(data_spec);
  // Conv weight total 291375 = 2331 * 5^3, so three rounds are exact.
  const auto spec = vgg_spec(vgg_mini_template(), {13, 16, 32, 32, 64, 64, 128, 127}, 10);
  TrainConfig five;
  five.budget = desk_standard_budget();
  five.budget.epochs = 5;
  five.budget.milestones = {3};
  five.seed = 5;

  Rng init(5);
  Network<float> net = build_network<float>(spec, init);
  TicketState<float> ticket = make_ticket(net);
  out.check(ticket.mask.total() == 291375, "conv total");
  TrainConfig round = five;
  round.budget.epochs = 1;
  round.budget.milestones.clear();
  bool exact = true;
  std::ostringstream fractions;
  double num = 1.0, den = 1.0;
  for (int i = 1; i <= 3; ++i) {
    round.mask = ticket.mask;
    round.seed = derive_seed(5, static_cast<std::uint64_t>(i));
    Trainer(net, data.train, round).run();
    ticket = lottery_prune_iteration(net, ticket);
    num *= 4.0;
    den *= 5.0;
    exact &= ticket.surviving_fraction == num / den;
    fractions << (i > 1 ? "," : "") << ticket.surviving_fraction;
    reset_to_ticket(net, ticket.theta0, ticket.mask);
  }
  out.check(exact, "iterative fractions");

  bool restored = true;
  for (const auto& [key, t0v] : ticket.theta0) {
    const auto& t = net.parameter(key).tensor;
    const LayerMask* lm = key.name == "weight" ? ticket.mask.find(key.layer) : nullptr;
    for (std::size_t i = 0; i < t.size(); ++i)
      restored &= (lm && !lm->keep[i]) ? t[i] == 0.0f : t[i] == t0v[i];
  }
  out.check(restored, "reset_to_ticket");

  std::size_t ticket_violations = 0, ft_violations = 0;
  TrainConfig ticket_cfg = five;
  ticket_cfg.mask = ticket.mask;
  Trainer(net, data.train, ticket_cfg).run();
  out.check(zero_set_preserved(net, ticket.mask, ticket_violations), "ticket training zero set");
  const double ticket_acc = evaluate(net, data.test);

  Rng dense_init(6);
  Network<float> dense = build_network<float>(spec, dense_init);
  TrainConfig dense_cfg = five;
  dense_cfg.budget.epochs = 2;
  dense_cfg.budget.milestones.clear();
  Trainer(dense, data.train, dense_cfg).run();
  const PruneMask ft_mask = magnitude_mask(conv_weights(dense), 0.5, MaskScope::Global);
  TrainConfig ft = five;
  ft.budget = finetune_budget(desk_standard_budget(), 5);
  ft.mask = ft_mask;
  Trainer(dense, data.train, ft).run();
  out.check(zero_set_preserved(dense, ft_mask, ft_violations), "masked fine-tune zero set");

  out.detail << " fractions=[" << fractions.str() << "] expected=[0.8,0.64,0.512] exact=" << (exact ? "yes" : "no")
             << " reset_bitwise=" << (restored ? "yes" : "no") << " ticket_violations=" << ticket_violations
             << " finetune_violations=" << ft_violations << " ticket_acc=" << ticket_acc << "% time=" << seconds_since(t0)
             << "s";
}

// ---------------------------------------------------------------- 6
void flops_oracle(Outcome& out) {
  std::vector<ArchitectureSpec> zoo;
  for (const VggTemplate* t : {&vgg_mini_template(), &vgg16_template(), &vgg19_template()})
    zoo.push_back(vgg_spec(*t, t->default_widths, 10));
  for (int depth : {20, 56, 110}) zoo.push_back(preresnet_spec(depth, {16, 32, 64}, 10));
  Rng rng(6);
  int matched = 0, total = 0;
  for (const auto& spec : zoo) {
    const auto flops = count_flops(spec, {3, 32, 32}).total_flops;
    const auto macs = oracle::enumerate_macs(spec);
    ++total;
    matched += flops == macs;
    out.detail << " " << spec.name << "=" << flops;
    const auto mask = uniform_sparsify(spec, 0.5, rng);
    ++total;
    matched += count_flops(spec, {3, 32, 32}, &mask).total_flops == oracle::enumerate_macs(spec, &mask);
  }
  out.check(matched == total, "mismatch");
  out.detail << " matched=" << matched << "/" << total << " (dense and masked)";
}

// ---------------------------------------------------------------- 7
void pipeline_replication(Outcome& out) {
  const auto t0 = Clock::now();
  ExperimentConfig c;
  c.name = "acceptance-desk-l1";
  c.method = Method::L1;
  c.ratios = {0.5};
  c.seeds = {1, 2, 3, 4, 5};
  const auto rep = run_pipeline(c, progress);
  rep.write(".");
  const double secs = seconds_since(t0);
  out.check(rep.failures.empty(), "seed failures");
  const auto base = rep.summary("baseline", Arm::Unpruned);
  out.check(base && base->values.size() == 5, "Unpruned");
  if (base) out.detail << " Unpruned=" << base->accuracy.mean << "±" << base->accuracy.std.value_or(0.0);
  std::optional<ArmSummary> ft, sb;
  for (Arm arm : {Arm::FineTuned, Arm::ScratchE, Arm::ScratchB}) {
    const auto s = rep.summary("l1-r0.50", arm);
    out.check(s && s->values.size() == 5, std::string(to_string(arm)));
    if (!s) continue;
    out.detail << " " << to_string(arm) << "=" << s->accuracy.mean << "±" << s->accuracy.std.value_or(0.0);
    if (arm == Arm::FineTuned) ft = s;
    if (arm == Arm::ScratchB) sb = s;
  }
  out.check(secs < kPipelineSeconds, "runtime");
  out.detail << " time=" << secs << "s";
  if (ft && sb && sb->accuracy.mean < ft->accuracy.mean - kScratchMargin) {
    std::ostringstream w;
    w << "Scratch-B mean " << sb->accuracy.mean << " < Fine-tuned mean " << ft->accuracy.mean << " - " << kScratchMargin;
    out.warnings.push_back(w.str());
  } else if (ft && sb) {
    out.detail << " scratch-b>=fine-tuned-" << kScratchMargin << ": yes";
  }
}

// ---------------------------------------------------------------- 8
void parameter_efficiency(Outcome& out) {
  const auto t0 = Clock::now();
  ExperimentConfig c;
  c.name = "acceptance-archstudy";
  c.method = Method::Slimming;
  c.ratios = {0.3, 0.5, 0.7};
  c.seeds = {1, 2};
  c.data.synthetic.train_samples = 2000;
  c.data.synthetic.test_samples = 500;
  const auto rep = run_architecture_study(c, progress);
  rep.write(".");
  out.check(rep.failures.empty(), "seed failures");
  for (Arm arm : {Arm::ScratchE, Arm::Uniform}) {
    const char* name = arm == Arm::ScratchE ? "slimming" : "uniform";
    double prev = -1.0;
    bool decreasing = true;
    out.detail << " " << name << "=[";
    for (std::size_t i = 0; i < c.ratios.size(); ++i) {
      std::ostringstream tag;
      tag << "archstudy-r";
      char buf[16];
      std::snprintf(buf, sizeof buf, "%.2f", c.ratios[i]);
      tag << buf;
      const auto s = rep.summary(tag.str(), arm);
      out.check(s && s->values.size() == c.seeds.size(), std::string(name) + " " + buf);
      if (!s) continue;
      if (prev >= 0.0) decreasing &= s->params < prev;
      prev = s->params;
      out.detail << (i ? "; " : "") << buf << ": params=" << s->params << " acc=" << s->accuracy.mean;
    }
    out.detail << "]";
    out.check(decreasing, std::string(name) + " params not strictly decreasing");
  }
  double worst_gap = 0.0;
  for (const auto& slim : rep.rows) {
    if (slim.arm != Arm::ScratchE) continue;
    for (const auto& uni : rep.rows)
      if (uni.arm == Arm::Uniform && uni.experiment == slim.experiment && uni.seed == slim.seed)
        worst_gap = std::max(worst_gap, std::abs(static_cast<double>(uni.params - slim.params)) / slim.params);
  }
  out.check(worst_gap <= kParamMatchGap, "uniform params not matched");
  out.detail << " worst_param_gap=" << 100.0 * worst_gap << "% (<=" << 100.0 * kParamMatchGap << "%)";
  out.detail << " time=" << seconds_since(t0) << "s";
}

// ---------------------------------------------------------------- 9
void pattern_analytics(Outcome& out) {
  const auto spec = preresnet_spec(110, {16, 32, 64}, 100);
  SparsityPattern source;
  source.stages = {{0.905, 0.905, 0.909, 0.900, 0.912, 0.899, 0.903, 0.913, 0.902},
                   {0.906, 0.911, 0.906, 0.912, 0.911, 0.915, 0.911, 0.916, 0.912},
                   {0.901, 0.904, 0.900, 0.885, 0.891, 0.889, 0.898, 0.903, 0.902}};
  const auto mask = guided_sparsity(source, spec, 9);
  const auto got = analyze_kernel_pattern(mask, spec);
  double worst_z = 0.0;
  int within = 0;
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t p = 0; p < 9; ++p) {
      const double q = source.stages[s][p];
      const double sigma = std::sqrt(q * (1.0 - q) / static_cast<double>(got.kernels[s]));
      const double z = std::abs(got.stages[s][p] - q) / sigma;
      worst_z = std::max(worst_z, z);
      within += z <= kPatternSigmas;
    }
  out.check(within == 27, "pattern outside 3 sigma");
  out.detail << " preresnet-110 entries_within_3sigma=" << within << "/27 worst_z=" << worst_z << " kernels=["
             << got.kernels[0] << "," << got.kernels[1] << "," << got.kernels[2] << "]";

  Rng rng(9);
  int exact = 0, cases = 0;
  for (const auto& target : {vgg_spec(vgg16_template(), vgg16_template().default_widths, 10),
                             preresnet_spec(56, {16, 32, 64}, 10)}) {
    for (int trial = 0; trial < 10; ++trial) {
      const int n = static_cast<int>(rng.uniform_int(1, 6));
      std::vector<PrunedRun> runs;
      for (int r = 0; r < n; ++r) {
        PrunedRun run{target, {}};
        for (int layer : prunable_layers(target)) {
          if (rng.bernoulli(0.2)) continue;
          const int w = target.layers[static_cast<std::size_t>(layer)].out_channels;
          std::vector<int> kept(static_cast<std::size_t>(rng.uniform_int(1, w)));
          std::iota(kept.begin(), kept.end(), 0);
          run.keep[layer] = kept;
        }
        runs.push_back(run);
      }
      const auto s = extract_stage_widths(runs);
      const auto layers = prunable_layers(target);
      const auto stages = stages_of(target);
      bool ok = s.layers == layers && s.runs == n;
      std::map<int, long> kept_sum, width_sum, count;
      for (std::size_t l = 0; ok && l < layers.size(); ++l) {
        const int w = target.layers[static_cast<std::size_t>(layers[l])].out_channels;
        std::vector<long> v;
        for (const auto& run : runs) {
          auto it = run.keep.find(layers[l]);
          v.push_back(it == run.keep.end() ? w : static_cast<long>(it->second.size()));
        }
        long sum = 0;
        for (long x : v) sum += x;
        const double mean = static_cast<double>(sum) / n;
        double ss = 0.0;
        for (long x : v) ss += (x - mean) * (x - mean);
        const double sd = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
        ok &= s.layer_mean[l] == mean && std::abs(s.layer_std[l] - sd) <= 1e-12 && s.layer_stage[l] == stages.at(layers[l]);
        kept_sum[stages.at(layers[l])] += sum;
        width_sum[stages.at(layers[l])] += w;
        ++count[stages.at(layers[l])];
      }
      for (const auto& [st, k] : kept_sum) {
        const auto i = static_cast<std::size_t>(st);
        ok &= s.stage_mean[i] == static_cast<double>(k) / (static_cast<double>(n) * count[st]);
        ok &= s.stage_keep[i] == static_cast<double>(k) / (static_cast<double>(n) * width_sum[st]);
      }
      ++cases;
      exact += ok;
    }
  }
  out.check(exact == cases, "stage widths");
  out.detail << " stage_width_cases_exact=" << exact << "/" << cases;
}

// ---------------------------------------------------------------- 10
void serialization(Outcome& out) {
  SyntheticSpec data_spec;
  data_spec.train_samples = 512;
  data_spec.test_samples = 64;
  const auto data = load_synthetic(data_spec);
  const auto spec = vgg_spec(vgg_mini_template(), vgg_mini_template().default_widths, 10);
  Rng init(10);
  auto net = build_network<float>(spec, init);
  TrainConfig tc;
  tc.seed = 10;
  tc.mask = magnitude_mask(conv_weights(net), 0.3, MaskScope::Global);
  Trainer trainer(net, data.train, tc);
  for (int i = 0; i < 11; ++i) trainer.step();
  const Checkpoint ckpt = trainer.checkpoint();
  const auto bytes = serialize(ckpt);
  save_checkpoint("acceptance.prlb", ckpt);
  const Checkpoint loaded = load_checkpoint("acceptance.prlb");
  const bool bitwise = loaded == ckpt && serialize(loaded) == bytes;
  out.check(bitwise, "round trip");
  out.check(loaded.rng_state.has_value(), "rng state");

  std::vector<float> expected;
  for (int i = 0; i < 3; ++i) expected.push_back(trainer.step());
  Network<float> resumed = network_from(loaded);
  Trainer again(resumed, data.train, tc);
  again.restore(loaded);
  int identical = 0;
  std::ostringstream losses;
  for (int i = 0; i < 3; ++i) {
    const float l = again.step();
    identical += l == expected[static_cast<std::size_t>(i)];
    losses << (i ? "," : "") << l;
  }
  out.check(identical == 3, "resumed losses");
  out.check(resumed == net, "resumed parameters");
  out.detail << " bytes=" << bytes.size() << " bitwise=" << (bitwise ? "yes" : "no") << " resumed_losses=[" << losses.str()
             << "] identical=" << identical << "/3";
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
      {"gradient suite", gradient_suite},
      {"surgery equivalence", surgery_equivalence},
      {"selection oracles", selection_oracles},
      {"budget rules", budget_rules},
      {"mask/ticket invariants", mask_invariants},
      {"FLOPs oracle", flops_oracle},
      {"desk-scale pipeline replication", pipeline_replication},
      {"desk-scale parameter efficiency", parameter_efficiency},
      {"pattern analytics", pattern_analytics},
      {"serialization", serialization},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    Outcome out;
    try {
      criteria[i].second(out);
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail << " exception: " << e.what();
    }
    failed += !out.pass;
    std::cout << (out.pass ? "[PASS] " : "[FAIL] ") << id << ". " << criteria[i].first << ":" << out.detail.str()
              << std::endl;
    for (const auto& w : out.warnings) std::cout << "[WARN] " << id << ". " << w << std::endl;
  }
  std::cout << (failed ? "acceptance: " + std::to_string(failed) + " criteria failed" : "acceptance: all criteria passed")
            << std::endl;
  return failed ? 1 : 0;
}
