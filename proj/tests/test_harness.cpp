#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "prunelab/analysis.hpp"
#include "prunelab/checkpoint.hpp"
#include "prunelab/error.hpp"
#include "prunelab/experiment.hpp"
#include "prunelab/model_zoo.hpp"
#include "prunelab/trainer.hpp"

using namespace prunelab;
namespace fs = std::filesystem;

namespace {

template <typename Fn>
ErrorKind kind_of(Fn fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::Io;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("prunelab_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SyntheticSpec small_synthetic(int train = 256, int test = 64) {
  SyntheticSpec s;
  s.train_samples = train;
  s.test_samples = test;
  return s;
}

ArchitectureSpec small_vgg() { return vgg_spec(vgg_mini_template(), {4, 4, 8, 8, 8, 8, 16, 16}, 10); }

double round1(double v) { return std::round(v * 10.0) / 10.0; }

}  // namespace

TEST(Dataset, ParsesRecordsAndRejectsBadLength) {
  std::vector<std::uint8_t> bytes(2 * kRecordBytes, 7);
  bytes[0] = 3;
  bytes[kRecordBytes] = 9;
  const auto raw = parse_cifar_records(bytes);
  EXPECT_EQ(raw.size(), 2u);
  EXPECT_EQ(raw.labels, (std::vector<int>{3, 9}));
  EXPECT_EQ(raw.pixels.size(), 2 * kImageBytes);
  bytes.pop_back();
  EXPECT_EQ(kind_of([&] { parse_cifar_records(bytes); }), ErrorKind::FormatError);
  EXPECT_EQ(kind_of([] { read_cifar_file("/nonexistent/data_batch_1.bin"); }), ErrorKind::Io);
}

TEST(Dataset, SyntheticIsDeterministicAndBalanced) {
  const auto spec = small_synthetic();
  EXPECT_EQ(synthetic_records(spec, 50, 1), synthetic_records(spec, 50, 1));
  EXPECT_NE(synthetic_records(spec, 50, 1), synthetic_records(spec, 50, 2));
  const auto split = load_synthetic(spec);
  EXPECT_EQ(split.train.size(), 256u);
  EXPECT_EQ(split.test.size(), 64u);
  std::vector<int> counts(10, 0);
  for (int l : split.train.labels) ++counts[static_cast<std::size_t>(l)];
  for (int c : counts) EXPECT_GE(c, 25);
}

TEST(Dataset, NormalizationUsesTrainStatistics) {
  const auto split = load_synthetic(small_synthetic());
  const auto& img = split.train.images;
  const std::size_t n = split.train.size(), plane = 1024;
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t s = 0; s < plane; ++s) mean += img[(i * 3 + c) * plane + s];
    mean /= static_cast<double>(n * plane);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t s = 0; s < plane; ++s) sq += std::pow(img[(i * 3 + c) * plane + s] - mean, 2);
    EXPECT_NEAR(mean, 0.0, 1e-4);
    EXPECT_NEAR(sq / static_cast<double>(n * plane), 1.0, 1e-3);
  }
}

TEST(Dataset, CifarDirectoryRoundTrip) {
  const auto dir = scratch_dir("cifar");
  const auto spec = small_synthetic(100, 20);
  for (int b = 1; b <= 5; ++b) {
    const auto bytes = synthetic_records(spec, 20, static_cast<std::uint64_t>(b));
    std::ofstream(dir / ("data_batch_" + std::to_string(b) + ".bin"), std::ios::binary)
        .write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  const auto test = synthetic_records(spec, 20, 9);
  std::ofstream(dir / "test_batch.bin", std::ios::binary)
      .write(reinterpret_cast<const char*>(test.data()), static_cast<std::streamsize>(test.size()));
  const auto split = load_cifar10(dir, 60, 0);
  EXPECT_EQ(split.train.size(), 60u);
  EXPECT_EQ(split.test.size(), 20u);
  EXPECT_EQ(split.train.images.shape(), (Shape{60, 3, 32, 32}));
  EXPECT_EQ(kind_of([] { load_cifar10("/nonexistent"); }), ErrorKind::Io);
}

TEST(Dataset, AugmentKeepsShapeAndIsSeeded) {
  const auto split = load_synthetic(small_synthetic());
  Tensor<float> a, b;
  std::vector<int> la, lb;
  const std::vector<std::size_t> idx{0, 1, 2, 3};
  gather_batch(split.train, idx, a, la);
  gather_batch(split.train, idx, b, lb);
  Rng r1(5), r2(5);
  augment(a, r1);
  augment(b, r2);
  EXPECT_TRUE(a == b);
  EXPECT_EQ(a.shape(), (Shape{4, 3, 32, 32}));
  EXPECT_EQ(la, lb);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  Rng rng(1);
  auto net = build_network<float>(small_vgg(), rng);
  auto opt = OptimizerState<float>::for_network(net);
  for (auto& [key, v] : opt.velocity)
    for (auto& x : v.values()) x = static_cast<float>(rng.normal());
  auto ckpt = make_checkpoint(net, &opt, &rng);
  Rng mask_rng(9);
  ckpt.put_mask("m", uniform_sparsify(net.spec(), 0.3, mask_rng));
  ckpt.extra["note"] = "x";
  const auto bytes = serialize(ckpt);
  const auto back = deserialize(bytes);
  EXPECT_TRUE(back == ckpt);
  EXPECT_EQ(serialize(back), bytes);
  auto net2 = network_from(back);
  EXPECT_TRUE(net2 == net);
  OptimizerState<float> opt2;
  restore_optimizer(back, net2, opt2);
  for (const auto& [key, v] : opt.velocity) EXPECT_TRUE(opt2.velocity.at(key) == v);
  Rng rng2;
  restore_rng(back, rng2);
  EXPECT_TRUE(rng2 == rng);
}

TEST(Checkpoint, DistinctErrorKinds) {
  Rng rng(2);
  auto net = build_network<float>(small_vgg(), rng);
  const auto bytes = serialize(make_checkpoint(net));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_EQ(kind_of([&] { deserialize(bad_magic); }), ErrorKind::BadMagic);
  auto bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_EQ(kind_of([&] { deserialize(bad_version); }), ErrorKind::UnsupportedVersion);
  const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 10);
  EXPECT_EQ(kind_of([&] { deserialize(truncated); }), ErrorKind::Truncated);
  EXPECT_EQ(kind_of([&] { deserialize(std::span(bytes.data(), 6)); }), ErrorKind::Truncated);
  auto flipped = bytes;
  flipped[bytes.size() - 3] ^= 0x40;
  EXPECT_EQ(kind_of([&] { deserialize(flipped); }), ErrorKind::CorruptData);
  EXPECT_EQ(kind_of([] { load_checkpoint("/nonexistent.prlb"); }), ErrorKind::Io);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto dir = scratch_dir("ckpt");
  Rng rng(3);
  auto net = build_network<float>(small_vgg(), rng);
  const auto ckpt = make_checkpoint(net);
  save_checkpoint(dir / "a.prlb", ckpt);
  EXPECT_TRUE(load_checkpoint(dir / "a.prlb") == ckpt);
}

TEST(Trainer, ResumeReproducesLosses) {
  const auto split = load_synthetic(small_synthetic());
  Rng rng(4);
  auto net = build_network<float>(small_vgg(), rng);
  TrainConfig tc;
  tc.budget.epochs = 2;
  tc.budget.milestones = {1};
  tc.batch_size = 32;
  tc.seed = 17;
  Trainer t(net, split.train, tc);
  for (int i = 0; i < 5; ++i) t.step();
  const auto bytes = serialize(t.checkpoint());
  std::vector<float> expected;
  for (int i = 0; i < 6; ++i) expected.push_back(t.step());

  auto restored = network_from(deserialize(bytes));
  Trainer t2(restored, split.train, tc);
  t2.restore(deserialize(bytes));
  for (int i = 0; i < 6; ++i) EXPECT_EQ(t2.step(), expected[static_cast<std::size_t>(i)]) << "step " << i;
  EXPECT_TRUE(restored == net);
}

TEST(Trainer, LearnsAndHonoursMask) {
  const auto split = load_synthetic(small_synthetic(512, 128));
  Rng rng(5);
  auto net = build_network<float>(small_vgg(), rng);
  TrainConfig tc;
  tc.budget.epochs = 3;
  tc.budget.milestones = {2};
  tc.batch_size = 32;
  tc.mask = uniform_sparsify(net.spec(), 0.5, rng);
  Trainer t(net, split.train, tc);
  const float first = t.step();
  t.run();
  EXPECT_TRUE(t.done());
  EXPECT_EQ(net.steps(), 3 * (512 / 32));
  for (const auto& lm : tc.mask->layers) {
    const auto& w = net.layer(lm.layer).param("weight");
    for (std::size_t i = 0; i < w.size(); ++i)
      if (!lm.keep[i]) ASSERT_EQ(w[i], 0.0f);
  }
  Trainer probe(net, split.train, tc);
  EXPECT_LT(probe.step(), first);
  const double acc = evaluate(net, split.test);
  EXPECT_GE(acc, 0.0);
  EXPECT_LE(acc, 100.0);
}

TEST(Trainer, RecalibrateResetsRunningStats) {
  const auto split = load_synthetic(small_synthetic());
  Rng rng(6);
  auto net = build_network<float>(small_vgg(), rng);
  recalibrate_bn(net, split.train);
  bool moved = false;
  for (const auto& node : net.layers())
    if (node.kind() == LayerKind::BatchNorm)
      for (float v : node.param("running_mean").values()) moved |= v != 0.0f;
  EXPECT_TRUE(moved);
}

TEST(Report, MeanAndSampleStd) {
  const auto ms = mean_std({1, 2, 3, 4, 5});
  EXPECT_DOUBLE_EQ(ms.mean, 3.0);
  ASSERT_TRUE(ms.std.has_value());
  EXPECT_NEAR(*ms.std, std::sqrt(2.5), 1e-12);
  EXPECT_FALSE(mean_std({4.0}).std.has_value());
}

TEST(Report, CsvAndSummaries) {
  ExperimentReport rep;
  rep.name = "r";
  rep.config_hash = "abc";
  for (std::uint64_t s = 1; s <= 3; ++s) {
    rep.rows.push_back({"l1-r0.50", Arm::FineTuned, s, 90.0 + s, 100, 10, 2, "0.001@0"});
    rep.rows.push_back({"l1-r0.50", Arm::ScratchB, s, 91.0, 100, 10, 4, "0.1@0"});
  }
  const auto csv = rep.to_csv();
  EXPECT_EQ(csv.rfind("experiment,arm,seed,accuracy,flops,params,epochs,lr_schedule,config_hash\n", 0), 0u);
  EXPECT_NE(csv.find("l1-r0.50,Fine-tuned,1,"), std::string::npos);
  const auto sums = rep.summaries();
  ASSERT_EQ(sums.size(), 2u);
  EXPECT_DOUBLE_EQ(sums[0].accuracy.mean, 92.0);
  EXPECT_TRUE(rep.summary("l1-r0.50", Arm::ScratchB).has_value());
  EXPECT_FALSE(rep.summary("l1-r0.50", Arm::Guided).has_value());
  EXPECT_EQ(arm_from_string(to_string(Arm::ScratchE)), Arm::ScratchE);
}

TEST(Config, JsonRoundTripAndHash) {
  ExperimentConfig c;
  c.name = "roundtrip";
  c.method = Method::Slimming;
  c.ratios = {0.3, 0.6};
  c.transfer_target = ModelConfig{Family::PreResNet, "vgg-mini", {16, 32, 64}, 20};
  c.finetune_epochs = 3;
  const auto back = ExperimentConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_EQ(c.hash().size(), 16u);
  auto d = c;
  d.lambda = 2e-4;
  EXPECT_NE(d.hash(), c.hash());
}

TEST(Config, RejectsUnknownKeysAndVersions) {
  auto j = ExperimentConfig{}.to_json();
  j["bogus"] = 1;
  EXPECT_EQ(kind_of([&] { ExperimentConfig::from_json(j); }), ErrorKind::FormatError);
  j = ExperimentConfig{}.to_json();
  j["version"] = 2;
  EXPECT_EQ(kind_of([&] { ExperimentConfig::from_json(j); }), ErrorKind::UnsupportedVersion);
  ExperimentConfig bad;
  bad.ratios = {1.5};
  EXPECT_EQ(kind_of([&] { bad.validate(); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([] { load_config("/nonexistent.json"); }), ErrorKind::Io);
}

TEST(Analysis, StageWidthsOfPrunedVgg16) {
  const auto& t = vgg16_template();
  const auto spec = vgg_spec(t, t.default_widths, 100);
  int total = 0;
  for (int w : prunable_widths(spec)) total += w;
  EXPECT_EQ(total, 4224);
  const auto layers = prunable_layers(spec);
  const std::vector<std::vector<int>> counts{{34, 37, 39, 42, 43},      {64, 64, 64, 64, 64},
                                             {128, 128, 128, 128, 127}, {128, 128, 128, 128, 128},
                                             {254, 254, 255, 256, 256}};
  std::vector<PrunedRun> runs;
  for (int r = 0; r < 5; ++r) {
    PrunedRun run{spec, {}};
    for (std::size_t l = 0; l < counts.size(); ++l) {
      std::vector<int> kept(static_cast<std::size_t>(counts[l][static_cast<std::size_t>(r)]));
      std::iota(kept.begin(), kept.end(), 0);
      run.keep[layers[l]] = kept;
    }
    runs.push_back(run);
  }
  const auto s = extract_stage_widths(runs);
  const std::vector<std::pair<double, double>> table{{39.0, 3.7}, {64.0, 0.0}, {127.8, 0.4}, {128.0, 0.0}, {255.0, 1.0}};
  for (std::size_t l = 0; l < table.size(); ++l) {
    EXPECT_EQ(round1(s.layer_mean[l]), table[l].first) << "layer " << l + 1;
    EXPECT_EQ(round1(s.layer_std[l]), table[l].second) << "layer " << l + 1;
  }
  EXPECT_DOUBLE_EQ(s.stage_mean[0], (39.0 + 64.0) / 2);
  EXPECT_DOUBLE_EQ(s.stage_keep[1], 255.8 / 256.0);
  EXPECT_DOUBLE_EQ(s.layer_mean[12], 512.0);

  std::vector<PrunedRun> mixed{runs[0], PrunedRun{vgg_spec(vgg_mini_template(), vgg_mini_template().default_widths, 10), {}}};
  EXPECT_EQ(kind_of([&] { extract_stage_widths(mixed); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([] { extract_stage_widths({}); }), ErrorKind::InvalidArgument);
}

TEST(Analysis, GuidedArchitectureFromStageRatios) {
  const auto& t = vgg16_template();
  const auto spec = vgg_spec(t, t.default_widths, 10);
  const auto guided = guided_architecture_from_ratios({0.836, 1.0, 0.947, 0.258, 0.132}, spec);
  EXPECT_EQ(prunable_widths(guided),
            (std::vector<int>{54, 54, 128, 128, 242, 242, 242, 132, 132, 132, 68, 68, 68}));
  EXPECT_EQ(kind_of([&] { guided_architecture_from_ratios({0.5, 0.5}, spec); }), ErrorKind::InvalidArgument);
  const auto tiny = guided_architecture_from_ratios({0.001, 1.0, 1.0, 1.0, 1.0}, spec);
  EXPECT_EQ(prunable_widths(tiny)[0], 1);
}

TEST(Analysis, KernelPatternOfFullAndEmptyMasks) {
  const auto spec = preresnet_spec(20, {16, 32, 64}, 10);
  auto mask = full_mask(spec);
  auto pattern = analyze_kernel_pattern(mask, spec);
  ASSERT_EQ(pattern.stage_count(), 3u);
  for (const auto& st : pattern.stages)
    for (double p : st) EXPECT_EQ(p, 1.0);
  for (auto& lm : mask.layers) std::fill(lm.keep.begin(), lm.keep.end(), 0);
  pattern = analyze_kernel_pattern(mask, spec);
  for (const auto& st : pattern.stages)
    for (double p : st) EXPECT_EQ(p, 0.0);
  EXPECT_EQ(kind_of([&] { guided_sparsity(SparsityPattern{{{}}, {1}}, spec, 0); }), ErrorKind::InvalidArgument);
}

TEST(Analysis, WeightHistogramCountsEveryWeight) {
  Rng rng(7);
  auto net = build_network<float>(small_vgg(), rng);
  const auto hist = weight_histogram(net, 20);
  std::size_t total = 0;
  for (const auto& h : hist) {
    EXPECT_EQ(h.counts.size(), 20u);
    EXPECT_EQ(h.lo, -h.hi);
    total += h.total();
  }
  EXPECT_EQ(total, full_mask(net.spec()).total());
}

TEST(Pipeline, TinyRunEmitsEveryArm) {
  ExperimentConfig c;
  c.name = "tiny";
  c.model.widths = {4, 4, 8, 8, 8, 8, 16, 16};
  c.data.synthetic = small_synthetic(128, 64);
  c.budget.epochs = 2;
  c.budget.milestones = {1};
  c.finetune_epochs = 1;
  c.seeds = {1, 2};
  c.batch_size = 32;
  c.guided = true;
  const auto rep = run_pipeline(c);
  EXPECT_TRUE(rep.failures.empty());
  for (Arm arm : {Arm::FineTuned, Arm::ScratchE, Arm::ScratchB, Arm::Guided}) {
    const auto s = rep.summary("l1-r0.50", arm);
    ASSERT_TRUE(s.has_value()) << to_string(arm);
    EXPECT_EQ(s->values.size(), 2u);
  }
  ASSERT_TRUE(rep.summary("baseline", Arm::Unpruned).has_value());
  const auto b = rep.summary("l1-r0.50", Arm::ScratchB);
  const auto e = rep.summary("l1-r0.50", Arm::ScratchE);
  EXPECT_GT(rep.rows.size(), 0u);
  EXPECT_LT(b->flops, rep.summary("baseline", Arm::Unpruned)->flops);
  EXPECT_DOUBLE_EQ(b->flops, e->flops);
  const auto again = run_pipeline(c);
  ASSERT_EQ(again.rows.size(), rep.rows.size());
  for (std::size_t i = 0; i < rep.rows.size(); ++i) EXPECT_EQ(again.rows[i].accuracy, rep.rows[i].accuracy);
  const auto dir = scratch_dir("report");
  rep.write(dir);
  EXPECT_TRUE(fs::exists(dir / "tiny.csv"));
  EXPECT_TRUE(fs::exists(dir / "tiny.json"));
}
