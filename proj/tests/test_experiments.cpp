#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "eclab/experiments.hpp"
#include "support/temp_dir.hpp"

namespace eclab::experiments {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

/// CSV text with the last column (wall_seconds) removed from every line.
std::string without_wall_clock(const fs::path& p) {
    std::istringstream in(slurp(p));
    std::string line, out;
    while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + '\n';
    return out;
}

ExperimentConfig tiny_fixed() {
    ExperimentConfig c;
    c.model = {16, 1, 2, 32, 3};
    c.train.learning_rate = 3e-3;
    c.train.batch_size = 8;
    c.split = {16, 8};
    c.max_epochs = 3;
    return c;
}

ExperimentConfig tiny_stream() {
    ExperimentConfig c = tiny_fixed();
    c.data = DataMode::stream;
    c.stream.batches_per_epoch = 3;
    c.stream.eval_count = 8;
    c.max_epochs = 2;
    return c;
}

TEST(GuessingBand, EvalSplitOf128Records) {
    auto [lo, hi] = guessing_band(4096, 3);
    EXPECT_NEAR(lo, 0.000982290144774540, 1e-15);
    EXPECT_NEAR(hi, 0.00683020985522546, 1e-15);
    EXPECT_NEAR(hi, 0.0068, 5e-5);
}

TEST(GuessingBand, LargeCountsCollapseOntoOneIn256) {
    auto [lo, hi] = guessing_band(std::uint64_t(1) << 60, 3);
    EXPECT_NEAR(lo, 0.00390625, 1e-9);
    EXPECT_NEAR(hi, 0.00390625, 1e-9);
    EXPECT_NEAR(1.0 / 256, 0.0039, 1e-5);
}

TEST(GuessingBand, FullScaleEvalSplit) {
    auto [lo, hi] = guessing_band(38200 * 32, 3);
    EXPECT_NEAR(lo, 0.00373699375214915, 1e-15);
    EXPECT_NEAR(hi, 0.00407550624785085, 1e-15);
    // 0.0042 sits 5.2 sigma above 1/256 at this sample size.
    EXPECT_GT(0.0042, hi);
    EXPECT_LT(0.0042, guessing_band(38200 * 32, 5.3).second);
    EXPECT_GT(0.0042, guessing_band(38200 * 32, 5.1).second);
}

TEST(GuessingBand, ClampsAndRejectsEmptySample) {
    auto [lo, hi] = guessing_band(1, 3);
    EXPECT_EQ(lo, 0.0);
    EXPECT_NEAR(hi, 0.00390625 + 3 * std::sqrt(0.00390625 * (1 - 0.00390625)), 1e-15);
    EXPECT_EQ(guessing_band(1, 1000).second, 1.0);
    EXPECT_THROW(guessing_band(0, 3), DomainError);
}

TEST(ExperimentConfig, StopThresholdRange) {
    ExperimentConfig c;
    EXPECT_NO_THROW(c.validate());
    c.stop_train_accuracy = 1.0;
    EXPECT_NO_THROW(c.validate());
    c.stop_train_accuracy = 1.0 / 256;
    EXPECT_THROW(c.validate(), ConfigError);
    c.stop_train_accuracy = 1.01;
    EXPECT_THROW(c.validate(), ConfigError);
    c = ExperimentConfig{};
    c.curve = "ed25519";
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(MetricsCsv, SixSignificantDigitsAndRoundTrip) {
    EpochMetrics m{7, 5.545177444479562, 1.0 / 256, 0.0, 1.0, 3e-4, 12.3456789};
    EXPECT_EQ(format_metrics_row(m), "7,5.54518,0.00390625,0,1,0.0003,12.3457");
    testing::TempDir dir;
    {
        MetricsWriter w(dir.path() / "m.csv");
        w.append(m);
    }
    auto rows = read_metrics_csv(dir.path() / "m.csv");
    ASSERT_EQ(rows.size(), 1U);
    EXPECT_EQ(rows[0].epoch, 7);
    EXPECT_DOUBLE_EQ(rows[0].train_loss, 5.54518);
}

TEST(Shuffle, IsASeededPermutation) {
    std::vector<std::uint32_t> a(100), b;
    for (std::uint32_t i = 0; i < 100; ++i) a[i] = i;
    b = a;
    std::mt19937_64 r1(9), r2(9);
    detail::shuffle(a, r1);
    detail::shuffle(b, r2);
    EXPECT_EQ(a, b);
    EXPECT_EQ(std::set<std::uint32_t>(a.begin(), a.end()).size(), 100U);
    std::vector<std::uint32_t> sorted(100);
    for (std::uint32_t i = 0; i < 100; ++i) sorted[i] = i;
    EXPECT_NE(a, sorted);
}

TEST(Memorization, WritesOneRowPerEpochPlusBaseline) {
    testing::TempDir dir;
    auto r = run_memorization(tiny_fixed(), dir.path());
    EXPECT_EQ(r.status, RunStatus::completed);
    auto rows = read_metrics_csv(r.metrics_csv);
    ASSERT_EQ(rows.size(), 4U);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        EXPECT_EQ(rows[i].epoch, static_cast<int>(i));
        EXPECT_GE(rows[i].train_accuracy, 0.0);
        EXPECT_LE(rows[i].train_accuracy, 1.0);
        EXPECT_GE(rows[i].eval_accuracy, 0.0);
        EXPECT_LE(rows[i].eval_accuracy, 1.0);
        EXPECT_GE(rows[i].train_loss, 0.0);
        EXPECT_GE(rows[i].eval_loss, 0.0);
        EXPECT_DOUBLE_EQ(rows[i].learning_rate, 3e-3);
    }
    ASSERT_TRUE(r.checkpoint);
    auto ck = nn::load_checkpoint<float>(*r.checkpoint);
    EXPECT_EQ(ck.optimizer.step, 6U);  // 3 epochs of 2 batches
    EXPECT_EQ(read_dataset(r.dataset->train).size(), 16U);
    EXPECT_EQ(read_dataset(r.dataset->eval).size(), 8U);
}

TEST(Memorization, BaselineRowScoresTheUntrainedModel) {
    testing::TempDir dir;
    ExperimentConfig c = tiny_fixed();
    c.max_epochs = 0;
    auto r = run_memorization(c, dir.path());
    ASSERT_EQ(r.epochs.size(), 1U);
    auto model = nn::model_init<float>(c.model);
    auto train = detail::tokenize(read_dataset(r.dataset->train));
    auto logits = nn::forward(model, train.inputs);
    EXPECT_NEAR(r.epochs[0].train_loss, nn::cross_entropy(logits, train.labels), 1e-12);
    EXPECT_EQ(nn::load_checkpoint<float>(*r.checkpoint).model.params, model.params);
}

TEST(Memorization, IdenticalConfigsGiveIdenticalArtifacts) {
    testing::TempDir dir;
    auto a = run_memorization(tiny_fixed(), dir.path() / "a");
    auto b = run_memorization(tiny_fixed(), dir.path() / "b");
    EXPECT_EQ(without_wall_clock(a.metrics_csv), without_wall_clock(b.metrics_csv));
    EXPECT_EQ(slurp(*a.checkpoint), slurp(*b.checkpoint));
    EXPECT_EQ(slurp(a.dataset->train), slurp(b.dataset->train));
    EXPECT_EQ(slurp(a.dataset->eval), slurp(b.dataset->eval));

    ExperimentConfig c = tiny_fixed();
    c.train.seed = 2;  // different shuffle
    auto d = run_memorization(c, dir.path() / "d");
    EXPECT_NE(slurp(*a.checkpoint), slurp(*d.checkpoint));
}

TEST(Memorization, StopsOnceTrainAccuracyReachesThreshold) {
    testing::TempDir dir;
    ExperimentConfig c = tiny_fixed();
    c.split = {4, 4};
    c.train.batch_size = 4;
    c.train.learning_rate = 1e-2;
    c.stop_train_accuracy = 0.5;
    c.max_epochs = 200;
    auto r = run_memorization(c, dir.path());
    EXPECT_TRUE(r.reached_stop);
    ASSERT_LT(r.epochs.size(), 201U);
    EXPECT_GE(r.epochs.back().train_accuracy, 0.5);
    for (std::size_t i = 0; i + 1 < r.epochs.size(); ++i) EXPECT_LT(r.epochs[i].train_accuracy, 0.5);
}

TEST(Memorization, CosineScheduleIsLoggedPerEpoch) {
    testing::TempDir dir;
    ExperimentConfig c = tiny_fixed();
    c.train.scheduler = nn::Scheduler::cosine;
    c.max_epochs = 2;
    auto r = run_memorization(c, dir.path());
    ASSERT_EQ(r.epochs.size(), 3U);
    EXPECT_DOUBLE_EQ(r.epochs[1].learning_rate, 3e-3);
    EXPECT_NEAR(r.epochs[2].learning_rate, 3e-5 + 0.5 * (3e-3 - 3e-5), 1e-15);
}

TEST(Memorization, NumericAbortKeepsPartialCsv) {
    testing::TempDir dir;
    ExperimentConfig c = tiny_fixed();
    c.train.learning_rate = 1e36;
    c.max_epochs = 5;
    auto r = run_memorization(c, dir.path());
    EXPECT_EQ(r.status, RunStatus::numeric_abort);
    EXPECT_FALSE(r.message.empty());
    EXPECT_FALSE(r.checkpoint);
    auto rows = read_metrics_csv(r.metrics_csv);
    EXPECT_GE(rows.size(), 1U);
    EXPECT_LT(rows.size(), 6U);
    EXPECT_EQ(rows.size(), r.epochs.size());
}

TEST(Memorization, RejectsStreamConfig) {
    testing::TempDir dir;
    EXPECT_THROW(run_memorization(tiny_stream(), dir.path()), ConfigError);
    EXPECT_THROW(run_stream(tiny_fixed(), dir.path()), ConfigError);
}

TEST(Stream, WritesRowsWithoutTouchingDatasetFiles) {
    testing::TempDir dir;
    ExperimentConfig c = tiny_stream();
    c.train.scheduler = nn::Scheduler::cosine;  // forced off
    auto r = run_stream(c, dir.path());
    EXPECT_EQ(r.status, RunStatus::completed);
    EXPECT_FALSE(r.dataset);
    EXPECT_FALSE(fs::exists(dir.path() / "data"));
    auto rows = read_metrics_csv(r.metrics_csv);
    ASSERT_EQ(rows.size(), 3U);
    for (const auto& m : rows) EXPECT_DOUBLE_EQ(m.learning_rate, 3e-3);
    EXPECT_EQ(nn::load_checkpoint<float>(*r.checkpoint).optimizer.step, 6U);
}

TEST(Stream, IdenticalSeedsGiveIdenticalArtifacts) {
    testing::TempDir dir;
    auto a = run_stream(tiny_stream(), dir.path() / "a");
    auto b = run_stream(tiny_stream(), dir.path() / "b");
    EXPECT_EQ(without_wall_clock(a.metrics_csv), without_wall_clock(b.metrics_csv));
    EXPECT_EQ(slurp(*a.checkpoint), slurp(*b.checkpoint));
    ExperimentConfig c = tiny_stream();
    c.data_seed = SeedSpec::from_hex("5eee");
    auto d = run_stream(c, dir.path() / "d");
    EXPECT_NE(without_wall_clock(a.metrics_csv), without_wall_clock(d.metrics_csv));
}

TEST(Stream, EvalRecordsComeFromTheFarOffset) {
    ExperimentConfig c = tiny_stream();
    c.stream.eval_offset = 0;  // eval would overlap the first training batch
    testing::TempDir dir;
    EXPECT_THROW(run_stream(c, dir.path()), ConfigError);
}

TEST(Ablation, TwoArmsShareTheBaselineAndSummaryHasTwoRows) {
    testing::TempDir dir;
    ExperimentConfig c = tiny_fixed();
    c.max_epochs = 2;
    auto r = run_momentum_ablation(c, dir.path());
    EXPECT_EQ(r.status(), RunStatus::completed);
    EXPECT_TRUE(fs::exists(dir.path() / "beta1_0.9" / "metrics.csv"));
    EXPECT_TRUE(fs::exists(dir.path() / "beta1_0" / "metrics.csv"));
    auto a = read_metrics_csv(r.with_momentum.run.metrics_csv);
    auto b = read_metrics_csv(r.without_momentum.run.metrics_csv);
    EXPECT_EQ(format_metrics_row({a[0].epoch, a[0].train_loss, a[0].train_accuracy, a[0].eval_loss,
                                  a[0].eval_accuracy, a[0].learning_rate, 0}),
              format_metrics_row({b[0].epoch, b[0].train_loss, b[0].train_accuracy, b[0].eval_loss,
                                  b[0].eval_accuracy, b[0].learning_rate, 0}));
    EXPECT_NE(slurp(*r.with_momentum.run.checkpoint), slurp(*r.without_momentum.run.checkpoint));

    std::istringstream summary(slurp(r.summary_csv));
    std::string line;
    std::getline(summary, line);
    EXPECT_EQ(line, kAblationHeader);
    int data_rows = 0;
    while (std::getline(summary, line)) ++data_rows;
    EXPECT_EQ(data_rows, 2);
}

TEST(Ablation, SlowerArmWithoutMomentumIsOnlyAWarning) {
    RunResult fast, slow, never;
    fast.epochs = {{0, 0, 0.0, 0, 0, 0, 0}, {1, 0, 0.995, 0, 0, 0, 0}};
    slow.epochs = {{0, 0, 0.0, 0, 0, 0, 0}, {1, 0, 0.5, 0, 0, 0, 0}, {2, 0, 0.999, 0, 0, 0, 0}};
    never.epochs = {{0, 0, 0.0, 0, 0, 0, 0}, {1, 0, 0.2, 0, 0, 0, 0}};
    EXPECT_EQ(slow.first_epoch_at(0.5), 1);
    EXPECT_FALSE(fast.first_epoch_at(1.0));

    EXPECT_FALSE(compare_arms(slow, fast, 0.99));
    EXPECT_FALSE(compare_arms(fast, fast, 0.99));
    EXPECT_FALSE(compare_arms(never, never, 0.99));
    EXPECT_FALSE(compare_arms(never, fast, 0.99));
    auto w = compare_arms(fast, slow, 0.99);
    ASSERT_TRUE(w);
    EXPECT_NE(w->find("beta1=0 needed 2"), std::string::npos);
    EXPECT_TRUE(compare_arms(fast, never, 0.99));
}

}  // namespace
}  // namespace eclab::experiments
