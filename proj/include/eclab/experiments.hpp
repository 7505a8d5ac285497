#pragma once

// Training runs: memorization of a fixed key set, training on an unbounded
// stream of fresh keys, and the beta1 ablation. Each run writes metrics.csv
// (one row per epoch, flushed as it is produced) into its output directory.
//
// Row 0 is a baseline measured before any update: the untouched model scored
// on the train split (memorization) or on one epoch's worth of fresh batches
// (stream), and on the eval split.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "eclab/curve.hpp"
#include "eclab/errors.hpp"
#include "eclab/keystream.hpp"
#include "eclab/nn.hpp"

namespace eclab::experiments {

inline constexpr double kGuessRate = 1.0 / 256.0;

/// 1/256 +- sigmas * sqrt(q (1 - q) / n), clamped to [0, 1].
inline std::pair<double, double> guessing_band(std::uint64_t n_positions, double confidence_sigmas) {
    if (n_positions < 1) throw DomainError("guessing_band needs at least one position");
    const double half = confidence_sigmas * std::sqrt(kGuessRate * (1 - kGuessRate) / static_cast<double>(n_positions));
    return {std::clamp(kGuessRate - half, 0.0, 1.0), std::clamp(kGuessRate + half, 0.0, 1.0)};
}

enum class DataMode { fixed, stream };

inline std::string to_string(DataMode m) { return m == DataMode::stream ? "stream" : "fixed"; }

inline DataMode data_mode_from_string(std::string_view s) {
    if (s == "fixed") return DataMode::fixed;
    if (s == "stream") return DataMode::stream;
    throw ConfigError("unknown data mode '" + std::string(s) + "' (expected fixed or stream)");
}

struct StreamSpec {
    std::uint64_t batches_per_epoch = 100;
    std::uint64_t eval_count = 128;
    /// Eval records come from this far into the stream, well clear of anything
    /// training can reach.
    std::uint64_t eval_offset = std::uint64_t(1) << 63;
};

struct ExperimentConfig {
    nn::ModelConfig model;
    nn::TrainConfig train;
    DataMode data = DataMode::fixed;
    SeedSpec data_seed = SeedSpec::from_hex("5eed");
    std::string curve = "p256";
    SplitSpec split;
    StreamSpec stream;
    double stop_train_accuracy = 0.99;
    /// Also the horizon of the cosine schedule; train.epochs is ignored here.
    int max_epochs = 300;

    void validate() const {
        model.validate();
        train.validate();
        curve_by_name(curve);
        if (!(stop_train_accuracy > kGuessRate && stop_train_accuracy <= 1))
            throw ConfigError("stop_train_accuracy must lie in (1/256, 1]");
        if (max_epochs < 0) throw ConfigError("max_epochs must be non-negative");
        if (data == DataMode::fixed && split.train_count < 1) throw ConfigError("train_count must be at least 1");
        if (data == DataMode::stream) {
            if (stream.batches_per_epoch < 1) throw ConfigError("batches_per_epoch must be at least 1");
            if (stream.eval_count < 1) throw ConfigError("stream eval_count must be at least 1");
        }
    }
};

struct EpochMetrics {
    int epoch = 0;
    double train_loss = 0;
    double train_accuracy = 0;
    double eval_loss = 0;
    double eval_accuracy = 0;
    double learning_rate = 0;
    double wall_seconds = 0;
};

inline constexpr std::string_view kMetricsHeader =
    "epoch,train_loss,train_accuracy,eval_loss,eval_accuracy,learning_rate,wall_seconds";

inline std::string format_metrics_row(const EpochMetrics& m) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%d,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g", m.epoch, m.train_loss, m.train_accuracy,
                  m.eval_loss, m.eval_accuracy, m.learning_rate, m.wall_seconds);
    return buf;
}

/// Parses a metrics CSV written by a run. Throws FormatError on a bad header or row.
inline std::vector<EpochMetrics> read_metrics_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(is, line) || line != kMetricsHeader) throw FormatError(path.string() + ": unexpected header");
    std::vector<EpochMetrics> rows;
    while (std::getline(is, line)) {
        EpochMetrics m;
        if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf,%lf", &m.epoch, &m.train_loss, &m.train_accuracy,
                        &m.eval_loss, &m.eval_accuracy, &m.learning_rate, &m.wall_seconds) != 7)
            throw FormatError(path.string() + ": malformed row '" + line + "'");
        rows.push_back(m);
    }
    return rows;
}

class MetricsWriter {
public:
    explicit MetricsWriter(const std::filesystem::path& path) : os_(path, std::ios::trunc) {
        if (!os_) throw IoError("cannot write " + path.string());
        os_ << kMetricsHeader << '\n';
        os_.flush();
    }

    void append(const EpochMetrics& m) {
        os_ << format_metrics_row(m) << '\n';
        os_.flush();
        if (!os_) throw IoError("write to metrics CSV failed");
    }

private:
    std::ofstream os_;
};

enum class RunStatus { completed = 0, numeric_abort = 2 };

struct RunResult {
    RunStatus status = RunStatus::completed;
    std::string message;
    std::vector<EpochMetrics> epochs;
    bool reached_stop = false;
    std::filesystem::path metrics_csv;
    std::optional<std::filesystem::path> checkpoint;
    std::optional<DatasetFiles> dataset;

    /// First epoch whose train accuracy reached `threshold`.
    std::optional<int> first_epoch_at(double threshold) const {
        for (const auto& m : epochs)
            if (m.train_accuracy >= threshold) return m.epoch;
        return std::nullopt;
    }
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

namespace detail {

struct TokenSet {
    std::vector<std::uint8_t> inputs;  // 33 bytes per record
    std::vector<std::uint8_t> labels;  // 32 bytes per record
    std::size_t size() const { return labels.size() / nn::kOutputLen; }
};

inline TokenSet tokenize(std::span<const DatasetRecord> records) {
    TokenSet t;
    t.inputs.reserve(records.size() * nn::kInputLen);
    t.labels.reserve(records.size() * nn::kOutputLen);
    for (const auto& r : records) {
        t.inputs.insert(t.inputs.end(), r.public_key.begin(), r.public_key.end());
        t.labels.insert(t.labels.end(), r.private_key.begin(), r.private_key.end());
    }
    return t;
}

/// Sums of per-position loss and hits, so batches of any size combine exactly.
struct Tally {
    double loss_sum = 0;
    std::uint64_t hits = 0;
    std::uint64_t positions = 0;

    void add(double mean_loss, std::size_t correct, std::size_t n) {
        loss_sum += mean_loss * static_cast<double>(n);
        hits += correct;
        positions += n;
    }
    double loss() const { return positions ? loss_sum / static_cast<double>(positions) : 0.0; }
    double accuracy() const { return positions ? static_cast<double>(hits) / static_cast<double>(positions) : 0.0; }
};

inline void score(const nn::ModelState<float>& model, const TokenSet& set, std::size_t batch, Tally& tally) {
    for (std::size_t first = 0; first < set.size(); first += batch) {
        const std::size_t n = std::min(batch, set.size() - first);
        std::span<const std::uint8_t> in(set.inputs.data() + first * nn::kInputLen, n * nn::kInputLen);
        std::span<const std::uint8_t> lab(set.labels.data() + first * nn::kOutputLen, n * nn::kOutputLen);
        auto logits = nn::forward(model, in);
        tally.add(nn::cross_entropy(logits, lab), nn::correct_count(logits, lab), lab.size());
    }
}

inline void train_step(nn::ModelState<float>& model, nn::OptimizerState<float>& opt, const nn::TrainConfig& tc,
                       double lr, std::span<const std::uint8_t> in, std::span<const std::uint8_t> lab, Tally& tally) {
    auto r = nn::loss_and_grads(model, in, lab);
    tally.add(r.loss, nn::correct_count(r.logits, lab), lab.size());
    nn::adamw_step(model.params, std::span<const float>(r.grads), opt, tc, lr, &model.layout);
}

inline void shuffle(std::vector<std::uint32_t>& order, std::mt19937_64& rng) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[nn::uniform_index(rng, i)]);
}

inline void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

class Clock {
public:
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace detail

/// Fixed-dataset run. Writes data/train.bin, data/eval.bin, metrics.csv and
/// checkpoint.bin under `out_dir`.
inline RunResult run_memorization(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                  const EpochCallback& on_epoch = {}) {
    if (cfg.data != DataMode::fixed) throw ConfigError("run_memorization needs a fixed-dataset config");
    cfg.validate();
    detail::ensure_dir(out_dir);
    const detail::Clock clock;
    const auto& curve = curve_by_name(cfg.curve);

    RunResult result;
    result.dataset = generate_fixed_dataset(cfg.data_seed, cfg.split, curve, out_dir / "data");
    const auto train = detail::tokenize(read_dataset(result.dataset->train));
    const auto eval = detail::tokenize(read_dataset(result.dataset->eval));

    nn::TrainConfig tc = cfg.train;
    tc.epochs = cfg.max_epochs;
    const std::size_t batch = static_cast<std::size_t>(tc.batch_size);
    auto model = nn::model_init<float>(cfg.model);
    nn::OptimizerState<float> opt(model.params.size());
    std::mt19937_64 rng(tc.seed);

    result.metrics_csv = out_dir / "metrics.csv";
    MetricsWriter csv(result.metrics_csv);
    auto record = [&](int epoch, const detail::Tally& tr, const detail::Tally& ev, double lr) {
        EpochMetrics m{epoch, tr.loss(), tr.accuracy(), ev.loss(), ev.accuracy(), lr, clock.seconds()};
        csv.append(m);
        result.epochs.push_back(m);
        if (on_epoch) on_epoch(m);
        return m;
    };

    std::vector<std::uint32_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::uint32_t>(i);
    std::vector<std::uint8_t> in, lab;

    try {
        detail::Tally tr0, ev0;
        detail::score(model, train, batch, tr0);
        detail::score(model, eval, batch, ev0);
        record(0, tr0, ev0, nn::lr_schedule(tc, 0));

        for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
            const double lr = nn::lr_schedule(tc, epoch - 1);
            detail::shuffle(order, rng);
            detail::Tally tr;
            for (std::size_t first = 0; first < order.size(); first += batch) {
                const std::size_t n = std::min(batch, order.size() - first);
                in.clear();
                lab.clear();
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t k = order[first + j];
                    in.insert(in.end(), train.inputs.begin() + k * nn::kInputLen,
                              train.inputs.begin() + (k + 1) * nn::kInputLen);
                    lab.insert(lab.end(), train.labels.begin() + k * nn::kOutputLen,
                               train.labels.begin() + (k + 1) * nn::kOutputLen);
                }
                detail::train_step(model, opt, tc, lr, in, lab, tr);
            }
            detail::Tally ev;
            detail::score(model, eval, batch, ev);
            if (record(epoch, tr, ev, lr).train_accuracy >= cfg.stop_train_accuracy) {
                result.reached_stop = true;
                break;
            }
        }
    } catch (const NumericError& e) {
        result.status = RunStatus::numeric_abort;
        result.message = e.what();
        return result;
    }

    result.checkpoint = out_dir / "checkpoint.bin";
    nn::save_checkpoint(*result.checkpoint, model, opt);
    return result;
}

/// Stream run: every training batch is fresh, nothing is read from disk, and
/// the scheduler is held at none. Writes metrics.csv and checkpoint.bin.
inline RunResult run_stream(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                            const EpochCallback& on_epoch = {}) {
    if (cfg.data != DataMode::stream) throw ConfigError("run_stream needs a stream config");
    cfg.validate();
    detail::ensure_dir(out_dir);
    const detail::Clock clock;
    const auto& curve = curve_by_name(cfg.curve);

    nn::TrainConfig tc = cfg.train;
    tc.scheduler = nn::Scheduler::none;
    tc.epochs = cfg.max_epochs;
    const std::size_t batch = static_cast<std::size_t>(tc.batch_size);
    auto model = nn::model_init<float>(cfg.model);
    nn::OptimizerState<float> opt(model.params.size());

    const auto eval =
        detail::tokenize(generate_records(cfg.data_seed, cfg.stream.eval_offset, cfg.stream.eval_count, curve));
    // Training can never reach the eval offset: 2^63 records would take longer than
    // any run, but refuse configs that would.
    const double reach = static_cast<double>(cfg.max_epochs + 1) * static_cast<double>(cfg.stream.batches_per_epoch) *
                         static_cast<double>(batch);
    if (reach >= static_cast<double>(cfg.stream.eval_offset)) throw ConfigError("stream run would reach the eval records");
    RecordStream stream(cfg.data_seed, batch, curve);

    RunResult result;
    result.metrics_csv = out_dir / "metrics.csv";
    MetricsWriter csv(result.metrics_csv);
    auto record = [&](int epoch, const detail::Tally& tr, const detail::Tally& ev) {
        EpochMetrics m{epoch, tr.loss(), tr.accuracy(), ev.loss(), ev.accuracy(), tc.learning_rate, clock.seconds()};
        csv.append(m);
        result.epochs.push_back(m);
        if (on_epoch) on_epoch(m);
        return m;
    };

    try {
        detail::Tally tr0, ev0;
        for (std::uint64_t b = 0; b < cfg.stream.batches_per_epoch; ++b)
            detail::score(model, detail::tokenize(stream.next_batch()), batch, tr0);
        detail::score(model, eval, batch, ev0);
        record(0, tr0, ev0);

        for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
            detail::Tally tr;
            for (std::uint64_t b = 0; b < cfg.stream.batches_per_epoch; ++b) {
                const auto set = detail::tokenize(stream.next_batch());
                detail::train_step(model, opt, tc, tc.learning_rate, set.inputs, set.labels, tr);
            }
            detail::Tally ev;
            detail::score(model, eval, batch, ev);
            if (record(epoch, tr, ev).train_accuracy >= cfg.stop_train_accuracy) {
                result.reached_stop = true;
                break;
            }
        }
    } catch (const NumericError& e) {
        result.status = RunStatus::numeric_abort;
        result.message = e.what();
        return result;
    }

    result.checkpoint = out_dir / "checkpoint.bin";
    nn::save_checkpoint(*result.checkpoint, model, opt);
    return result;
}

inline RunResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                const EpochCallback& on_epoch = {}) {
    return cfg.data == DataMode::stream ? run_stream(cfg, out_dir, on_epoch) : run_memorization(cfg, out_dir, on_epoch);
}

struct AblationArm {
    double beta1 = 0;
    RunResult run;
};

struct AblationResult {
    AblationArm with_momentum;     // beta1 = 0.9
    AblationArm without_momentum;  // beta1 = 0
    std::filesystem::path summary_csv;
    std::optional<std::string> warning;  // see compare_arms; reported, never fatal

    RunStatus status() const {
        return with_momentum.run.status == RunStatus::completed && without_momentum.run.status == RunStatus::completed
                   ? RunStatus::completed
                   : RunStatus::numeric_abort;
    }
};

/// A warning when beta1 = 0 needed more epochs than beta1 = 0.9 to reach
/// `threshold`, or reached it only in the 0.9 arm.
inline std::optional<std::string> compare_arms(const RunResult& with_momentum, const RunResult& without_momentum,
                                               double threshold) {
    const auto with = with_momentum.first_epoch_at(threshold);
    const auto without = without_momentum.first_epoch_at(threshold);
    if (with && without && *without > *with)
        return "beta1=0 needed " + std::to_string(*without) + " epochs to reach the stop threshold, beta1=0.9 needed " +
               std::to_string(*with);
    if (with && !without)
        return "beta1=0.9 reached the stop threshold at epoch " + std::to_string(*with) + ", beta1=0 never did";
    return std::nullopt;
}

inline constexpr std::string_view kAblationHeader = "beta1,status,final_train_accuracy,epochs_to_50pct,epochs_to_stop";

/// Two memorization runs differing only in beta1, in beta1_0.9/ and beta1_0/,
/// plus summary.csv with one row per arm. Epoch counts read "never" when the
/// level was not reached.
inline AblationResult run_momentum_ablation(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                            const std::function<void(double, const EpochMetrics&)>& on_epoch = {}) {
    cfg.validate();
    detail::ensure_dir(out_dir);
    AblationResult res;
    auto arm = [&](double beta1, const char* sub) {
        ExperimentConfig c = cfg;
        c.train.beta1 = beta1;
        EpochCallback cb;
        if (on_epoch) cb = [&, beta1](const EpochMetrics& m) { on_epoch(beta1, m); };
        return AblationArm{beta1, run_memorization(c, out_dir / sub, cb)};
    };
    res.with_momentum = arm(0.9, "beta1_0.9");
    res.without_momentum = arm(0.0, "beta1_0");

    res.summary_csv = out_dir / "summary.csv";
    std::ofstream os(res.summary_csv, std::ios::trunc);
    if (!os) throw IoError("cannot write " + res.summary_csv.string());
    os << kAblationHeader << '\n';
    auto epochs_text = [](std::optional<int> e) { return e ? std::to_string(*e) : std::string("never"); };
    for (const AblationArm* a : {&res.with_momentum, &res.without_momentum}) {
        const double final_acc = a->run.epochs.empty() ? 0.0 : a->run.epochs.back().train_accuracy;
        char acc[32];
        std::snprintf(acc, sizeof acc, "%.6g", final_acc);
        os << (a->beta1 == 0 ? "0" : "0.9") << ',' << (a->run.status == RunStatus::completed ? "completed" : "numeric_abort")
           << ',' << acc << ',' << epochs_text(a->run.first_epoch_at(0.5)) << ','
           << epochs_text(a->run.first_epoch_at(cfg.stop_train_accuracy)) << '\n';
    }
    if (!os.flush()) throw IoError("write to " + res.summary_csv.string() + " failed");

    res.warning = compare_arms(res.with_momentum.run, res.without_momentum.run, cfg.stop_train_accuracy);
    return res;
}

}  // namespace eclab::experiments
