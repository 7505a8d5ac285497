#pragma once

// The eclab command line. Every subcommand resolves a flat key = value
// configuration (schema defaults, then a preset, then --config FILE, then
// explicit flags), runs, and writes a JSON manifest holding the resolved
// configuration so that `eclab rerun MANIFEST` repeats the run exactly.

#include <CLI11.hpp>
#include <json.hpp>

#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "eclab/costmodel.hpp"
#include "eclab/curve.hpp"
#include "eclab/errors.hpp"
#include "eclab/experiments.hpp"
#include "eclab/keystream.hpp"
#include "eclab/presets_generated.hpp"

namespace eclab::cli {

namespace fs = std::filesystem;

inline constexpr std::string_view kToolName = "eclab";
inline constexpr std::string_view kToolVersion = "0.1.0";

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitNumeric = 2, kExitConfig = 3 };

using ConfigMap = std::map<std::string, std::string>;

struct KeySpec {
    std::string_view name;
    std::string_view fallback;
    std::string_view help;
};

using Schema = std::vector<KeySpec>;

// ---------------------------------------------------------------------------
// Config text

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

/// One `key = value` per line; `#` starts a comment; blank lines are ignored.
inline ConfigMap parse_config_text(std::string_view text, const std::string& source) {
    ConfigMap out;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string body = trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        const std::string key = eq == std::string::npos ? std::string() : trim(std::string_view(body).substr(0, eq));
        if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
        out[key] = trim(std::string_view(body).substr(eq + 1));
    }
    return out;
}

inline ConfigMap read_config_file(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str(), path.string());
}

inline std::string preset_text(std::string_view name) {
    for (const auto& [n, body] : presets::kBuiltin)
        if (n == name) return std::string(body);
    std::string known;
    for (const auto& [n, body] : presets::kBuiltin) known += (known.empty() ? "" : ", ") + std::string(n);
    throw ConfigError("unknown preset '" + std::string(name) + "' (known: " + known + ")");
}

inline bool schema_has(const Schema& schema, std::string_view key) {
    for (const auto& k : schema)
        if (k.name == key) return true;
    return false;
}

inline ConfigMap schema_defaults(const Schema& schema) {
    ConfigMap m;
    for (const auto& k : schema) m[std::string(k.name)] = std::string(k.fallback);
    return m;
}

/// Overlays `layer` onto `cfg`, refusing keys the schema does not know.
inline void apply_layer(ConfigMap& cfg, const ConfigMap& layer, const Schema& schema, const std::string& source) {
    for (const auto& [k, v] : layer) {
        if (!schema_has(schema, k)) throw ConfigError("unknown key '" + k + "' in " + source);
        cfg[k] = v;
    }
}

// ---------------------------------------------------------------------------
// Typed access; every error names the key.

inline const std::string& get_string(const ConfigMap& c, const std::string& key) {
    auto it = c.find(key);
    if (it == c.end()) throw ConfigError("missing key '" + key + "'");
    return it->second;
}

inline double get_double(const ConfigMap& c, const std::string& key) {
    const std::string& s = get_string(c, key);
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || *end != '\0' || errno == ERANGE) throw ConfigError("key '" + key + "': expected a number, got '" + s + "'");
    return v;
}

inline std::uint64_t get_u64(const ConfigMap& c, const std::string& key) {
    const std::string& s = get_string(c, key);
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
        throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + s + "'");
    errno = 0;
    const unsigned long long v = std::strtoull(s.c_str(), nullptr, 10);
    if (errno == ERANGE) throw ConfigError("key '" + key + "': value out of range");
    return v;
}

inline int get_int(const ConfigMap& c, const std::string& key) {
    const std::uint64_t v = get_u64(c, key);
    if (v > static_cast<std::uint64_t>(std::numeric_limits<int>::max()))
        throw ConfigError("key '" + key + "': value out of range");
    return static_cast<int>(v);
}

inline bool get_bool(const ConfigMap& c, const std::string& key) {
    const std::string& s = get_string(c, key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("key '" + key + "': expected true or false, got '" + s + "'");
}

template <typename F>
auto with_key(const std::string& key, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const ConfigError& e) {
        throw ConfigError("key '" + key + "': " + e.what());
    } catch (const FormatError& e) {
        throw ConfigError("key '" + key + "': " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Schemas

inline const Schema& train_schema() {
    static const Schema s = {
        {"experiment", "memorize", "memorize, stream or ablation"},
        {"curve", "p256", "p256 or toy"},
        {"data_seed", "5eed", "dataset seed, hex"},
        {"seed_mode", "random", "random or sequential"},
        {"train_count", "512", "fixed dataset: train records"},
        {"eval_count", "128", "fixed dataset: eval records"},
        {"stream_batches_per_epoch", "100", "stream: batches per epoch"},
        {"stream_eval_count", "128", "stream: eval records"},
        {"hidden_size", "128", "model width"},
        {"num_layers", "4", "transformer blocks"},
        {"num_heads", "4", "attention heads"},
        {"ffn_size", "256", "feed-forward width"},
        {"init_seed", "1", "parameter init seed"},
        {"learning_rate", "0.0003", "AdamW learning rate"},
        {"beta1", "0", "AdamW beta1 (ignored by ablation, which runs 0.9 and 0)"},
        {"beta2", "0.999", "AdamW beta2"},
        {"epsilon", "1e-8", "AdamW epsilon"},
        {"weight_decay", "0", "AdamW decoupled weight decay"},
        {"batch_size", "64", "records per step"},
        {"scheduler", "none", "none or cosine (stream runs always use none)"},
        {"shuffle_seed", "1", "fixed dataset: shuffle seed"},
        {"bias_correction", "false", "divide moments by 1 - beta^t"},
        {"max_epochs", "300", "epoch limit, also the cosine horizon"},
        {"stop_train_accuracy", "0.99", "stop once train accuracy reaches this"},
        {"desk_runnable", "true", "false marks configs that need --i-have-a-cluster"},
    };
    return s;
}

inline const Schema& dataset_schema() {
    static const Schema s = {
        {"curve", "p256", "p256 or toy"},
        {"data_seed", "5eed", "dataset seed, hex"},
        {"seed_mode", "random", "random or sequential"},
        {"train_count", "512", "train records"},
        {"eval_count", "128", "eval records"},
        {"workers", "1", "generator threads (does not change the output)"},
        {"csv", "false", "also write train.csv and eval.csv"},
    };
    return s;
}

inline const Schema& keygen_schema() {
    static const Schema s = {
        {"curve", "p256", "p256 or toy"},
        {"seed", "", "derive the scalar from this hex seed"},
        {"index", "0", "stream index used with --seed"},
        {"scalar", "", "private scalar, decimal or 0x-prefixed hex"},
    };
    return s;
}

inline const Schema& tables_schema() {
    static const Schema s = {{"mode", "paper", "paper or exact"}};
    return s;
}

inline const Schema& attack_schema() {
    static const Schema s = {
        {"memorized", "1e18", "memorized keypairs m"},
        {"population", "7.3e7", "target population n"},
        {"keyspace", "exact", "exact (2^256) or paper (1.57e77)"},
        {"target_probability", "0.5", "p for the population formulas"},
    };
    return s;
}

inline const Schema& schema_for(std::string_view subcommand) {
    if (subcommand == "train") return train_schema();
    if (subcommand == "dataset") return dataset_schema();
    if (subcommand == "keygen") return keygen_schema();
    if (subcommand == "cost-model tables") return tables_schema();
    if (subcommand == "cost-model attack") return attack_schema();
    throw ConfigError("unknown subcommand '" + std::string(subcommand) + "'");
}

// ---------------------------------------------------------------------------
// Conversions

inline SeedSpec seed_spec(const ConfigMap& c) {
    return with_key("data_seed", [&] {
        return SeedSpec::from_hex(get_string(c, "data_seed"),
                                  with_key("seed_mode", [&] { return seed_mode_from_string(get_string(c, "seed_mode")); }));
    });
}

inline const CurveParams& curve_of(const ConfigMap& c) {
    return with_key("curve", [&]() -> const CurveParams& { return curve_by_name(get_string(c, "curve")); });
}

inline experiments::ExperimentConfig experiment_config(const ConfigMap& c) {
    experiments::ExperimentConfig e;
    const std::string kind = get_string(c, "experiment");
    if (kind != "memorize" && kind != "stream" && kind != "ablation")
        throw ConfigError("key 'experiment': expected memorize, stream or ablation, got '" + kind + "'");
    e.data = kind == "stream" ? experiments::DataMode::stream : experiments::DataMode::fixed;
    curve_of(c);
    e.curve = get_string(c, "curve");
    e.data_seed = seed_spec(c);
    e.split = {get_u64(c, "train_count"), get_u64(c, "eval_count")};
    e.stream.batches_per_epoch = get_u64(c, "stream_batches_per_epoch");
    e.stream.eval_count = get_u64(c, "stream_eval_count");
    e.model.hidden_size = get_int(c, "hidden_size");
    e.model.num_layers = get_int(c, "num_layers");
    e.model.num_heads = get_int(c, "num_heads");
    e.model.ffn_size = get_int(c, "ffn_size");
    e.model.seed = get_u64(c, "init_seed");
    e.train.learning_rate = get_double(c, "learning_rate");
    e.train.beta1 = get_double(c, "beta1");
    e.train.beta2 = get_double(c, "beta2");
    e.train.epsilon = get_double(c, "epsilon");
    e.train.weight_decay = get_double(c, "weight_decay");
    e.train.batch_size = get_int(c, "batch_size");
    e.train.scheduler = with_key("scheduler", [&] { return nn::scheduler_from_string(get_string(c, "scheduler")); });
    e.train.seed = get_u64(c, "shuffle_seed");
    e.train.bias_correction = get_bool(c, "bias_correction");
    e.max_epochs = get_int(c, "max_epochs");
    e.stop_train_accuracy = get_double(c, "stop_train_accuracy");
    e.validate();
    return e;
}

/// Decimal, or hex with an 0x prefix.
inline U256 parse_scalar(const std::string& s) {
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) return U256::from_hex(s);
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
        throw ConfigError("key 'scalar': expected a decimal or 0x-prefixed hex integer, got '" + s + "'");
    return with_key("scalar", [&] { return U256::from_decimal(s); });
}

// ---------------------------------------------------------------------------
// Manifests

inline std::string utc_timestamp() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct Manifest {
    std::string subcommand;
    ConfigMap config;
    std::string output;  // output directory or CSV directory, empty when none
    std::vector<std::string> artifacts;
    std::string status = "completed";
    int exit_code = 0;
    std::string started_at;
    std::string finished_at;
    std::string tool_version = std::string(kToolVersion);
};

inline nlohmann::ordered_json to_json(const Manifest& m) {
    nlohmann::ordered_json j;
    j["tool"] = kToolName;
    j["tool_version"] = m.tool_version;
    j["subcommand"] = m.subcommand;
    j["config"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : m.config) j["config"][k] = v;
    j["output"] = m.output;
    j["artifacts"] = m.artifacts;
    j["status"] = m.status;
    j["exit_code"] = m.exit_code;
    j["started_at"] = m.started_at;
    j["finished_at"] = m.finished_at;
    return j;
}

inline Manifest manifest_from_json(const nlohmann::json& j) {
    Manifest m;
    try {
        m.subcommand = j.at("subcommand").get<std::string>();
        for (const auto& [k, v] : j.at("config").items()) m.config[k] = v.get<std::string>();
        m.output = j.value("output", "");
        m.artifacts = j.value("artifacts", std::vector<std::string>{});
        m.status = j.value("status", "");
        m.exit_code = j.value("exit_code", 0);
        m.started_at = j.value("started_at", "");
        m.finished_at = j.value("finished_at", "");
        m.tool_version = j.value("tool_version", "");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed manifest: ") + e.what());
    }
    return m;
}

inline Manifest read_manifest(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read manifest " + path.string());
    try {
        return manifest_from_json(nlohmann::json::parse(is));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("manifest " + path.string() + " is not JSON: " + e.what());
    }
}

inline void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write " + path.string());
    os << text;
    if (!os.flush()) throw IoError("write to " + path.string() + " failed");
}

/// Manifest goes to `path` when given, otherwise as one JSON line on `err`.
inline void emit_manifest(const Manifest& m, const std::optional<fs::path>& path, std::ostream& err) {
    if (path)
        write_text_file(*path, to_json(m).dump(2) + "\n");
    else
        err << "manifest: " << to_json(m).dump() << "\n";
}

// ---------------------------------------------------------------------------
// Commands. Each takes a resolved config and returns an exit code.

struct Outputs {
    std::optional<fs::path> out_dir;
    std::optional<fs::path> manifest_out;
    bool cluster_ack = false;
};

inline std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

inline int cmd_keygen(const ConfigMap& c, const Outputs& o, std::ostream& out, std::ostream& err) {
    Manifest man{"keygen", c};
    man.started_at = utc_timestamp();
    const CurveParams& curve = curve_of(c);
    const std::string& seed = get_string(c, "seed");
    const std::string& scalar = get_string(c, "scalar");
    if (seed.empty() == scalar.empty()) throw ConfigError("keygen needs exactly one of --seed or --scalar");
    U256 d;
    if (!scalar.empty()) {
        d = parse_scalar(scalar);
    } else {
        const SeedSpec spec = with_key("seed", [&] { return SeedSpec::from_hex(seed); });
        d = private_scalar(spec, get_u64(c, "index"), curve);
    }
    const KeyPair kp = derive_public(d, curve);
    const auto pub = encode_compressed(kp.Q);
    out << "curve " << curve.name() << "\n";
    out << "private " << kp.d.to_hex() << "\n";
    out << "public " << detail::hex_encode(pub) << "\n";
    out << "field_mults " << kp.counts.mults << "\n";
    out << "field_squarings " << kp.counts.squarings << "\n";
    out << "field_additions " << kp.counts.additions << "\n";
    out << "field_inversions " << kp.counts.inversions << "\n";
    man.finished_at = utc_timestamp();
    emit_manifest(man, o.manifest_out, err);
    return kExitOk;
}

inline int cmd_dataset(const ConfigMap& c, const Outputs& o, std::ostream& out, std::ostream& err) {
    if (!o.out_dir) throw ConfigError("dataset needs --out DIR");
    Manifest man{"dataset", c};
    man.started_at = utc_timestamp();
    man.output = o.out_dir->string();
    const SplitSpec split{get_u64(c, "train_count"), get_u64(c, "eval_count")};
    const int workers = get_int(c, "workers");
    if (workers < 1) throw ConfigError("key 'workers': must be at least 1");
    const bool csv = get_bool(c, "csv");
    auto files = generate_fixed_dataset(seed_spec(c), split, curve_of(c), *o.out_dir, static_cast<unsigned>(workers));
    man.artifacts = {"train.bin", "eval.bin"};
    if (csv) {
        export_csv(files.train, *o.out_dir / "train.csv");
        export_csv(files.eval, *o.out_dir / "eval.csv");
        man.artifacts.insert(man.artifacts.end(), {"train.csv", "eval.csv"});
    }
    out << "wrote " << split.train_count << " train and " << split.eval_count << " eval records to "
        << o.out_dir->string() << "\n";
    man.finished_at = utc_timestamp();
    emit_manifest(man, o.manifest_out ? o.manifest_out : std::optional<fs::path>(*o.out_dir / "manifest.json"), err);
    return kExitOk;
}

inline void print_epoch(std::ostream& err, const std::string& prefix, const experiments::EpochMetrics& m) {
    err << prefix << "epoch " << m.epoch << "  train_loss " << fmt(m.train_loss) << "  train_acc "
        << fmt(m.train_accuracy) << "  eval_loss " << fmt(m.eval_loss) << "  eval_acc " << fmt(m.eval_accuracy)
        << "  " << fmt(m.wall_seconds) << "s\n"
        << std::flush;
}

inline std::vector<std::string> run_artifacts(const experiments::RunResult& r, const fs::path& root) {
    std::vector<std::string> a;
    auto rel = [&](const fs::path& p) { return fs::relative(p, root).generic_string(); };
    if (r.dataset) {
        a.push_back(rel(r.dataset->train));
        a.push_back(rel(r.dataset->eval));
    }
    a.push_back(rel(r.metrics_csv));
    if (r.checkpoint) a.push_back(rel(*r.checkpoint));
    return a;
}

inline int cmd_train(const ConfigMap& c, const Outputs& o, std::ostream& out, std::ostream& err) {
    if (!o.out_dir) throw ConfigError("train needs --out DIR");
    if (!get_bool(c, "desk_runnable") && !o.cluster_ack)
        throw ConfigError("this configuration is not desk-runnable; pass --i-have-a-cluster to run it anyway");
    const auto cfg = experiment_config(c);
    const std::string kind = get_string(c, "experiment");
    const fs::path dir = *o.out_dir;
    Manifest man{"train", c};
    man.started_at = utc_timestamp();
    man.output = dir.string();

    int code = kExitOk;
    if (kind == "ablation") {
        auto res = experiments::run_momentum_ablation(cfg, dir, [&](double beta1, const experiments::EpochMetrics& m) {
            print_epoch(err, "[beta1=" + fmt(beta1) + "] ", m);
        });
        for (const auto* arm : {&res.with_momentum, &res.without_momentum}) {
            for (auto& a : run_artifacts(arm->run, dir)) man.artifacts.push_back(a);
            out << "beta1=" << fmt(arm->beta1) << ": " << arm->run.epochs.size() - 1 << " epochs, final train accuracy "
                << fmt(arm->run.epochs.back().train_accuracy) << "\n";
            if (arm->run.status != experiments::RunStatus::completed) err << "error: " << arm->run.message << "\n";
        }
        man.artifacts.push_back(fs::relative(res.summary_csv, dir).generic_string());
        if (res.warning) err << "warning: " << *res.warning << "\n";
        code = res.status() == experiments::RunStatus::completed ? kExitOk : kExitNumeric;
    } else {
        auto res = experiments::run_experiment(cfg, dir, [&](const experiments::EpochMetrics& m) { print_epoch(err, "", m); });
        man.artifacts = run_artifacts(res, dir);
        if (res.status == experiments::RunStatus::completed) {
            out << kind << ": " << res.epochs.size() - 1 << " epochs, final train accuracy "
                << fmt(res.epochs.back().train_accuracy) << ", eval accuracy " << fmt(res.epochs.back().eval_accuracy)
                << (res.reached_stop ? " (stop threshold reached)" : "") << "\n";
        } else {
            err << "error: numeric abort: " << res.message << "\n";
            code = kExitNumeric;
        }
    }
    man.status = code == kExitOk ? "completed" : "numeric_abort";
    man.exit_code = code;
    man.finished_at = utc_timestamp();
    emit_manifest(man, o.manifest_out ? o.manifest_out : std::optional<fs::path>(dir / "manifest.json"), err);
    return code;
}

inline int cmd_tables(const ConfigMap& c, const Outputs& o, std::ostream& out, std::ostream& err) {
    const auto mode = with_key("mode", [&] { return costmodel::table_mode_from_string(get_string(c, "mode")); });
    Manifest man{"cost-model tables", c};
    man.started_at = utc_timestamp();
    const auto tables = costmodel::render_tables(mode);
    out << costmodel::format_text(tables, mode);
    if (o.out_dir) {
        man.output = o.out_dir->string();
        for (const auto& p : costmodel::write_csvs(tables, *o.out_dir)) man.artifacts.push_back(p.filename().string());
    }
    man.finished_at = utc_timestamp();
    emit_manifest(man, o.manifest_out, err);
    return kExitOk;
}

inline int cmd_attack(const ConfigMap& c, const Outputs& o, std::ostream& out, std::ostream& err) {
    using namespace costmodel;
    Manifest man{"cost-model attack", c};
    man.started_at = utc_timestamp();
    const auto ks = with_key("keyspace", [&] { return keyspace_mode_from_string(get_string(c, "keyspace")); });
    AttackScenario s{get_double(c, "memorized"), keyspace_size(ks), get_double(c, "population"),
                     get_double(c, "target_probability")};
    try {
        s.validate();
        if (!(s.target_probability > 0 && s.target_probability < 1))
            throw DomainError("target probability must lie strictly between 0 and 1");
    } catch (const DomainError& e) {
        throw ConfigError(e.what());
    }
    const double p = victim_probability(s);
    out << "memorized " << fmt(s.memorized) << "\n";
    out << "keyspace " << fmt(s.keyspace) << " (" << to_string(ks) << ")\n";
    out << "population " << fmt(s.population) << "\n";
    out << "victim_probability " << fmt(p) << " (" << render_percent(p) << ")\n";
    if (s.memorized < s.keyspace) {
        out << "population_for_p " << fmt(victim_population(s, PopulationFormula::printed))
            << " (ln(p) / ln(1 - m/a), p = " << fmt(s.target_probability) << ")\n";
        out << "population_for_p_corrected " << fmt(victim_population(s, PopulationFormula::corrected))
            << " (ln(1 - p) / ln(1 - m/a))\n";
    }
    man.finished_at = utc_timestamp();
    emit_manifest(man, o.manifest_out, err);
    return kExitOk;
}

inline int dispatch(const std::string& subcommand, const ConfigMap& c, const Outputs& o, std::ostream& out,
                    std::ostream& err) {
    if (subcommand == "keygen") return cmd_keygen(c, o, out, err);
    if (subcommand == "dataset") return cmd_dataset(c, o, out, err);
    if (subcommand == "train") return cmd_train(c, o, out, err);
    if (subcommand == "cost-model tables") return cmd_tables(c, o, out, err);
    if (subcommand == "cost-model attack") return cmd_attack(c, o, out, err);
    throw ConfigError("unknown subcommand '" + subcommand + "'");
}

// ---------------------------------------------------------------------------
// Argument parsing

namespace detail {

inline std::string flag_name(std::string_view key) {
    std::string f = "--" + std::string(key);
    for (auto& ch : f)
        if (ch == '_') ch = '-';
    return f;
}

/// Registers one flag per schema key; values land in `values`.
struct KeyFlags {
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;

    void attach(CLI::App& app, const Schema& schema) {
        for (const auto& k : schema) {
            const std::string key(k.name);
            std::string help(k.help);
            if (!k.fallback.empty()) help += " [" + std::string(k.fallback) + "]";
            options[key] = app.add_option(flag_name(key), values[key], help);
        }
    }

    ConfigMap given() const {
        ConfigMap m;
        for (const auto& [k, opt] : options)
            if (opt->count() > 0) m[k] = values.at(k);
        return m;
    }
};

}  // namespace detail

/// Defaults, then preset, then config file, then flags.
inline ConfigMap resolve(const Schema& schema, const std::string& preset, const std::string& config_file,
                         const ConfigMap& flags) {
    ConfigMap cfg = schema_defaults(schema);
    if (!preset.empty()) apply_layer(cfg, parse_config_text(preset_text(preset), "preset " + preset), schema, "preset " + preset);
    if (!config_file.empty()) apply_layer(cfg, read_config_file(config_file), schema, "config file " + config_file);
    apply_layer(cfg, flags, schema, "flags");
    return cfg;
}

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Elliptic-curve keypair memorization lab", std::string(kToolName)};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolVersion));

    struct Common {
        std::string config, preset, out_dir, manifest_out;
        bool cluster = false;
    };
    std::map<std::string, Common> common;
    std::map<std::string, detail::KeyFlags> flags;
    std::map<std::string, CLI::App*> apps;

    auto add = [&](CLI::App* parent, const std::string& name, const std::string& full, const std::string& help) {
        CLI::App* sub = parent->add_subcommand(name, help);
        auto& cm = common[full];
        sub->add_option("--config", cm.config, "flat key = value config file");
        sub->add_option("--manifest-out", cm.manifest_out, "where to write the run manifest");
        flags[full].attach(*sub, schema_for(full));
        apps[full] = sub;
        return sub;
    };

    add(&app, "keygen", "keygen", "derive one keypair and print it with its field-operation counts");
    auto* dataset = add(&app, "dataset", "dataset", "write a fixed train/eval dataset");
    dataset->add_option("--out", common["dataset"].out_dir, "output directory")->required();
    auto* train = add(&app, "train", "train", "run a memorization, stream or ablation experiment");
    train->add_option("--preset", common["train"].preset, "desk-memorize, desk-stream, desk-ablation or paper-scale");
    train->add_option("--out", common["train"].out_dir, "output directory")->required();
    train->add_flag("--i-have-a-cluster", common["train"].cluster, "allow configs marked not desk-runnable");
    CLI::App* cost = app.add_subcommand("cost-model", "cycle and attack-odds calculus");
    cost->require_subcommand(1);
    add(cost, "tables", "cost-model tables", "print Tables 2-7 and the storage estimates")
        ->add_option("--csv", common["cost-model tables"].out_dir, "directory for one CSV per table");
    add(cost, "attack", "cost-model attack", "victim odds for one scenario");

    std::string manifest_path, rerun_out, rerun_manifest_out;
    bool rerun_cluster = false;
    CLI::App* rerun = app.add_subcommand("rerun", "repeat a run from its manifest");
    rerun->add_option("manifest", manifest_path, "manifest.json of the earlier run")->required();
    rerun->add_option("--out", rerun_out, "output directory (defaults to the manifest's)");
    rerun->add_option("--manifest-out", rerun_manifest_out, "where to write the new manifest");
    rerun->add_flag("--i-have-a-cluster", rerun_cluster, "allow configs marked not desk-runnable");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            app.exit(e, out, err);
            return kExitOk;
        }
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    }

    try {
        if (rerun->parsed()) {
            const Manifest m = read_manifest(manifest_path);
            Outputs o;
            if (!rerun_out.empty())
                o.out_dir = rerun_out;
            else if (!m.output.empty())
                o.out_dir = m.output;
            if (!rerun_manifest_out.empty()) o.manifest_out = rerun_manifest_out;
            o.cluster_ack = rerun_cluster;
            ConfigMap cfg = schema_defaults(schema_for(m.subcommand));
            apply_layer(cfg, m.config, schema_for(m.subcommand), "manifest " + manifest_path);
            return dispatch(m.subcommand, cfg, o, out, err);
        }
        for (const auto& [full, sub] : apps) {
            if (!sub->parsed()) continue;
            const Common& cm = common[full];
            const ConfigMap cfg = resolve(schema_for(full), cm.preset, cm.config, flags[full].given());
            Outputs o;
            if (!cm.out_dir.empty()) o.out_dir = cm.out_dir;
            if (!cm.manifest_out.empty()) o.manifest_out = cm.manifest_out;
            o.cluster_ack = cm.cluster;
            return dispatch(full, cfg, o, out, err);
        }
        err << "error: no subcommand\n";
        return kExitConfig;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DomainError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericError& e) {
        err << "error: numeric abort: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

inline int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
    return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace eclab::cli
