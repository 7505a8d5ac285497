#pragma once

// Cycle accounting for keypair generation and memorization, the birthday
// bound, and the victim odds of a partial rainbow table.
//
// Large counts are plain doubles (the biggest value needed is ~1e102). Odds
// are evaluated in the log domain so that m/a around 1e-60 does not vanish.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "eclab/bigint.hpp"
#include "eclab/errors.hpp"

namespace eclab::costmodel {

struct KeypairCostParams {
    double mults_per_keypair = 3456;
    double sqrs_per_keypair = 1408;
    double cycles_per_mult = 1169;  // 167 iterations x 7 operations
    double cycles_per_sqr = 501;    // 167 iterations x 3 operations

    void validate() const {
        if (!(mults_per_keypair > 0 && sqrs_per_keypair > 0 && cycles_per_mult > 0 && cycles_per_sqr > 0))
            throw DomainError("keypair cost parameters must be positive");
    }
};

inline double mult_cycles(const KeypairCostParams& p) { return p.mults_per_keypair * p.cycles_per_mult; }
inline double sqr_cycles(const KeypairCostParams& p) { return p.sqrs_per_keypair * p.cycles_per_sqr; }

inline double keypair_cycles(const KeypairCostParams& p) {
    p.validate();
    return mult_cycles(p) + sqr_cycles(p);
}

struct MlCostParams {
    double inference_flops = 2.5e10;
    double epochs_to_memorize = 14;
    double training_multiplier = 2.5;
    double flops_per_cycle = 128;

    static MlCostParams cat() { return {}; }
    static MlCostParams llama() { return {1.52e25, 14, 2.5, 128}; }

    void validate() const {
        // Zero epochs is allowed as a degenerate case.
        if (!(inference_flops > 0 && epochs_to_memorize >= 0 && training_multiplier > 0 && flops_per_cycle > 0))
            throw DomainError("ML cost parameters must be positive");
    }
};

inline double memorization_multiplier(const MlCostParams& p) {
    return p.epochs_to_memorize * p.training_multiplier / p.flops_per_cycle;
}

inline double ml_cycles_per_keypair(const MlCostParams& p) {
    p.validate();
    return p.inference_flops * memorization_multiplier(p);
}

// ---------------------------------------------------------------------------
// Keyspace

enum class KeyspaceMode { exact, paper };

inline std::string to_string(KeyspaceMode m) { return m == KeyspaceMode::paper ? "paper" : "exact"; }

inline KeyspaceMode keyspace_mode_from_string(std::string_view s) {
    if (s == "exact") return KeyspaceMode::exact;
    if (s == "paper") return KeyspaceMode::paper;
    throw ConfigError("unknown keyspace '" + std::string(s) + "' (expected exact or paper)");
}

/// The printed value of 256^32; the true value is about 1.1579e77.
inline constexpr double kPrintedKeyspace = 1.57e77;

/// 256^32 = 2^256, exactly.
inline BigUInt<5> keyspace_exact() {
    BigUInt<5> k;
    k.limb[4] = 1;
    return k;
}

/// 2^256 is a power of two and therefore exact as a double.
inline double keyspace_size(KeyspaceMode mode = KeyspaceMode::exact) {
    return mode == KeyspaceMode::paper ? kPrintedKeyspace : std::ldexp(1.0, 256);
}

inline double total_cycles(double keyspace, double per_key_cycles) {
    if (!(keyspace > 0 && per_key_cycles > 0)) throw DomainError("total_cycles needs positive inputs");
    const double t = keyspace * per_key_cycles;
    if (!std::isfinite(t)) throw std::range_error("total_cycles overflows a double");
    return t;
}

inline double resistance_cycles(double operations = std::ldexp(1.0, 128), double cycles_per_op = 1169) {
    if (!(operations > 0 && cycles_per_op > 0)) throw DomainError("resistance_cycles needs positive inputs");
    return operations * cycles_per_op;
}

// ---------------------------------------------------------------------------
// Birthday bound and victim odds

/// 1 - exp(-n(n-1) / (2 pool)).
inline double birthday_probability(std::uint64_t n, std::uint64_t pool = 365) {
    if (pool == 0) throw DomainError("birthday pool must be positive");
    if (n < 2) return 0.0;
    const double nn = static_cast<double>(n);
    return -std::expm1(-nn * (nn - 1) / (2.0 * static_cast<double>(pool)));
}

/// 1 - prod_{i<n} (1 - i/pool), the exact collision probability the
/// exponential form approximates.
inline double birthday_probability_exact(std::uint64_t n, std::uint64_t pool = 365) {
    if (pool == 0) throw DomainError("birthday pool must be positive");
    if (n > pool) return 1.0;
    double log_none = 0;
    for (std::uint64_t i = 1; i < n; ++i) log_none += std::log1p(-static_cast<double>(i) / static_cast<double>(pool));
    return -std::expm1(log_none);
}

inline double fifty_percent_point(double n) {
    if (!(n >= 0)) throw DomainError("fifty_percent_point needs n >= 0");
    return 1.17 * std::sqrt(n);
}

struct AttackScenario {
    double memorized = 0;                      // m
    double keyspace = std::ldexp(1.0, 256);    // a
    double population = 1;                     // n
    double target_probability = 0.5;           // p

    void validate() const {
        if (!(memorized > 0)) throw DomainError("memorized key count must be positive");
        if (!(keyspace > 0)) throw DomainError("keyspace must be positive");
        if (memorized > keyspace) throw DomainError("memorized keys exceed the keyspace");
        if (!(population >= 1)) throw DomainError("population must be at least 1");
    }
};

/// 1 - (1 - m/a)^n as -expm1(n log1p(-m/a)).
inline double victim_probability(const AttackScenario& s) {
    s.validate();
    if (s.memorized == s.keyspace) return 1.0;
    return -std::expm1(s.population * std::log1p(-s.memorized / s.keyspace));
}

enum class PopulationFormula {
    printed,    // n = ln(p) / ln(1 - m/a)
    corrected,  // n = ln(1 - p) / ln(1 - m/a), the inverse of victim_probability
};

inline double victim_population(const AttackScenario& s, PopulationFormula f = PopulationFormula::printed) {
    s.validate();
    const double p = s.target_probability;
    if (!(p > 0 && p < 1)) throw DomainError("target probability must lie in (0, 1)");
    if (s.memorized == s.keyspace) throw DomainError("ln(1 - m/a) is undefined when every key is memorized");
    const double num = f == PopulationFormula::printed ? std::log(p) : std::log1p(-p);
    return num / std::log1p(-s.memorized / s.keyspace);
}

inline constexpr double kBytesPerZettabyte = 1e21;

inline double rainbow_storage_bytes(double count, double bytes_per_pair) {
    if (!(count >= 0 && bytes_per_pair > 0)) throw DomainError("storage needs count >= 0 and positive record size");
    return count * bytes_per_pair;
}

// ---------------------------------------------------------------------------
// Tables

enum class TableMode { paper, exact };

inline std::string to_string(TableMode m) { return m == TableMode::exact ? "exact" : "paper"; }

inline TableMode table_mode_from_string(std::string_view s) {
    if (s == "paper") return TableMode::paper;
    if (s == "exact") return TableMode::exact;
    throw ConfigError("unknown table mode '" + std::string(s) + "' (expected paper or exact)");
}

/// Relative difference above which a cell is flagged against its printed value.
inline constexpr double kFlagThreshold = 0.05;

struct Cell {
    std::string key;        // stable id, e.g. "t4.memorize_cat"
    std::string parameter;  // row label
    double value = 0;
    std::string rendered;
    std::optional<double> printed;
    std::string printed_text;
    std::string note;
    bool flagged = false;

    double relative_difference() const {
        return printed && *printed != 0 ? std::abs(value - *printed) / std::abs(*printed) : 0.0;
    }
};

struct Table {
    int number = 0;
    std::string title;
    std::string value_header = "Value";
    std::vector<Cell> cells;

    const Cell& at(std::string_view key) const {
        for (const auto& c : cells)
            if (c.key == key) return c;
        throw std::out_of_range("no cell '" + std::string(key) + "' in table " + std::to_string(number));
    }
};

/// True when `value` agrees with a printed figure to within `relative`, or
/// to within `half_unit` (half a unit in the last printed place) when the
/// printed figure carries fewer digits than that.
inline bool matches_printed(double value, double printed, double relative, double half_unit = 0) {
    return std::abs(value - printed) <= std::max(relative * std::abs(printed), half_unit);
}

/// Scientific rendering in the usual a.bc*10^e form; plain digits below 1e5.
inline std::string render_number(double v, int significant = 3) {
    if (v == 0) return "0";
    if (!std::isfinite(v)) return v > 0 ? "inf" : "nan";
    const double mag = std::abs(v);
    char buf[64];
    if (mag >= 1e-3 && mag < 1e5) {
        if (mag >= 1 && v == std::round(v)) {
            std::snprintf(buf, sizeof buf, "%.0f", v);
        } else {
            std::snprintf(buf, sizeof buf, "%.*g", significant, v);
        }
        return buf;
    }
    std::snprintf(buf, sizeof buf, "%.*e", significant - 1, v);
    std::string s(buf);
    const auto e = s.find('e');
    const int exponent = std::stoi(s.substr(e + 1));
    return s.substr(0, e) + "*10^" + std::to_string(exponent);
}

inline std::string render_percent(double fraction, int significant = 3) {
    const double pct = fraction * 100;
    char buf[64];
    if (pct != 0 && std::abs(pct) < 1e-3) {
        return render_number(pct, significant) + "%";
    }
    std::snprintf(buf, sizeof buf, "%.*g%%", significant, pct);
    return buf;
}

namespace detail {

struct TableBuilder {
    Table table;

    // The returned reference is valid until the next add().
    Cell& add(std::string key, std::string parameter, double value, std::string rendered) {
        Cell c;
        c.key = std::move(key);
        c.parameter = std::move(parameter);
        c.value = value;
        c.rendered = std::move(rendered);
        table.cells.push_back(std::move(c));
        return table.cells.back();
    }

    Cell& cell(std::string_view key) { return const_cast<Cell&>(std::as_const(table).at(key)); }

    static void note(Cell& c, const std::string& text) { c.note = c.note.empty() ? text : c.note + "; " + text; }

    /// Attaches the printed value and flags the cell when it is more than 5% off.
    static void printed(Cell& c, double p, std::string text) {
        c.printed = p;
        c.printed_text = std::move(text);
        if (c.relative_difference() > kFlagThreshold) {
            c.flagged = true;
            char buf[96];
            std::snprintf(buf, sizeof buf, "differs from printed %s by %.1f%%", c.printed_text.c_str(),
                          100 * c.relative_difference());
            note(c, buf);
        }
    }
};

}  // namespace detail

/// Tables 2 through 7 and the storage estimates. In paper mode the chain of
/// intermediates uses the rounded constants as printed (1.57e77, 4.75e6,
/// 6.84e9, 4.16e24, 1.07e87, 6.53e101); in exact mode every cell is
/// recomputed from the inputs, with the true 2^256 keyspace.
inline std::vector<Table> render_tables(TableMode mode) {
    using detail::TableBuilder;
    const bool paper = mode == TableMode::paper;
    const int sig = paper ? 3 : 4;
    std::vector<Table> out;

    const KeypairCostParams kp;
    const double kp_total = keypair_cycles(kp);
    {
        TableBuilder b;
        b.table = {2, "Keypair Generation Complexity"};
        b.add("t2.mults", "Field Multiplications per Keypair", kp.mults_per_keypair, "3456");
        b.add("t2.sqrs", "Field Squarings per Keypair", kp.sqrs_per_keypair, "1408");
        b.add("t2.cycles_per_mult", "Cycles per Field Mult", kp.cycles_per_mult, "167 * 7 = 1169");
        b.add("t2.cycles_per_sqr", "Cycles per Field Sqr", kp.cycles_per_sqr, "167 * 3 = 501");
        auto& m = b.add("t2.mult_cycles", "Mult Cycles per Keypair", mult_cycles(kp), render_number(mult_cycles(kp), sig));
        TableBuilder::printed(m, 4.04e6, "4.04*10^6");
        auto& s = b.add("t2.sqr_cycles", "Add Cycles per Keypair", sqr_cycles(kp), render_number(sqr_cycles(kp), sig));
        s.note = "squaring cycles, labelled Add when printed";
        TableBuilder::printed(s, 7.05e5, "7.05*10^5");
        auto& t = b.add("t2.total_cycles", "Total Cycles per Keypair", kp_total, render_number(kp_total, sig));
        TableBuilder::printed(t, 4.75e6, "4.75*10^6");
        out.push_back(std::move(b.table));
    }

    const MlCostParams cat = MlCostParams::cat(), llama = MlCostParams::llama();
    const double cat_cycles = ml_cycles_per_keypair(cat), llama_cycles = ml_cycles_per_keypair(llama);
    {
        TableBuilder b;
        b.table = {3, "Machine Learning Operation Complexity"};
        b.add("t3.flops_per_cycle", "Calculations in Bfloat16 Precision (FLOPs/cycle)", cat.flops_per_cycle, "128");
        b.add("t3.epochs", "Epochs to Memorize Keypair", cat.epochs_to_memorize, "14");
        b.add("t3.multiplier", "Bfloat16 training multiplier", cat.training_multiplier, "2.5");
        auto& mm = b.add("t3.memorization_multiplier", "Memorization multiplier (14 * 2.5 / 128)",
                         memorization_multiplier(cat), render_number(memorization_multiplier(cat), sig));
        TableBuilder::printed(mm, 0.27, "0.27");
        b.add("t3.cat_flops", "CAT inference baseline FLOPs", cat.inference_flops, render_number(cat.inference_flops));
        auto& c = b.add("t3.cat_cycles", "CAT Total Cycles per Keypair", cat_cycles, render_number(cat_cycles, sig));
        TableBuilder::printed(c, 6.84e9, "6.84*10^9");
        b.add("t3.llama_flops", "Llama 3.1 405B inference FLOPs", llama.inference_flops,
              render_number(llama.inference_flops));
        auto& l = b.add("t3.llama_cycles", "Llama 3.1 405B cycles per keypair", llama_cycles,
                        render_number(llama_cycles, 6));
        TableBuilder::printed(l, 4.15625e24, "4.15625*10^24");
        out.push_back(std::move(b.table));
    }

    const double keyspace = keyspace_size(paper ? KeyspaceMode::paper : KeyspaceMode::exact);
    const double per_key = paper ? 4.75e6 : kp_total;
    const double per_cat = paper ? 6.84e9 : cat_cycles;
    const double per_llama = paper ? 4.16e24 : llama_cycles;
    const double gen_all = total_cycles(keyspace, per_key);
    const double mem_cat = total_cycles(keyspace, per_cat);
    const double mem_llama = total_cycles(keyspace, per_llama);
    const double resist_ops = std::ldexp(1.0, 128);
    const double resist = resistance_cycles(resist_ops, kp.cycles_per_mult);
    {
        TableBuilder b;
        b.table = {4, "Cycles to Generate an Algorithmic Rainbow Table"};
        auto& ops = b.add("t4.resistance_ops", "NIST's cryptographic resistance (Operations)", resist_ops,
                          "2^128 = " + render_number(resist_ops, sig));
        TableBuilder::printed(ops, 3.4e38, "3.4*10^38");
        auto& rc = b.add("t4.resistance_cycles", "Cryptographic resistance (cycles)", resist,
                         render_number(resist_ops, 2) + " * 1169 = " + render_number(resist, sig));
        rc.note = "the stated product; not reproducible as printed";
        TableBuilder::printed(rc, 3.4e41, "3.4*10^41");
        auto& ks = b.add("t4.keyspace", "Number of total keypairs", keyspace, "256^32 = " + render_number(keyspace, sig));
        if (!paper) ks.note = "exactly " + keyspace_exact().to_decimal();
        TableBuilder::printed(ks, kPrintedKeyspace, "1.57*10^77");
        auto& g = b.add("t4.generate_all", "Total cycles to generate all keypairs", gen_all,
                        render_number(keyspace, sig) + " * " + render_number(per_key, sig) + " = " +
                            render_number(gen_all, sig));
        TableBuilder::printed(g, 7.46e83, "7.46*10^83");
        auto& mc = b.add("t4.memorize_cat", "Total cycles to memorize all keypairs (CAT)", mem_cat,
                         render_number(keyspace, sig) + " * " + render_number(per_cat, sig) + " = " +
                             render_number(mem_cat, sig));
        TableBuilder::printed(mc, 1.07e87, "1.07*10^87");
        auto& ml = b.add("t4.memorize_llama", "Total cycles to memorize all keypairs (Llama3.1 405B)", mem_llama,
                         render_number(keyspace, sig) + " * " + render_number(per_llama, sig) + " = " +
                             render_number(mem_llama, sig));
        TableBuilder::printed(ml, 6.53e101, "6.53*10^101");
        out.push_back(std::move(b.table));
    }

    {
        TableBuilder b;
        b.table = {5, "The Birthday Paradox"};
        b.table.value_header = "Odds Two Share a Birthday";
        const std::pair<std::uint64_t, std::pair<double, const char*>> rows[] = {
            {2, {0.0027, "0.27%"}}, {5, {0.027, "2.7%"}}, {10, {0.116, "11.6%"}}, {25, {0.5604, "56.04%"}}};
        for (const auto& [n, printed] : rows) {
            const double p = birthday_probability(n);
            auto& c = b.add("t5.n" + std::to_string(n), std::to_string(n) + " people", p, render_percent(p, 4));
            if (!paper) c.note = "exact product " + render_percent(birthday_probability_exact(n), 4);
            TableBuilder::printed(c, printed.first, printed.second);
        }
        out.push_back(std::move(b.table));
    }

    {
        TableBuilder b;
        b.table = {6, "Cracking 256-bit"};
        const double base_cat = paper ? 1.07e87 : mem_cat;
        const double base_llama = paper ? 6.53e101 : mem_llama;
        b.add("t6.base_cat", "Base CAT Curve Memorization", base_cat, render_number(base_cat, sig));
        b.add("t6.base_llama", "Base Llama3.1 405B Curve Memorization", base_llama, render_number(base_llama, sig));
        auto& rc = b.add("t6.resistance_cycles", "Cryptographic resistance", resist, render_number(resist, sig));
        TableBuilder::printed(rc, 3.4e41, "3.4*10^41");
        const double half_cat = fifty_percent_point(base_cat), half_llama = fifty_percent_point(base_llama);
        auto& hc = b.add("t6.fifty_cat", "50%_p CAT", half_cat, render_number(half_cat, sig));
        TableBuilder::printed(hc, 3.83e43, "3.83*10^43");
        auto& hl = b.add("t6.fifty_llama", "50%_p Llama3.1 405B", half_llama, render_number(half_llama, sig));
        TableBuilder::printed(hl, 9.45e50, "9.45*10^50");
        if (!paper) {
            for (const char* key : {"t6.fifty_cat", "t6.fifty_llama"})
                TableBuilder::note(b.cell(key), "1.17 sqrt(n) applied to a cycle total, as printed; the bound counts keys, not cycles");
        }
        out.push_back(std::move(b.table));
    }

    {
        TableBuilder b;
        b.table = {7, "Practical Breakpoints"};
        const double population = 7.3e7;
        const double product = 200000.0 * 365 * 500;
        auto& pop = b.add("t7.population", "Large Company's Yearly Authentication Requests (Population)", population,
                          render_number(population, 2));
        pop.note = "200,000 * 365 * 500 evaluates to " + render_number(product, 3);
        if (!paper) TableBuilder::printed(pop, product, render_number(product, 3) + " (stated product)");
        b.add("t7.memorized", "Has Memorized 1 Quintillion Keypairs", 1e18, "10^18");
        AttackScenario s{1e18, keyspace, population, 0.5};
        const double odds = victim_probability(s);
        auto& o = b.add("t7.odds", "Current odds of solving a victim's private key", odds, render_percent(odds, 3));
        o.note = "not reproducible from 1 - (1 - m/a)^n";
        TableBuilder::printed(o, 0.0024e-2, "0.00024%");
        s.memorized = 1e21;
        const double odds21 = victim_probability(s);
        auto& o21 = b.add("t7.odds_sextillion", "Odds with 10^21 memorized keypairs", odds21, render_percent(odds21, 3));
        o21.note = "not reproducible from 1 - (1 - m/a)^n";
        TableBuilder::printed(o21, 0.14e-2, "0.14%");
        out.push_back(std::move(b.table));
    }

    {
        TableBuilder b;
        b.table = {0, "Storage"};
        const double full = rainbow_storage_bytes(keyspace_size(KeyspaceMode::exact), 64) / kBytesPerZettabyte;
        auto& f = b.add("storage.full_table_zb", "Full table, 2^256 pairs of 64 bytes (ZB)", full, render_number(full, sig));
        TableBuilder::printed(f, 7.41e57, "7.41*10^57");
        const double trillion = rainbow_storage_bytes(1e12, 65);
        auto& t = b.add("storage.trillion_bytes", "10^12 compressed pairs of 65 bytes (bytes)", trillion,
                        render_number(trillion, sig) + " = " + render_number(trillion / 1e12, 3) + " TB");
        t.note = "printed as (33+32)*8*10^12 = 2.89^14 and just under 300 TB, which agree with neither each other nor 65 TB";
        TableBuilder::printed(t, 2.89e14, "2.89*10^14");
        out.push_back(std::move(b.table));
    }
    return out;
}

inline const Table& find_table(const std::vector<Table>& tables, int number) {
    for (const auto& t : tables)
        if (t.number == number) return t;
    throw std::out_of_range("no table " + std::to_string(number));
}

inline std::string table_name(const Table& t) { return t.number ? "Table " + std::to_string(t.number) : t.title; }

inline std::string format_text(const std::vector<Table>& tables, TableMode mode) {
    std::ostringstream os;
    os << "mode: " << to_string(mode) << "\n";
    for (const auto& t : tables) {
        os << "\n" << table_name(t);
        if (t.number) os << ": " << t.title;
        os << "\n";
        std::size_t width = 0;
        for (const auto& c : t.cells) width = std::max(width, c.parameter.size());
        for (const auto& c : t.cells) {
            os << "  " << c.parameter << std::string(width - c.parameter.size() + 2, ' ') << c.rendered;
            if (c.flagged) os << "  [FLAG]";
            if (!c.note.empty()) os << "  (" << c.note << ")";
            os << "\n";
        }
    }
    return os.str();
}

namespace detail {
inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return q + "\"";
}
}  // namespace detail

inline std::string format_csv(const Table& t) {
    std::ostringstream os;
    os << "key,parameter,value,printed,flag,note\n";
    for (const auto& c : t.cells) {
        os << c.key << ',' << detail::csv_field(c.parameter) << ',' << detail::csv_field(c.rendered) << ','
           << detail::csv_field(c.printed_text) << ',' << (c.flagged ? "1" : "0") << ',' << detail::csv_field(c.note)
           << '\n';
    }
    return os.str();
}

/// One CSV per table under `dir`: table2.csv ... table7.csv, storage.csv.
inline std::vector<std::filesystem::path> write_csvs(const std::vector<Table>& tables, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
    std::vector<std::filesystem::path> paths;
    for (const auto& t : tables) {
        auto path = dir / (t.number ? "table" + std::to_string(t.number) + ".csv" : std::string("storage.csv"));
        std::ofstream os(path, std::ios::trunc);
        if (!os) throw IoError("cannot write " + path.string());
        os << format_csv(t);
        if (!os.flush()) throw IoError("write to " + path.string() + " failed");
        paths.push_back(path);
    }
    return paths;
}

}  // namespace eclab::costmodel
