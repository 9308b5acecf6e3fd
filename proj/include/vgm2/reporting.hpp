//
// Copyright 2026 The VGM2 Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#ifndef VGM2_REPORTING_HPP
#define VGM2_REPORTING_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "config.hpp"
#include "error.hpp"
#include "losses.hpp"
#include "run_io.hpp"

/**
 * @file reporting.hpp
 *
 * @brief Summary tables built from run directories only.
 *
 * Column orders are fixed (see README). Rendering is a pure function of
 * the files on disk, so re-running the report gives identical bytes.
 */

namespace vgm2 {

struct SeedStats {
    double mean = 0.0;
    double std = 0.0; ///< population standard deviation
    std::size_t n = 0;
};

/// Mean and population std; NaN entries are an error.
inline SeedStats aggregate_seeds(std::span<const double> values) {
    if (values.empty()) {
        throw ConfigError("aggregate_seeds: no values");
    }
    SeedStats s;
    s.n = values.size();
    // sorted accumulation keeps the result independent of run order
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    for (double x : v) {
        if (std::isnan(x)) {
            throw NumericalError("aggregate_seeds: NaN value");
        }
        s.mean += x;
    }
    s.mean /= static_cast<double>(s.n);
    double ss = 0.0;
    for (double x : v) {
        ss += (x - s.mean) * (x - s.mean);
    }
    s.std = s.n > 1 ? std::sqrt(ss / static_cast<double>(s.n)) : 0.0;
    return s;
}

/// Seed-level scores of one (method, seed): client-averaged final F1 and ECE.
struct SeedScore {
    Method method = Method::vgm2;
    std::uint64_t seed = 0;
    double f1 = 0.0;
    double ece = 0.0;
    std::size_t bytes_up = 0;
    std::size_t clients = 0;
};

struct CalibrationCounts {
    std::vector<double> count, sum_conf, sum_same;
};

/// Everything the reports need, loaded from one run directory.
struct RunDirectory {
    std::filesystem::path path;
    RunConfig config;
    std::vector<SeedScore> scores;
    std::map<std::string, CalibrationCounts> calibration; ///< by method, summed over seeds
    std::map<std::string, std::vector<double>> epsilon;   ///< by method, one per seed
    std::vector<nlohmann::json> rounds;
    std::vector<AttackReport> attacks;
    std::string digest;
};

inline RunDirectory load_run(const std::filesystem::path& dir) {
    RunDirectory run;
    run.path = dir;
    run.config = load_config((dir / "config.txt").string());

    std::vector<std::pair<Method, std::uint64_t>> keys;
    const auto metrics = read_metrics(dir, &keys);
    std::map<std::pair<int, std::uint64_t>, SeedScore> acc;
    for (std::size_t i = 0; i < metrics.size(); ++i) {
        auto& s = acc[{static_cast<int>(keys[i].first), keys[i].second}];
        s.method = keys[i].first;
        s.seed = keys[i].second;
        if (metrics[i].skipped) {
            continue;
        }
        s.f1 += metrics[i].f1;
        s.ece += metrics[i].ece;
        s.bytes_up += metrics[i].bytes_up;
        ++s.clients;
    }
    for (auto& [key, s] : acc) {
        if (s.clients > 0) {
            s.f1 /= static_cast<double>(s.clients);
            s.ece /= static_cast<double>(s.clients);
        }
        run.scores.push_back(s);
    }

    if (std::filesystem::exists(dir / "calibration.csv")) {
        for (const auto& row : read_csv(dir / "calibration.csv", kCalibrationHeader)) {
            auto& c = run.calibration[row[0]];
            const auto b = std::stoull(row[2]);
            if (c.count.size() <= b) {
                c.count.resize(b + 1, 0.0);
                c.sum_conf.resize(b + 1, 0.0);
                c.sum_same.resize(b + 1, 0.0);
            }
            c.count[b] += parse_number(row[3]);
            c.sum_conf[b] += parse_number(row[4]);
            c.sum_same[b] += parse_number(row[5]);
        }
    }
    if (std::filesystem::exists(dir / "accountant.json")) {
        std::ifstream in(dir / "accountant.json");
        const auto j = nlohmann::json::parse(in);
        for (const auto& r : j.at("runs")) {
            const auto& e = r.at("epsilon");
            run.epsilon[r.at("method").get<std::string>()].push_back(e.is_string() ? parse_number(e.get<std::string>())
                                                                                   : e.get<double>());
        }
    }
    if (std::filesystem::exists(dir / "rounds.jsonl")) {
        std::ifstream in(dir / "rounds.jsonl");
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty()) {
                run.rounds.push_back(nlohmann::json::parse(line));
            }
        }
    }
    if (std::filesystem::exists(dir / "attack.csv")) {
        for (const auto& row : read_csv(dir / "attack.csv", kAttackHeader)) {
            AttackReport r;
            r.seed = std::stoull(row[0]);
            r.trials = std::stoull(row[1]);
            r.target_client = std::stoull(row[2]);
            r.dp_sigma = parse_number(row[3]);
            r.auc_client = parse_number(row[4]);
            r.auc_aggregate = parse_number(row[5]);
            r.auc_client_dp = parse_number(row[6]);
            r.auc_aggregate_dp = parse_number(row[7]);
            run.attacks.push_back(r);
        }
    }
    if (std::filesystem::exists(dir / "digest.txt")) {
        std::ifstream in(dir / "digest.txt");
        std::getline(in, run.digest);
    }
    return run;
}

// ---------------------------------------------------------------------------
// Tables

/// A rendered table: fixed header plus string cells.
struct Table {
    std::string name;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

inline std::string fixed(double v, int digits = 4) {
    if (std::isnan(v)) {
        return "nan";
    }
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

struct ResultsRow {
    std::string method;
    std::string dataset;
    SeedStats f1;
    SeedStats ece;
};

namespace detail {

inline std::string dataset_label(const RunConfig& c) { return c.dataset; }

inline SeedStats stats_or_nan(const std::vector<double>& v) {
    const bool any_nan = std::any_of(v.begin(), v.end(), [](double x) { return std::isnan(x); });
    if (v.empty() || any_nan) {
        return SeedStats{std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN(), v.size()};
    }
    return aggregate_seeds(v);
}

} // namespace detail

/**
 * Pools one or more run directories into a (method, dataset) table. The
 * runs must share their config apart from seeds and output location;
 * otherwise the error lists the keys that differ.
 */
inline std::vector<ResultsRow> aggregate_seeds(const std::vector<RunDirectory>& runs) {
    if (runs.empty()) {
        throw ConfigError("aggregate_seeds: no runs");
    }
    for (std::size_t i = 1; i < runs.size(); ++i) {
        const auto diff = differing_keys(runs[0].config, runs[i].config, {"seeds", "output"});
        if (!diff.empty()) {
            std::string keys;
            for (const auto& k : diff) {
                keys += (keys.empty() ? "" : ", ") + k;
            }
            throw ConfigError("aggregate_seeds: runs differ in " + keys);
        }
    }
    std::map<std::string, std::map<std::uint64_t, std::pair<double, double>>> by_method;
    for (const auto& run : runs) {
        for (const auto& s : run.scores) {
            auto& slot = by_method[to_string(s.method)];
            if (slot.contains(s.seed)) {
                throw ConfigError("aggregate_seeds: seed " + std::to_string(s.seed) + " of method " +
                                  to_string(s.method) + " appears twice");
            }
            slot[s.seed] = {s.f1, s.ece};
        }
    }
    std::vector<ResultsRow> out;
    for (Method m : {Method::vgm2, Method::local, Method::prototype}) {
        auto it = by_method.find(to_string(m));
        if (it == by_method.end()) {
            continue;
        }
        std::vector<double> f1, ece;
        for (const auto& [seed, v] : it->second) {
            f1.push_back(v.first);
            ece.push_back(v.second);
        }
        out.push_back(ResultsRow{it->first, detail::dataset_label(runs[0].config), detail::stats_or_nan(f1),
                                 detail::stats_or_nan(ece)});
    }
    return out;
}

inline Table results_table(const std::vector<ResultsRow>& rows) {
    Table t{"results", {"method", "dataset", "f1_mean", "f1_std", "ece_mean", "ece_std", "n_seeds"}, {}};
    for (const auto& r : rows) {
        t.rows.push_back({r.method, r.dataset, fixed(r.f1.mean), fixed(r.f1.std), fixed(r.ece.mean), fixed(r.ece.std),
                          std::to_string(r.f1.n)});
    }
    return t;
}

struct AblationRow {
    std::string value;
    SeedStats f1;
    SeedStats ece;
};

/**
 * One-parameter sweep: each run differs from the others only in `key`
 * (plus output location). Rows are sorted by the parameter value, numerically
 * when every value parses as a number. Scores are those of `method`.
 */
inline std::vector<AblationRow> ablation_table(const std::vector<RunDirectory>& runs, const std::string& key,
                                               Method method = Method::vgm2) {
    if (runs.empty()) {
        throw ConfigError("ablation_table: no runs");
    }
    get_config_value(runs[0].config, key); // validates the key
    std::set<std::string> seen;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const auto diff = differing_keys(runs[0].config, runs[i].config, {"output", key});
        if (!diff.empty()) {
            throw ConfigError("ablation_table: runs are not a sweep over '" + key + "'; they also differ in " +
                              diff.front());
        }
        if (!seen.insert(get_config_value(runs[i].config, key)).second) {
            throw ConfigError("ablation_table: value " + key + "=" + get_config_value(runs[i].config, key) +
                              " appears twice");
        }
    }
    std::vector<AblationRow> out;
    for (const auto& run : runs) {
        std::vector<double> f1, ece;
        for (const auto& s : run.scores) {
            if (s.method == method) {
                f1.push_back(s.f1);
                ece.push_back(s.ece);
            }
        }
        if (f1.empty()) {
            throw ConfigError("ablation_table: run " + run.path.string() + " has no " + to_string(method) + " results");
        }
        out.push_back(AblationRow{get_config_value(run.config, key), detail::stats_or_nan(f1), detail::stats_or_nan(ece)});
    }
    const bool numeric = std::all_of(out.begin(), out.end(), [](const AblationRow& r) {
        try {
            std::size_t used = 0;
            std::stod(r.value, &used);
            return used == r.value.size();
        } catch (const std::exception&) {
            return false;
        }
    });
    std::sort(out.begin(), out.end(), [&](const AblationRow& a, const AblationRow& b) {
        return numeric ? std::stod(a.value) < std::stod(b.value) : a.value < b.value;
    });
    return out;
}

inline Table ablation_to_table(const std::vector<AblationRow>& rows, const std::string& key) {
    Table t{"ablation", {key, "f1_mean", "f1_std", "ece_mean", "ece_std", "n_seeds"}, {}};
    for (const auto& r : rows) {
        t.rows.push_back({r.value, fixed(r.f1.mean), fixed(r.f1.std), fixed(r.ece.mean), fixed(r.ece.std),
                          std::to_string(r.f1.n)});
    }
    return t;
}

struct CalibrationCurve {
    std::vector<ReliabilityBin> bins;
    double ece = 0.0;
};

/// Reliability bins from raw confidences.
inline CalibrationCurve calibration_curve(std::span<const double> conf, std::span<const int> same,
                                          std::size_t bins = 15) {
    if (conf.empty()) {
        throw ConfigError("calibration_curve: no stored confidences");
    }
    CalibrationCurve c;
    c.bins = reliability_bins(conf, same, bins);
    for (const auto& b : c.bins) {
        c.ece += b.mass * std::abs(b.accuracy - b.confidence);
    }
    return c;
}

/// Reliability bins of one method pooled over the seeds of a run directory.
inline CalibrationCurve calibration_curve(const RunDirectory& run, const std::string& method) {
    auto it = run.calibration.find(method);
    if (it == run.calibration.end()) {
        throw ConfigError("calibration_curve: run has no stored confidences for " + method);
    }
    const auto& c = it->second;
    double total = 0.0;
    for (double n : c.count) {
        total += n;
    }
    if (!(total > 0.0)) {
        throw ConfigError("calibration_curve: run has no stored confidences for " + method);
    }
    CalibrationCurve out;
    for (std::size_t b = 0; b < c.count.size(); ++b) {
        ReliabilityBin bin;
        bin.count = static_cast<std::size_t>(c.count[b]);
        if (c.count[b] > 0.0) {
            bin.confidence = c.sum_conf[b] / c.count[b];
            bin.accuracy = c.sum_same[b] / c.count[b];
            bin.mass = c.count[b] / total;
        }
        out.ece += bin.mass * std::abs(bin.accuracy - bin.confidence);
        out.bins.push_back(bin);
    }
    return out;
}

inline Table calibration_table(const CalibrationCurve& c, const std::string& method) {
    Table t{"calibration " + method, {"bin", "lower", "upper", "confidence", "accuracy", "mass", "count"}, {}};
    const double n = static_cast<double>(c.bins.size());
    for (std::size_t b = 0; b < c.bins.size(); ++b) {
        const auto& bin = c.bins[b];
        t.rows.push_back({std::to_string(b), fixed(static_cast<double>(b) / n), fixed(static_cast<double>(b + 1) / n),
                          fixed(bin.confidence), fixed(bin.accuracy), fixed(bin.mass), std::to_string(bin.count)});
    }
    t.rows.push_back({"ece", "", "", "", "", fixed(c.ece), ""});
    return t;
}

struct CommunicationRow {
    std::string method;
    std::size_t scalars = 0;           ///< per client upload
    std::size_t bytes_64 = 0;          ///< scalars x 8
    std::size_t bytes_32 = 0;          ///< scalars x 4
    double bytes_per_client_round = 0; ///< measured, headers included
    std::size_t total_bytes = 0;       ///< all uploads, all seeds
    std::size_t uploads = 0;
};

/// Upload budget per method from the round records.
inline std::vector<CommunicationRow> communication_report(const std::vector<nlohmann::json>& rounds) {
    if (rounds.empty()) {
        throw ConfigError("communication_report: no round records");
    }
    std::map<std::string, CommunicationRow> rows;
    for (const auto& r : rounds) {
        auto& row = rows[r.at("method").get<std::string>()];
        row.method = r.at("method").get<std::string>();
        for (const auto& c : r.at("clients")) {
            const auto b = c.at("bytes_up").get<std::size_t>();
            row.total_bytes += b;
            ++row.uploads;
            if (b > kPayloadHeaderBytes) {
                row.scalars = (b - kPayloadHeaderBytes) / 8;
            }
        }
    }
    std::vector<CommunicationRow> out;
    for (Method m : {Method::vgm2, Method::local, Method::prototype}) {
        auto it = rows.find(to_string(m));
        if (it == rows.end()) {
            continue;
        }
        auto row = it->second;
        row.bytes_64 = row.scalars * 8;
        row.bytes_32 = row.scalars * 4;
        row.bytes_per_client_round =
            row.uploads == 0 ? 0.0 : static_cast<double>(row.total_bytes) / static_cast<double>(row.uploads);
        out.push_back(row);
    }
    return out;
}

inline Table communication_table(const std::vector<CommunicationRow>& rows) {
    Table t{"communication",
            {"method", "scalars", "payload_bytes_64bit", "payload_bytes_32bit", "bytes_per_client_round", "total_bytes"},
            {}};
    for (const auto& r : rows) {
        t.rows.push_back({r.method, std::to_string(r.scalars), std::to_string(r.bytes_64), std::to_string(r.bytes_32),
                          fixed(r.bytes_per_client_round, 1), std::to_string(r.total_bytes)});
    }
    return t;
}

inline Table attack_table(const std::vector<AttackReport>& reports) {
    Table t{"attack", {"seed", "trials", "auc_client", "auc_aggregate", "auc_client_dp", "auc_aggregate_dp"}, {}};
    std::vector<double> a, b, c, d;
    for (const auto& r : reports) {
        t.rows.push_back({std::to_string(r.seed), std::to_string(r.trials), fixed(r.auc_client), fixed(r.auc_aggregate),
                          fixed(r.auc_client_dp), fixed(r.auc_aggregate_dp)});
        a.push_back(r.auc_client);
        b.push_back(r.auc_aggregate);
        c.push_back(r.auc_client_dp);
        d.push_back(r.auc_aggregate_dp);
    }
    if (!reports.empty()) {
        t.rows.push_back({"mean", "", fixed(aggregate_seeds(a).mean), fixed(aggregate_seeds(b).mean),
                          fixed(aggregate_seeds(c).mean), fixed(aggregate_seeds(d).mean)});
    }
    return t;
}

inline Table privacy_table(const RunDirectory& run) {
    Table t{"privacy", {"method", "dp_sigma", "clip", "delta", "epsilon"}, {}};
    for (const auto& [method, eps] : run.epsilon) {
        if (method != "vgm2") {
            continue;
        }
        const double e = eps.empty() ? 0.0 : *std::max_element(eps.begin(), eps.end());
        t.rows.push_back({method, fixed(run.config.dp.noise_multiplier), fixed(run.config.dp.clip_norm),
                          [&] { std::ostringstream os; os << run.config.dp.delta; return os.str(); }(), fixed(e)});
    }
    return t;
}

// ---------------------------------------------------------------------------
// Rendering

enum class ReportFormat { txt, csv };

inline ReportFormat parse_report_format(const std::string& s) {
    if (s == "txt") {
        return ReportFormat::txt;
    }
    if (s == "csv") {
        return ReportFormat::csv;
    }
    throw ConfigError("unknown report format '" + s + "' (expected csv or txt)");
}

/// CSV: "# name" line, header, rows. Text: "== name ==" and right-aligned columns.
inline std::string render(const Table& t, ReportFormat f) {
    std::ostringstream os;
    if (f == ReportFormat::csv) {
        os << "# " << t.name << "\n";
        auto line = [&](const std::vector<std::string>& cells) {
            for (std::size_t i = 0; i < cells.size(); ++i) {
                os << (i ? "," : "") << cells[i];
            }
            os << "\n";
        };
        line(t.header);
        for (const auto& r : t.rows) {
            line(r);
        }
        return os.str();
    }
    std::vector<std::size_t> width(t.header.size(), 0);
    for (std::size_t i = 0; i < t.header.size(); ++i) {
        width[i] = t.header[i].size();
        for (const auto& r : t.rows) {
            width[i] = std::max(width[i], r[i].size());
        }
    }
    os << "== " << t.name << " ==\n";
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            os << (i ? "  " : "") << std::setw(static_cast<int>(width[i])) << cells[i];
        }
        os << "\n";
    };
    line(t.header);
    for (const auto& r : t.rows) {
        line(r);
    }
    return os.str();
}

/// Full report for one run directory.
inline std::string render_report(const RunDirectory& run, ReportFormat f) {
    std::vector<Table> tables;
    tables.push_back(results_table(aggregate_seeds(std::vector<RunDirectory>{run})));
    if (!run.rounds.empty()) {
        tables.push_back(communication_table(communication_report(run.rounds)));
    }
    for (Method m : {Method::vgm2, Method::local}) {
        if (run.calibration.contains(to_string(m))) {
            tables.push_back(calibration_table(calibration_curve(run, to_string(m)), to_string(m)));
        }
    }
    if (run.epsilon.contains("vgm2")) {
        tables.push_back(privacy_table(run));
    }
    if (!run.attacks.empty()) {
        tables.push_back(attack_table(run.attacks));
    }
    std::string out;
    for (std::size_t i = 0; i < tables.size(); ++i) {
        out += (i ? "\n" : "") + render(tables[i], f);
    }
    return out;
}

} // namespace vgm2

#endif
