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

#ifndef VGM2_RUN_IO_HPP
#define VGM2_RUN_IO_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "config.hpp"
#include "error.hpp"
#include "losses.hpp"
#include "runtime.hpp"

/**
 * @file run_io.hpp
 *
 * @brief On-disk layout of a run directory.
 *
 *   config.txt        canonical config snapshot
 *   rounds.jsonl      one RoundRecord per line, tagged with method and seed
 *   metrics.csv       final per-client metrics
 *   calibration.csv   15-bin reliability counts per method and seed
 *   accountant.json   RDP state per method and seed
 *   timings.csv       wall-clock per round (kept out of the digest)
 *   digest.txt        FNV-1a 64 of rounds.jsonl
 *   attack.csv        written by `vgm2 attack`
 */

namespace vgm2 {

namespace fs = std::filesystem;

inline constexpr const char* kMetricsHeader = "method,seed,client,skipped,n_train,n_test,f1,ece,bytes_up,bytes_down";
inline constexpr const char* kCalibrationHeader = "method,seed,bin,count,sum_confidence,sum_same";
inline constexpr const char* kAttackHeader =
    "seed,trials,target_client,dp_sigma,auc_client,auc_aggregate,auc_client_dp,auc_aggregate_dp";

/// FNV-1a, 64-bit.
inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

/// Shortest round-trip decimal for a double; non-finite values as nan / inf / -inf.
inline std::string format_number(double v) {
    if (std::isnan(v)) {
        return "nan";
    }
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline double parse_number(const std::string& s) {
    if (s == "nan") {
        return std::numeric_limits<double>::quiet_NaN();
    }
    if (s == "inf") {
        return std::numeric_limits<double>::infinity();
    }
    if (s == "-inf") {
        return -std::numeric_limits<double>::infinity();
    }
    try {
        return std::stod(s);
    } catch (const std::exception&) {
        throw FormatError("not a number: '" + s + "'");
    }
}

namespace detail {

/// JSON has no NaN or infinity; those go out as strings.
inline nlohmann::json json_number(double v) {
    if (std::isfinite(v)) {
        return v;
    }
    return format_number(v);
}

} // namespace detail

/// Deterministic JSON form of a record; wall-clock is left out.
inline nlohmann::json to_json(const RoundRecord& r, Method method, std::uint64_t seed) {
    nlohmann::json j;
    j["method"] = to_string(method);
    j["seed"] = seed;
    j["round"] = r.round;
    j["cohort"] = r.cohort;
    auto skipped = nlohmann::json::array();
    for (const auto& [k, why] : r.skipped) {
        skipped.push_back({{"client", k}, {"reason", why}});
    }
    j["skipped"] = skipped;
    auto clients = nlohmann::json::array();
    for (const auto& c : r.clients) {
        clients.push_back({{"client", c.client},
                           {"n_train", c.n_train},
                           {"umap", detail::json_number(c.loss.umap)},
                           {"sim", detail::json_number(c.loss.sim)},
                           {"cal", detail::json_number(c.loss.cal)},
                           {"kl", detail::json_number(c.loss.kl)},
                           {"total", detail::json_number(c.loss.total)},
                           {"underflow", c.loss.underflow},
                           {"single_class", c.loss.single_class},
                           {"bytes_up", c.bytes_up},
                           {"bytes_down", c.bytes_down},
                           {"f1", detail::json_number(c.f1)},
                           {"ece", detail::json_number(c.ece)},
                           {"eval_underflow", c.eval_underflow},
                           {"saturated", c.saturated}});
    }
    j["clients"] = clients;
    j["lambda"] = detail::json_number(r.lambda);
    j["repairs"] = {{"dirichlet", r.dirichlet_repairs}, {"nig", r.nig_repairs}};
    j["vacuous_mask"] = r.vacuous_mask;
    j["epsilon"] = detail::json_number(r.epsilon);
    return j;
}

inline std::string record_line(const RoundRecord& r, Method method, std::uint64_t seed) {
    return to_json(r, method, seed).dump() + "\n";
}

/// Digest over the serialized records of one run.
inline std::uint64_t run_digest(const RunResult& res) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& r : res.rounds) {
        h = fnv1a64(record_line(r, res.method, res.seed), h);
    }
    return h;
}

/// Writes results into `dir`, creating it. Existing files are replaced.
class RunWriter {
  public:
    RunWriter(const fs::path& dir, const RunConfig& cfg) : dir_(dir) {
        fs::create_directories(dir_);
        write_file("config.txt", to_text(cfg));
        rounds_.open(dir_ / "rounds.jsonl", std::ios::trunc);
        metrics_.open(dir_ / "metrics.csv", std::ios::trunc);
        calibration_.open(dir_ / "calibration.csv", std::ios::trunc);
        timings_.open(dir_ / "timings.csv", std::ios::trunc);
        if (!rounds_ || !metrics_ || !calibration_ || !timings_) {
            throw ConfigError("cannot write run directory " + dir_.string());
        }
        metrics_ << kMetricsHeader << "\n";
        calibration_ << kCalibrationHeader << "\n";
        timings_ << "method,seed,round,wall_seconds\n";
        accountant_ = nlohmann::json::array();
    }

    void add(const RunResult& res) {
        const auto m = to_string(res.method);
        for (const auto& r : res.rounds) {
            const auto line = record_line(r, res.method, res.seed);
            rounds_ << line;
            digest_ = fnv1a64(line, digest_);
            timings_ << m << "," << res.seed << "," << r.round << "," << format_number(r.wall_seconds) << "\n";
        }
        for (const auto& c : res.clients) {
            metrics_ << m << "," << res.seed << "," << c.client << "," << (c.skipped ? 1 : 0) << "," << c.n_train
                     << "," << c.n_test << "," << format_number(c.f1) << "," << format_number(c.ece) << ","
                     << c.bytes_up << "," << c.bytes_down << "\n";
        }
        if (!res.confidences.empty()) {
            const auto bins = reliability_bins(res.confidences, res.same, 15);
            for (std::size_t b = 0; b < bins.size(); ++b) {
                const double n = static_cast<double>(bins[b].count);
                calibration_ << m << "," << res.seed << "," << b << "," << bins[b].count << ","
                             << format_number(bins[b].confidence * n) << "," << format_number(bins[b].accuracy * n)
                             << "\n";
            }
        }
        accountant_.push_back({{"method", m},
                               {"seed", res.seed},
                               {"sigma", res.accountant.sigma},
                               {"sampling_rate", res.accountant.sampling_rate},
                               {"steps", res.accountant.steps},
                               {"orders", res.accountant.orders},
                               {"rdp", res.accountant.rdp},
                               {"epsilon", detail::json_number(res.epsilon)}});
        rounds_.flush();
        metrics_.flush();
        calibration_.flush();
    }

    /// Writes accountant.json and digest.txt; returns the digest.
    std::uint64_t finish(double delta) {
        nlohmann::json acc{{"delta", delta}, {"runs", accountant_}};
        write_file("accountant.json", acc.dump(2) + "\n");
        write_file("digest.txt", hex64(digest_) + "\n");
        return digest_;
    }

  private:
    void write_file(const std::string& name, const std::string& text) {
        std::ofstream out(dir_ / name, std::ios::trunc);
        if (!out) {
            throw ConfigError("cannot write " + (dir_ / name).string());
        }
        out << text;
    }

    fs::path dir_;
    std::ofstream rounds_, metrics_, calibration_, timings_;
    nlohmann::json accountant_;
    std::uint64_t digest_ = 0xcbf29ce484222325ULL;
};

inline void write_attack_csv(const fs::path& dir, const std::vector<AttackReport>& reports) {
    std::ofstream out(dir / "attack.csv", std::ios::trunc);
    if (!out) {
        throw ConfigError("cannot write " + (dir / "attack.csv").string());
    }
    out << kAttackHeader << "\n";
    for (const auto& r : reports) {
        out << r.seed << "," << r.trials << "," << r.target_client << "," << format_number(r.dp_sigma) << ","
            << format_number(r.auc_client) << "," << format_number(r.auc_aggregate) << ","
            << format_number(r.auc_client_dp) << "," << format_number(r.auc_aggregate_dp) << "\n";
    }
}

// ---------------------------------------------------------------------------
// Reading

/// Splits a CSV file (no quoting) into rows; checks the header.
inline std::vector<std::vector<std::string>> read_csv(const fs::path& path, const std::string& header) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open " + path.string());
    }
    std::string line;
    if (!std::getline(in, line) || line != header) {
        throw FormatError(path.string() + ": unexpected header (expected '" + header + "')");
    }
    std::vector<std::vector<std::string>> rows;
    std::size_t lineno = 1;
    const auto width = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',') + 1);
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            cells.push_back(cell);
        }
        if (cells.size() != width) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(width) +
                              " fields");
        }
        rows.push_back(std::move(cells));
    }
    return rows;
}

inline std::vector<ClientMetrics> read_metrics(const fs::path& dir, std::vector<std::pair<Method, std::uint64_t>>* keys) {
    std::vector<ClientMetrics> out;
    for (const auto& row : read_csv(dir / "metrics.csv", kMetricsHeader)) {
        ClientMetrics m;
        if (keys != nullptr) {
            keys->emplace_back(parse_method(row[0]), std::stoull(row[1]));
        }
        m.client = std::stoull(row[2]);
        m.skipped = row[3] == "1";
        m.n_train = std::stoull(row[4]);
        m.n_test = std::stoull(row[5]);
        m.f1 = parse_number(row[6]);
        m.ece = parse_number(row[7]);
        m.bytes_up = std::stoull(row[8]);
        m.bytes_down = std::stoull(row[9]);
        out.push_back(m);
    }
    return out;
}

} // namespace vgm2

#endif
