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

#ifndef VGM2_CONFIG_HPP
#define VGM2_CONFIG_HPP

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "aggregation.hpp"
#include "error.hpp"
#include "losses.hpp"
#include "privacy.hpp"

/**
 * @file config.hpp
 *
 * @brief RunConfig and its `key = value` text format.
 *
 * Lines are `key = value`; `#` starts a comment. Lists are comma
 * separated. Unknown keys are an error so that typos do not silently fall
 * back to defaults. `to_text` writes every key, and parsing that text
 * gives back an identical config.
 */

namespace vgm2 {

enum class Method { vgm2, local, prototype };

inline std::string to_string(Method m) {
    switch (m) {
    case Method::vgm2:
        return "vgm2";
    case Method::local:
        return "local";
    case Method::prototype:
        return "prototype";
    }
    return "?";
}

inline Method parse_method(const std::string& s) {
    if (s == "vgm2") {
        return Method::vgm2;
    }
    if (s == "local") {
        return Method::local;
    }
    if (s == "prototype") {
        return Method::prototype;
    }
    throw ConfigError("unknown method '" + s + "' (expected vgm2, local or prototype)");
}

struct RunConfig {
    // data
    std::string dataset = "blobs"; ///< blobs | spirals | csv | idx
    std::string data_path;         ///< csv file, or idx image file
    std::string labels_path;       ///< idx label file
    std::size_t data_limit = 0;
    std::size_t classes = 6;
    std::size_t modes_per_class = 2;
    std::size_t per_class = 200;
    std::size_t input_dim = 10;
    double blob_box = 10.0;
    double blob_noise = 1.0;
    double spiral_noise = 0.15;
    double spiral_turns = 1.5;

    // federation
    std::size_t clients = 10;
    std::size_t shards = 2;
    std::size_t rounds = 30;
    std::size_t clients_per_round = 2;
    std::size_t local_epochs = 4;
    std::size_t steps_per_epoch = 10;
    double train_fraction = 0.8;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::vector<Method> methods{Method::vgm2, Method::local, Method::prototype};
    std::size_t threads = 0; ///< 0: one per participating client

    // model
    std::vector<std::size_t> hidden{64, 32};
    std::size_t latent_dim = 8;
    std::size_t K = 3;
    std::size_t pair_budget = 256;
    double balance_ratio = 0.5;
    std::size_t n_neighbors = 15;
    double min_dist = 0.1;
    std::size_t negatives_per_edge = 5;
    bool use_umap = true;
    bool learn_priors = false;
    double lr = 1e-3;
    double marker_lr = 1e-2;
    LossWeights weights{};
    double proto_beta = 0.1;
    AggregationMode aggregation = AggregationMode::moment_match;

    // privacy
    bool secure_agg = false;
    DPConfig dp{};

    // attack harness
    std::size_t attack_trials = 200;
    std::size_t attack_rounds = 2;
    double attack_dp_sigma = 1.0;

    std::string output = "runs/default";

    /// Horizon of the cosine schedule; 0 in the file means "rounds".
    std::size_t lambda_horizon = 0;

    void validate() const {
        auto positive = [](std::size_t v, const char* name) {
            if (v == 0) {
                throw ConfigError(std::string("config: ") + name + " must be positive");
            }
        };
        positive(clients, "clients");
        positive(shards, "shards");
        positive(rounds, "rounds");
        positive(clients_per_round, "clients_per_round");
        positive(local_epochs, "local_epochs");
        positive(steps_per_epoch, "steps_per_epoch");
        positive(K, "K");
        positive(pair_budget, "pair_budget");
        positive(latent_dim, "latent_dim");
        positive(attack_rounds, "attack_rounds");
        if (clients_per_round > clients) {
            throw ConfigError("config: clients_per_round (" + std::to_string(clients_per_round) +
                              ") exceeds clients (" + std::to_string(clients) + ")");
        }
        if (n_neighbors < 2) {
            throw ConfigError("config: n_neighbors must be at least 2");
        }
        if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
            throw ConfigError("config: train_fraction must lie in (0, 1)");
        }
        if (!(balance_ratio >= 0.0 && balance_ratio <= 1.0)) {
            throw ConfigError("config: balance_ratio must lie in [0, 1]");
        }
        if (!(min_dist > 0.0 && min_dist < 1.0)) {
            throw ConfigError("config: min_dist must lie in (0, 1)");
        }
        if (!(lr > 0.0) || !(marker_lr > 0.0)) {
            throw ConfigError("config: learning rates must be positive");
        }
        if (seeds.empty()) {
            throw ConfigError("config: at least one seed is required");
        }
        if (methods.empty()) {
            throw ConfigError("config: at least one method is required");
        }
        if (dataset != "blobs" && dataset != "spirals" && dataset != "csv" && dataset != "idx") {
            throw ConfigError("config: unknown dataset '" + dataset + "'");
        }
        if ((dataset == "csv" || dataset == "idx") && data_path.empty()) {
            throw ConfigError("config: dataset " + dataset + " needs data_path");
        }
        if (dataset == "idx" && labels_path.empty()) {
            throw ConfigError("config: dataset idx needs labels_path");
        }
        weights.validate();
        dp.validate();
    }

    /// Loss weights with the schedule horizon resolved.
    LossWeights resolved_weights() const {
        LossWeights w = weights;
        w.horizon = lambda_horizon == 0 ? rounds : lambda_horizon;
        return w;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) {
            throw std::invalid_argument(v);
        }
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
    }
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
        throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
    }
    try {
        return std::stoull(v);
    } catch (const std::exception&) {
        throw ConfigError("config: '" + key + "' is out of range");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "on" || v == "1" || v == "yes") {
        return true;
    }
    if (v == "false" || v == "off" || v == "0" || v == "no") {
        return false;
    }
    throw ConfigError("config: '" + key + "' expects on/off, got '" + v + "'");
}

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

template <class T, class F>
std::string join(const std::vector<T>& v, F f) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out += (i ? "," : "") + f(v[i]);
    }
    return out;
}

struct Field {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define VGM2_SIZE_FIELD(name)                                                                                          \
    {                                                                                                                  \
        #name, {                                                                                                       \
            [](RunConfig& c, const std::string& v) { c.name = parse_uint(#name, v); },                                 \
                [](const RunConfig& c) { return std::to_string(c.name); }                                              \
        }                                                                                                              \
    }
#define VGM2_DOUBLE_FIELD(key, member)                                                                                 \
    {                                                                                                                  \
        key, {                                                                                                         \
            [](RunConfig& c, const std::string& v) { c.member = parse_double(key, v); },                               \
                [](const RunConfig& c) { return format_double(c.member); }                                             \
        }                                                                                                              \
    }
#define VGM2_BOOL_FIELD(key, member)                                                                                   \
    {                                                                                                                  \
        key, {                                                                                                         \
            [](RunConfig& c, const std::string& v) { c.member = parse_bool(key, v); },                                 \
                [](const RunConfig& c) { return std::string(c.member ? "on" : "off"); }                                \
        }                                                                                                              \
    }
#define VGM2_STRING_FIELD(name)                                                                                        \
    {                                                                                                                  \
        #name, {                                                                                                       \
            [](RunConfig& c, const std::string& v) { c.name = v; }, [](const RunConfig& c) { return c.name; }          \
        }                                                                                                              \
    }

inline const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = {
        VGM2_STRING_FIELD(dataset),
        VGM2_STRING_FIELD(data_path),
        VGM2_STRING_FIELD(labels_path),
        VGM2_SIZE_FIELD(data_limit),
        VGM2_SIZE_FIELD(classes),
        VGM2_SIZE_FIELD(modes_per_class),
        VGM2_SIZE_FIELD(per_class),
        VGM2_SIZE_FIELD(input_dim),
        VGM2_DOUBLE_FIELD("blob_box", blob_box),
        VGM2_DOUBLE_FIELD("blob_noise", blob_noise),
        VGM2_DOUBLE_FIELD("spiral_noise", spiral_noise),
        VGM2_DOUBLE_FIELD("spiral_turns", spiral_turns),
        VGM2_SIZE_FIELD(clients),
        VGM2_SIZE_FIELD(shards),
        VGM2_SIZE_FIELD(rounds),
        VGM2_SIZE_FIELD(clients_per_round),
        VGM2_SIZE_FIELD(local_epochs),
        VGM2_SIZE_FIELD(steps_per_epoch),
        VGM2_DOUBLE_FIELD("train_fraction", train_fraction),
        {"seeds",
         {[](RunConfig& c, const std::string& v) {
              c.seeds.clear();
              for (const auto& s : split_list(v)) {
                  c.seeds.push_back(parse_uint("seeds", s));
              }
          },
          [](const RunConfig& c) { return join(c.seeds, [](std::uint64_t s) { return std::to_string(s); }); }}},
        {"methods",
         {[](RunConfig& c, const std::string& v) {
              c.methods.clear();
              for (const auto& s : split_list(v)) {
                  c.methods.push_back(parse_method(s));
              }
          },
          [](const RunConfig& c) { return join(c.methods, [](Method m) { return to_string(m); }); }}},
        VGM2_SIZE_FIELD(threads),
        {"hidden",
         {[](RunConfig& c, const std::string& v) {
              c.hidden.clear();
              for (const auto& s : split_list(v)) {
                  c.hidden.push_back(parse_uint("hidden", s));
              }
          },
          [](const RunConfig& c) { return join(c.hidden, [](std::size_t s) { return std::to_string(s); }); }}},
        VGM2_SIZE_FIELD(latent_dim),
        VGM2_SIZE_FIELD(K),
        VGM2_SIZE_FIELD(pair_budget),
        VGM2_DOUBLE_FIELD("balance_ratio", balance_ratio),
        VGM2_SIZE_FIELD(n_neighbors),
        VGM2_DOUBLE_FIELD("min_dist", min_dist),
        VGM2_SIZE_FIELD(negatives_per_edge),
        VGM2_BOOL_FIELD("use_umap", use_umap),
        VGM2_BOOL_FIELD("learn_priors", learn_priors),
        VGM2_DOUBLE_FIELD("lr", lr),
        VGM2_DOUBLE_FIELD("marker_lr", marker_lr),
        VGM2_DOUBLE_FIELD("gamma", weights.gamma),
        VGM2_DOUBLE_FIELD("eta", weights.eta),
        VGM2_DOUBLE_FIELD("lambda0", weights.lambda0),
        {"lambda_schedule",
         {[](RunConfig& c, const std::string& v) {
              if (v == "cosine") {
                  c.weights.schedule = LambdaSchedule::cosine;
              } else if (v == "constant") {
                  c.weights.schedule = LambdaSchedule::constant;
              } else {
                  throw ConfigError("config: lambda_schedule must be cosine or constant, got '" + v + "'");
              }
          },
          [](const RunConfig& c) {
              return std::string(c.weights.schedule == LambdaSchedule::cosine ? "cosine" : "constant");
          }}},
        VGM2_SIZE_FIELD(lambda_horizon),
        VGM2_DOUBLE_FIELD("proto_beta", proto_beta),
        {"aggregation",
         {[](RunConfig& c, const std::string& v) {
              if (v == "moment-match") {
                  c.aggregation = AggregationMode::moment_match;
              } else if (v == "natural-avg") {
                  c.aggregation = AggregationMode::natural_average;
              } else {
                  throw ConfigError("config: aggregation must be moment-match or natural-avg, got '" + v + "'");
              }
          },
          [](const RunConfig& c) { return std::string(to_string(c.aggregation)); }}},
        VGM2_BOOL_FIELD("secure_agg", secure_agg),
        VGM2_DOUBLE_FIELD("dp_sigma", dp.noise_multiplier),
        VGM2_DOUBLE_FIELD("dp_clip", dp.clip_norm),
        VGM2_DOUBLE_FIELD("dp_delta", dp.delta),
        VGM2_SIZE_FIELD(attack_trials),
        VGM2_SIZE_FIELD(attack_rounds),
        VGM2_DOUBLE_FIELD("attack_dp_sigma", attack_dp_sigma),
        VGM2_STRING_FIELD(output),
    };
    return table;
}

#undef VGM2_SIZE_FIELD
#undef VGM2_DOUBLE_FIELD
#undef VGM2_BOOL_FIELD
#undef VGM2_STRING_FIELD

} // namespace detail

/// Sets one key; throws ConfigError on unknown keys or bad values.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    const auto& f = detail::fields();
    auto it = f.find(key);
    if (it == f.end()) {
        throw ConfigError("config: unknown key '" + key + "'");
    }
    it->second.set(cfg, detail::trim(value));
}

inline std::string get_config_value(const RunConfig& cfg, const std::string& key) {
    const auto& f = detail::fields();
    auto it = f.find(key);
    if (it == f.end()) {
        throw ConfigError("config: unknown key '" + key + "'");
    }
    return it->second.get(cfg);
}

inline RunConfig parse_config(std::istream& in, const std::string& source = "<config>") {
    RunConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        line = detail::trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
        }
        try {
            set_config_value(cfg, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    cfg.validate();
    return cfg;
}

inline RunConfig parse_config_text(const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path);
    }
    return parse_config(in, path);
}

/// Canonical text form: every key, sorted.
inline std::string to_text(const RunConfig& cfg) {
    std::string out;
    for (const auto& [key, field] : detail::fields()) {
        out += key + " = " + field.get(cfg) + "\n";
    }
    return out;
}

/// Keys whose values differ between two configs.
inline std::vector<std::string> differing_keys(const RunConfig& a, const RunConfig& b,
                                               const std::vector<std::string>& ignore = {}) {
    std::vector<std::string> out;
    for (const auto& [key, field] : detail::fields()) {
        if (std::find(ignore.begin(), ignore.end(), key) != ignore.end()) {
            continue;
        }
        if (field.get(a) != field.get(b)) {
            out.push_back(key);
        }
    }
    return out;
}

} // namespace vgm2

#endif
