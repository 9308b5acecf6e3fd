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

#ifndef VGM2_ATTACK_HPP
#define VGM2_ATTACK_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "markers.hpp"
#include "payload.hpp"
#include "rng.hpp"
#include "special_functions.hpp"

namespace vgm2 {

/// ROC AUC via the Mann-Whitney statistic; tied scores get average ranks.
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) {
        throw ShapeError("roc_auc: scores and labels differ in length");
    }
    std::size_t pos = 0;
    for (int y : labels) {
        pos += (y == 1);
    }
    const std::size_t neg = labels.size() - pos;
    if (pos == 0 || neg == 0) {
        throw ConfigError("roc_auc: need both positive and negative examples");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(scores.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) {
            ++j;
        }
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            rank[order[k]] = avg;
        }
        i = j + 1;
    }
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1) {
            rank_sum += rank[i];
        }
    }
    const double p = static_cast<double>(pos), n = static_cast<double>(neg);
    return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

/**
 * Attack features from a released posterior: for each relation and
 * component, the posterior mean of mu, the posterior mean of sigma^2
 * (beta / (alpha - 1)) and the mean mixture weight.
 */
inline std::vector<double> summary_features(const RelationMarkerPosterior& q) {
    std::vector<double> f;
    f.reserve(6 * q.K);
    for (const auto& rel : q.relation) {
        const auto w = mixture_weights(rel);
        for (std::size_t c = 0; c < q.K; ++c) {
            const auto& n = rel.components[c];
            f.push_back(n.m);
            f.push_back(n.beta / (n.alpha - 1.0));
            f.push_back(w[c]);
        }
    }
    return f;
}

inline std::vector<double> summary_features(const SufficientStatsPayload& p) { return summary_features(payload_posterior(p)); }

struct AttackExample {
    std::vector<double> features;
    int member = 0;
};

struct LogisticModel {
    std::vector<double> weights;
    double bias = 0.0;
    std::vector<double> mean;
    std::vector<double> scale;

    double score(std::span<const double> x) const {
        double z = bias;
        for (std::size_t j = 0; j < weights.size(); ++j) {
            z += weights[j] * (x[j] - mean[j]) / scale[j];
        }
        return special::sigmoid(z);
    }
};

/// Full-batch gradient descent on standardized features with a small L2 penalty.
inline LogisticModel train_logistic(std::span<const AttackExample> data, std::size_t iterations = 500, double lr = 0.1,
                                    double l2 = 1e-3) {
    if (data.empty()) {
        throw ConfigError("train_logistic: no training data");
    }
    const std::size_t d = data.front().features.size();
    LogisticModel m;
    m.weights.assign(d, 0.0);
    m.mean.assign(d, 0.0);
    m.scale.assign(d, 0.0);
    for (const auto& ex : data) {
        for (std::size_t j = 0; j < d; ++j) {
            m.mean[j] += ex.features[j];
        }
    }
    for (auto& v : m.mean) {
        v /= static_cast<double>(data.size());
    }
    for (const auto& ex : data) {
        for (std::size_t j = 0; j < d; ++j) {
            const double c = ex.features[j] - m.mean[j];
            m.scale[j] += c * c;
        }
    }
    for (auto& v : m.scale) {
        v = std::sqrt(v / static_cast<double>(data.size()));
        if (!(v > 1e-12)) {
            v = 1.0;
        }
    }
    const double n = static_cast<double>(data.size());
    std::vector<double> grad(d);
    for (std::size_t it = 0; it < iterations; ++it) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double gb = 0.0;
        for (const auto& ex : data) {
            const double err = m.score(ex.features) - ex.member;
            for (std::size_t j = 0; j < d; ++j) {
                grad[j] += err * (ex.features[j] - m.mean[j]) / m.scale[j];
            }
            gb += err;
        }
        for (std::size_t j = 0; j < d; ++j) {
            m.weights[j] -= lr * (grad[j] / n + l2 * m.weights[j]);
        }
        m.bias -= lr * gb / n;
    }
    return m;
}

/**
 * Trains the logistic attack on a random half of the examples and reports
 * ROC AUC on the other half. Both halves must contain members and
 * non-members.
 */
inline double mi_attack(std::vector<AttackExample> examples, Rng& rng) {
    std::size_t members = 0;
    for (const auto& e : examples) {
        members += (e.member == 1);
    }
    if (members == 0 || members == examples.size()) {
        throw ConfigError("mi_attack: targets must include both members and non-members");
    }
    if (examples.size() < 4) {
        throw ConfigError("mi_attack: need at least 4 released summaries");
    }
    std::shuffle(examples.begin(), examples.end(), rng);
    // stratified split keeps both classes on both sides
    std::vector<AttackExample> train, test;
    std::size_t seen_in = 0, seen_out = 0;
    for (auto& e : examples) {
        auto& counter = e.member ? seen_in : seen_out;
        ((counter++ % 2 == 0) ? train : test).push_back(std::move(e));
    }
    auto model = train_logistic(train);
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& e : test) {
        scores.push_back(model.score(e.features));
        labels.push_back(e.member);
    }
    return roc_auc(scores, labels);
}

} // namespace vgm2

#endif
