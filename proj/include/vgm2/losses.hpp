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

#ifndef VGM2_LOSSES_HPP
#define VGM2_LOSSES_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "error.hpp"

namespace vgm2 {

enum class LambdaSchedule { constant, cosine };

/// Weights of the client objective umap + gamma sim + eta cal + lambda kl.
struct LossWeights {
    double gamma = 1.0;
    double eta = 0.5;
    double lambda0 = 0.1;
    LambdaSchedule schedule = LambdaSchedule::cosine;
    std::size_t horizon = 100; ///< T for the cosine schedule

    void validate() const {
        if (gamma < 0.0 || eta < 0.0 || lambda0 < 0.0) {
            throw ConfigError("LossWeights: weights must be non-negative");
        }
        if (schedule == LambdaSchedule::cosine && horizon == 0) {
            throw ConfigError("LossWeights: cosine schedule needs a positive horizon");
        }
    }

    /// lambda_t = lambda0 (1 + cos(pi t / T)) / 2 for the cosine schedule.
    double lambda_at(std::size_t round) const {
        if (schedule == LambdaSchedule::constant) {
            return lambda0;
        }
        const double t = std::min(static_cast<double>(round), static_cast<double>(horizon));
        return lambda0 * 0.5 * (1.0 + std::cos(std::numbers::pi * t / static_cast<double>(horizon)));
    }
};

/**
 * Binary cross-entropy of pi_1 against the relation labels, summed over
 * pairs, from the logit of pi_1: -sum[u log pi_1 + (1-u) log(1 - pi_1)].
 */
inline ad::Var sim_loss(const ad::Var& logit, std::span<const int> same) {
    if (logit.size() == 0 || same.empty()) {
        throw ShapeError("sim_loss: empty pair batch");
    }
    if (logit.size() != same.size()) {
        throw ShapeError("sim_loss: " + std::to_string(logit.size()) + " logits for " + std::to_string(same.size()) +
                         " labels");
    }
    ad::Tape& tape = logit.tape();
    std::vector<double> u(same.begin(), same.end());
    auto uv = tape.constant(u, logit.rows(), logit.cols());
    auto ll = ad::mul(uv, ad::log_sigmoid(logit)) + ad::mul(1.0 - uv, ad::log_sigmoid(-logit));
    return -ad::sum(ll);
}

/// Soft-binning setup: B equal-width bins on [0,1]; tau defaults to 0.5/B.
struct CalibrationBins {
    std::size_t bins = 15;
    double tau = 0.0;

    double temperature() const { return tau > 0.0 ? tau : 0.5 / static_cast<double>(bins); }
    std::vector<double> centers() const {
        std::vector<double> c(bins);
        for (std::size_t b = 0; b < bins; ++b) {
            c[b] = (static_cast<double>(b) + 0.5) / static_cast<double>(bins);
        }
        return c;
    }
};

inline double smooth_abs(double x) { return std::sqrt(x * x + 1e-8); }

/**
 * Differentiable ECE proxy. Each confidence c_i is spread over the bins by
 * a normalized Gaussian kernel a_b(c) ~ exp(-(c - center_b)^2 / tau^2);
 * bin mass, accuracy and confidence are the kernel-weighted averages and
 * the result is sum_b w_b sqrt((acc_b - conf_b)^2 + 1e-8). Bins with
 * (numerically) zero mass are skipped.
 *
 * `confidences` is an (N x 1) tape node.
 */
inline ad::Var soft_ece(const ad::Var& confidences, std::span<const int> labels, const CalibrationBins& cfg = {}) {
    ad::Tape& tape = confidences.tape();
    const std::size_t n = confidences.size();
    if (n == 0 || labels.size() != n) {
        throw ShapeError("soft_ece: " + std::to_string(n) + " confidences for " + std::to_string(labels.size()) +
                         " labels");
    }
    const double tau = cfg.temperature();
    auto c = ad::reshape(confidences, n, 1);
    auto centers = tape.constant(cfg.centers(), 1, cfg.bins);
    auto logits = ad::mul_scalar(ad::square(ad::sub(c, centers)), -1.0 / (tau * tau)); // (N x B)
    auto assign = ad::softmax_rows(logits);
    auto u = tape.constant(std::vector<double>(labels.begin(), labels.end()), n, 1);

    auto mass = ad::sum_cols(assign); // (1 x B)
    std::vector<double> keep(cfg.bins), pad(cfg.bins);
    for (std::size_t b = 0; b < cfg.bins; ++b) {
        const bool populated = mass.value(b) > 1e-12;
        keep[b] = populated ? 1.0 : 0.0;
        pad[b] = populated ? 0.0 : 1.0;
    }
    auto safe_mass = ad::add(mass, tape.constant(pad, 1, cfg.bins));
    auto acc = ad::div(ad::sum_cols(ad::mul(assign, u)), safe_mass);
    auto conf = ad::div(ad::sum_cols(ad::mul(assign, c)), safe_mass);
    auto gap = ad::sqrt(ad::add_scalar(ad::square(ad::sub(acc, conf)), 1e-8));
    auto w = ad::mul(ad::mul_scalar(mass, 1.0 / static_cast<double>(n)), tape.constant(keep, 1, cfg.bins));
    return ad::sum(ad::mul(w, gap));
}

/// One bin of a hard reliability diagram.
struct ReliabilityBin {
    double confidence = 0.0;
    double accuracy = 0.0;
    double mass = 0.0; ///< fraction of points in the bin
    std::size_t count = 0;
};

/// Hard equal-width binning of confidences on [0, 1]; the last bin is closed.
inline std::vector<ReliabilityBin> reliability_bins(std::span<const double> conf, std::span<const int> labels,
                                                    std::size_t bins = 15) {
    if (conf.empty()) {
        throw ShapeError("reliability_bins: no confidences");
    }
    if (conf.size() != labels.size()) {
        throw ShapeError("reliability_bins: confidences and labels differ in length");
    }
    std::vector<ReliabilityBin> out(bins);
    for (std::size_t i = 0; i < conf.size(); ++i) {
        auto b = static_cast<std::size_t>(std::floor(conf[i] * static_cast<double>(bins)));
        b = std::min(b, bins - 1);
        out[b].confidence += conf[i];
        out[b].accuracy += labels[i];
        ++out[b].count;
    }
    for (auto& bin : out) {
        if (bin.count > 0) {
            bin.confidence /= static_cast<double>(bin.count);
            bin.accuracy /= static_cast<double>(bin.count);
            bin.mass = static_cast<double>(bin.count) / static_cast<double>(conf.size());
        }
    }
    return out;
}

/// Standard binned ECE: sum_b (n_b / n) |acc_b - conf_b|.
inline double hard_ece(std::span<const double> conf, std::span<const int> labels, std::size_t bins = 15) {
    double ece = 0.0;
    for (const auto& b : reliability_bins(conf, labels, bins)) {
        ece += b.mass * std::abs(b.accuracy - b.confidence);
    }
    return ece;
}

/// The four objective terms, before weighting.
struct LossTerms {
    ad::Var umap;
    ad::Var sim;
    ad::Var cal;
    ad::Var kl;
};

/**
 * L = umap + gamma sim + eta cal + lambda_t kl, with lambda_t from the
 * schedule at `round`. Terms may be null-initialized Vars only when their
 * weight is zero. Throws NumericalError naming the first non-finite term.
 */
inline ad::Var total_loss(const LossTerms& terms, const LossWeights& w, std::size_t round) {
    const double lambda = w.lambda_at(round);
    struct Named {
        const char* name;
        const ad::Var* var;
        double weight;
    };
    const Named parts[] = {{"umap", &terms.umap, 1.0},
                           {"sim", &terms.sim, w.gamma},
                           {"cal", &terms.cal, w.eta},
                           {"kl", &terms.kl, lambda}};
    ad::Var acc;
    const ad::Var* any = nullptr;
    for (const auto& p : parts) {
        if (!p.var->valid()) {
            continue;
        }
        const double v = p.var->item();
        if (!std::isfinite(v)) {
            throw NumericalError(std::string("total_loss: term '") + p.name + "' is not finite");
        }
        if (any == nullptr) {
            any = p.var;
        }
        if (p.weight == 0.0) {
            continue;
        }
        auto scaled = p.weight == 1.0 ? *p.var : ad::mul_scalar(*p.var, p.weight);
        acc = acc.valid() ? ad::add(acc, scaled) : scaled;
    }
    if (any == nullptr) {
        throw NumericalError("total_loss: no terms supplied");
    }
    if (!acc.valid()) {
        acc = ad::mul_scalar(*any, 0.0);
    }
    return acc;
}

} // namespace vgm2

#endif
