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

#ifndef VGM2_AGGREGATION_HPP
#define VGM2_AGGREGATION_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "markers.hpp"
#include "payload.hpp"
#include "special_functions.hpp"

/**
 * @file aggregation.hpp
 *
 * @brief Server-side pooling of client marker posteriors.
 *
 * The default mode matches expected sufficient statistics: the aggregate is
 * the Dir-NIG member whose mean parameters equal the weighted average of the
 * clients' mean parameters, which is the minimizer of sum_k w_k KL(q_k || p)
 * over the family. The alternative mode averages natural parameters
 * directly; the two generally disagree for Dirichlet and NIG factors.
 *
 * Mean parameters used here:
 *   Dirichlet: E[log w_c] = psi(a_c) - psi(sum a)
 *   NIG:       e1 = E[1/s2] = a/b,        e2 = E[log s2] = log b - psi(a),
 *              e3 = E[mu/s2] = m a/b,     e4 = E[mu^2/s2] = 1/k + m^2 a/b
 * Natural parameters:
 *   Dirichlet: a_c - 1
 *   NIG:       -(b + k m^2/2), -(a + 3/2), k m, -k/2
 */

namespace vgm2 {

enum class AggregationMode { moment_match, natural_average };

inline const char* to_string(AggregationMode m) {
    return m == AggregationMode::moment_match ? "moment-match" : "natural-avg";
}

struct NigMoments {
    double e1 = 0.0;
    double e2 = 0.0;
    double e3 = 0.0;
    double e4 = 0.0;
};

struct RelationMoments {
    std::vector<double> log_weight; ///< E[log omega_c]
    std::vector<NigMoments> components;
};

struct ExpectedMoments {
    std::size_t K = 0;
    std::array<RelationMoments, 2> relation;
};

/// Counters for projections back into the valid region.
struct RepairLog {
    std::size_t dirichlet = 0;
    std::size_t nig = 0;

    std::size_t total() const { return dirichlet + nig; }
    RepairLog& operator+=(const RepairLog& o) {
        dirichlet += o.dirichlet;
        nig += o.nig;
        return *this;
    }
};

inline constexpr double kKappaMin = 1e-4;
inline constexpr double kKappaMax = 1e4;
inline constexpr double kShapeMin = 1.0 + 1e-3;
inline constexpr double kShapeMax = 1e4;
inline constexpr double kConcMin = 1e-4;
inline constexpr double kConcMax = 1e4;

// ---------------------------------------------------------------------------
// Forward maps

inline std::vector<double> dirichlet_moments(std::span<const double> conc) {
    double total = 0.0;
    for (double a : conc) {
        total += a;
    }
    const double psi_total = special::digamma(total);
    std::vector<double> out(conc.size());
    for (std::size_t c = 0; c < conc.size(); ++c) {
        out[c] = special::digamma(conc[c]) - psi_total;
    }
    return out;
}

inline NigMoments nig_moments(const NigParams& n) {
    const double prec = n.alpha / n.beta;
    return NigMoments{prec, std::log(n.beta) - special::digamma(n.alpha), n.m * prec, 1.0 / n.kappa + n.m * n.m * prec};
}

inline ExpectedMoments posterior_to_moments(const RelationMarkerPosterior& q) {
    q.validate();
    ExpectedMoments e;
    e.K = q.K;
    for (std::size_t r = 0; r < 2; ++r) {
        e.relation[r].log_weight = dirichlet_moments(q.relation[r].concentration);
        for (const auto& n : q.relation[r].components) {
            e.relation[r].components.push_back(nig_moments(n));
        }
    }
    return e;
}

// ---------------------------------------------------------------------------
// Inverse maps

struct DirichletInversion {
    std::vector<double> concentration;
    double residual = 0.0;
    std::size_t iterations = 0;
    bool repaired = false;
};

inline double dirichlet_residual(std::span<const double> conc, std::span<const double> target) {
    const auto m = dirichlet_moments(conc);
    double r = 0.0;
    for (std::size_t c = 0; c < m.size(); ++c) {
        r = std::max(r, std::abs(m[c] - target[c]));
    }
    return r;
}

/**
 * Finds a with psi(a_c) - psi(sum a) = target_c.
 *
 * Minka's fixed point a_c <- psi^{-1}(target_c + psi(sum a)) runs first
 * (up to 500 sweeps), then damped Newton steps with the diagonal-plus-
 * rank-one Hessian polish the solution. Targets with sum_c exp(t_c) >= 1
 * have no solution; they are shifted into the feasible region and the
 * result is flagged as repaired. Concentrations are kept in [1e-4, 1e4].
 */
inline DirichletInversion invert_dirichlet_moments(std::span<const double> target_in, double tol = 1e-10) {
    const std::size_t K = target_in.size();
    DirichletInversion out;
    std::vector<double> target(target_in.begin(), target_in.end());
    bool finite = true;
    for (double t : target) {
        finite = finite && std::isfinite(t);
    }
    if (!finite) {
        out.concentration.assign(K, 1.0);
        out.repaired = true;
        out.residual = std::numeric_limits<double>::infinity();
        return out;
    }
    if (K == 1) {
        // E[log w] = 0 for any a; nothing to identify.
        out.concentration = {1.0};
        out.residual = std::abs(target[0]);
        out.repaired = out.residual > tol;
        return out;
    }
    double mass = 0.0;
    for (double t : target) {
        mass += std::exp(t);
    }
    if (mass >= 1.0 - 1e-9) {
        const double shift = std::log(mass) - std::log(1.0 - 1e-3);
        for (double& t : target) {
            t -= shift;
        }
        out.repaired = true;
        mass = 1.0 - 1e-3;
    }

    // Start from the implied mean with a precision that matches the gap 1 - mass.
    std::vector<double> a(K);
    {
        double s = 0.0;
        for (double t : target) {
            s += std::exp(t);
        }
        // For large precision S, E[log w_c] ~ log(mean_c) - (1 - mean_c)/(2 S mean_c).
        const double precision = std::max(static_cast<double>(K - 1) / (2.0 * std::max(-std::log(s), 1e-12)), 1e-2);
        for (std::size_t c = 0; c < K; ++c) {
            a[c] = std::clamp(precision * std::exp(target[c]) / s, kConcMin, kConcMax);
        }
    }

    auto clamp_all = [&]() {
        for (double& v : a) {
            v = std::clamp(v, kConcMin, kConcMax);
        }
    };

    std::size_t it = 0;
    double res = dirichlet_residual(a, target);
    for (; it < 500 && res >= tol; ++it) {
        double total = 0.0;
        for (double v : a) {
            total += v;
        }
        const double psi_total = special::digamma(total);
        for (std::size_t c = 0; c < K; ++c) {
            a[c] = special::inverse_digamma(target[c] + psi_total);
        }
        clamp_all();
        res = dirichlet_residual(a, target);
    }
    // Newton polish: solve g(a) = psi(sum a) - psi(a_c) + t_c = 0.
    for (int nit = 0; nit < 100 && res >= tol; ++nit, ++it) {
        double total = 0.0;
        for (double v : a) {
            total += v;
        }
        const double z = special::trigamma(total);
        std::vector<double> g(K), q(K);
        double sum_gq = 0.0, sum_invq = 0.0;
        for (std::size_t c = 0; c < K; ++c) {
            g[c] = special::digamma(total) - special::digamma(a[c]) + target[c];
            q[c] = -special::trigamma(a[c]);
            sum_gq += g[c] / q[c];
            sum_invq += 1.0 / q[c];
        }
        const double b = sum_gq / (1.0 / z + sum_invq);
        std::vector<double> step(K);
        for (std::size_t c = 0; c < K; ++c) {
            step[c] = (g[c] - b) / q[c];
        }
        double scale = 1.0;
        std::vector<double> next(K);
        for (int h = 0; h < 60; ++h) {
            bool ok = true;
            for (std::size_t c = 0; c < K; ++c) {
                next[c] = a[c] - scale * step[c];
                ok = ok && next[c] > 0.0;
            }
            if (ok && dirichlet_residual(next, target) < res) {
                break;
            }
            scale *= 0.5;
        }
        bool positive = true;
        for (double v : next) {
            positive = positive && v > 0.0;
        }
        if (!positive) {
            break;
        }
        a = next;
        clamp_all();
        const double nres = dirichlet_residual(a, target);
        if (!(nres < res)) {
            res = nres;
            break;
        }
        res = nres;
    }
    for (double v : a) {
        if (v <= kConcMin || v >= kConcMax) {
            out.repaired = true;
        }
    }
    out.concentration = std::move(a);
    out.residual = res;
    out.iterations = it;
    return out;
}

/// Inverts NIG mean parameters; out-of-region values are projected and counted.
inline NigParams invert_nig_moments(const NigMoments& e, RepairLog& log) {
    bool repaired = false;
    double e1 = e.e1;
    if (!(e1 > 0.0) || !std::isfinite(e1)) {
        e1 = 1e-8;
        repaired = true;
    }
    NigParams n;
    n.m = std::isfinite(e.e3) ? e.e3 / e1 : 0.0;
    const double var = e.e4 - e.e3 * e.e3 / e1;
    if (var > 0.0 && std::isfinite(var)) {
        n.kappa = 1.0 / var;
    } else {
        n.kappa = kKappaMax;
        repaired = true;
    }
    if (n.kappa < kKappaMin || n.kappa > kKappaMax) {
        n.kappa = std::clamp(n.kappa, kKappaMin, kKappaMax);
        repaired = true;
    }
    const double c = e.e2 + std::log(e1);
    if (c > 0.0 && std::isfinite(c)) {
        n.alpha = special::solve_log_minus_digamma(c);
    } else {
        n.alpha = kShapeMax;
        repaired = true;
    }
    if (n.alpha < kShapeMin || n.alpha > kShapeMax) {
        n.alpha = std::clamp(n.alpha, kShapeMin, kShapeMax);
        repaired = true;
    }
    n.beta = n.alpha / e1;
    if (repaired) {
        ++log.nig;
    }
    return n;
}

inline RelationMarkerPosterior moments_to_posterior(const ExpectedMoments& e, RepairLog& log) {
    RelationMarkerPosterior q;
    q.K = e.K;
    for (std::size_t r = 0; r < 2; ++r) {
        auto inv = invert_dirichlet_moments(e.relation[r].log_weight);
        if (inv.repaired) {
            ++log.dirichlet;
        }
        q.relation[r].concentration = std::move(inv.concentration);
        for (const auto& m : e.relation[r].components) {
            q.relation[r].components.push_back(invert_nig_moments(m, log));
        }
    }
    return q;
}

inline RelationMarkerPosterior moments_to_posterior(const ExpectedMoments& e) {
    RepairLog log;
    return moments_to_posterior(e, log);
}

// ---------------------------------------------------------------------------
// Flat coordinates (same 10K order as the payload)

inline std::vector<double> moments_to_flat(const ExpectedMoments& e) {
    std::vector<double> out;
    for (const auto& rel : e.relation) {
        out.insert(out.end(), rel.log_weight.begin(), rel.log_weight.end());
        for (const auto& m : rel.components) {
            out.insert(out.end(), {m.e1, m.e2, m.e3, m.e4});
        }
    }
    return out;
}

inline ExpectedMoments flat_to_moments(std::span<const double> flat, std::size_t K) {
    if (flat.size() != RelationMarkerPosterior::scalar_count(K)) {
        throw FormatError("flat_to_moments: expected " + std::to_string(10 * K) + " values");
    }
    ExpectedMoments e;
    e.K = K;
    std::size_t o = 0;
    for (auto& rel : e.relation) {
        rel.log_weight.assign(flat.begin() + static_cast<std::ptrdiff_t>(o), flat.begin() + static_cast<std::ptrdiff_t>(o + K));
        o += K;
        for (std::size_t c = 0; c < K; ++c, o += 4) {
            rel.components.push_back(NigMoments{flat[o], flat[o + 1], flat[o + 2], flat[o + 3]});
        }
    }
    return e;
}

inline std::vector<double> to_natural(const RelationMarkerPosterior& q) {
    q.validate();
    std::vector<double> out;
    for (const auto& rel : q.relation) {
        for (double a : rel.concentration) {
            out.push_back(a - 1.0);
        }
        for (const auto& n : rel.components) {
            out.insert(out.end(), {-(n.beta + 0.5 * n.kappa * n.m * n.m), -(n.alpha + 1.5), n.kappa * n.m, -0.5 * n.kappa});
        }
    }
    return out;
}

inline RelationMarkerPosterior from_natural(std::span<const double> flat, std::size_t K, RepairLog& log) {
    if (flat.size() != RelationMarkerPosterior::scalar_count(K)) {
        throw FormatError("from_natural: expected " + std::to_string(10 * K) + " values");
    }
    RelationMarkerPosterior q;
    q.K = K;
    std::size_t o = 0;
    for (auto& rel : q.relation) {
        bool conc_repair = false;
        for (std::size_t c = 0; c < K; ++c, ++o) {
            double a = flat[o] + 1.0;
            if (!(a >= kConcMin && a <= kConcMax)) {
                a = std::isfinite(a) ? std::clamp(a, kConcMin, kConcMax) : 1.0;
                conc_repair = true;
            }
            rel.concentration.push_back(a);
        }
        if (conc_repair) {
            ++log.dirichlet;
        }
        for (std::size_t c = 0; c < K; ++c, o += 4) {
            bool repaired = false;
            NigParams n;
            n.kappa = -2.0 * flat[o + 3];
            if (!(n.kappa >= kKappaMin && n.kappa <= kKappaMax)) {
                n.kappa = std::isfinite(n.kappa) ? std::clamp(n.kappa, kKappaMin, kKappaMax) : 1.0;
                repaired = true;
            }
            n.m = flat[o + 2] / n.kappa;
            n.alpha = -flat[o + 1] - 1.5;
            if (!(n.alpha >= kShapeMin && n.alpha <= kShapeMax)) {
                n.alpha = std::isfinite(n.alpha) ? std::clamp(n.alpha, kShapeMin, kShapeMax) : 2.0;
                repaired = true;
            }
            n.beta = -flat[o] - 0.5 * n.kappa * n.m * n.m;
            if (!(n.beta > 0.0) || !std::isfinite(n.beta)) {
                n.beta = 1e-6;
                repaired = true;
            }
            if (repaired) {
                ++log.nig;
            }
            rel.components.push_back(n);
        }
    }
    return q;
}

/// Coordinates in which the given mode averages.
inline std::vector<double> to_aggregation_coordinates(const RelationMarkerPosterior& q, AggregationMode mode) {
    return mode == AggregationMode::moment_match ? moments_to_flat(posterior_to_moments(q)) : to_natural(q);
}

inline RelationMarkerPosterior from_aggregation_coordinates(std::span<const double> flat, std::size_t K,
                                                            AggregationMode mode, RepairLog& log) {
    if (mode == AggregationMode::moment_match) {
        return moments_to_posterior(flat_to_moments(flat, K), log);
    }
    return from_natural(flat, K, log);
}

// ---------------------------------------------------------------------------
// Aggregation

/// p_t: the broadcast prior and the round it was produced for.
struct GlobalPrior {
    RelationMarkerPosterior posterior;
    std::size_t round = 0;
};

/// Round-0 prior: Dirichlet all-ones, NIG(m=1, kappa=0.1, alpha=2, beta=2) per component.
inline GlobalPrior initial_prior(std::size_t K) {
    return GlobalPrior{uniform_posterior(K, 1.0, NigParams{1.0, 0.1, 2.0, 2.0}), 0};
}

struct AggregateResult {
    RelationMarkerPosterior posterior;
    AggregationMode mode = AggregationMode::moment_match;
    RepairLog repairs;
};

/**
 * Weighted pooling of client posteriors. `weights` defaults to the n_k in
 * each payload header; weights are normalized, so scaling them has no
 * effect. The fold runs in the given order.
 */
inline AggregateResult aggregate(std::span<const SufficientStatsPayload> payloads, std::span<const double> weights,
                                 AggregationMode mode = AggregationMode::moment_match) {
    if (payloads.empty()) {
        throw ConfigError("aggregate: no payloads");
    }
    const std::size_t K = payloads.front().K;
    std::vector<double> w;
    if (weights.empty()) {
        for (const auto& p : payloads) {
            w.push_back(static_cast<double>(p.weight));
        }
    } else {
        if (weights.size() != payloads.size()) {
            throw ConfigError("aggregate: " + std::to_string(weights.size()) + " weights for " +
                              std::to_string(payloads.size()) + " payloads");
        }
        w.assign(weights.begin(), weights.end());
    }
    double wsum = 0.0;
    for (std::size_t k = 0; k < payloads.size(); ++k) {
        if (payloads[k].K != K) {
            throw FormatError("aggregate: mixed K across payloads (" + std::to_string(K) + " vs " +
                              std::to_string(payloads[k].K) + ")");
        }
        if (!(w[k] >= 0.0) || !std::isfinite(w[k])) {
            throw ConfigError("aggregate: weights must be finite and non-negative");
        }
        wsum += w[k];
    }
    if (!(wsum > 0.0)) {
        throw ConfigError("aggregate: total weight is zero");
    }
    std::vector<double> acc(RelationMarkerPosterior::scalar_count(K), 0.0);
    for (std::size_t k = 0; k < payloads.size(); ++k) {
        const auto coords = to_aggregation_coordinates(payload_posterior(payloads[k]), mode);
        const double wk = w[k] / wsum;
        for (std::size_t i = 0; i < acc.size(); ++i) {
            acc[i] += wk * coords[i];
        }
    }
    AggregateResult out;
    out.mode = mode;
    out.posterior = from_aggregation_coordinates(acc, K, mode, out.repairs);
    return out;
}

inline AggregateResult aggregate(std::span<const SufficientStatsPayload> payloads,
                                 AggregationMode mode = AggregationMode::moment_match) {
    return aggregate(payloads, std::span<const double>{}, mode);
}

/// Inverts an already-summed, weight-scaled coordinate vector (the secure-aggregation path).
inline AggregateResult aggregate_from_sum(std::span<const double> weighted_sum, double total_weight, std::size_t K,
                                          AggregationMode mode) {
    if (!(total_weight > 0.0)) {
        throw ConfigError("aggregate_from_sum: total weight is zero");
    }
    std::vector<double> avg(weighted_sum.begin(), weighted_sum.end());
    for (double& v : avg) {
        v /= total_weight;
    }
    AggregateResult out;
    out.mode = mode;
    out.posterior = from_aggregation_coordinates(avg, K, mode, out.repairs);
    return out;
}

} // namespace vgm2

#endif
