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

#ifndef VGM2_PRIVACY_HPP
#define VGM2_PRIVACY_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aggregation.hpp"
#include "error.hpp"
#include "markers.hpp"
#include "payload.hpp"
#include "rng.hpp"

/**
 * @file privacy.hpp
 *
 * @brief Pairwise-mask secure aggregation, the Gaussian mechanism on
 * natural parameters, and an RDP accountant.
 *
 * Secure aggregation works on fixed-point integers (value * 2^40, rounded)
 * with wrapping 64-bit arithmetic, so masks cancel bit-exactly. There is no
 * dropout recovery: if a cohort member's payload is missing, the sum is
 * meaningless.
 */

namespace vgm2 {

// ---------------------------------------------------------------------------
// Secure aggregation

inline constexpr double kFixedPointScale = 1099511627776.0; // 2^40

inline std::uint64_t to_fixed(double v) {
    const double scaled = std::nearbyint(v * kFixedPointScale);
    if (!std::isfinite(scaled) || std::abs(scaled) >= 4.6e18) {
        throw NumericalError("to_fixed: value " + std::to_string(v) + " exceeds the fixed-point range");
    }
    return static_cast<std::uint64_t>(static_cast<std::int64_t>(scaled));
}

/// Largest magnitude one of `cohort` summands may have so the sum stays representable.
inline double fixed_point_limit(std::size_t cohort) {
    return 4.6e18 / kFixedPointScale / static_cast<double>(std::max<std::size_t>(cohort, 1));
}

/// Clamps every slot into the per-summand range; returns how many were clamped.
inline std::size_t saturate_for_masking(SufficientStatsPayload& p, std::size_t cohort) {
    const double lim = fixed_point_limit(cohort);
    auto v = p.values();
    std::size_t n = 0;
    for (double& x : v) {
        if (!(std::abs(x) <= lim)) {
            x = std::isnan(x) ? 0.0 : std::clamp(x, -lim, lim);
            ++n;
        }
    }
    if (n > 0) {
        p.set_values(v);
    }
    return n;
}

inline double from_fixed(std::uint64_t v) { return static_cast<double>(static_cast<std::int64_t>(v)) / kFixedPointScale; }

/// Mask stream shared by clients a and b in a round; symmetric in (a, b).
inline std::vector<std::uint64_t> pair_mask(std::uint64_t round_seed, std::uint64_t a, std::uint64_t b, std::size_t n) {
    const auto [lo, hi] = std::minmax(a, b);
    Rng rng(derive_seed(round_seed, {tag(Stream::mask), lo, hi}));
    std::vector<std::uint64_t> out(n);
    for (auto& v : out) {
        v = rng();
    }
    return out;
}

struct MaskResult {
    SufficientStatsPayload payload;
    bool vacuous = false; ///< cohort of one: encoded but not masked
};

/**
 * Fixed-point encodes the payload slots (read as doubles) and adds
 * sum_{l != k} sign(k, l) * mask(k, l), sign = +1 for k < l and -1
 * otherwise, modulo 2^64.
 */
inline MaskResult mask_payload(const SufficientStatsPayload& plain, std::uint64_t client,
                               std::span<const std::uint64_t> cohort, std::uint64_t round_seed) {
    if (plain.masked()) {
        throw FormatError("mask_payload: payload is already masked");
    }
    if (std::find(cohort.begin(), cohort.end(), client) == cohort.end()) {
        throw ConfigError("mask_payload: client " + std::to_string(client) + " is not in the cohort");
    }
    MaskResult out;
    out.payload = plain;
    out.payload.flags |= kFlagMasked;
    for (std::size_t i = 0; i < plain.slots.size(); ++i) {
        out.payload.slots[i] = to_fixed(plain.value(i));
    }
    out.vacuous = cohort.size() < 2;
    for (auto other : cohort) {
        if (other == client) {
            continue;
        }
        const auto mask = pair_mask(round_seed, client, other, plain.slots.size());
        for (std::size_t i = 0; i < mask.size(); ++i) {
            if (client < other) {
                out.payload.slots[i] += mask[i];
            } else {
                out.payload.slots[i] -= mask[i];
            }
        }
    }
    return out;
}

struct MaskedSum {
    std::vector<double> values;
    double total_weight = 0.0;
    std::uint16_t K = 0;
};

/// Server side: wraps-around sum of masked slots, decoded from fixed point.
inline MaskedSum sum_masked(std::span<const SufficientStatsPayload> masked) {
    if (masked.empty()) {
        throw ConfigError("sum_masked: no payloads");
    }
    MaskedSum out;
    out.K = masked.front().K;
    std::vector<std::uint64_t> acc(masked.front().slots.size(), 0);
    for (const auto& p : masked) {
        if (!p.masked()) {
            throw FormatError("sum_masked: payload is not masked");
        }
        if (p.K != out.K) {
            throw FormatError("sum_masked: mixed K across payloads");
        }
        for (std::size_t i = 0; i < acc.size(); ++i) {
            acc[i] += p.slots[i];
        }
        out.total_weight += static_cast<double>(p.weight);
    }
    out.values.resize(acc.size());
    for (std::size_t i = 0; i < acc.size(); ++i) {
        out.values[i] = from_fixed(acc[i]);
    }
    return out;
}

/// Plain payload carrying n_k-weighted aggregation coordinates, ready to mask.
inline SufficientStatsPayload weighted_coordinates_payload(const RelationMarkerPosterior& q, std::uint64_t weight,
                                                           AggregationMode mode) {
    SufficientStatsPayload p;
    p.K = static_cast<std::uint16_t>(q.K);
    p.weight = weight;
    auto coords = to_aggregation_coordinates(q, mode);
    for (double& v : coords) {
        v *= static_cast<double>(weight);
    }
    p.set_values(coords);
    return p;
}

// ---------------------------------------------------------------------------
// Differential privacy

struct DPConfig {
    double noise_multiplier = 0.0; ///< sigma_dp
    double clip_norm = 10.0;       ///< C
    double delta = 1e-5;
    std::size_t rounds = 1;
    double sampling_rate = 1.0; ///< q

    void validate() const {
        if (!(noise_multiplier >= 0.0)) {
            throw ConfigError("DPConfig: noise multiplier must be >= 0");
        }
        if (!(clip_norm > 0.0)) {
            throw ConfigError("DPConfig: clip norm must be > 0");
        }
        if (!(delta > 0.0 && delta < 1.0)) {
            throw ConfigError("DPConfig: delta must lie in (0, 1)");
        }
        if (!(sampling_rate > 0.0 && sampling_rate <= 1.0)) {
            throw ConfigError("DPConfig: sampling rate must lie in (0, 1]");
        }
    }
};

/**
 * Coordinates the mechanism acts on: natural-parameter entries for the
 * positive quantities are taken in log space so the noised result maps back
 * into the valid region. Per relation: log a_c for each component, then
 * (m, log kappa, log(alpha - 1), log beta) per component.
 */
inline std::vector<double> to_dp_coordinates(const RelationMarkerPosterior& q) {
    auto flat = to_sufficient_stats(q);
    std::size_t o = 0;
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t c = 0; c < q.K; ++c, ++o) {
            flat[o] = std::log(flat[o]);
        }
        for (std::size_t c = 0; c < q.K; ++c, o += 4) {
            flat[o + 1] = std::log(flat[o + 1]);
            flat[o + 2] = std::log(flat[o + 2] - 1.0);
            flat[o + 3] = std::log(flat[o + 3]);
        }
    }
    return flat;
}

inline RelationMarkerPosterior from_dp_coordinates(std::span<const double> v, std::size_t K) {
    std::vector<double> flat(v.begin(), v.end());
    if (flat.size() != RelationMarkerPosterior::scalar_count(K)) {
        throw FormatError("from_dp_coordinates: expected " + std::to_string(10 * K) + " values");
    }
    std::size_t o = 0;
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t c = 0; c < K; ++c, ++o) {
            flat[o] = std::exp(flat[o]);
        }
        for (std::size_t c = 0; c < K; ++c, o += 4) {
            flat[o + 1] = std::exp(flat[o + 1]);
            flat[o + 2] = 1.0 + std::exp(flat[o + 2]);
            flat[o + 3] = std::exp(flat[o + 3]);
        }
    }
    return from_sufficient_stats(flat, K);
}

/// Scales v down to L2 norm `clip` if it is longer.
inline void clip_l2(std::vector<double>& v, double clip) {
    double ss = 0.0;
    for (double x : v) {
        ss += x * x;
    }
    const double norm = std::sqrt(ss);
    if (norm > clip) {
        for (double& x : v) {
            x *= clip / norm;
        }
    }
}

/// Clip to norm C, then add N(0, (sigma C)^2) independently to each entry.
inline std::vector<double> gaussian_mechanism(std::vector<double> v, double clip, double sigma, Rng& rng) {
    clip_l2(v, clip);
    if (sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, sigma * clip);
        for (double& x : v) {
            x += noise(rng);
        }
    }
    return v;
}

/// Gaussian mechanism on a plaintext posterior payload; sets the dp-noised flag.
inline SufficientStatsPayload dp_noise(const SufficientStatsPayload& plain, const DPConfig& cfg, Rng& rng) {
    cfg.validate();
    if (plain.masked()) {
        throw FormatError("dp_noise: noise must be added before masking");
    }
    const auto q = payload_posterior(plain);
    auto noised = gaussian_mechanism(to_dp_coordinates(q), cfg.clip_norm, cfg.noise_multiplier, rng);
    // Keep the noised coordinates inside the admissible box so that, e.g.,
    // alpha - 1 = exp(x) cannot round to zero against 1.
    std::size_t o = 0;
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t c = 0; c < q.K; ++c, ++o) {
            noised[o] = std::clamp(noised[o], std::log(kConcMin), std::log(kConcMax));
        }
        for (std::size_t c = 0; c < q.K; ++c, o += 4) {
            noised[o] = std::clamp(noised[o], -1e6, 1e6);
            noised[o + 1] = std::clamp(noised[o + 1], std::log(kKappaMin), std::log(kKappaMax));
            noised[o + 2] = std::clamp(noised[o + 2], std::log(kShapeMin - 1.0), std::log(kShapeMax));
            noised[o + 3] = std::clamp(noised[o + 3], -300.0, 300.0);
        }
    }
    auto out = make_payload(from_dp_coordinates(noised, q.K), plain.weight);
    out.flags = static_cast<std::uint8_t>(plain.flags | kFlagDpNoised);
    return out;
}

// ---------------------------------------------------------------------------
// RDP accountant for the (subsampled) Gaussian mechanism

namespace detail {

inline double log_add(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) {
        return b;
    }
    if (b == -std::numeric_limits<double>::infinity()) {
        return a;
    }
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

} // namespace detail

/**
 * RDP of the Poisson-subsampled Gaussian at integer order `order`:
 *   (1/(order-1)) log sum_k C(order,k) (1-q)^{order-k} q^k exp((k^2 - k)/(2 sigma^2)).
 * Reduces to order / (2 sigma^2) at q = 1.
 */
inline double rdp_subsampled_gaussian(double q, double sigma, int order) {
    if (sigma <= 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    if (q >= 1.0) {
        return static_cast<double>(order) / (2.0 * sigma * sigma);
    }
    double log_a = -std::numeric_limits<double>::infinity();
    for (int k = 0; k <= order; ++k) {
        const double log_binom = std::lgamma(order + 1.0) - std::lgamma(k + 1.0) - std::lgamma(order - k + 1.0);
        const double term = log_binom + (order - k) * std::log1p(-q) + k * std::log(q) +
                            (static_cast<double>(k) * k - k) / (2.0 * sigma * sigma);
        log_a = detail::log_add(log_a, term);
    }
    return log_a / (order - 1);
}

/// Accumulated RDP over orders 2..64.
struct RdpAccountant {
    double sigma = 1.0;
    double sampling_rate = 1.0;
    std::vector<int> orders;
    std::vector<double> rdp; ///< accumulated per order
    std::size_t steps = 0;

    RdpAccountant() = default;
    RdpAccountant(double sigma_, double q_) : sigma(sigma_), sampling_rate(q_) {
        for (int a = 2; a <= 64; ++a) {
            orders.push_back(a);
        }
        rdp.assign(orders.size(), 0.0);
    }

    void step(std::size_t n = 1) {
        for (std::size_t i = 0; i < orders.size(); ++i) {
            rdp[i] += static_cast<double>(n) * rdp_subsampled_gaussian(sampling_rate, sigma, orders[i]);
        }
        steps += n;
    }

    /// epsilon = min over orders of rdp + log(1/delta)/(order - 1).
    double epsilon(double delta) const {
        if (steps == 0) {
            return 0.0;
        }
        if (sigma <= 0.0) {
            return std::numeric_limits<double>::infinity();
        }
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < orders.size(); ++i) {
            best = std::min(best, rdp[i] + std::log(1.0 / delta) / (orders[i] - 1));
        }
        return best;
    }
};

/// (epsilon, delta) after `rounds` releases under cfg.
inline std::pair<double, double> privacy_accountant(const DPConfig& cfg, std::size_t rounds) {
    if (rounds == 0) {
        return {0.0, cfg.delta};
    }
    if (cfg.noise_multiplier <= 0.0) {
        return {std::numeric_limits<double>::infinity(), cfg.delta};
    }
    RdpAccountant acc(cfg.noise_multiplier, cfg.sampling_rate);
    acc.step(rounds);
    return {acc.epsilon(cfg.delta), cfg.delta};
}

} // namespace vgm2

#endif
