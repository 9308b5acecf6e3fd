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

#ifndef VGM2_MARKERS_HPP
#define VGM2_MARKERS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "error.hpp"
#include "special_functions.hpp"

/**
 * @file markers.hpp
 *
 * @brief Dirichlet / Normal-Inverse-Gamma relation markers.
 *
 * For each relation r (0 = different class, 1 = same class) the latent
 * distance is modelled as a K-component Gaussian mixture. The variational
 * posterior is a Dirichlet over the mixture weights times one NIG per
 * component. Integrating a component out gives a Student-t predictive with
 * df = 2 alpha, location m and scale^2 = beta (kappa + 1) / (alpha kappa).
 */

namespace vgm2 {

inline constexpr std::size_t kRelDiff = 0;
inline constexpr std::size_t kRelSame = 1;

/// NIG(m, kappa, alpha, beta) over (mu, sigma^2).
struct NigParams {
    double m = 0.0;
    double kappa = 1.0;
    double alpha = 2.0;
    double beta = 1.0;

    bool operator==(const NigParams&) const = default;
};

struct RelationMarker {
    std::vector<double> concentration; ///< Dirichlet, length K
    std::vector<NigParams> components; ///< length K

    bool operator==(const RelationMarker&) const = default;
};

/// Variational state for both relations. relation[kRelDiff], relation[kRelSame].
struct RelationMarkerPosterior {
    std::size_t K = 0;
    std::array<RelationMarker, 2> relation;

    bool operator==(const RelationMarkerPosterior&) const = default;

    /// Number of scalars in the flat layout: 2 (K + 4K).
    static std::size_t scalar_count(std::size_t k) { return 10 * k; }

    void validate() const {
        if (K == 0) {
            throw NumericalError("RelationMarkerPosterior: K must be positive");
        }
        for (std::size_t r = 0; r < 2; ++r) {
            const auto& rel = relation[r];
            if (rel.concentration.size() != K || rel.components.size() != K) {
                throw NumericalError("RelationMarkerPosterior: relation " + std::to_string(r) + " does not have K=" +
                                     std::to_string(K) + " components");
            }
            for (std::size_t c = 0; c < K; ++c) {
                const auto& n = rel.components[c];
                const std::string where = " (relation " + std::to_string(r) + ", component " + std::to_string(c) + ")";
                if (!(rel.concentration[c] > 0.0) || !std::isfinite(rel.concentration[c])) {
                    throw NumericalError("Dirichlet concentration must be positive" + where);
                }
                if (!std::isfinite(n.m)) {
                    throw NumericalError("NIG location must be finite" + where);
                }
                if (!(n.kappa > 0.0) || !std::isfinite(n.kappa)) {
                    throw NumericalError("NIG kappa must be positive" + where);
                }
                if (!(n.alpha > 1.0) || !std::isfinite(n.alpha)) {
                    throw NumericalError("NIG shape must exceed 1" + where);
                }
                if (!(n.beta > 0.0) || !std::isfinite(n.beta)) {
                    throw NumericalError("NIG rate must be positive" + where);
                }
            }
        }
    }
};

/// Prior relation probabilities pi_0 (diff) and pi_1 (same).
struct RelationPriors {
    double diff = 0.5;
    double same = 0.5;

    void validate() const {
        if (!(diff > 0.0 && diff < 1.0 && same > 0.0 && same < 1.0) || std::abs(diff + same - 1.0) > 1e-12) {
            throw NumericalError("RelationPriors: need values in (0,1) summing to 1, got " + std::to_string(diff) +
                                 ", " + std::to_string(same));
        }
    }

    /// Empirical same-class frequency, kept away from 0 and 1.
    static RelationPriors from_frequency(double same_fraction) {
        const double s = std::clamp(same_fraction, 0.01, 0.99);
        return RelationPriors{1.0 - s, s};
    }
};

/// A posterior with every relation and component set to the same values.
inline RelationMarkerPosterior uniform_posterior(std::size_t K, double concentration, NigParams nig) {
    RelationMarkerPosterior q;
    q.K = K;
    for (auto& rel : q.relation) {
        rel.concentration.assign(K, concentration);
        rel.components.assign(K, nig);
    }
    return q;
}

// ---------------------------------------------------------------------------
// Predictive densities

inline void check_nig(const NigParams& n) {
    if (!(n.kappa > 0.0) || !(n.alpha > 0.0) || !(n.beta > 0.0) || !std::isfinite(n.m)) {
        throw NumericalError("student_t: invalid NIG parameters (m=" + std::to_string(n.m) +
                             ", kappa=" + std::to_string(n.kappa) + ", alpha=" + std::to_string(n.alpha) +
                             ", beta=" + std::to_string(n.beta) + ")");
    }
}

/// log of the NIG posterior-predictive Student-t density at s.
inline double student_t_logpdf(double s, const NigParams& n) {
    check_nig(n);
    const double scale2 = n.beta * (n.kappa + 1.0) / (n.alpha * n.kappa);
    const double df = 2.0 * n.alpha;
    const double z = (s - n.m) * (s - n.m) / (df * scale2);
    return special::lgamma(n.alpha + 0.5) - special::lgamma(n.alpha) - 0.5 * std::log(df * std::numbers::pi * scale2) -
           (n.alpha + 0.5) * std::log1p(z);
}

inline double student_t_pdf(double s, const NigParams& n) { return std::exp(student_t_logpdf(s, n)); }

/// Dirichlet-mean weights E[omega_c] = alpha_c / sum(alpha).
inline std::vector<double> mixture_weights(const RelationMarker& rel) {
    double total = 0.0;
    for (double a : rel.concentration) {
        total += a;
    }
    std::vector<double> w(rel.concentration.size());
    for (std::size_t c = 0; c < w.size(); ++c) {
        w[c] = rel.concentration[c] / total;
    }
    return w;
}

inline double mixture_logpdf(double s, const RelationMarker& rel) {
    const auto w = mixture_weights(rel);
    std::vector<double> terms(w.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < w.size(); ++c) {
        terms[c] = std::log(w[c]) + student_t_logpdf(s, rel.components[c]);
        mx = std::max(mx, terms[c]);
    }
    double acc = 0.0;
    for (double t : terms) {
        acc += std::exp(t - mx);
    }
    return mx + std::log(acc);
}

/// Mixture predictive density sum_c E[omega_c] t(s; component c).
inline double mixture_predictive(double s, const RelationMarker& rel) {
    const auto w = mixture_weights(rel);
    double acc = 0.0;
    for (std::size_t c = 0; c < w.size(); ++c) {
        acc += w[c] * student_t_pdf(s, rel.components[c]);
    }
    return acc;
}

struct Pi1Result {
    double same = 0.5; ///< pi_1(s)
    double diff = 0.5; ///< pi_0(s) = 1 - pi_1(s)
    bool underflow = false;
};

/**
 * Posterior same-class probability of a distance, evaluated in log space.
 *
 * `underflow` reports that both mixture densities are below the smallest
 * normal double, i.e. direct evaluation would have produced 0/0. The
 * log-space result is still returned.
 */
inline Pi1Result pi1_detail(double s, const RelationMarkerPosterior& q, const RelationPriors& priors) {
    const double l1 = std::log(priors.same) + mixture_logpdf(s, q.relation[kRelSame]);
    const double l0 = std::log(priors.diff) + mixture_logpdf(s, q.relation[kRelDiff]);
    Pi1Result r;
    const double logit = l1 - l0;
    constexpr double tiny = std::numeric_limits<double>::min();
    r.underflow = l1 < std::log(tiny) && l0 < std::log(tiny);
    r.same = std::clamp(special::sigmoid(logit), 1e-300, 1.0 - 1e-16);
    r.diff = std::clamp(special::sigmoid(-logit), 1e-16, 1.0 - 1e-300);
    if (!std::isfinite(logit)) {
        r.same = priors.same;
        r.diff = priors.diff;
        r.underflow = true;
    }
    return r;
}

inline double pi1(double s, const RelationMarkerPosterior& q, const RelationPriors& priors) {
    return pi1_detail(s, q, priors).same;
}

// ---------------------------------------------------------------------------
// Closed-form KL divergences (plain doubles)

/// KL(Dir(q) || Dir(p)).
inline double kl_dirichlet(std::span<const double> q, std::span<const double> p) {
    if (q.size() != p.size() || q.empty()) {
        throw ShapeError("kl_dirichlet: concentration vectors differ in length");
    }
    double q0 = 0.0, p0 = 0.0;
    for (std::size_t c = 0; c < q.size(); ++c) {
        if (!(q[c] > 0.0) || !(p[c] > 0.0)) {
            throw NumericalError("kl_dirichlet: concentrations must be positive");
        }
        q0 += q[c];
        p0 += p[c];
    }
    double kl = special::lgamma(q0) - special::lgamma(p0);
    const double psi_q0 = special::digamma(q0);
    for (std::size_t c = 0; c < q.size(); ++c) {
        kl += special::lgamma(p[c]) - special::lgamma(q[c]) + (q[c] - p[c]) * (special::digamma(q[c]) - psi_q0);
    }
    return kl;
}

/// KL(InvGamma(a, b) || InvGamma(a0, b0)).
inline double kl_inverse_gamma(double a, double b, double a0, double b0) {
    return (a - a0) * special::digamma(a) - special::lgamma(a) + special::lgamma(a0) + a0 * (std::log(b) - std::log(b0)) +
           a * (b0 - b) / b;
}

/// KL(NIG(q) || NIG(p)) = KL of the inverse-gamma marginals plus the expected Gaussian KL.
inline double kl_nig(const NigParams& q, const NigParams& p) {
    check_nig(q);
    check_nig(p);
    const double ig = kl_inverse_gamma(q.alpha, q.beta, p.alpha, p.beta);
    const double gauss = 0.5 * (p.kappa / q.kappa - 1.0 + std::log(q.kappa / p.kappa)) +
                         0.5 * p.kappa * (q.m - p.m) * (q.m - p.m) * (q.alpha / q.beta);
    return ig + gauss;
}

/// KL of the full mean-field posterior: two Dirichlet factors plus 2K NIG factors.
inline double total_kl(const RelationMarkerPosterior& q, const RelationMarkerPosterior& p) {
    if (q.K != p.K) {
        throw ShapeError("total_kl: K differs (" + std::to_string(q.K) + " vs " + std::to_string(p.K) + ")");
    }
    double kl = 0.0;
    for (std::size_t r = 0; r < 2; ++r) {
        kl += kl_dirichlet(q.relation[r].concentration, p.relation[r].concentration);
        for (std::size_t c = 0; c < q.K; ++c) {
            kl += kl_nig(q.relation[r].components[c], p.relation[r].components[c]);
        }
    }
    return kl;
}

// ---------------------------------------------------------------------------
// Flat layout: per relation (diff first), K concentrations then (m, kappa, alpha, beta) x K.

inline std::vector<double> to_sufficient_stats(const RelationMarkerPosterior& q) {
    q.validate();
    std::vector<double> out;
    out.reserve(RelationMarkerPosterior::scalar_count(q.K));
    for (const auto& rel : q.relation) {
        out.insert(out.end(), rel.concentration.begin(), rel.concentration.end());
        for (const auto& n : rel.components) {
            out.insert(out.end(), {n.m, n.kappa, n.alpha, n.beta});
        }
    }
    return out;
}

inline RelationMarkerPosterior from_sufficient_stats(std::span<const double> flat, std::size_t K) {
    if (K == 0 || flat.size() != RelationMarkerPosterior::scalar_count(K)) {
        throw FormatError("from_sufficient_stats: expected " + std::to_string(10 * K) + " scalars, got " +
                          std::to_string(flat.size()));
    }
    RelationMarkerPosterior q;
    q.K = K;
    std::size_t o = 0;
    for (auto& rel : q.relation) {
        rel.concentration.assign(flat.begin() + static_cast<std::ptrdiff_t>(o),
                                 flat.begin() + static_cast<std::ptrdiff_t>(o + K));
        o += K;
        rel.components.resize(K);
        for (auto& n : rel.components) {
            n = NigParams{flat[o], flat[o + 1], flat[o + 2], flat[o + 3]};
            o += 4;
        }
    }
    return q;
}

// ---------------------------------------------------------------------------
// Unconstrained reparameterization: conc, kappa, beta = softplus(raw);
// alpha = 1 + softplus(raw); m = raw.

inline std::vector<double> to_unconstrained(const RelationMarkerPosterior& q) {
    auto flat = to_sufficient_stats(q);
    const std::size_t K = q.K;
    std::size_t o = 0;
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t c = 0; c < K; ++c, ++o) {
            flat[o] = special::inverse_softplus(flat[o]);
        }
        for (std::size_t c = 0; c < K; ++c, o += 4) {
            flat[o + 1] = special::inverse_softplus(flat[o + 1]);
            flat[o + 2] = special::inverse_softplus(flat[o + 2] - 1.0);
            flat[o + 3] = special::inverse_softplus(flat[o + 3]);
        }
    }
    return flat;
}

inline RelationMarkerPosterior from_unconstrained(std::span<const double> raw, std::size_t K) {
    std::vector<double> flat(raw.begin(), raw.end());
    if (flat.size() != RelationMarkerPosterior::scalar_count(K)) {
        throw ShapeError("from_unconstrained: expected " + std::to_string(10 * K) + " values");
    }
    std::size_t o = 0;
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t c = 0; c < K; ++c, ++o) {
            flat[o] = special::softplus(flat[o]);
        }
        for (std::size_t c = 0; c < K; ++c, o += 4) {
            flat[o + 1] = special::softplus(flat[o + 1]);
            flat[o + 2] = 1.0 + special::softplus(flat[o + 2]);
            flat[o + 3] = special::softplus(flat[o + 3]);
        }
    }
    return from_sufficient_stats(flat, K);
}

// ---------------------------------------------------------------------------
// Tape versions

/// Constrained marker parameters on a tape; each field is a (1 x K) row.
struct MarkerVars {
    std::size_t K = 0;
    std::array<ad::Var, 2> concentration;
    std::array<ad::Var, 2> m;
    std::array<ad::Var, 2> kappa;
    std::array<ad::Var, 2> alpha;
    std::array<ad::Var, 2> beta;
};

/// Maps the raw (10K) leaf through the constraint transforms.
inline MarkerVars constrain(const ad::Var& raw, std::size_t K) {
    if (raw.size() != RelationMarkerPosterior::scalar_count(K)) {
        throw ShapeError("constrain: raw marker vector has " + std::to_string(raw.size()) + " entries, expected " +
                         std::to_string(10 * K));
    }
    auto column = ad::reshape(raw, raw.size(), 1);
    auto pick = [&](std::size_t base, std::size_t stride) {
        std::vector<std::size_t> idx(K);
        for (std::size_t c = 0; c < K; ++c) {
            idx[c] = base + c * stride;
        }
        return ad::reshape(ad::gather_rows(column, std::move(idx)), 1, K);
    };
    MarkerVars mv;
    mv.K = K;
    for (std::size_t r = 0; r < 2; ++r) {
        const std::size_t base = r * 5 * K;
        mv.concentration[r] = ad::softplus(pick(base, 1));
        mv.m[r] = pick(base + K, 4);
        mv.kappa[r] = ad::softplus(pick(base + K + 1, 4));
        mv.alpha[r] = ad::add_scalar(ad::softplus(pick(base + K + 2, 4)), 1.0);
        mv.beta[r] = ad::softplus(pick(base + K + 3, 4));
    }
    return mv;
}

/// Constants on a tape holding a fixed posterior (used for the server prior).
inline MarkerVars marker_constants(ad::Tape& tape, const RelationMarkerPosterior& q) {
    MarkerVars mv;
    mv.K = q.K;
    for (std::size_t r = 0; r < 2; ++r) {
        std::vector<double> m, k, a, b;
        for (const auto& n : q.relation[r].components) {
            m.push_back(n.m);
            k.push_back(n.kappa);
            a.push_back(n.alpha);
            b.push_back(n.beta);
        }
        mv.concentration[r] = tape.constant(q.relation[r].concentration, 1, q.K);
        mv.m[r] = tape.constant(m, 1, q.K);
        mv.kappa[r] = tape.constant(k, 1, q.K);
        mv.alpha[r] = tape.constant(a, 1, q.K);
        mv.beta[r] = tape.constant(b, 1, q.K);
    }
    return mv;
}

/// Student-t log densities of each distance under each component: (P x K).
inline ad::Var student_t_logpdf_matrix(const ad::Var& s, const MarkerVars& mv, std::size_t r) {
    const auto& a = mv.alpha[r];
    const auto& k = mv.kappa[r];
    const auto& b = mv.beta[r];
    // -1/2 log(2 pi beta (kappa+1)/kappa), the df*pi*scale^2 term
    auto log_norm = ad::lgamma(ad::add_scalar(a, 0.5)) - ad::lgamma(a) -
                    0.5 * ad::log(ad::mul_scalar(b * ad::add_scalar(k, 1.0) / k, 2.0 * std::numbers::pi));
    auto denom = ad::mul_scalar(b * ad::add_scalar(k, 1.0), 2.0); // 2 beta (kappa+1)
    auto dev = ad::square(ad::sub(s, mv.m[r]));                   // (P x K)
    auto z = ad::div(ad::mul(dev, k), denom);
    return ad::sub(log_norm, ad::mul(ad::add_scalar(a, 0.5), ad::log(ad::add_scalar(z, 1.0))));
}

/// log of the mixture predictive for relation r at each distance: (P x 1).
inline ad::Var mixture_logpdf(const ad::Var& s, const MarkerVars& mv, std::size_t r) {
    const auto& conc = mv.concentration[r];
    auto log_w = ad::log(conc) - ad::log(ad::sum(conc));
    return ad::logsumexp_rows(ad::add(student_t_logpdf_matrix(s, mv, r), log_w));
}

/// logit of pi_1 at each distance: log pi_1 dens_1 - log pi_0 dens_0, (P x 1).
inline ad::Var pi1_logit(const ad::Var& s, const MarkerVars& mv, const RelationPriors& priors) {
    return ad::add_scalar(ad::sub(mixture_logpdf(s, mv, kRelSame), mixture_logpdf(s, mv, kRelDiff)),
                          std::log(priors.same) - std::log(priors.diff));
}

/// Same as above with the priors as a tape node holding logit(pi_1) (for learned priors).
inline ad::Var pi1_logit(const ad::Var& s, const MarkerVars& mv, const ad::Var& prior_logit) {
    return ad::add(ad::sub(mixture_logpdf(s, mv, kRelSame), mixture_logpdf(s, mv, kRelDiff)), prior_logit);
}

/// KL(Dir(q) || Dir(p)) with q on the tape (1 x K) and p fixed.
inline ad::Var kl_dirichlet(const ad::Var& q, std::span<const double> p) {
    ad::Tape& tape = q.tape();
    if (q.size() != p.size()) {
        throw ShapeError("kl_dirichlet: concentration vectors differ in length");
    }
    double p0 = 0.0, lg_p = 0.0;
    for (double v : p) {
        p0 += v;
        lg_p += special::lgamma(v);
    }
    auto pv = tape.constant(std::vector<double>(p.begin(), p.end()), q.rows(), q.cols());
    auto q0 = ad::sum(q);
    auto kl = ad::lgamma(q0) - ad::sum(ad::lgamma(q)) +
              ad::sum(ad::mul(ad::sub(q, pv), ad::sub(ad::digamma(q), ad::digamma(q0))));
    return ad::add_scalar(kl, lg_p - special::lgamma(p0));
}

/**
 * Summed NIG KLs over the components of one relation; q parameters are
 * (1 x K) tape rows, p the fixed prior components.
 */
inline ad::Var kl_nig(const ad::Var& m, const ad::Var& kappa, const ad::Var& alpha, const ad::Var& beta,
                      std::span<const NigParams> p) {
    ad::Tape& tape = m.tape();
    const std::size_t K = p.size();
    std::vector<double> m0(K), k0(K), a0(K), b0(K);
    double const_part = 0.0;
    for (std::size_t c = 0; c < K; ++c) {
        m0[c] = p[c].m;
        k0[c] = p[c].kappa;
        a0[c] = p[c].alpha;
        b0[c] = p[c].beta;
        const_part += special::lgamma(a0[c]);
    }
    auto M0 = tape.constant(m0, 1, K), K0 = tape.constant(k0, 1, K), A0 = tape.constant(a0, 1, K),
         B0 = tape.constant(b0, 1, K);
    auto ig = ad::mul(ad::sub(alpha, A0), ad::digamma(alpha)) - ad::lgamma(alpha) +
              ad::mul(A0, ad::log(beta) - ad::log(B0)) + ad::div(ad::mul(alpha, ad::sub(B0, beta)), beta);
    auto gauss = 0.5 * (ad::add_scalar(ad::div(K0, kappa), -1.0) + ad::log(ad::div(kappa, K0))) +
                 0.5 * ad::mul(ad::mul(K0, ad::square(ad::sub(m, M0))), ad::div(alpha, beta));
    return ad::add_scalar(ad::sum(ig + gauss), const_part);
}

/// Full KL(q || p) with q on the tape.
inline ad::Var total_kl(const MarkerVars& q, const RelationMarkerPosterior& p) {
    if (q.K != p.K) {
        throw ShapeError("total_kl: K differs (" + std::to_string(q.K) + " vs " + std::to_string(p.K) + ")");
    }
    ad::Var acc;
    for (std::size_t r = 0; r < 2; ++r) {
        auto term = kl_dirichlet(q.concentration[r], p.relation[r].concentration) +
                    kl_nig(q.m[r], q.kappa[r], q.alpha[r], q.beta[r], p.relation[r].components);
        acc = (r == 0) ? term : acc + term;
    }
    return acc;
}

// ---------------------------------------------------------------------------
// Initialization

namespace detail {

inline double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double stddev(const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) {
        mean += x;
    }
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) {
        ss += (x - mean) * (x - mean);
    }
    return std::sqrt(ss / static_cast<double>(v.size()));
}

} // namespace detail

/**
 * Data-driven starting point: component c of relation r sits at quantile
 * (c + 1)/(K + 1) of that relation's observed distances (25/50/75% for
 * K = 3), kappa = 1, alpha = 2, and beta chosen so the predictive scale
 * equals the distance standard deviation. Dirichlet concentrations are 1.
 * A relation with no observations falls back to `fallback`.
 */
inline RelationMarkerPosterior init_posterior_from_distances(std::size_t K, const std::vector<double>& diff_dists,
                                                            const std::vector<double>& same_dists,
                                                            const NigParams& fallback = NigParams{1.0, 1.0, 2.0, 1.0}) {
    RelationMarkerPosterior q;
    q.K = K;
    const std::array<const std::vector<double>*, 2> obs{&diff_dists, &same_dists};
    for (std::size_t r = 0; r < 2; ++r) {
        auto& rel = q.relation[r];
        rel.concentration.assign(K, 1.0);
        rel.components.resize(K);
        const auto& d = *obs[r];
        for (std::size_t c = 0; c < K; ++c) {
            if (d.empty()) {
                rel.components[c] = fallback;
                continue;
            }
            const double loc = detail::quantile(d, static_cast<double>(c + 1) / static_cast<double>(K + 1));
            const double sd = std::max(detail::stddev(d), 1e-3);
            // scale^2 = beta (kappa + 1) / (alpha kappa) = beta with kappa = 1, alpha = 2
            rel.components[c] = NigParams{loc, 1.0, 2.0, sd * sd};
        }
    }
    return q;
}

} // namespace vgm2

#endif
