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

#ifndef VGM2_GEOMETRY_HPP
#define VGM2_GEOMETRY_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "adam.hpp"
#include "autodiff.hpp"
#include "error.hpp"
#include "matrix.hpp"
#include "rng.hpp"

/**
 * @file geometry.hpp
 *
 * @brief Client-side manifold learning: encoder, kNN affinities, the
 * parametric-UMAP cross-entropy and pair sampling.
 */

namespace vgm2 {

// ---------------------------------------------------------------------------
// Encoder

/**
 * Multi-layer perceptron f: R^m -> R^d with tanh hidden activations and a
 * linear output layer. Layers are stored as W0, b0, W1, b1, ...
 */
struct EncoderParams {
    std::size_t input_dim = 0;
    std::size_t output_dim = 0;
    std::vector<Parameter> layers;
};

inline EncoderParams make_encoder(std::size_t input_dim, std::vector<std::size_t> hidden, std::size_t output_dim,
                                  Rng& rng) {
    if (input_dim == 0 || output_dim == 0) {
        throw ConfigError("make_encoder: input and output dimensions must be positive");
    }
    EncoderParams enc;
    enc.input_dim = input_dim;
    enc.output_dim = output_dim;
    std::vector<std::size_t> dims{input_dim};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(output_dim);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const double limit = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
        std::uniform_real_distribution<double> unif(-limit, limit);
        Parameter w{"encoder.W" + std::to_string(l), dims[l], dims[l + 1], std::vector<double>(dims[l] * dims[l + 1])};
        for (auto& v : w.value) {
            v = unif(rng);
        }
        enc.layers.push_back(std::move(w));
        enc.layers.push_back(Parameter{"encoder.b" + std::to_string(l), 1, dims[l + 1],
                                       std::vector<double>(dims[l + 1], 0.0)});
    }
    return enc;
}

/// Registers the encoder weights as trainable leaves (or constants when frozen).
inline std::vector<ad::Var> encoder_leaves(ad::Tape& tape, const EncoderParams& enc, bool trainable = true) {
    std::vector<ad::Var> out;
    out.reserve(enc.layers.size());
    for (const auto& p : enc.layers) {
        out.push_back(trainable ? tape.variable(p.value, p.rows, p.cols) : tape.constant(p.value, p.rows, p.cols));
    }
    return out;
}

/// Forward pass on the tape. `leaves` as returned by encoder_leaves.
inline ad::Var encoder_forward(const std::vector<ad::Var>& leaves, const ad::Var& x) {
    if (leaves.size() % 2 != 0 || leaves.empty()) {
        throw ShapeError("encoder_forward: expected weight/bias pairs");
    }
    ad::Var h = x;
    const std::size_t nlayers = leaves.size() / 2;
    for (std::size_t l = 0; l < nlayers; ++l) {
        h = ad::add(ad::matmul(h, leaves[2 * l]), leaves[2 * l + 1]);
        if (l + 1 < nlayers) {
            h = ad::tanh(h);
        }
    }
    return h;
}

/// Plain forward pass, no gradients.
inline Matrix encode(const EncoderParams& enc, const Matrix& x) {
    if (x.cols != enc.input_dim) {
        throw ShapeError("encode: input has " + std::to_string(x.cols) + " columns, encoder expects " +
                         std::to_string(enc.input_dim));
    }
    ad::Tape tape;
    auto leaves = encoder_leaves(tape, enc, false);
    auto z = encoder_forward(leaves, tape.constant(x.data, x.rows, x.cols));
    return Matrix(x.rows, enc.output_dim, std::vector<double>(z.value().begin(), z.value().end()));
}

// ---------------------------------------------------------------------------
// Neighbor graph

struct Edge {
    std::size_t i = 0;
    std::size_t j = 0;
    double p = 0.0;
};

struct NeighborGraph {
    std::size_t n_points = 0;
    std::size_t n_neighbors = 0;
    std::vector<std::vector<std::size_t>> neighbors; ///< sorted by distance, self excluded
    std::vector<std::vector<double>> distances;
    std::vector<double> sigma;
    std::vector<double> rho;
    std::vector<Edge> edges; ///< symmetrized, i < j
    std::size_t sigma_fallbacks = 0;
};

namespace detail {

inline double affinity_sum(std::span<const double> dists, double rho, double sigma) {
    double s = 0.0;
    for (double d : dists) {
        s += std::exp(-std::max(0.0, d - rho) / sigma);
    }
    return s;
}

/// Bisection for sigma such that sum_j exp(-max(0, d_j - rho)/sigma) = target.
/// Returns 0 when the target is unreachable (all excess distances zero).
inline double solve_sigma(std::span<const double> dists, double rho, double target) {
    std::size_t saturated = 0;
    for (double d : dists) {
        if (d - rho <= 0.0) {
            ++saturated;
        }
    }
    if (static_cast<double>(saturated) >= target) {
        return 0.0;
    }
    double lo = 0.0, hi = std::numeric_limits<double>::infinity(), mid = 1.0;
    for (int it = 0; it < 64; ++it) {
        const double s = affinity_sum(dists, rho, mid);
        if (std::abs(s - target) < 1e-6) {
            break;
        }
        if (s > target) {
            hi = mid;
            mid = 0.5 * (lo + hi);
        } else {
            lo = mid;
            mid = std::isinf(hi) ? mid * 2.0 : 0.5 * (lo + hi);
        }
    }
    return mid;
}

} // namespace detail

/**
 * Exact brute-force kNN graph with fuzzy-simplicial affinities.
 *
 * Directed weights p_{j|i} = exp(-max(0, d_ij - rho_i) / sigma_i), with
 * sigma_i chosen so that the weights of i's neighbors sum to log2(k), then
 * symmetrized as p_ij = a + b - a*b.
 */
inline NeighborGraph build_knn_graph(const Matrix& x, std::size_t n_neighbors) {
    const std::size_t n = x.rows;
    if (n_neighbors < 2 || n_neighbors >= n) {
        throw ConfigError("build_knn_graph: need 2 <= n_neighbors < n_points, got n_neighbors=" +
                          std::to_string(n_neighbors) + " with " + std::to_string(n) + " points");
    }
    for (double v : x.data) {
        if (!std::isfinite(v)) {
            throw NumericalError("build_knn_graph: non-finite input coordinate");
        }
    }

    NeighborGraph g;
    g.n_points = n;
    g.n_neighbors = n_neighbors;
    g.neighbors.resize(n);
    g.distances.resize(n);
    g.sigma.resize(n);
    g.rho.resize(n);

    std::vector<std::pair<double, std::size_t>> cand;
    cand.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        cand.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) {
                cand.emplace_back(std::sqrt(squared_distance(x.row(i), x.row(j))), j);
            }
        }
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(n_neighbors), cand.end());
        for (std::size_t k = 0; k < n_neighbors; ++k) {
            g.neighbors[i].push_back(cand[k].second);
            g.distances[i].push_back(cand[k].first);
        }
        g.rho[i] = g.distances[i].front();
        const double sigma = detail::solve_sigma(g.distances[i], g.rho[i], std::log2(static_cast<double>(n_neighbors)));
        if (sigma == 0.0) {
            g.sigma[i] = 1.0;
            ++g.sigma_fallbacks;
        } else {
            g.sigma[i] = sigma;
        }
    }

    // Directed weights keyed by (i, j), then fuzzy union.
    std::map<std::pair<std::size_t, std::size_t>, std::pair<double, double>> sym;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < n_neighbors; ++k) {
            const std::size_t j = g.neighbors[i][k];
            const double w = std::exp(-std::max(0.0, g.distances[i][k] - g.rho[i]) / g.sigma[i]);
            auto key = std::minmax(i, j);
            auto& slot = sym[{key.first, key.second}];
            if (i < j) {
                slot.first = w;
            } else {
                slot.second = w;
            }
        }
    }
    g.edges.reserve(sym.size());
    for (const auto& [key, w] : sym) {
        const double p = w.first + w.second - w.first * w.second;
        g.edges.push_back(Edge{key.first, key.second, std::clamp(p, 0.0, 1.0)});
    }
    return g;
}

/**
 * Samples `per_edge` non-neighbor pairs per positive edge, with p = 0.
 * These stand in for the (1 - p) log(1 - q) part of the cross-entropy over
 * all non-edges.
 */
inline std::vector<Edge> sample_negative_edges(const NeighborGraph& g, std::size_t per_edge, Rng& rng) {
    std::vector<Edge> out;
    if (g.n_points < 2 || per_edge == 0) {
        return out;
    }
    std::set<std::pair<std::size_t, std::size_t>> positive;
    for (const auto& e : g.edges) {
        positive.emplace(e.i, e.j);
    }
    const std::size_t total_pairs = g.n_points * (g.n_points - 1) / 2;
    if (positive.size() >= total_pairs) {
        return out;
    }
    std::uniform_int_distribution<std::size_t> pick(0, g.n_points - 1);
    out.reserve(g.edges.size() * per_edge);
    for (const auto& e : g.edges) {
        for (std::size_t s = 0; s < per_edge; ++s) {
            for (int attempt = 0; attempt < 64; ++attempt) {
                const std::size_t j = pick(rng);
                auto key = std::minmax(e.i, j);
                if (j != e.i && !positive.contains({key.first, key.second})) {
                    out.push_back(Edge{key.first, key.second, 0.0});
                    break;
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// UMAP loss

inline constexpr double kProbClamp = 1e-7;

/// Low-dimensional similarity q = (1 + a d^{2b})^{-1}, plain double version.
inline double umap_q(double dist, double a, double b) { return 1.0 / (1.0 + a * std::pow(dist * dist, b)); }

/**
 * Parametric-UMAP cross-entropy
 *   -sum_{(i,j)} [p log q + (1 - p) log(1 - q)]
 * over the given edges, differentiable through the embedding `z` (n x d).
 * q is clamped into [1e-7, 1 - 1e-7] before the logs.
 */
inline ad::Var umap_loss(std::span<const Edge> edges, const ad::Var& z, double a, double b) {
    for (double v : z.value()) {
        if (!std::isfinite(v)) {
            throw NumericalError("umap_loss: non-finite embedding coordinate");
        }
    }
    ad::Tape& tape = z.tape();
    if (edges.empty()) {
        return tape.constant(0.0);
    }
    std::vector<std::size_t> ii, jj;
    std::vector<double> p;
    ii.reserve(edges.size());
    jj.reserve(edges.size());
    p.reserve(edges.size());
    for (const auto& e : edges) {
        ii.push_back(e.i);
        jj.push_back(e.j);
        p.push_back(e.p);
    }
    const std::size_t m = edges.size();
    auto pv = tape.constant(p, m, 1);
    auto diff = ad::gather_rows(z, std::move(ii)) - ad::gather_rows(z, std::move(jj));
    auto d2 = ad::sum_rows(ad::square(diff));
    auto q = ad::pow(ad::add_scalar(ad::mul_scalar(ad::pow(d2, b), a), 1.0), -1.0);
    q = ad::clamp(q, kProbClamp, 1.0 - kProbClamp);
    auto pos = ad::mul(pv, ad::log(q));
    auto neg = ad::mul(1.0 - pv, ad::log(1.0 - q));
    return -ad::sum(ad::add(pos, neg));
}

// ---------------------------------------------------------------------------
// Pair sampling

/// Index pairs with relation labels u = 1 iff same class.
struct PairIndexSet {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::vector<int> same;
    bool single_class = false;

    std::size_t size() const { return pairs.size(); }
    double same_fraction() const {
        if (same.empty()) {
            return 0.0;
        }
        return static_cast<double>(std::count(same.begin(), same.end(), 1)) / static_cast<double>(same.size());
    }
};

/// Pairs plus their latent distances on a tape.
struct PairBatch {
    PairIndexSet index;
    ad::Var distances; ///< (P x 1)
};

namespace detail {

/// First `k` elements of a uniform random permutation (partial Fisher-Yates).
template <class T>
void partial_shuffle(std::vector<T>& v, std::size_t k, Rng& rng) {
    k = std::min(k, v.size());
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, v.size() - 1);
        std::swap(v[i], v[pick(rng)]);
    }
    v.resize(k);
}

} // namespace detail

/**
 * Draws `budget` distinct unordered pairs, aiming for a same-class fraction
 * of `balance_ratio`. When one relation runs short the other fills the gap;
 * the total is capped at n(n-1)/2.
 */
inline PairIndexSet sample_pairs(std::span<const int> labels, std::size_t budget, double balance_ratio, Rng& rng) {
    const std::size_t n = labels.size();
    if (n < 2) {
        throw ConfigError("sample_pairs: need at least 2 points, got " + std::to_string(n));
    }
    if (budget < 1) {
        throw ConfigError("sample_pairs: budget must be >= 1");
    }
    std::vector<std::pair<std::size_t, std::size_t>> same, diff;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            (labels[i] == labels[j] ? same : diff).emplace_back(i, j);
        }
    }
    const std::size_t total = std::min(budget, same.size() + diff.size());
    std::size_t want_same = static_cast<std::size_t>(std::llround(static_cast<double>(total) * balance_ratio));
    want_same = std::min(want_same, same.size());
    std::size_t want_diff = std::min(total - want_same, diff.size());
    want_same = std::min(total - want_diff, same.size());

    detail::partial_shuffle(same, want_same, rng);
    detail::partial_shuffle(diff, want_diff, rng);

    PairIndexSet out;
    out.single_class = std::all_of(labels.begin(), labels.end(), [&](int y) { return y == labels[0]; });
    for (auto& p : same) {
        out.pairs.push_back(p);
        out.same.push_back(1);
    }
    for (auto& p : diff) {
        out.pairs.push_back(p);
        out.same.push_back(0);
    }
    return out;
}

/// Latent distances s_ij = ||z_i - z_j||_2 for the given pairs, as a (P x 1) tape node.
inline ad::Var pair_distances(const ad::Var& z, const PairIndexSet& pairs) {
    std::vector<std::size_t> ii, jj;
    ii.reserve(pairs.size());
    jj.reserve(pairs.size());
    for (const auto& [i, j] : pairs.pairs) {
        ii.push_back(i);
        jj.push_back(j);
    }
    auto diff = ad::gather_rows(z, std::move(ii)) - ad::gather_rows(z, std::move(jj));
    return ad::pow(ad::sum_rows(ad::square(diff)), 0.5);
}

// ---------------------------------------------------------------------------
// Curve parameters

struct AbFit {
    double a = 1.577;
    double b = 0.895;
    double rms_residual = 0.0;
    bool converged = true;
};

namespace detail {

inline double ab_target(double x, double min_dist) { return x < min_dist ? 1.0 : std::exp(-(x - min_dist)); }

inline double ab_sse(double a, double b, double min_dist, std::span<const double> xs) {
    double s = 0.0;
    for (double x : xs) {
        const double r = umap_q(x, a, b) - ab_target(x, min_dist);
        s += r * r;
    }
    return s;
}

inline std::vector<double> ab_grid(std::size_t n = 300) {
    std::vector<double> xs(n);
    for (std::size_t i = 0; i < n; ++i) {
        xs[i] = 3.0 * static_cast<double>(i) / static_cast<double>(n - 1);
    }
    return xs;
}

} // namespace detail

/**
 * Least-squares fit of (1 + a x^{2b})^{-1} to the curve that is 1 below
 * `min_dist` and exp(-(x - min_dist)) above it, on 300 points of [0, 3].
 * Levenberg-Marquardt from (1.577, 0.895); falls back to those values with
 * converged = false when the fit does not settle.
 */
inline AbFit fit_ab_from_min_dist(double min_dist) {
    if (!(min_dist > 0.0 && min_dist < 1.0)) {
        throw ConfigError("fit_ab_from_min_dist: min_dist must lie in (0, 1), got " + std::to_string(min_dist));
    }
    const auto xs = detail::ab_grid();
    double a = 1.577, b = 0.895, damping = 1e-3;
    double sse = detail::ab_sse(a, b, min_dist, xs);
    bool converged = false;
    for (int it = 0; it < 500; ++it) {
        double jtj00 = 0, jtj01 = 0, jtj11 = 0, g0 = 0, g1 = 0;
        for (double x : xs) {
            if (x == 0.0) {
                continue;
            }
            const double u = std::pow(x * x, b);
            const double q = 1.0 / (1.0 + a * u);
            const double r = q - detail::ab_target(x, min_dist);
            const double da = -u * q * q;
            const double db = -a * q * q * u * 2.0 * std::log(x);
            jtj00 += da * da;
            jtj01 += da * db;
            jtj11 += db * db;
            g0 += da * r;
            g1 += db * r;
        }
        bool accepted = false;
        for (int inner = 0; inner < 30 && !accepted; ++inner) {
            const double m00 = jtj00 * (1.0 + damping), m11 = jtj11 * (1.0 + damping);
            const double det = m00 * m11 - jtj01 * jtj01;
            if (det == 0.0) {
                damping *= 10.0;
                continue;
            }
            const double sa = -(m11 * g0 - jtj01 * g1) / det;
            const double sb = -(m00 * g1 - jtj01 * g0) / det;
            const double na = a + sa, nb = b + sb;
            if (na > 0.0 && nb > 0.0) {
                const double nsse = detail::ab_sse(na, nb, min_dist, xs);
                if (nsse < sse) {
                    const double rel = (sse - nsse) / std::max(sse, 1e-300);
                    a = na;
                    b = nb;
                    sse = nsse;
                    damping = std::max(damping / 10.0, 1e-12);
                    accepted = true;
                    if (rel < 1e-14) {
                        converged = true;
                    }
                    break;
                }
            }
            damping *= 10.0;
        }
        if (!accepted || converged) {
            converged = true;
            break;
        }
    }
    AbFit fit;
    if (!converged || !std::isfinite(a) || !std::isfinite(b)) {
        fit.converged = false;
        fit.rms_residual = std::sqrt(detail::ab_sse(fit.a, fit.b, min_dist, xs) / static_cast<double>(xs.size()));
        return fit;
    }
    fit.a = a;
    fit.b = b;
    fit.rms_residual = std::sqrt(sse / static_cast<double>(xs.size()));
    return fit;
}

} // namespace vgm2

#endif
