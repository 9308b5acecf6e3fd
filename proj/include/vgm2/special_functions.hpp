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

#ifndef VGM2_SPECIAL_FUNCTIONS_HPP
#define VGM2_SPECIAL_FUNCTIONS_HPP

#include <array>
#include <cmath>
#include <limits>
#include <numbers>

#include "error.hpp"

/**
 * @file special_functions.hpp
 *
 * @brief Gamma-family functions used by the Dirichlet and NIG terms.
 *
 * These are written out rather than taken from <cmath> because they are
 * differentiated on the tape: d lgamma = digamma, d digamma = trigamma.
 */

namespace vgm2::special {

/// log Gamma(x) via the Lanczos approximation with g = 7 and 9 coefficients.
inline double lgamma(double x) {
    static constexpr std::array<double, 9> coef{
        0.99999999999980993,  676.5203681218851,     -1259.1392167224028,
        771.32342877765313,   -176.61502916214059,   12.507343278686905,
        -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7};
    constexpr double g = 7.0;

    if (x < 0.5) {
        // reflection
        return std::log(std::numbers::pi / std::abs(std::sin(std::numbers::pi * x))) - lgamma(1.0 - x);
    }
    x -= 1.0;
    double a = coef[0];
    for (int i = 1; i < 9; ++i) {
        a += coef[i] / (x + i);
    }
    const double t = x + g + 0.5;
    return 0.5 * std::log(2.0 * std::numbers::pi) + (x + 0.5) * std::log(t) - t + std::log(a);
}

/// Digamma by upward recurrence to x >= 10, then the asymptotic series.
inline double digamma(double x) {
    if (x <= 0.0 && std::floor(x) == x) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    if (x < 0.0) {
        return digamma(1.0 - x) - std::numbers::pi / std::tan(std::numbers::pi * x);
    }
    double result = 0.0;
    while (x < 10.0) {
        result -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    // Bernoulli terms B_2n / (2n x^2n)
    const double series =
        inv2 * (1.0 / 12.0 -
                inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * 691.0 / 32760.0)))));
    return result + std::log(x) - 0.5 * inv - series;
}

/// Trigamma, same recurrence-plus-asymptotic scheme.
inline double trigamma(double x) {
    if (x <= 0.0 && std::floor(x) == x) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    if (x < 0.0) {
        const double s = std::sin(std::numbers::pi * x);
        return -trigamma(1.0 - x) + std::numbers::pi * std::numbers::pi / (s * s);
    }
    double result = 0.0;
    while (x < 10.0) {
        result += 1.0 / (x * x);
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    const double series =
        inv + 0.5 * inv2 +
        inv * inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0 - inv2 * 5.0 / 66.0))));
    return result + series;
}

/// Solves digamma(x) = y for x > 0 by Newton's method from Minka's initializer.
inline double inverse_digamma(double y) {
    constexpr double euler = 0.57721566490153286;
    double x = (y >= -2.22) ? std::exp(y) + 0.5 : -1.0 / (y + euler);
    for (int it = 0; it < 100; ++it) {
        const double step = (digamma(x) - y) / trigamma(x);
        double next = x - step;
        while (next <= 0.0) {
            next = 0.5 * (x + std::max(next, 0.0));
            if (next == 0.0) {
                next = x * 0.5;
            }
        }
        if (std::abs(next - x) <= 1e-15 * std::max(1.0, x)) {
            return next;
        }
        x = next;
    }
    return x;
}

/**
 * Solves log(a) - digamma(a) = c for a > 0.
 *
 * The left-hand side is strictly decreasing from +inf to 0, so a solution
 * exists iff c > 0. Newton on a, starting from Minka's closed-form
 * approximation for the gamma shape MLE.
 */
inline double solve_log_minus_digamma(double c) {
    if (!(c > 0.0) || !std::isfinite(c)) {
        throw NumericalError("solve_log_minus_digamma: target must be positive and finite, got " + std::to_string(c));
    }
    double a = (3.0 - c + std::sqrt((c - 3.0) * (c - 3.0) + 24.0 * c)) / (12.0 * c);
    for (int it = 0; it < 200; ++it) {
        const double f = std::log(a) - digamma(a) - c;
        const double df = 1.0 / a - trigamma(a);
        double next = a - f / df;
        if (next <= 0.0) {
            next = 0.5 * a;
        }
        if (std::abs(next - a) <= 1e-15 * a) {
            return next;
        }
        a = next;
    }
    return a;
}

inline double softplus(double x) { return x > 30.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

/// Inverse of softplus on (0, inf).
inline double inverse_softplus(double y) {
    if (!(y > 0.0)) {
        throw NumericalError("inverse_softplus: argument must be positive, got " + std::to_string(y));
    }
    return y > 30.0 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
}

inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// log(sigmoid(x)) without overflow.
inline double log_sigmoid(double x) { return -softplus(-x); }

} // namespace vgm2::special

#endif
