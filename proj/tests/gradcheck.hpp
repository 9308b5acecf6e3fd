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

#ifndef VGM2_TESTS_GRADCHECK_HPP
#define VGM2_TESTS_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "vgm2/autodiff.hpp"

namespace vgm2::testing {

/// Builds a scalar loss on a fresh tape from a flat parameter vector.
using LossBuilder = std::function<ad::Var(ad::Tape&, const ad::Var& params)>;

struct GradCheck {
    std::vector<double> analytic;
    std::vector<double> numeric;
    double max_abs_error = 0.0;
    double scale = 0.0;

    /// max |analytic - numeric| relative to max(1e-3, max |numeric|).
    double relative_error() const { return max_abs_error / std::max(scale, 1e-3); }
};

inline double eval_loss(const LossBuilder& build, const std::vector<double>& x, std::size_t rows, std::size_t cols) {
    ad::Tape tape;
    auto p = tape.constant(x, rows, cols);
    return build(tape, p).item();
}

/// Reverse-mode gradient vs central finite differences with step h.
inline GradCheck check_gradient(const LossBuilder& build, const std::vector<double>& x, std::size_t rows,
                                std::size_t cols, double h = 1e-6) {
    GradCheck out;
    {
        ad::Tape tape;
        auto p = tape.variable(x, rows, cols);
        auto loss = build(tape, p);
        out.analytic = tape.backward(loss).of(p);
    }
    out.numeric.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        auto xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        out.numeric[i] = (eval_loss(build, xp, rows, cols) - eval_loss(build, xm, rows, cols)) / (2 * h);
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        out.max_abs_error = std::max(out.max_abs_error, std::abs(out.analytic[i] - out.numeric[i]));
        out.scale = std::max(out.scale, std::abs(out.numeric[i]));
    }
    return out;
}

} // namespace vgm2::testing

#endif
