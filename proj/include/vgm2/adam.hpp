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

#ifndef VGM2_ADAM_HPP
#define VGM2_ADAM_HPP

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace vgm2 {

/// A named dense parameter block (row-major).
struct Parameter {
    std::string name;
    std::size_t rows = 1;
    std::size_t cols = 1;
    std::vector<double> value;

    std::size_t size() const { return value.size(); }
};

/// Optimizer hyperparameters; the defaults are conventional, not tuned.
struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long step = 0;
};

/**
 * One bias-corrected Adam update of `param` in place.
 *
 * Throws NumericalError naming the parameter when any gradient entry is
 * non-finite; in that case nothing is modified.
 */
inline void adam_step(Parameter& param, std::span<const double> grad, AdamState& state, const AdamConfig& cfg) {
    if (grad.size() != param.size()) {
        throw ShapeError("adam_step: gradient for '" + param.name + "' has " + std::to_string(grad.size()) +
                         " entries, parameter has " + std::to_string(param.size()));
    }
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!std::isfinite(grad[i])) {
            throw NumericalError("adam_step: non-finite gradient in parameter '" + param.name + "' at index " +
                                 std::to_string(i));
        }
    }
    if (state.m.empty()) {
        state.m.assign(param.size(), 0.0);
        state.v.assign(param.size(), 0.0);
    }
    if (state.m.size() != param.size()) {
        throw ShapeError("adam_step: optimizer state for '" + param.name + "' does not match the parameter size");
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < grad.size(); ++i) {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        param.value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

} // namespace vgm2

#endif
