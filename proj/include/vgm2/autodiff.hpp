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

#ifndef VGM2_AUTODIFF_HPP
#define VGM2_AUTODIFF_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "special_functions.hpp"

/**
 * @file autodiff.hpp
 *
 * @brief Reverse-mode automatic differentiation over dense rank-2 buffers.
 *
 * A `Tape` owns every intermediate value. Nodes are appended in creation
 * order, which is a topological order, so `backward()` just walks the node
 * list in reverse once. All buffers are row-major `double`.
 *
 * Elementwise binary ops broadcast in the rank-2 sense: along each axis the
 * two extents must either match or one of them must be 1.
 */

namespace vgm2::ad {

struct Shape {
    std::size_t rows = 1;
    std::size_t cols = 1;

    std::size_t size() const { return rows * cols; }
    bool operator==(const Shape&) const = default;
    std::string str() const { return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")"; }
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
class Var {
  public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    bool valid() const { return tape_ != nullptr; }
    Tape& tape() const { return *tape_; }
    std::size_t id() const { return id_; }
    const Shape& shape() const;
    std::size_t rows() const { return shape().rows; }
    std::size_t cols() const { return shape().cols; }
    std::size_t size() const { return shape().size(); }
    std::span<const double> value() const;
    double value(std::size_t i) const { return value()[i]; }
    /// Value of a 1x1 node.
    double item() const;

  private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Gradient buffers produced by Tape::backward, indexed by node id.
class Gradients {
  public:
    Gradients() = default;
    explicit Gradients(std::vector<std::vector<double>> g) : grads_(std::move(g)) {}

    /// Gradient of the loss w.r.t. `v`; all zeros when v does not influence the loss.
    std::vector<double> of(const Var& v) const {
        if (v.id() < grads_.size() && !grads_[v.id()].empty()) {
            return grads_[v.id()];
        }
        return std::vector<double>(v.size(), 0.0);
    }

  private:
    std::vector<std::vector<double>> grads_;
};

class Tape {
  public:
    using GradBuffers = std::vector<std::vector<double>>;
    /// Propagates grads[self] into the parents' buffers. Parent buffers are
    /// empty when that parent does not require a gradient.
    using Backprop = std::function<void(std::size_t self, GradBuffers& grads)>;

    struct Node {
        Shape shape;
        std::vector<double> value;
        bool requires_grad = false;
        Backprop backprop;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Trainable leaf.
    Var variable(std::vector<double> value, std::size_t rows, std::size_t cols) {
        check_size(value, rows, cols, "variable");
        return push({Shape{rows, cols}, std::move(value), true, {}});
    }
    Var variable(double value) { return variable({value}, 1, 1); }

    /// Leaf with no gradient.
    Var constant(std::vector<double> value, std::size_t rows, std::size_t cols) {
        check_size(value, rows, cols, "constant");
        return push({Shape{rows, cols}, std::move(value), false, {}});
    }
    Var constant(double value) { return constant({value}, 1, 1); }

    Var push(Node node) {
        nodes_.push_back(std::move(node));
        return Var(this, nodes_.size() - 1);
    }

    const Node& node(std::size_t id) const { return nodes_[id]; }
    std::size_t size() const { return nodes_.size(); }

    /**
     * Reverse pass from a scalar loss. Every node is visited at most once,
     * in reverse creation order.
     */
    Gradients backward(const Var& loss) {
        if (&loss.tape() != this) {
            throw ShapeError("backward: loss belongs to a different tape");
        }
        if (loss.size() != 1) {
            throw ShapeError("backward: loss must be scalar, got shape " + loss.shape().str());
        }
        GradBuffers grads(nodes_.size());
        for (std::size_t i = 0; i <= loss.id(); ++i) {
            if (nodes_[i].requires_grad) {
                grads[i].assign(nodes_[i].shape.size(), 0.0);
            }
        }
        if (!nodes_[loss.id()].requires_grad) {
            return Gradients(std::move(grads));
        }
        grads[loss.id()][0] = 1.0;
        for (std::size_t i = loss.id() + 1; i-- > 0;) {
            if (nodes_[i].backprop && !grads[i].empty()) {
                nodes_[i].backprop(i, grads);
            }
        }
        return Gradients(std::move(grads));
    }

  private:
    static void check_size(const std::vector<double>& v, std::size_t rows, std::size_t cols, const char* what) {
        if (v.size() != rows * cols) {
            throw ShapeError(std::string(what) + ": buffer of " + std::to_string(v.size()) + " values for shape (" +
                             std::to_string(rows) + "x" + std::to_string(cols) + ")");
        }
    }

    std::vector<Node> nodes_;
};

inline const Shape& Var::shape() const { return tape_->node(id_).shape; }
inline std::span<const double> Var::value() const { return tape_->node(id_).value; }
inline double Var::item() const {
    if (size() != 1) {
        throw ShapeError("item: node is not scalar, shape " + shape().str());
    }
    return value()[0];
}

namespace detail {

inline void same_tape(const Var& a, const Var& b, const char* op) {
    if (&a.tape() != &b.tape()) {
        throw ShapeError(std::string(op) + ": operands live on different tapes");
    }
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    auto dim = [&](std::size_t x, std::size_t y) {
        if (x == y || y == 1) {
            return x;
        }
        if (x == 1) {
            return y;
        }
        throw ShapeError(std::string(op) + ": cannot broadcast " + a.str() + " with " + b.str());
    };
    return Shape{dim(a.rows, b.rows), dim(a.cols, b.cols)};
}

/// Flat index into an operand of shape `s` broadcast to the output position (r, c).
inline std::size_t bindex(const Shape& s, std::size_t r, std::size_t c) {
    return (s.rows == 1 ? 0 : r) * s.cols + (s.cols == 1 ? 0 : c);
}

/// Elementwise unary op. `deriv(x, y)` returns dy/dx.
template <class F, class D>
Var unary(const Var& x, F f, D deriv) {
    Tape& tape = x.tape();
    const auto xv = x.value();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[i] = f(xv[i]);
    }
    const bool rg = tape.node(x.id()).requires_grad;
    Tape::Node node{x.shape(), std::move(out), rg, {}};
    if (rg) {
        const std::size_t xid = x.id();
        node.backprop = [xid, deriv, &tape](std::size_t self, Tape::GradBuffers& g) {
            const auto& xv = tape.node(xid).value;
            const auto& yv = tape.node(self).value;
            const auto& gy = g[self];
            auto& gx = g[xid];
            for (std::size_t i = 0; i < gy.size(); ++i) {
                gx[i] += gy[i] * deriv(xv[i], yv[i]);
            }
        };
    }
    return tape.push(std::move(node));
}

/// Elementwise broadcasting binary op. `da(a,b,y)` and `db(a,b,y)` are partials.
template <class F, class DA, class DB>
Var binary(const Var& a, const Var& b, const char* name, F f, DA da, DB db) {
    same_tape(a, b, name);
    Tape& tape = a.tape();
    const Shape sa = a.shape(), sb = b.shape();
    const Shape so = broadcast_shape(sa, sb, name);
    const auto av = a.value();
    const auto bv = b.value();
    std::vector<double> out(so.size());
    for (std::size_t r = 0; r < so.rows; ++r) {
        for (std::size_t c = 0; c < so.cols; ++c) {
            out[r * so.cols + c] = f(av[bindex(sa, r, c)], bv[bindex(sb, r, c)]);
        }
    }
    const bool ra = tape.node(a.id()).requires_grad;
    const bool rb = tape.node(b.id()).requires_grad;
    Tape::Node node{so, std::move(out), ra || rb, {}};
    if (ra || rb) {
        const std::size_t aid = a.id(), bid = b.id();
        node.backprop = [aid, bid, sa, sb, so, da, db, &tape](std::size_t self, Tape::GradBuffers& g) {
            const auto& av = tape.node(aid).value;
            const auto& bv = tape.node(bid).value;
            const auto& yv = tape.node(self).value;
            const auto& gy = g[self];
            auto& ga = g[aid];
            auto& gb = g[bid];
            for (std::size_t r = 0; r < so.rows; ++r) {
                for (std::size_t c = 0; c < so.cols; ++c) {
                    const std::size_t o = r * so.cols + c;
                    const std::size_t ia = bindex(sa, r, c), ib = bindex(sb, r, c);
                    if (!ga.empty()) {
                        ga[ia] += gy[o] * da(av[ia], bv[ib], yv[o]);
                    }
                    if (!gb.empty()) {
                        gb[ib] += gy[o] * db(av[ia], bv[ib], yv[o]);
                    }
                }
            }
        };
    }
    return tape.push(std::move(node));
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Var add(const Var& a, const Var& b) {
    return detail::binary(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return 1.0; });
}

inline Var sub(const Var& a, const Var& b) {
    return detail::binary(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return -1.0; });
}

inline Var mul(const Var& a, const Var& b) {
    return detail::binary(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
        [](double x, double, double) { return x; });
}

inline Var div(const Var& a, const Var& b) {
    return detail::binary(
        a, b, "div", [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
        [](double, double y, double out) { return -out / y; });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }

inline Var add_scalar(const Var& x, double s) {
    return detail::unary(x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}
inline Var mul_scalar(const Var& x, double s) {
    return detail::unary(x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}
inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }
inline Var operator+(double s, const Var& a) { return add_scalar(a, s); }
inline Var operator-(const Var& a, double s) { return add_scalar(a, -s); }
inline Var operator-(double s, const Var& a) { return add_scalar(mul_scalar(a, -1.0), s); }
inline Var operator*(const Var& a, double s) { return mul_scalar(a, s); }
inline Var operator*(double s, const Var& a) { return mul_scalar(a, s); }
inline Var operator/(const Var& a, double s) { return mul_scalar(a, 1.0 / s); }
inline Var operator-(const Var& a) { return mul_scalar(a, -1.0); }

// ---------------------------------------------------------------------------
// Elementwise functions

inline Var exp(const Var& x) {
    return detail::unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var log(const Var& x) {
    return detail::unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Var sqrt(const Var& x) {
    return detail::unary(x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

inline Var square(const Var& x) {
    return detail::unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

/// x^p with the convention 0^p = 0 and zero derivative at a zero base.
inline Var pow(const Var& x, double p) {
    return detail::unary(
        x, [p](double v) { return v == 0.0 ? (p == 0.0 ? 1.0 : 0.0) : std::pow(v, p); },
        [p](double v, double y) { return v == 0.0 ? 0.0 : p * y / v; });
}

inline Var tanh(const Var& x) {
    return detail::unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var relu(const Var& x) {
    return detail::unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var sigmoid(const Var& x) {
    return detail::unary(x, [](double v) { return special::sigmoid(v); }, [](double, double y) { return y * (1.0 - y); });
}

inline Var softplus(const Var& x) {
    return detail::unary(x, [](double v) { return special::softplus(v); }, [](double v, double) { return special::sigmoid(v); });
}

/// log(sigmoid(x)), stable for large |x|.
inline Var log_sigmoid(const Var& x) {
    return detail::unary(
        x, [](double v) { return special::log_sigmoid(v); }, [](double v, double) { return special::sigmoid(-v); });
}

inline Var lgamma(const Var& x) {
    return detail::unary(x, [](double v) { return special::lgamma(v); }, [](double v, double) { return special::digamma(v); });
}

inline Var digamma(const Var& x) {
    return detail::unary(x, [](double v) { return special::digamma(v); }, [](double v, double) { return special::trigamma(v); });
}

/// Clamp into [lo, hi]; the derivative is zero where clamping is active.
inline Var clamp(const Var& x, double lo, double hi) {
    return detail::unary(
        x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v, double) { return (v < lo || v > hi) ? 0.0 : 1.0; });
}

// ---------------------------------------------------------------------------
// Reductions and structure

inline Var sum(const Var& x) {
    Tape& tape = x.tape();
    double s = 0.0;
    for (double v : x.value()) {
        s += v;
    }
    const bool rg = tape.node(x.id()).requires_grad;
    Tape::Node node{Shape{1, 1}, {s}, rg, {}};
    if (rg) {
        const std::size_t xid = x.id();
        node.backprop = [xid](std::size_t self, Tape::GradBuffers& g) {
            const double gy = g[self][0];
            for (double& v : g[xid]) {
                v += gy;
            }
        };
    }
    return tape.push(std::move(node));
}

inline Var mean(const Var& x) { return mul_scalar(sum(x), 1.0 / static_cast<double>(x.size())); }

/// Sums each row: (r x c) -> (r x 1).
inline Var sum_rows(const Var& x) {
    Tape& tape = x.tape();
    const Shape s = x.shape();
    const auto xv = x.value();
    std::vector<double> out(s.rows, 0.0);
    for (std::size_t r = 0; r < s.rows; ++r) {
        for (std::size_t c = 0; c < s.cols; ++c) {
            out[r] += xv[r * s.cols + c];
        }
    }
    const bool rg = tape.node(x.id()).requires_grad;
    Tape::Node node{Shape{s.rows, 1}, std::move(out), rg, {}};
    if (rg) {
        const std::size_t xid = x.id();
        node.backprop = [xid, s](std::size_t self, Tape::GradBuffers& g) {
            for (std::size_t r = 0; r < s.rows; ++r) {
                for (std::size_t c = 0; c < s.cols; ++c) {
                    g[xid][r * s.cols + c] += g[self][r];
                }
            }
        };
    }
    return tape.push(std::move(node));
}

/// Sums each column: (r x c) -> (1 x c).
inline Var sum_cols(const Var& x) {
    Tape& tape = x.tape();
    const Shape s = x.shape();
    const auto xv = x.value();
    std::vector<double> out(s.cols, 0.0);
    for (std::size_t r = 0; r < s.rows; ++r) {
        for (std::size_t c = 0; c < s.cols; ++c) {
            out[c] += xv[r * s.cols + c];
        }
    }
    const bool rg = tape.node(x.id()).requires_grad;
    Tape::Node node{Shape{1, s.cols}, std::move(out), rg, {}};
    if (rg) {
        const std::size_t xid = x.id();
        node.backprop = [xid, s](std::size_t self, Tape::GradBuffers& g) {
            for (std::size_t r = 0; r < s.rows; ++r) {
                for (std::size_t c = 0; c < s.cols; ++c) {
                    g[xid][r * s.cols + c] += g[self][c];
                }
            }
        };
    }
    return tape.push(std::move(node));
}

inline Var matmul(const Var& a, const Var& b) {
    detail::same_tape(a, b, "matmul");
    const Shape sa = a.shape(), sb = b.shape();
    if (sa.cols != sb.rows) {
        throw ShapeError("matmul: inner dimensions differ, " + sa.str() + " x " + sb.str());
    }
    Tape& tape = a.tape();
    const std::size_t n = sa.rows, k = sa.cols, m = sb.cols;
    const auto av = a.value();
    const auto bv = b.value();
    std::vector<double> out(n * m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            for (std::size_t j = 0; j < m; ++j) {
                out[i * m + j] += aip * bv[p * m + j];
            }
        }
    }
    const bool ra = tape.node(a.id()).requires_grad;
    const bool rb = tape.node(b.id()).requires_grad;
    Tape::Node node{Shape{n, m}, std::move(out), ra || rb, {}};
    if (ra || rb) {
        const std::size_t aid = a.id(), bid = b.id();
        node.backprop = [aid, bid, n, k, m, &tape](std::size_t self, Tape::GradBuffers& g) {
            const auto& av = tape.node(aid).value;
            const auto& bv = tape.node(bid).value;
            const auto& gy = g[self];
            if (!g[aid].empty()) {
                auto& ga = g[aid];
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < m; ++j) {
                            acc += gy[i * m + j] * bv[p * m + j];
                        }
                        ga[i * k + p] += acc;
                    }
                }
            }
            if (!g[bid].empty()) {
                auto& gb = g[bid];
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        const double aip = av[i * k + p];
                        for (std::size_t j = 0; j < m; ++j) {
                            gb[p * m + j] += aip * gy[i * m + j];
                        }
                    }
                }
            }
        };
    }
    return tape.push(std::move(node));
}

/// Contiguous run of `count` elements of the flattened buffer, as (1 x count).
inline Var slice(const Var& x, std::size_t offset, std::size_t count) {
    if (offset + count > x.size()) {
        throw ShapeError("slice: range [" + std::to_string(offset) + ", " + std::to_string(offset + count) +
                         ") out of bounds for shape " + x.shape().str());
    }
    Tape& tape = x.tape();
    const auto xv = x.value();
    std::vector<double> out(xv.begin() + static_cast<std::ptrdiff_t>(offset),
                            xv.begin() + static_cast<std::ptrdiff_t>(offset + count));
    const bool rg = tape.node(x.id()).requires_grad;
    Tape::Node node{Shape{1, count}, std::move(out), rg, {}};
    if (rg) {
        const std::size_t xid = x.id();
        node.backprop = [xid, offset, count](std::size_t self, Tape::GradBuffers& g) {
            for (std::size_t i = 0; i < count; ++i) {
                g[xid][offset + i] += g[self][i];
            }
        };
    }
    return tape.push(std::move(node));
}

inline Var element(const Var& x, std::size_t i) { return slice(x, i, 1); }

/// Same buffer, new shape with the same element count.
inline Var reshape(const Var& x, std::size_t rows, std::size_t cols) {
    if (rows * cols != x.size()) {
        throw ShapeError("reshape: cannot view " + x.shape().str() + " as (" + std::to_string(rows) + "x" +
                         std::to_string(cols) + ")");
    }
    Tape& tape = x.tape();
    const auto xv = x.value();
    const bool rg = tape.node(x.id()).requires_grad;
    Tape::Node node{Shape{rows, cols}, std::vector<double>(xv.begin(), xv.end()), rg, {}};
    if (rg) {
        const std::size_t xid = x.id();
        node.backprop = [xid](std::size_t self, Tape::GradBuffers& g) {
            for (std::size_t i = 0; i < g[self].size(); ++i) {
                g[xid][i] += g[self][i];
            }
        };
    }
    return tape.push(std::move(node));
}

/// Selects rows by index (repeats allowed): (r x c) -> (idx.size() x c).
inline Var gather_rows(const Var& x, std::vector<std::size_t> idx) {
    Tape& tape = x.tape();
    const Shape s = x.shape();
    const auto xv = x.value();
    std::vector<double> out(idx.size() * s.cols);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= s.rows) {
            throw ShapeError("gather_rows: row " + std::to_string(idx[i]) + " out of bounds for shape " + s.str());
        }
        std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(idx[i] * s.cols), s.cols,
                    out.begin() + static_cast<std::ptrdiff_t>(i * s.cols));
    }
    const bool rg = tape.node(x.id()).requires_grad;
    Tape::Node node{Shape{idx.size(), s.cols}, std::move(out), rg, {}};
    if (rg) {
        const std::size_t xid = x.id();
        node.backprop = [xid, s, idx = std::move(idx)](std::size_t self, Tape::GradBuffers& g) {
            for (std::size_t i = 0; i < idx.size(); ++i) {
                for (std::size_t c = 0; c < s.cols; ++c) {
                    g[xid][idx[i] * s.cols + c] += g[self][i * s.cols + c];
                }
            }
        };
    }
    return tape.push(std::move(node));
}

/// Concatenates column blocks with equal row counts.
inline Var hstack(const std::vector<Var>& parts) {
    if (parts.empty()) {
        throw ShapeError("hstack: no operands");
    }
    Tape& tape = parts.front().tape();
    const std::size_t rows = parts.front().rows();
    std::size_t cols = 0;
    bool rg = false;
    for (const auto& p : parts) {
        detail::same_tape(parts.front(), p, "hstack");
        if (p.rows() != rows) {
            throw ShapeError("hstack: row mismatch " + parts.front().shape().str() + " vs " + p.shape().str());
        }
        cols += p.cols();
        rg = rg || tape.node(p.id()).requires_grad;
    }
    std::vector<double> out(rows * cols);
    std::vector<std::pair<std::size_t, std::size_t>> layout; // (id, cols)
    std::size_t off = 0;
    for (const auto& p : parts) {
        const auto pv = p.value();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < p.cols(); ++c) {
                out[r * cols + off + c] = pv[r * p.cols() + c];
            }
        }
        layout.emplace_back(p.id(), p.cols());
        off += p.cols();
    }
    Tape::Node node{Shape{rows, cols}, std::move(out), rg, {}};
    if (rg) {
        node.backprop = [layout = std::move(layout), rows, cols](std::size_t self, Tape::GradBuffers& g) {
            std::size_t off = 0;
            for (const auto& [id, pc] : layout) {
                if (!g[id].empty()) {
                    for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t c = 0; c < pc; ++c) {
                            g[id][r * pc + c] += g[self][r * cols + off + c];
                        }
                    }
                }
                off += pc;
            }
        };
    }
    return tape.push(std::move(node));
}

/// Row-wise log-sum-exp: (r x c) -> (r x 1).
inline Var logsumexp_rows(const Var& x) {
    Tape& tape = x.tape();
    const Shape s = x.shape();
    const auto xv = x.value();
    std::vector<double> out(s.rows);
    for (std::size_t r = 0; r < s.rows; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < s.cols; ++c) {
            mx = std::max(mx, xv[r * s.cols + c]);
        }
        double acc = 0.0;
        for (std::size_t c = 0; c < s.cols; ++c) {
            acc += std::exp(xv[r * s.cols + c] - mx);
        }
        out[r] = mx + std::log(acc);
    }
    const bool rg = tape.node(x.id()).requires_grad;
    Tape::Node node{Shape{s.rows, 1}, std::move(out), rg, {}};
    if (rg) {
        const std::size_t xid = x.id();
        node.backprop = [xid, s, &tape](std::size_t self, Tape::GradBuffers& g) {
            const auto& xv = tape.node(xid).value;
            const auto& yv = tape.node(self).value;
            for (std::size_t r = 0; r < s.rows; ++r) {
                for (std::size_t c = 0; c < s.cols; ++c) {
                    g[xid][r * s.cols + c] += g[self][r] * std::exp(xv[r * s.cols + c] - yv[r]);
                }
            }
        };
    }
    return tape.push(std::move(node));
}

/// Row-wise softmax.
inline Var softmax_rows(const Var& x) {
    Tape& tape = x.tape();
    const Shape s = x.shape();
    const auto xv = x.value();
    std::vector<double> out(s.size());
    for (std::size_t r = 0; r < s.rows; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < s.cols; ++c) {
            mx = std::max(mx, xv[r * s.cols + c]);
        }
        double acc = 0.0;
        for (std::size_t c = 0; c < s.cols; ++c) {
            out[r * s.cols + c] = std::exp(xv[r * s.cols + c] - mx);
            acc += out[r * s.cols + c];
        }
        for (std::size_t c = 0; c < s.cols; ++c) {
            out[r * s.cols + c] /= acc;
        }
    }
    const bool rg = tape.node(x.id()).requires_grad;
    Tape::Node node{s, std::move(out), rg, {}};
    if (rg) {
        const std::size_t xid = x.id();
        node.backprop = [xid, s, &tape](std::size_t self, Tape::GradBuffers& g) {
            const auto& yv = tape.node(self).value;
            const auto& gy = g[self];
            for (std::size_t r = 0; r < s.rows; ++r) {
                double dot = 0.0;
                for (std::size_t c = 0; c < s.cols; ++c) {
                    dot += gy[r * s.cols + c] * yv[r * s.cols + c];
                }
                for (std::size_t c = 0; c < s.cols; ++c) {
                    g[xid][r * s.cols + c] += yv[r * s.cols + c] * (gy[r * s.cols + c] - dot);
                }
            }
        };
    }
    return tape.push(std::move(node));
}

} // namespace vgm2::ad

#endif
