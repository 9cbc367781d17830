// Copyright (c) 2026, The LDAG Authors
// SPDX-License-Identifier: Apache-2.0
//
// Define-by-run reverse-mode differentiation over Tensor<Scalar>.
//
// A Graph owns every value produced during one forward pass. Ops append nodes in
// execution order, so node ids are already a topological order and backward()
// walks them once from the loss down. Reductions accumulate in double whatever
// the storage type. There is no implicit broadcasting; the only broadcast is
// broadcast_spatial().

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ldag/errors.hpp"
#include "ldag/tensor.hpp"

namespace ldag::ad {

using Acc = double;

struct Var {
    std::size_t id = std::numeric_limits<std::size_t>::max();
    bool valid() const noexcept { return id != std::numeric_limits<std::size_t>::max(); }
};

template <class Scalar>
class Graph {
public:
    using TensorT = Tensor<Scalar>;
    using BackwardFn = std::function<void(Graph&, const TensorT& out_grad)>;

    /// Leaf that never receives a gradient.
    Var constant(TensorT value) { return push(std::move(value), false, {}); }

    /// Leaf whose gradient is collected by backward().
    Var parameter(TensorT value) { return push(std::move(value), true, {}); }

    /// Appends an op result. The node requires grad iff any input does; the
    /// backward closure is dropped otherwise.
    Var record(TensorT value, std::initializer_list<Var> inputs, BackwardFn fn) {
        return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                      std::move(fn));
    }

    Var record(TensorT value, std::span<const Var> inputs, BackwardFn fn) {
        bool needs = false;
        for (Var in : inputs) needs = needs || node(in).requires_grad;
        return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
    }

    const TensorT& value(Var v) const { return node(v).value; }
    const Shape& shape(Var v) const { return node(v).value.shape; }
    bool requires_grad(Var v) const { return node(v).requires_grad; }

    /// Gradient from the last backward(); zeros for tensors the loss does not reach.
    TensorT grad(Var v) const {
        const Node& n = node(v);
        if (n.grad.size() == n.value.size()) return n.grad;
        return TensorT(n.value.shape);
    }

    std::size_t size() const noexcept { return nodes_.size(); }

    /// Accumulation target for an input's gradient. Only valid inside backward.
    TensorT& grad_buffer(Var v) {
        Node& n = node(v);
        if (n.grad.size() != n.value.size()) n.grad = TensorT(n.value.shape);
        return n.grad;
    }

    void backward(Var loss) {
        if (node(loss).value.size() != 1) {
            throw ContractError("backward() needs a scalar loss, got shape " +
                                shape_string(node(loss).value.shape));
        }
        for (Node& n : nodes_) n.grad = TensorT();
        grad_buffer(loss)[0] = Scalar{1};
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
            // Closures only write gradients of earlier nodes, so n.grad stays put.
            n.backward(*this, n.grad);
        }
    }

private:
    struct Node {
        TensorT value;
        TensorT grad;
        bool requires_grad = false;
        BackwardFn backward;
    };

    Var push(TensorT value, bool requires_grad, BackwardFn fn) {
        nodes_.push_back(Node{std::move(value), TensorT(), requires_grad, std::move(fn)});
        return Var{nodes_.size() - 1};
    }

    Node& node(Var v) {
        if (v.id >= nodes_.size()) throw ContractError("variable does not belong to this graph");
        return nodes_[v.id];
    }
    const Node& node(Var v) const {
        if (v.id >= nodes_.size()) throw ContractError("variable does not belong to this graph");
        return nodes_[v.id];
    }

    std::vector<Node> nodes_;
};

namespace detail {

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) {
        throw DimensionError(std::string(op) + ": shape " + shape_string(a) + " vs " +
                             shape_string(b));
    }
}

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
    if (s.size() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                             ", got " + shape_string(s));
    }
}

template <class Scalar, class Fwd, class Deriv>
Var unary(Graph<Scalar>& g, Var x, Fwd fwd, Deriv deriv) {
    const auto& in = g.value(x);
    Tensor<Scalar> out(in.shape);
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
    return g.record(std::move(out), {x}, [x, deriv](Graph<Scalar>& gr, const Tensor<Scalar>& og) {
        const auto& in_values = gr.value(x);
        auto& gx = gr.grad_buffer(x);
        for (std::size_t i = 0; i < og.size(); ++i) gx[i] += og[i] * deriv(in_values[i]);
    });
}

/// Numerically stable log(1 + e^x).
inline Acc softplus(Acc x) { return std::max(x, Acc{0}) + std::log1p(std::exp(-std::abs(x))); }
inline Acc sigmoid(Acc x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const Acc e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace detail

template <class Scalar>
Var matmul(Graph<Scalar>& g, Var a, Var b) {
    const auto& A = g.value(a);
    const auto& B = g.value(b);
    detail::require_rank(A.shape, 2, "matmul");
    detail::require_rank(B.shape, 2, "matmul");
    const std::size_t m = A.shape[0], k = A.shape[1], n = B.shape[1];
    if (B.shape[0] != k) {
        throw DimensionError("matmul: inner extents differ, " + shape_string(A.shape) + " · " +
                             shape_string(B.shape));
    }
    Tensor<Scalar> out({m, n});
    std::vector<Acc> row(n);
    for (std::size_t i = 0; i < m; ++i) {
        std::fill(row.begin(), row.end(), Acc{0});
        for (std::size_t p = 0; p < k; ++p) {
            const Acc aip = A.data[i * k + p];
            const Scalar* brow = &B.data[p * n];
            for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
        }
        for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] = static_cast<Scalar>(row[j]);
    }
    return g.record(std::move(out), {a, b}, [a, b, m, k, n](Graph<Scalar>& gr, const Tensor<Scalar>& og) {
        if (gr.requires_grad(a)) {
            const auto& Bv = gr.value(b);
            auto& ga = gr.grad_buffer(a);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    Acc s = 0;
                    for (std::size_t j = 0; j < n; ++j) s += Acc(og.data[i * n + j]) * Bv.data[p * n + j];
                    ga.data[i * k + p] += static_cast<Scalar>(s);
                }
            }
        }
        if (gr.requires_grad(b)) {
            const auto& Av = gr.value(a);
            auto& gb = gr.grad_buffer(b);
            std::vector<Acc> acc(k * n, 0.0);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    const Acc aip = Av.data[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) acc[p * n + j] += aip * og.data[i * n + j];
                }
            }
            for (std::size_t q = 0; q < acc.size(); ++q) gb.data[q] += static_cast<Scalar>(acc[q]);
        }
    });
}

template <class Scalar>
Var add(Graph<Scalar>& g, Var a, Var b) {
    const auto& A = g.value(a);
    const auto& B = g.value(b);
    detail::require_same_shape(A.shape, B.shape, "add");
    Tensor<Scalar> out(A.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + B[i];
    return g.record(std::move(out), {a, b}, [a, b](Graph<Scalar>& gr, const Tensor<Scalar>& og) {
        for (Var v : {a, b}) {
            if (!gr.requires_grad(v)) continue;
            auto& gv = gr.grad_buffer(v);
            for (std::size_t i = 0; i < og.size(); ++i) gv[i] += og[i];
        }
    });
}

template <class Scalar>
Var sub(Graph<Scalar>& g, Var a, Var b) {
    const auto& A = g.value(a);
    const auto& B = g.value(b);
    detail::require_same_shape(A.shape, B.shape, "sub");
    Tensor<Scalar> out(A.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] - B[i];
    return g.record(std::move(out), {a, b}, [a, b](Graph<Scalar>& gr, const Tensor<Scalar>& og) {
        if (gr.requires_grad(a)) {
            auto& ga = gr.grad_buffer(a);
            for (std::size_t i = 0; i < og.size(); ++i) ga[i] += og[i];
        }
        if (gr.requires_grad(b)) {
            auto& gb = gr.grad_buffer(b);
            for (std::size_t i = 0; i < og.size(); ++i) gb[i] -= og[i];
        }
    });
}

template <class Scalar>
Var mul(Graph<Scalar>& g, Var a, Var b) {
    const auto& A = g.value(a);
    const auto& B = g.value(b);
    detail::require_same_shape(A.shape, B.shape, "mul");
    Tensor<Scalar> out(A.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
    return g.record(std::move(out), {a, b}, [a, b](Graph<Scalar>& gr, const Tensor<Scalar>& og) {
        if (gr.requires_grad(a)) {
            const auto& Bv = gr.value(b);
            auto& ga = gr.grad_buffer(a);
            for (std::size_t i = 0; i < og.size(); ++i) ga[i] += og[i] * Bv[i];
        }
        if (gr.requires_grad(b)) {
            const auto& Av = gr.value(a);
            auto& gb = gr.grad_buffer(b);
            for (std::size_t i = 0; i < og.size(); ++i) gb[i] += og[i] * Av[i];
        }
    });
}

template <class Scalar>
Var scale(Graph<Scalar>& g, Var x, Scalar factor) {
    return detail::unary(g, x, [factor](Scalar v) { return factor * v; },
                         [factor](Scalar) { return factor; });
}

template <class Scalar>
Var relu(Graph<Scalar>& g, Var x) {
    return detail::unary(g, x, [](Scalar v) { return v > Scalar{0} ? v : Scalar{0}; },
                         [](Scalar v) { return v > Scalar{0} ? Scalar{1} : Scalar{0}; });
}

template <class Scalar>
Var sigmoid(Graph<Scalar>& g, Var x) {
    return detail::unary(
        g, x, [](Scalar v) { return static_cast<Scalar>(detail::sigmoid(v)); },
        [](Scalar v) {
            const Acc s = detail::sigmoid(v);
            return static_cast<Scalar>(s * (1.0 - s));
        });
}

template <class Scalar>
Var softplus(Graph<Scalar>& g, Var x) {
    return detail::unary(
        g, x, [](Scalar v) { return static_cast<Scalar>(detail::softplus(v)); },
        [](Scalar v) { return static_cast<Scalar>(detail::sigmoid(v)); });
}

/// Same values under a new shape with the same element count.
template <class Scalar>
Var reshape(Graph<Scalar>& g, Var x, Shape shape) {
    const auto& in = g.value(x);
    if (numel(shape) != in.size()) {
        throw DimensionError("reshape: " + shape_string(in.shape) + " -> " + shape_string(shape));
    }
    Tensor<Scalar> out(std::move(shape), in.data);
    return g.record(std::move(out), {x}, [x](Graph<Scalar>& gr, const Tensor<Scalar>& og) {
        auto& gx = gr.grad_buffer(x);
        for (std::size_t i = 0; i < og.size(); ++i) gx[i] += og[i];
    });
}

template <class Scalar>
Var sum(Graph<Scalar>& g, Var x) {
    const auto& in = g.value(x);
    Acc s = 0;
    for (Scalar v : in.data) s += v;
    Tensor<Scalar> out({1}, {static_cast<Scalar>(s)});
    return g.record(std::move(out), {x}, [x](Graph<Scalar>& gr, const Tensor<Scalar>& og) {
        auto& gx = gr.grad_buffer(x);
        for (auto& v : gx.data) v += og[0];
    });
}

template <class Scalar>
Var mean(Graph<Scalar>& g, Var x) {
    const auto n = g.value(x).size();
    if (n == 0) throw ContractError("mean of an empty tensor");
    return scale(g, sum(g, x), static_cast<Scalar>(1.0 / static_cast<Acc>(n)));
}

namespace detail {

template <class Scalar>
Var reduce_axis(Graph<Scalar>& g, Var x, std::size_t axis, bool average) {
    const auto& in = g.value(x);
    if (axis >= in.rank()) {
        throw DimensionError("reduce over axis " + std::to_string(axis) + " of " +
                             shape_string(in.shape));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= in.shape[i];
    for (std::size_t i = axis + 1; i < in.rank(); ++i) inner *= in.shape[i];
    const std::size_t len = in.shape[axis];
    Shape out_shape = in.shape;
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out_shape.empty()) out_shape = {1};
    const Acc factor = average ? 1.0 / static_cast<Acc>(len) : 1.0;
    Tensor<Scalar> out(out_shape);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            Acc s = 0;
            for (std::size_t l = 0; l < len; ++l) s += in.data[(o * len + l) * inner + i];
            out.data[o * inner + i] = static_cast<Scalar>(s * factor);
        }
    }
    return g.record(std::move(out), {x},
                    [x, outer, inner, len, factor](Graph<Scalar>& gr, const Tensor<Scalar>& og) {
                        auto& gx = gr.grad_buffer(x);
                        for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t l = 0; l < len; ++l)
                                for (std::size_t i = 0; i < inner; ++i)
                                    gx.data[(o * len + l) * inner + i] +=
                                        static_cast<Scalar>(og.data[o * inner + i] * factor);
                    });
}

}  // namespace detail

template <class Scalar>
Var sum_axis(Graph<Scalar>& g, Var x, std::size_t axis) {
    return detail::reduce_axis(g, x, axis, false);
}

template <class Scalar>
Var mean_axis(Graph<Scalar>& g, Var x, std::size_t axis) {
    return detail::reduce_axis(g, x, axis, true);
}

/// C×H×W -> C, mean over the spatial extent.
template <class Scalar>
Var spatial_mean(Graph<Scalar>& g, Var x) {
    const auto& s = g.shape(x);
    detail::require_rank(s, 3, "spatial_mean");
    return mean_axis(g, reshape(g, x, {s[0], s[1] * s[2]}), 1);
}

/// Element `index` of x as a 1-element tensor.
template <class Scalar>
Var select(Graph<Scalar>& g, Var x, std::size_t index) {
    const auto& in = g.value(x);
    if (index >= in.size()) {
        throw ContractError("select index " + std::to_string(index) + " out of range for " +
                            shape_string(in.shape));
    }
    Tensor<Scalar> out({1}, {in[index]});
    return g.record(std::move(out), {x}, [x, index](Graph<Scalar>& gr, const Tensor<Scalar>& og) {
        gr.grad_buffer(x)[index] += og[0];
    });
}

/// Concatenates 1-element tensors into a vector.
template <class Scalar>
Var stack_scalars(Graph<Scalar>& g, std::span<const Var> parts) {
    Tensor<Scalar> out({parts.size()});
    for (std::size_t i = 0; i < parts.size(); ++i) out[i] = g.value(parts[i]).item();
    std::vector<Var> captured(parts.begin(), parts.end());
    return g.record(std::move(out), parts, [captured](Graph<Scalar>& gr, const Tensor<Scalar>& og) {
        for (std::size_t i = 0; i < captured.size(); ++i) {
            if (gr.requires_grad(captured[i])) gr.grad_buffer(captured[i])[0] += og[i];
        }
    });
}

/// uᵀv / (‖u‖‖v‖) for equal-length vectors; zero norms are rejected.
template <class Scalar>
Var cosine(Graph<Scalar>& g, Var u, Var v) {
    const auto& U = g.value(u);
    const auto& V = g.value(v);
    if (U.size() != V.size()) {
        throw DimensionError("cosine: lengths " + std::to_string(U.size()) + " and " +
                             std::to_string(V.size()));
    }
    Acc uv = 0, uu = 0, vv = 0;
    for (std::size_t i = 0; i < U.size(); ++i) {
        uv += Acc(U[i]) * V[i];
        uu += Acc(U[i]) * U[i];
        vv += Acc(V[i]) * V[i];
    }
    if (!(uu > 0) || !(vv > 0)) throw DegenerateInputError("cosine of a zero-norm vector");
    const Acc nu = std::sqrt(uu), nv = std::sqrt(vv);
    const Acc c = uv / (nu * nv);
    Tensor<Scalar> out({1}, {static_cast<Scalar>(c)});
    return g.record(std::move(out), {u, v},
                    [u, v, nu, nv, c](Graph<Scalar>& gr, const Tensor<Scalar>& og) {
                        const auto& Uv = gr.value(u);
                        const auto& Vv = gr.value(v);
                        const Acc go = og[0];
                        // d/du = v/(|u||v|) - c u/|u|^2
                        if (gr.requires_grad(u)) {
                            auto& gu = gr.grad_buffer(u);
                            for (std::size_t i = 0; i < Uv.size(); ++i)
                                gu[i] += static_cast<Scalar>(go * (Vv[i] / (nu * nv) - c * Uv[i] / (nu * nu)));
                        }
                        if (gr.requires_grad(v)) {
                            auto& gv = gr.grad_buffer(v);
                            for (std::size_t i = 0; i < Vv.size(); ++i)
                                gv[i] += static_cast<Scalar>(go * (Uv[i] / (nu * nv) - c * Vv[i] / (nv * nv)));
                        }
                    });
}

/// Softmax over a vector, max-subtracted.
template <class Scalar>
Var softmax(Graph<Scalar>& g, Var x) {
    const auto& in = g.value(x);
    detail::require_rank(in.shape, 1, "softmax");
    if (in.size() == 0) throw ContractError("softmax of an empty vector");
    if (!in.all_finite()) throw DegenerateInputError("softmax of non-finite scores");
    Acc top = in[0];
    for (Scalar v : in.data) top = std::max<Acc>(top, v);
    std::vector<Acc> e(in.size());
    Acc z = 0;
    for (std::size_t i = 0; i < in.size(); ++i) z += (e[i] = std::exp(Acc(in[i]) - top));
    Tensor<Scalar> out(in.shape);
    std::vector<Acc> p(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = static_cast<Scalar>(p[i] = e[i] / z);
    return g.record(std::move(out), {x}, [x, p](Graph<Scalar>& gr, const Tensor<Scalar>& og) {
        Acc dot = 0;
        for (std::size_t i = 0; i < p.size(); ++i) dot += Acc(og[i]) * p[i];
        auto& gx = gr.grad_buffer(x);
        for (std::size_t i = 0; i < p.size(); ++i) gx[i] += static_cast<Scalar>(p[i] * (og[i] - dot));
    });
}

/// Stacks rank-3 tensors with equal H×W along the channel axis.
template <class Scalar>
Var concat_channels(Graph<Scalar>& g, std::span<const Var> parts) {
    if (parts.empty()) throw ContractError("concat_channels of nothing");
    const Shape& first = g.shape(parts[0]);
    detail::require_rank(first, 3, "concat_channels");
    std::size_t channels = 0;
    for (Var p : parts) {
        const Shape& s = g.shape(p);
        detail::require_rank(s, 3, "concat_channels");
        if (s[1] != first[1] || s[2] != first[2]) {
            throw DimensionError("concat_channels: spatial extents " + shape_string(s) + " vs " +
                                 shape_string(first));
        }
        channels += s[0];
    }
    Tensor<Scalar> out({channels, first[1], first[2]});
    std::size_t offset = 0;
    std::vector<std::pair<Var, std::size_t>> spans;
    for (Var p : parts) {
        const auto& v = g.value(p);
        std::copy(v.data.begin(), v.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(offset));
        spans.emplace_back(p, offset);
        offset += v.size();
    }
    return g.record(std::move(out), parts, [spans](Graph<Scalar>& gr, const Tensor<Scalar>& og) {
        for (auto [p, off] : spans) {
            if (!gr.requires_grad(p)) continue;
            auto& gp = gr.grad_buffer(p);
            for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += og[off + i];
        }
    });
}

/// Vector of length C repeated at every cell of an H×W grid.
template <class Scalar>
Var broadcast_spatial(Graph<Scalar>& g, Var v, std::size_t height, std::size_t width) {
    const auto& in = g.value(v);
    detail::require_rank(in.shape, 1, "broadcast_spatial");
    const std::size_t c = in.size(), hw = height * width;
    Tensor<Scalar> out({c, height, width});
    for (std::size_t k = 0; k < c; ++k) std::fill_n(out.data.begin() + static_cast<std::ptrdiff_t>(k * hw), hw, in[k]);
    return g.record(std::move(out), {v}, [v, c, hw](Graph<Scalar>& gr, const Tensor<Scalar>& og) {
        auto& gv = gr.grad_buffer(v);
        for (std::size_t k = 0; k < c; ++k) {
            Acc s = 0;
            for (std::size_t i = 0; i < hw; ++i) s += og.data[k * hw + i];
            gv[k] += static_cast<Scalar>(s);
        }
    });
}

/// Per-cell linear map over channels: out[o] = W[o,:]·x[:] + b[o].
template <class Scalar>
Var conv1x1(Graph<Scalar>& g, Var weight, Var bias, Var x) {
    const Shape ws = g.shape(weight);
    const Shape xs = g.shape(x);
    detail::require_rank(ws, 2, "conv1x1 weight");
    detail::require_rank(xs, 3, "conv1x1 input");
    if (ws[1] != xs[0]) {
        throw DimensionError("conv1x1: weight " + shape_string(ws) + " cannot mix " +
                             std::to_string(xs[0]) + " channels");
    }
    if (g.shape(bias) != Shape{ws[0]}) {
        throw DimensionError("conv1x1: bias " + shape_string(g.shape(bias)) + " for " +
                             std::to_string(ws[0]) + " outputs");
    }
    const std::size_t h = xs[1], w = xs[2];
    Var flat = reshape(g, x, {xs[0], h * w});
    Var mixed = matmul(g, weight, flat);
    Var bias_grid = reshape(g, broadcast_spatial(g, bias, h, w), {ws[0], h * w});
    return reshape(g, add(g, mixed, bias_grid), {ws[0], h, w});
}

namespace detail {

struct LerpTap {
    std::size_t lo, hi;
    Acc frac;
};

/// Half-pixel source taps (align_corners = false), clamped at the border.
inline std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t out) {
    std::vector<LerpTap> taps(out);
    const Acc ratio = static_cast<Acc>(in) / static_cast<Acc>(out);
    for (std::size_t i = 0; i < out; ++i) {
        Acc src = (static_cast<Acc>(i) + 0.5) * ratio - 0.5;
        if (src < 0) src = 0;
        auto lo = static_cast<std::size_t>(src);
        if (lo > in - 1) lo = in - 1;
        const std::size_t hi = lo + (lo < in - 1 ? 1 : 0);
        taps[i] = {lo, hi, src - static_cast<Acc>(lo)};
    }
    return taps;
}

template <class Scalar>
Tensor<Scalar> bilinear_values(const Tensor<Scalar>& in, std::size_t out_h, std::size_t out_w) {
    const std::size_t c = in.shape[0], ih = in.shape[1], iw = in.shape[2];
    const auto ty = lerp_taps(ih, out_h), tx = lerp_taps(iw, out_w);
    Tensor<Scalar> out({c, out_h, out_w});
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t y = 0; y < out_h; ++y)
            for (std::size_t x = 0; x < out_w; ++x) {
                const auto [y0, y1, fy] = ty[y];
                const auto [x0, x1, fx] = tx[x];
                const Acc top = (1 - fx) * Acc(in.at(k, y0, x0)) + fx * Acc(in.at(k, y0, x1));
                const Acc bot = (1 - fx) * Acc(in.at(k, y1, x0)) + fx * Acc(in.at(k, y1, x1));
                out.at(k, y, x) = static_cast<Scalar>((1 - fy) * top + fy * bot);
            }
    return out;
}

}  // namespace detail

/// Bilinear resize of a C×H×W grid. Same-size resize is the identity.
template <class Scalar>
Var bilinear_resize(Graph<Scalar>& g, Var x, std::size_t out_h, std::size_t out_w) {
    const auto& in = g.value(x);
    detail::require_rank(in.shape, 3, "bilinear_resize");
    if (in.shape[1] == 0 || in.shape[2] == 0 || out_h == 0 || out_w == 0) {
        throw DimensionError("bilinear_resize with an empty extent");
    }
    Tensor<Scalar> out = detail::bilinear_values(in, out_h, out_w);
    const std::size_t c = in.shape[0], ih = in.shape[1], iw = in.shape[2];
    return g.record(std::move(out), {x}, [x, c, ih, iw, out_h, out_w](Graph<Scalar>& gr, const Tensor<Scalar>& og) {
        const auto ty = detail::lerp_taps(ih, out_h), tx = detail::lerp_taps(iw, out_w);
        std::vector<Acc> acc(c * ih * iw, 0.0);
        for (std::size_t k = 0; k < c; ++k)
            for (std::size_t y = 0; y < out_h; ++y)
                for (std::size_t xx = 0; xx < out_w; ++xx) {
                    const auto [y0, y1, fy] = ty[y];
                    const auto [x0, x1, fx] = tx[xx];
                    const Acc v = og.data[(k * out_h + y) * out_w + xx];
                    acc[(k * ih + y0) * iw + x0] += v * (1 - fy) * (1 - fx);
                    acc[(k * ih + y0) * iw + x1] += v * (1 - fy) * fx;
                    acc[(k * ih + y1) * iw + x0] += v * fy * (1 - fx);
                    acc[(k * ih + y1) * iw + x1] += v * fy * fx;
                }
        auto& gx = gr.grad_buffer(x);
        for (std::size_t i = 0; i < acc.size(); ++i) gx[i] += static_cast<Scalar>(acc[i]);
    });
}

/// Mean binary cross-entropy of sigmoid(logits) against a 0/1 target, in the
/// stable form max(z,0) - z·y + log(1 + e^-|z|).
template <class Scalar>
Var bce_with_logits(Graph<Scalar>& g, Var logits, const Tensor<Scalar>& target) {
    const auto& z = g.value(logits);
    detail::require_same_shape(z.shape, target.shape, "bce_with_logits");
    if (z.size() == 0) throw ContractError("bce over an empty prediction");
    Acc total = 0;
    for (std::size_t i = 0; i < z.size(); ++i) total += detail::softplus(z[i]) - Acc(z[i]) * target[i];
    const Acc inv_n = 1.0 / static_cast<Acc>(z.size());
    Tensor<Scalar> out({1}, {static_cast<Scalar>(total * inv_n)});
    return g.record(std::move(out), {logits}, [logits, target, inv_n](Graph<Scalar>& gr, const Tensor<Scalar>& og) {
        const auto& zv = gr.value(logits);
        auto& gz = gr.grad_buffer(logits);
        const Acc go = og[0];
        for (std::size_t i = 0; i < zv.size(); ++i)
            gz[i] += static_cast<Scalar>(go * (detail::sigmoid(zv[i]) - Acc(target[i])) * inv_n);
    });
}

}  // namespace ldag::ad
