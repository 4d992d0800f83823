#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <utility>
#include <vector>

#if defined(__GLIBC__) || defined(__linux__)
#include <malloc.h>
#endif

#include "tsguard/rng.hpp"
#include "tsguard/tensor.hpp"

namespace tsguard {

enum class Mode { train, eval };

/// Handle to a node in a Graph. Cheap to copy; valid only for the graph that
/// created it.
struct Var {
    std::uint32_t id = 0;
};

namespace detail {

// Batch-sized tensors land right at glibc's default mmap threshold; graphs
// are rebuilt every attack step, so keep those blocks on the free list.
inline void tune_allocator_once() {
#if defined(__GLIBC__)
    static const bool done = [] {
        mallopt(M_MMAP_THRESHOLD, 64 * 1024 * 1024);
        mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
        return true;
    }();
    (void)done;
#endif
}

} // namespace detail

/// Define-by-run reverse-mode computation graph. Each primitive computes its
/// value eagerly and records a backward closure; backward() runs the closures
/// in reverse creation order (creation order is a topological order by
/// construction). Every emitted value is checked finite.
///
/// Leaves may opt out of gradients (requires_grad = false); interior nodes
/// inherit the flag from their parents and backward work is skipped wherever
/// no requiring leaf is reachable.
///
/// A graph is built and traversed by one thread; independent graphs are safe
/// to use concurrently.
class Graph {
public:
    Graph() {
        detail::tune_allocator_once();
        nodes_.reserve(192);
    }

    Var input(Tensor value, bool requires_grad = true) {
        return emit("input", std::move(value), nullptr, {}, requires_grad);
    }

    const Tensor& value(Var v) const { return nodes_[v.id].value; }

    bool requires_grad(Var v) const { return nodes_[v.id].needs_grad; }

    /// Gradient of the last backward()'s loss w.r.t. v; zeros if v does not
    /// reach the loss.
    const Tensor& grad(Var v) { return grad_acc(v); }

    /// Mutable gradient accumulator (gradients of multiple uses sum here).
    Tensor& grad_acc(Var v) {
        Node& n = nodes_[v.id];
        if (n.grad.size() == 0) n.grad = Tensor(n.value.shape);
        return n.grad;
    }

    void backward(Var loss) {
        if (nodes_[loss.id].value.size() != 1)
            throw std::invalid_argument("Graph::backward: loss must be scalar");
        if (ran_backward_) throw std::logic_error("Graph::backward: already ran on this graph");
        ran_backward_ = true;
        grad_acc(loss).data[0] = 1.0;
        for (std::uint32_t i = loss.id + 1; i-- > 0;) {
            if (nodes_[i].back && nodes_[i].needs_grad) nodes_[i].back(*this);
        }
    }

    std::size_t node_count() const { return nodes_.size(); }

    /// Id the next emitted node will get; lets primitives capture their own
    /// output handle in the backward closure.
    Var next_var() const { return Var{static_cast<std::uint32_t>(nodes_.size())}; }

    Var emit(const char* op, Tensor value, std::function<void(Graph&)> back,
             std::initializer_list<Var> parents = {}, bool requires_grad = false) {
        if (!value.all_finite()) throw NumericError(std::string("non-finite output of ") + op);
        bool req = requires_grad;
        for (Var p : parents) req = req || nodes_[p.id].needs_grad;
        nodes_.push_back(Node{std::move(value), Tensor{}, std::move(back), op, req});
        return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void(Graph&)> back;
        const char* op;
        bool needs_grad;
    };
    std::vector<Node> nodes_;
    bool ran_backward_ = false;
};

// --------------------------------------------------------------------------
// primitives
// --------------------------------------------------------------------------

/// Elementwise sum. Also accepts a rank-1 right operand matching the last
/// dimension of a rank-2 left operand (row-broadcast bias).
inline Var add(Graph& g, Var a, Var b) {
    const Tensor& ta = g.value(a);
    const Tensor& tb = g.value(b);
    const Var out = g.next_var();
    if (ta.same_shape(tb)) {
        Tensor y(ta.shape);
        for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = ta.data[i] + tb.data[i];
        return g.emit(
            "add", std::move(y),
            [a, b, out](Graph& gg) {
                const Tensor& dy = gg.grad_acc(out);
                if (gg.requires_grad(a)) {
                    Tensor& da = gg.grad_acc(a);
                    for (std::size_t i = 0; i < dy.size(); ++i) da.data[i] += dy.data[i];
                }
                if (gg.requires_grad(b)) {
                    Tensor& db = gg.grad_acc(b);
                    for (std::size_t i = 0; i < dy.size(); ++i) db.data[i] += dy.data[i];
                }
            },
            {a, b});
    }
    if (ta.rank() == 2 && tb.rank() == 1 && tb.size() == ta.shape[1]) {
        const std::size_t m = ta.shape[0], n = ta.shape[1];
        Tensor y(ta.shape);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) y.data[i * n + j] = ta.data[i * n + j] + tb.data[j];
        return g.emit(
            "add", std::move(y),
            [a, b, out, m, n](Graph& gg) {
                const Tensor& dy = gg.grad_acc(out);
                if (gg.requires_grad(a)) {
                    Tensor& da = gg.grad_acc(a);
                    for (std::size_t i = 0; i < dy.size(); ++i) da.data[i] += dy.data[i];
                }
                if (gg.requires_grad(b)) {
                    Tensor& db = gg.grad_acc(b);
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) db.data[j] += dy.data[i * n + j];
                }
            },
            {a, b});
    }
    throw ShapeError("add: incompatible shapes");
}

/// Elementwise (Hadamard) product.
inline Var mul(Graph& g, Var a, Var b) {
    const Tensor& ta = g.value(a);
    const Tensor& tb = g.value(b);
    if (!ta.same_shape(tb)) throw ShapeError("mul: shape mismatch");
    const Var out = g.next_var();
    Tensor y(ta.shape);
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = ta.data[i] * tb.data[i];
    return g.emit(
        "mul", std::move(y),
        [a, b, out](Graph& gg) {
            const Tensor& dy = gg.grad_acc(out);
            if (gg.requires_grad(a)) {
                const Tensor& vb = gg.value(b);
                Tensor& da = gg.grad_acc(a);
                for (std::size_t i = 0; i < dy.size(); ++i) da.data[i] += dy.data[i] * vb.data[i];
            }
            if (gg.requires_grad(b)) {
                const Tensor& va = gg.value(a);
                Tensor& db = gg.grad_acc(b);
                for (std::size_t i = 0; i < dy.size(); ++i) db.data[i] += dy.data[i] * va.data[i];
            }
        },
        {a, b});
}

namespace detail {

// C (m x n) += A (m x k) * B (k x n), row-major
inline void gemm_acc(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
                     std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a = A + i * k;
        double* c = C + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = a[kk];
            const double* b = B + kk * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C (m x k) += A (m x n) * B^T (B is k x n)
inline void gemm_acc_bt(const double* A, const double* B, double* C, std::size_t m, std::size_t n,
                        std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a = A + i * n;
        double* c = C + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double* b = B + kk * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += a[j] * b[j];
            c[kk] += acc;
        }
    }
}

// C (k x n) += A^T (A is m x k) * B (m x n)
inline void gemm_acc_at(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
                        std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a = A + i * k;
        const double* b = B + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = a[kk];
            double* c = C + kk * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

} // namespace detail

/// Matrix product of a (m x k) and b (k x n).
inline Var matmul(Graph& g, Var a, Var b) {
    const Tensor& ta = g.value(a);
    const Tensor& tb = g.value(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.shape[1] != tb.shape[0])
        throw ShapeError("matmul: requires (m x k) and (k x n)");
    const std::size_t m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
    const Var out = g.next_var();
    Tensor y({m, n});
    detail::gemm_acc(ta.data.data(), tb.data.data(), y.data.data(), m, k, n);
    return g.emit(
        "matmul", std::move(y),
        [a, b, out, m, k, n](Graph& gg) {
            const Tensor& dy = gg.grad_acc(out);
            // dA += dY * B^T ; dB += A^T * dY
            if (gg.requires_grad(a))
                detail::gemm_acc_bt(dy.data.data(), gg.value(b).data.data(),
                                    gg.grad_acc(a).data.data(), m, n, k);
            if (gg.requires_grad(b))
                detail::gemm_acc_at(gg.value(a).data.data(), dy.data.data(),
                                    gg.grad_acc(b).data.data(), m, k, n);
        },
        {a, b});
}

inline Var sigmoid(Graph& g, Var x) {
    const Tensor& tx = g.value(x);
    const Var out = g.next_var();
    Tensor y(tx.shape);
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double v = tx.data[i];
        // branch on sign for numerical stability
        y.data[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    return g.emit(
        "sigmoid", std::move(y),
        [x, out](Graph& gg) {
            if (!gg.requires_grad(x)) return;
            const Tensor& dy = gg.grad_acc(out);
            const Tensor& s = gg.value(out);
            Tensor& dx = gg.grad_acc(x);
            for (std::size_t i = 0; i < dy.size(); ++i)
                dx.data[i] += dy.data[i] * s.data[i] * (1.0 - s.data[i]);
        },
        {x});
}

inline Var tanh(Graph& g, Var x) {
    const Tensor& tx = g.value(x);
    const Var out = g.next_var();
    Tensor y(tx.shape);
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = std::tanh(tx.data[i]);
    return g.emit(
        "tanh", std::move(y),
        [x, out](Graph& gg) {
            if (!gg.requires_grad(x)) return;
            const Tensor& dy = gg.grad_acc(out);
            const Tensor& t = gg.value(out);
            Tensor& dx = gg.grad_acc(x);
            for (std::size_t i = 0; i < dy.size(); ++i)
                dx.data[i] += dy.data[i] * (1.0 - t.data[i] * t.data[i]);
        },
        {x});
}

inline Var relu(Graph& g, Var x) {
    const Tensor& tx = g.value(x);
    const Var out = g.next_var();
    Tensor y(tx.shape);
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = tx.data[i] > 0.0 ? tx.data[i] : 0.0;
    return g.emit(
        "relu", std::move(y),
        [x, out](Graph& gg) {
            if (!gg.requires_grad(x)) return;
            const Tensor& dy = gg.grad_acc(out);
            const Tensor& vx = gg.value(x);
            Tensor& dx = gg.grad_acc(x);
            for (std::size_t i = 0; i < dy.size(); ++i)
                if (vx.data[i] > 0.0) dx.data[i] += dy.data[i];
        },
        {x});
}

/// 1-D convolution: x (m x Cin x L), w (Cout x Cin x K), bias (Cout),
/// zero padding on both ends. Output is (m x Cout x L + 2*padding - K + 1).
inline Var conv1d(Graph& g, Var x, Var w, Var bias, std::size_t padding) {
    const Tensor& tx = g.value(x);
    const Tensor& tw = g.value(w);
    const Tensor& tb = g.value(bias);
    if (tx.rank() != 3 || tw.rank() != 3 || tx.shape[1] != tw.shape[1])
        throw ShapeError("conv1d: x must be (m,Cin,L), w (Cout,Cin,K) with matching Cin");
    const std::size_t m = tx.shape[0], cin = tx.shape[1], L = tx.shape[2];
    const std::size_t cout = tw.shape[0], K = tw.shape[2];
    if (tb.rank() != 1 || tb.shape[0] != cout) throw ShapeError("conv1d: bias must be (Cout)");
    if (L + 2 * padding < K) throw ShapeError("conv1d: kernel larger than padded input");
    const std::size_t lout = L + 2 * padding - K + 1;
    const Var out = g.next_var();
    Tensor y({m, cout, lout});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t t = 0; t < lout; ++t) {
                double acc = tb.data[co];
                for (std::size_t ci = 0; ci < cin; ++ci)
                    for (std::size_t u = 0; u < K; ++u) {
                        const std::ptrdiff_t s =
                            static_cast<std::ptrdiff_t>(t + u) - static_cast<std::ptrdiff_t>(padding);
                        if (s >= 0 && s < static_cast<std::ptrdiff_t>(L))
                            acc += tw.at3(co, ci, u) * tx.at3(i, ci, static_cast<std::size_t>(s));
                    }
                y.at3(i, co, t) = acc;
            }
    return g.emit(
        "conv1d", std::move(y),
        [x, w, bias, out, m, cin, L, cout, K, padding, lout](Graph& gg) {
            const Tensor& dy = gg.grad_acc(out);
            const Tensor& vx = gg.value(x);
            const Tensor& vw = gg.value(w);
            const bool need_x = gg.requires_grad(x);
            const bool need_w = gg.requires_grad(w);
            if (gg.requires_grad(bias)) {
                Tensor& db = gg.grad_acc(bias);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t co = 0; co < cout; ++co)
                        for (std::size_t t = 0; t < lout; ++t) db.data[co] += dy.at3(i, co, t);
            }
            if (!need_x && !need_w) return;
            Tensor* dx = need_x ? &gg.grad_acc(x) : nullptr;
            Tensor* dw = need_w ? &gg.grad_acc(w) : nullptr;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t co = 0; co < cout; ++co)
                    for (std::size_t t = 0; t < lout; ++t) {
                        const double dv = dy.at3(i, co, t);
                        for (std::size_t ci = 0; ci < cin; ++ci)
                            for (std::size_t u = 0; u < K; ++u) {
                                const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + u) -
                                                         static_cast<std::ptrdiff_t>(padding);
                                if (s >= 0 && s < static_cast<std::ptrdiff_t>(L)) {
                                    const auto su = static_cast<std::size_t>(s);
                                    if (dw) dw->at3(co, ci, u) += dv * vx.at3(i, ci, su);
                                    if (dx) dx->at3(i, ci, su) += dv * vw.at3(co, ci, u);
                                }
                            }
                    }
        },
        {x, w, bias});
}

/// Per-row layer normalization of x (m x H) with learned scale/shift (H).
inline Var layer_norm(Graph& g, Var x, Var scale, Var shift, double eps = 1e-5) {
    const Tensor& tx = g.value(x);
    const Tensor& tg = g.value(scale);
    const Tensor& tb = g.value(shift);
    if (tx.rank() != 2 || tg.size() != tx.shape[1] || tb.size() != tx.shape[1])
        throw ShapeError("layer_norm: x must be (m,H) with (H) scale and shift");
    const std::size_t m = tx.shape[0], H = tx.shape[1];
    Tensor xhat({m, H});
    Tensor inv_sd({m});
    Tensor y({m, H});
    for (std::size_t i = 0; i < m; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < H; ++j) mean += tx.at2(i, j);
        mean /= static_cast<double>(H);
        double var = 0.0;
        for (std::size_t j = 0; j < H; ++j) {
            const double d = tx.at2(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(H);
        const double isd = 1.0 / std::sqrt(var + eps);
        inv_sd.data[i] = isd;
        for (std::size_t j = 0; j < H; ++j) {
            const double xh = (tx.at2(i, j) - mean) * isd;
            xhat.at2(i, j) = xh;
            y.at2(i, j) = tg.data[j] * xh + tb.data[j];
        }
    }
    const Var out = g.next_var();
    return g.emit(
        "layer_norm", std::move(y),
        [x, scale, shift, out, m, H, xhat = std::move(xhat), inv_sd = std::move(inv_sd)](Graph& gg) {
            const Tensor& dy = gg.grad_acc(out);
            const Tensor& vg = gg.value(scale);
            Tensor* dx = gg.requires_grad(x) ? &gg.grad_acc(x) : nullptr;
            Tensor* dgm = gg.requires_grad(scale) ? &gg.grad_acc(scale) : nullptr;
            Tensor* dbt = gg.requires_grad(shift) ? &gg.grad_acc(shift) : nullptr;
            for (std::size_t i = 0; i < m; ++i) {
                double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                for (std::size_t j = 0; j < H; ++j) {
                    const double d = dy.at2(i, j);
                    const double xh = xhat.at2(i, j);
                    if (dgm) dgm->data[j] += d * xh;
                    if (dbt) dbt->data[j] += d;
                    const double dxh = d * vg.data[j];
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * xh;
                }
                if (!dx) continue;
                const double inv_h = 1.0 / static_cast<double>(H);
                for (std::size_t j = 0; j < H; ++j) {
                    const double dxh = dy.at2(i, j) * vg.data[j];
                    dx->at2(i, j) += inv_sd.data[i] *
                                     (dxh - sum_dxh * inv_h - xhat.at2(i, j) * sum_dxh_xh * inv_h);
                }
            }
        },
        {x, scale, shift});
}

namespace detail {

// Flattens (m x F) or (m x C x L) into per-channel sample groups:
// channel count and the number of samples reduced per channel.
struct BnLayout {
    std::size_t channels;
    std::size_t samples;
    std::size_t inner; // 1 for rank 2, L for rank 3
    std::size_t outer; // m
};

inline BnLayout bn_layout(const Tensor& x) {
    if (x.rank() == 2) return {x.shape[1], x.shape[0], 1, x.shape[0]};
    if (x.rank() == 3) return {x.shape[1], x.shape[0] * x.shape[2], x.shape[2], x.shape[0]};
    throw ShapeError("batch_norm: input must be rank 2 or 3");
}

inline std::size_t bn_index(const BnLayout& lo, std::size_t i, std::size_t c, std::size_t t) {
    return (i * lo.channels + c) * lo.inner + t;
}

} // namespace detail

/// Batch normalization over (m x F) per feature or (m x C x L) per channel.
/// Train mode normalizes with batch statistics (biased variance) and updates
/// the running buffers in place; eval mode uses the running buffers.
inline Var batch_norm(Graph& g, Var x, Var scale, Var shift, Tensor& running_mean,
                      Tensor& running_var, Mode mode, double momentum = 0.1, double eps = 1e-5) {
    const Tensor& tx = g.value(x);
    const detail::BnLayout lo = detail::bn_layout(tx);
    const Tensor& tg = g.value(scale);
    const Tensor& tb = g.value(shift);
    if (tg.size() != lo.channels || tb.size() != lo.channels ||
        running_mean.size() != lo.channels || running_var.size() != lo.channels)
        throw ShapeError("batch_norm: parameter sizes must match channel count");

    Tensor mean({lo.channels});
    Tensor var({lo.channels});
    if (mode == Mode::train) {
        for (std::size_t i = 0; i < lo.outer; ++i)
            for (std::size_t c = 0; c < lo.channels; ++c)
                for (std::size_t t = 0; t < lo.inner; ++t)
                    mean.data[c] += tx.data[detail::bn_index(lo, i, c, t)];
        for (std::size_t c = 0; c < lo.channels; ++c) mean.data[c] /= static_cast<double>(lo.samples);
        for (std::size_t i = 0; i < lo.outer; ++i)
            for (std::size_t c = 0; c < lo.channels; ++c)
                for (std::size_t t = 0; t < lo.inner; ++t) {
                    const double d = tx.data[detail::bn_index(lo, i, c, t)] - mean.data[c];
                    var.data[c] += d * d;
                }
        for (std::size_t c = 0; c < lo.channels; ++c) var.data[c] /= static_cast<double>(lo.samples);
        for (std::size_t c = 0; c < lo.channels; ++c) {
            running_mean.data[c] = (1.0 - momentum) * running_mean.data[c] + momentum * mean.data[c];
            running_var.data[c] = (1.0 - momentum) * running_var.data[c] + momentum * var.data[c];
        }
    } else {
        mean = running_mean;
        var = running_var;
    }

    Tensor xhat(tx.shape);
    Tensor y(tx.shape);
    Tensor inv_sd({lo.channels});
    for (std::size_t c = 0; c < lo.channels; ++c) inv_sd.data[c] = 1.0 / std::sqrt(var.data[c] + eps);
    for (std::size_t i = 0; i < lo.outer; ++i)
        for (std::size_t c = 0; c < lo.channels; ++c)
            for (std::size_t t = 0; t < lo.inner; ++t) {
                const std::size_t idx = detail::bn_index(lo, i, c, t);
                const double xh = (tx.data[idx] - mean.data[c]) * inv_sd.data[c];
                xhat.data[idx] = xh;
                y.data[idx] = tg.data[c] * xh + tb.data[c];
            }

    const Var out = g.next_var();
    const bool batch_stats = mode == Mode::train;
    return g.emit(
        "batch_norm", std::move(y),
        [x, scale, shift, out, lo, batch_stats, xhat = std::move(xhat),
         inv_sd = std::move(inv_sd)](Graph& gg) {
            const Tensor& dy = gg.grad_acc(out);
            const Tensor& vg = gg.value(scale);
            Tensor* dx = gg.requires_grad(x) ? &gg.grad_acc(x) : nullptr;
            Tensor* dgm = gg.requires_grad(scale) ? &gg.grad_acc(scale) : nullptr;
            Tensor* dbt = gg.requires_grad(shift) ? &gg.grad_acc(shift) : nullptr;
            std::vector<double> sum_dy(lo.channels, 0.0), sum_dy_xh(lo.channels, 0.0);
            for (std::size_t i = 0; i < lo.outer; ++i)
                for (std::size_t c = 0; c < lo.channels; ++c)
                    for (std::size_t t = 0; t < lo.inner; ++t) {
                        const std::size_t idx = detail::bn_index(lo, i, c, t);
                        sum_dy[c] += dy.data[idx];
                        sum_dy_xh[c] += dy.data[idx] * xhat.data[idx];
                    }
            if (dgm)
                for (std::size_t c = 0; c < lo.channels; ++c) dgm->data[c] += sum_dy_xh[c];
            if (dbt)
                for (std::size_t c = 0; c < lo.channels; ++c) dbt->data[c] += sum_dy[c];
            if (!dx) return;
            const double inv_n = 1.0 / static_cast<double>(lo.samples);
            for (std::size_t i = 0; i < lo.outer; ++i)
                for (std::size_t c = 0; c < lo.channels; ++c)
                    for (std::size_t t = 0; t < lo.inner; ++t) {
                        const std::size_t idx = detail::bn_index(lo, i, c, t);
                        const double gs = vg.data[c] * inv_sd.data[c];
                        if (batch_stats) {
                            dx->data[idx] += gs * (dy.data[idx] - sum_dy[c] * inv_n -
                                                   xhat.data[idx] * sum_dy_xh[c] * inv_n);
                        } else {
                            dx->data[idx] += gs * dy.data[idx];
                        }
                    }
        },
        {x, scale, shift});
}

/// Inverted dropout. Exact identity in eval mode or at p = 0; in train mode
/// kept entries are scaled by 1/(1-p). The mask is a pure function of the
/// seed, so outputs are bit-reproducible.
inline Var dropout(Graph& g, Var x, double p, Mode mode, std::uint64_t seed) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0, 1)");
    if (mode == Mode::eval || p == 0.0) return x;
    const Tensor& tx = g.value(x);
    Rng rng(seed);
    Tensor mask(tx.shape);
    const double keep_scale = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < mask.size(); ++i)
        mask.data[i] = rng.uniform() >= p ? keep_scale : 0.0;
    Tensor y(tx.shape);
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = tx.data[i] * mask.data[i];
    const Var out = g.next_var();
    return g.emit(
        "dropout", std::move(y),
        [x, out, mask = std::move(mask)](Graph& gg) {
            if (!gg.requires_grad(x)) return;
            const Tensor& dy = gg.grad_acc(out);
            Tensor& dx = gg.grad_acc(x);
            for (std::size_t i = 0; i < dy.size(); ++i) dx.data[i] += dy.data[i] * mask.data[i];
        },
        {x});
}

/// Mean over the temporal axis of (m x C x L) -> (m x C).
inline Var global_avg_pool(Graph& g, Var x) {
    const Tensor& tx = g.value(x);
    if (tx.rank() != 3) throw ShapeError("global_avg_pool: input must be (m,C,L)");
    const std::size_t m = tx.shape[0], C = tx.shape[1], L = tx.shape[2];
    Tensor y({m, C});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t c = 0; c < C; ++c) {
            double acc = 0.0;
            for (std::size_t t = 0; t < L; ++t) acc += tx.at3(i, c, t);
            y.at2(i, c) = acc / static_cast<double>(L);
        }
    const Var out = g.next_var();
    return g.emit(
        "global_avg_pool", std::move(y),
        [x, out, m, C, L](Graph& gg) {
            if (!gg.requires_grad(x)) return;
            const Tensor& dy = gg.grad_acc(out);
            Tensor& dx = gg.grad_acc(x);
            const double inv_l = 1.0 / static_cast<double>(L);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t t = 0; t < L; ++t) dx.at3(i, c, t) += dy.at2(i, c) * inv_l;
        },
        {x});
}

/// Concatenation of a and b along `dim`; all other dimensions must agree.
inline Var concat(Graph& g, Var a, Var b, std::size_t dim) {
    const Tensor& ta = g.value(a);
    const Tensor& tb = g.value(b);
    if (ta.rank() != tb.rank() || dim >= ta.rank()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < ta.rank(); ++i)
        if (i != dim && ta.shape[i] != tb.shape[i])
            throw ShapeError("concat: non-concatenated dimensions must match");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < dim; ++i) outer *= ta.shape[i];
    for (std::size_t i = dim + 1; i < ta.rank(); ++i) inner *= ta.shape[i];
    const std::size_t wa = ta.shape[dim] * inner, wb = tb.shape[dim] * inner;
    std::vector<std::size_t> s = ta.shape;
    s[dim] = ta.shape[dim] + tb.shape[dim];
    Tensor y(s);
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(ta.data.begin() + static_cast<std::ptrdiff_t>(o * wa), wa,
                    y.data.begin() + static_cast<std::ptrdiff_t>(o * (wa + wb)));
        std::copy_n(tb.data.begin() + static_cast<std::ptrdiff_t>(o * wb), wb,
                    y.data.begin() + static_cast<std::ptrdiff_t>(o * (wa + wb) + wa));
    }
    const Var out = g.next_var();
    return g.emit(
        "concat", std::move(y),
        [a, b, out, outer, wa, wb](Graph& gg) {
            const Tensor& dy = gg.grad_acc(out);
            Tensor* da = gg.requires_grad(a) ? &gg.grad_acc(a) : nullptr;
            Tensor* db = gg.requires_grad(b) ? &gg.grad_acc(b) : nullptr;
            for (std::size_t o = 0; o < outer; ++o) {
                if (da)
                    for (std::size_t i = 0; i < wa; ++i)
                        da->data[o * wa + i] += dy.data[o * (wa + wb) + i];
                if (db)
                    for (std::size_t i = 0; i < wb; ++i)
                        db->data[o * wb + i] += dy.data[o * (wa + wb) + wa + i];
            }
        },
        {a, b});
}

/// Contiguous slice [start, start+count) along `dim`.
inline Var slice(Graph& g, Var x, std::size_t dim, std::size_t start, std::size_t count) {
    const Tensor& tx = g.value(x);
    if (dim >= tx.rank() || start + count > tx.shape[dim])
        throw ShapeError("slice: range out of bounds");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < dim; ++i) outer *= tx.shape[i];
    for (std::size_t i = dim + 1; i < tx.rank(); ++i) inner *= tx.shape[i];
    const std::size_t w = tx.shape[dim] * inner;
    std::vector<std::size_t> s = tx.shape;
    s[dim] = count;
    Tensor y(s);
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(tx.data.begin() + static_cast<std::ptrdiff_t>(o * w + start * inner),
                    count * inner, y.data.begin() + static_cast<std::ptrdiff_t>(o * count * inner));
    const Var out = g.next_var();
    return g.emit(
        "slice", std::move(y),
        [x, out, outer, inner, w, start, count](Graph& gg) {
            if (!gg.requires_grad(x)) return;
            const Tensor& dy = gg.grad_acc(out);
            Tensor& dx = gg.grad_acc(x);
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < count * inner; ++i)
                    dx.data[o * w + start * inner + i] += dy.data[o * count * inner + i];
        },
        {x});
}

// --------------------------------------------------------------------------
// losses
// --------------------------------------------------------------------------

/// Mean squared error between a prediction node and a constant target with
/// the same element count. Scalar output.
inline Var mse_loss(Graph& g, Var pred, const Tensor& target) {
    const Tensor& tp = g.value(pred);
    if (tp.size() == 0 || tp.size() != target.size())
        throw ShapeError("mse_loss: prediction and target element counts must match and be nonzero");
    double acc = 0.0;
    for (std::size_t i = 0; i < tp.size(); ++i) {
        const double d = tp.data[i] - target.data[i];
        acc += d * d;
    }
    const std::size_t n = tp.size();
    Tensor y = Tensor::scalar(acc / static_cast<double>(n));
    const Var out = g.next_var();
    return g.emit(
        "mse_loss", std::move(y),
        [pred, out, target, n](Graph& gg) {
            if (!gg.requires_grad(pred)) return;
            const double dl = gg.grad_acc(out).data[0];
            const Tensor& vp = gg.value(pred);
            Tensor& dp = gg.grad_acc(pred);
            const double scale = 2.0 * dl / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i)
                dp.data[i] += scale * (vp.data[i] - target.data[i]);
        },
        {pred});
}

/// Mean negative log-softmax of the true-class logit over (m x 2) logits with
/// binary labels; stabilized by max subtraction.
inline Var cross_entropy_loss(Graph& g, Var logits, const std::vector<int>& labels) {
    const Tensor& tl = g.value(logits);
    if (tl.rank() != 2 || tl.shape[1] != 2 || tl.shape[0] == 0)
        throw ShapeError("cross_entropy_loss: logits must be (m x 2), m >= 1");
    const std::size_t m = tl.shape[0];
    if (labels.size() != m) throw ShapeError("cross_entropy_loss: label count mismatch");
    for (int l : labels)
        if (l != 0 && l != 1) throw std::invalid_argument("cross_entropy_loss: labels must be 0 or 1");
    double acc = 0.0;
    Tensor softmax({m, 2});
    for (std::size_t i = 0; i < m; ++i) {
        const double a = tl.at2(i, 0), b = tl.at2(i, 1);
        const double mx = std::max(a, b);
        const double ea = std::exp(a - mx), eb = std::exp(b - mx);
        const double z = ea + eb;
        softmax.at2(i, 0) = ea / z;
        softmax.at2(i, 1) = eb / z;
        const double true_logit = labels[i] == 0 ? a : b;
        acc += std::log(z) - (true_logit - mx);
    }
    Tensor y = Tensor::scalar(acc / static_cast<double>(m));
    const Var out = g.next_var();
    return g.emit(
        "cross_entropy_loss", std::move(y),
        [logits, out, labels, m, softmax = std::move(softmax)](Graph& gg) {
            if (!gg.requires_grad(logits)) return;
            const double dl = gg.grad_acc(out).data[0];
            Tensor& dlog = gg.grad_acc(logits);
            const double inv_m = dl / static_cast<double>(m);
            for (std::size_t i = 0; i < m; ++i) {
                dlog.at2(i, 0) += inv_m * (softmax.at2(i, 0) - (labels[i] == 0 ? 1.0 : 0.0));
                dlog.at2(i, 1) += inv_m * (softmax.at2(i, 1) - (labels[i] == 1 ? 1.0 : 0.0));
            }
        },
        {logits});
}

// --------------------------------------------------------------------------
// gradient-check oracle
// --------------------------------------------------------------------------

/// Central finite differences: component i is (f(x + h e_i) - f(x - h e_i)) / 2h.
/// Uses only forward evaluations, so it stays independent of the backward pass
/// it is used to check.
inline Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                         const Tensor& x, double h) {
    if (h <= 0.0) throw std::invalid_argument("finite_difference_gradient: h must be positive");
    Tensor grad(x.shape);
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe.data[i];
        probe.data[i] = orig + h;
        const double up = f(probe);
        probe.data[i] = orig - h;
        const double down = f(probe);
        probe.data[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down))
            throw NumericError("finite_difference_gradient: non-finite evaluation");
        grad.data[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

} // namespace tsguard
