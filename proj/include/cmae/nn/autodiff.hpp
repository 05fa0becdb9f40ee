#pragma once

// reverse-mode autodiff over the exact op set the model needs. values are
// computed eagerly; each op that participates in differentiation records a
// closure that pulls the output gradient into its inputs. GEMM-shaped inner
// loops go through Eigen; everything else is plain loops.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <unordered_set>
#include <vector>

#include "cmae/nn/tensor.hpp"

namespace cmae::nn {

// debug mode: scan every op output for NaN/Inf (spec: NumericalError).
inline bool& debug_checks() {
    static bool enabled = false;
    return enabled;
}

// when false (inference), ops compute values only: no graph links, no caches.
inline bool& grad_enabled() {
    static thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool previous;
    NoGradGuard() : previous(grad_enabled()) { grad_enabled() = false; }
    ~NoGradGuard() { grad_enabled() = previous; }
};

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad; // allocated lazily, same shape as value
    bool requires_grad = false;
    bool backward_done = false;
    std::vector<std::shared_ptr<Node<T>>> inputs;
    std::function<void(Node<T>&)> backward_fn;

    void ensure_grad() {
        if (grad.data.empty()) grad = Tensor<T>::zeros(value.shape);
    }
    void zero_grad() {
        std::fill(grad.data.begin(), grad.data.end(), T(0));
        backward_done = false;
    }
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

namespace detail {

inline void require_shape(bool cond, const std::string& msg) {
    if (!cond) raise(ErrorCode::ShapeError, msg);
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
    if (debug_checks() && !t.all_finite())
        raise(ErrorCode::NumericalError, std::string("non-finite value produced by ") + op);
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// canonical double in [0,1) from the top 53 bits; keeps every sampler
// reproducible across standard libraries.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

} // namespace detail

template <typename T>
NodePtr<T> make_leaf(Tensor<T> value, bool requires_grad) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return node;
}

template <typename T>
NodePtr<T> make_constant(Tensor<T> value) {
    return make_leaf(std::move(value), false);
}

// builds the output node; the backward closure is only attached when grad
// recording is on and at least one input participates.
template <typename T>
NodePtr<T> make_op(const char* name,
                   Tensor<T> value,
                   std::vector<NodePtr<T>> inputs,
                   std::function<void(Node<T>&)> backward_fn) {
    detail::check_finite(value, name);
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    bool record = grad_enabled();
    if (record) {
        bool any = false;
        for (const auto& in : inputs) any = any || in->requires_grad;
        record = any;
    }
    if (record) {
        node->requires_grad = true;
        node->inputs = std::move(inputs);
        node->backward_fn = std::move(backward_fn);
    }
    return node;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

template <typename T>
void backward(const NodePtr<T>& loss) {
    detail::require_shape(loss->value.numel() == 1, "backward requires a scalar loss");
    if (loss->backward_done)
        raise(ErrorCode::GraphError, "backward called twice on the same loss without reset");
    if (!loss->requires_grad) {
        loss->backward_done = true;
        return; // nothing differentiable upstream
    }

    // iterative post-order DFS for reverse-topological order.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node<T>* child = node->inputs[next].get();
            ++next;
            if (child->requires_grad && visited.insert(child).second)
                stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss->ensure_grad();
    loss->grad.data[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward_fn && !node->grad.data.empty()) node->backward_fn(*node);
    }
    loss->backward_done = true;
}

// ---------------------------------------------------------------------------
// elementwise and structural ops
// ---------------------------------------------------------------------------

template <typename T>
NodePtr<T> add(NodePtr<T> a, NodePtr<T> b) {
    detail::require_shape(a->value.same_shape(b->value), "add: shape mismatch");
    Tensor<T> out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
    return make_op<T>("add", std::move(out), {a, b}, [a, b](Node<T>& self) {
        for (auto& in : {a, b}) {
            if (!in->requires_grad) continue;
            in->ensure_grad();
            for (std::int64_t i = 0; i < self.grad.numel(); ++i) in->grad[i] += self.grad[i];
        }
    });
}

template <typename T>
NodePtr<T> mul(NodePtr<T> a, NodePtr<T> b) {
    detail::require_shape(a->value.same_shape(b->value), "mul: shape mismatch");
    Tensor<T> out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
    return make_op<T>("mul", std::move(out), {a, b}, [a, b](Node<T>& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::int64_t i = 0; i < self.grad.numel(); ++i) a->grad[i] += self.grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::int64_t i = 0; i < self.grad.numel(); ++i) b->grad[i] += self.grad[i] * a->value[i];
        }
    });
}

template <typename T>
NodePtr<T> scale(NodePtr<T> x, T factor) {
    Tensor<T> out = x->value;
    for (auto& v : out.data) v *= factor;
    return make_op<T>("scale", std::move(out), {x}, [x, factor](Node<T>& self) {
        x->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) x->grad[i] += self.grad[i] * factor;
    });
}

template <typename T>
NodePtr<T> average3(NodePtr<T> a, NodePtr<T> b, NodePtr<T> c) {
    return scale(add(add(a, b), c), T(1) / T(3));
}

// x: [batch, len, d] plus a constant positional table [len, d].
template <typename T>
NodePtr<T> add_positional(NodePtr<T> x, const Tensor<T>& pe) {
    detail::require_shape(x->value.rank() == 3, "add_positional: rank-3 input expected");
    const std::int64_t batch = x->value.dim(0), len = x->value.dim(1), d = x->value.dim(2);
    detail::require_shape(pe.rank() == 2 && pe.dim(0) == len && pe.dim(1) == d,
                          "add_positional: table shape mismatch");
    Tensor<T> out = x->value;
    for (std::int64_t bi = 0; bi < batch; ++bi)
        for (std::int64_t i = 0; i < len * d; ++i) out[bi * len * d + i] += pe[i];
    return make_op<T>("add_positional", std::move(out), {x}, [x](Node<T>& self) {
        x->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) x->grad[i] += self.grad[i];
    });
}

template <typename T>
NodePtr<T> gelu(NodePtr<T> x) {
    // tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
    constexpr double kC = 0.7978845608028654; // sqrt(2/pi)
    constexpr double kA = 0.044715;
    Tensor<T> out = x->value;
    for (auto& v : out.data) {
        const double xv = static_cast<double>(v);
        v = static_cast<T>(0.5 * xv * (1.0 + std::tanh(kC * (xv + kA * xv * xv * xv))));
    }
    return make_op<T>("gelu", std::move(out), {x}, [x](Node<T>& self) {
        x->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
            const double xv = static_cast<double>(x->value[i]);
            const double u = kC * (xv + kA * xv * xv * xv);
            const double t = std::tanh(u);
            const double du = kC * (1.0 + 3.0 * kA * xv * xv);
            const double d = 0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * du;
            x->grad[i] += self.grad[i] * static_cast<T>(d);
        }
    });
}

template <typename T>
NodePtr<T> sigmoid(NodePtr<T> x) {
    Tensor<T> out = x->value;
    for (auto& v : out.data) {
        const double xv = static_cast<double>(v);
        v = static_cast<T>(xv >= 0 ? 1.0 / (1.0 + std::exp(-xv))
                                   : std::exp(xv) / (1.0 + std::exp(xv)));
    }
    Tensor<T> saved = out;
    return make_op<T>("sigmoid", std::move(out), {x}, [x, saved](Node<T>& self) {
        x->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
            const T y = saved[i];
            x->grad[i] += self.grad[i] * y * (T(1) - y);
        }
    });
}

template <typename T>
NodePtr<T> softmax_lastdim(NodePtr<T> x) {
    detail::require_shape(x->value.rank() >= 1, "softmax: rank >= 1 expected");
    const std::int64_t n = x->value.dim(x->value.rank() - 1);
    detail::require_shape(n >= 1, "softmax: empty last dimension");
    const std::int64_t rows = x->value.numel() / n;
    Tensor<T> out = x->value;
    for (std::int64_t r = 0; r < rows; ++r) {
        T* row = out.data.data() + r * n;
        T mx = row[0];
        for (std::int64_t i = 1; i < n; ++i) mx = std::max(mx, row[i]);
        double sum = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            const double e = std::exp(static_cast<double>(row[i] - mx));
            row[i] = static_cast<T>(e);
            sum += e;
        }
        for (std::int64_t i = 0; i < n; ++i) row[i] = static_cast<T>(static_cast<double>(row[i]) / sum);
    }
    Tensor<T> saved = out;
    return make_op<T>("softmax", std::move(out), {x}, [x, saved, n](Node<T>& self) {
        x->ensure_grad();
        const std::int64_t rows = saved.numel() / n;
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* y = saved.data.data() + r * n;
            const T* dy = self.grad.data.data() + r * n;
            double dot = 0;
            for (std::int64_t i = 0; i < n; ++i) dot += static_cast<double>(y[i]) * static_cast<double>(dy[i]);
            T* dx = x->grad.data.data() + r * n;
            for (std::int64_t i = 0; i < n; ++i)
                dx[i] += static_cast<T>(static_cast<double>(y[i]) * (static_cast<double>(dy[i]) - dot));
        }
    });
}

template <typename T>
NodePtr<T> layer_norm(NodePtr<T> x, NodePtr<T> gain, NodePtr<T> offset, double eps = 1e-5) {
    detail::require_shape(x->value.rank() >= 1, "layer_norm: rank >= 1 expected");
    const std::int64_t d = x->value.dim(x->value.rank() - 1);
    detail::require_shape(gain->value.numel() == d && offset->value.numel() == d,
                          "layer_norm: gain/offset must match last dimension");
    const std::int64_t rows = x->value.numel() / d;

    Tensor<T> out = x->value;
    std::vector<double> inv_std(static_cast<std::size_t>(rows));
    std::vector<double> mean(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* row = x->value.data.data() + r * d;
        double mu = 0;
        for (std::int64_t i = 0; i < d; ++i) mu += static_cast<double>(row[i]);
        mu /= static_cast<double>(d);
        double var = 0;
        for (std::int64_t i = 0; i < d; ++i) {
            const double c = static_cast<double>(row[i]) - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        mean[static_cast<std::size_t>(r)] = mu;
        inv_std[static_cast<std::size_t>(r)] = inv;
        T* o = out.data.data() + r * d;
        for (std::int64_t i = 0; i < d; ++i) {
            const double xhat = (static_cast<double>(row[i]) - mu) * inv;
            o[i] = static_cast<T>(xhat * static_cast<double>(gain->value[i]) +
                                  static_cast<double>(offset->value[i]));
        }
    }
    return make_op<T>("layer_norm", std::move(out), {x, gain, offset},
                      [x, gain, offset, mean, inv_std, d](Node<T>& self) {
        const std::int64_t rows = x->value.numel() / d;
        if (x->requires_grad) x->ensure_grad();
        if (gain->requires_grad) gain->ensure_grad();
        if (offset->requires_grad) offset->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* xr = x->value.data.data() + r * d;
            const T* dy = self.grad.data.data() + r * d;
            const double mu = mean[static_cast<std::size_t>(r)];
            const double inv = inv_std[static_cast<std::size_t>(r)];
            // dxhat = dy * gain; dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
            double m1 = 0, m2 = 0;
            for (std::int64_t i = 0; i < d; ++i) {
                const double xhat = (static_cast<double>(xr[i]) - mu) * inv;
                const double g = static_cast<double>(dy[i]) * static_cast<double>(gain->value[i]);
                m1 += g;
                m2 += g * xhat;
                if (gain->requires_grad) gain->grad[i] += static_cast<T>(static_cast<double>(dy[i]) * xhat);
                if (offset->requires_grad) offset->grad[i] += dy[i];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            if (x->requires_grad) {
                T* dx = x->grad.data.data() + r * d;
                for (std::int64_t i = 0; i < d; ++i) {
                    const double xhat = (static_cast<double>(xr[i]) - mu) * inv;
                    const double g = static_cast<double>(dy[i]) * static_cast<double>(gain->value[i]);
                    dx[i] += static_cast<T>(inv * (g - m1 - xhat * m2));
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
NodePtr<T> concat_lastdim(const std::vector<NodePtr<T>>& parts) {
    detail::require_shape(!parts.empty(), "concat: no inputs");
    const auto& first = parts.front()->value;
    const std::int64_t rank = first.rank();
    detail::require_shape(rank >= 1, "concat: rank >= 1 expected");
    std::int64_t total_last = 0;
    for (const auto& p : parts) {
        detail::require_shape(p->value.rank() == rank, "concat: rank mismatch");
        for (std::int64_t i = 0; i + 1 < rank; ++i)
            detail::require_shape(p->value.dim(i) == first.dim(i), "concat: leading dims mismatch");
        total_last += p->value.dim(rank - 1);
    }
    std::vector<std::int64_t> out_shape = first.shape;
    out_shape.back() = total_last;
    Tensor<T> out(out_shape);
    const std::int64_t rows = out.numel() / total_last;
    std::int64_t col = 0;
    for (const auto& p : parts) {
        const std::int64_t w = p->value.dim(rank - 1);
        for (std::int64_t r = 0; r < rows; ++r)
            std::copy_n(p->value.data.data() + r * w, w, out.data.data() + r * total_last + col);
        col += w;
    }
    std::vector<NodePtr<T>> inputs = parts;
    return make_op<T>("concat", std::move(out), std::move(inputs),
                      [parts, total_last, rank](Node<T>& self) {
        const std::int64_t rows = self.grad.numel() / total_last;
        std::int64_t col = 0;
        for (const auto& p : parts) {
            const std::int64_t w = p->value.dim(rank - 1);
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::int64_t r = 0; r < rows; ++r) {
                    const T* src = self.grad.data.data() + r * total_last + col;
                    T* dst = p->grad.data.data() + r * w;
                    for (std::int64_t i = 0; i < w; ++i) dst[i] += src[i];
                }
            }
            col += w;
        }
    });
}

// [batch, len, d] -> [batch*h, len, d/h]; head i takes channels [i*dh, (i+1)*dh).
template <typename T>
NodePtr<T> split_heads(NodePtr<T> x, std::int64_t h) {
    detail::require_shape(x->value.rank() == 3, "split_heads: rank-3 input expected");
    const std::int64_t b = x->value.dim(0), l = x->value.dim(1), d = x->value.dim(2);
    if (d % h != 0) raise(ErrorCode::ConfigError, "d_model not divisible by head count");
    const std::int64_t dh = d / h;
    Tensor<T> out({b * h, l, dh});
    for (std::int64_t bi = 0; bi < b; ++bi)
        for (std::int64_t hi = 0; hi < h; ++hi)
            for (std::int64_t li = 0; li < l; ++li)
                std::copy_n(x->value.data.data() + (bi * l + li) * d + hi * dh, dh,
                            out.data.data() + ((bi * h + hi) * l + li) * dh);
    return make_op<T>("split_heads", std::move(out), {x}, [x, b, l, d, h, dh](Node<T>& self) {
        x->ensure_grad();
        for (std::int64_t bi = 0; bi < b; ++bi)
            for (std::int64_t hi = 0; hi < h; ++hi)
                for (std::int64_t li = 0; li < l; ++li) {
                    const T* src = self.grad.data.data() + ((bi * h + hi) * l + li) * dh;
                    T* dst = x->grad.data.data() + (bi * l + li) * d + hi * dh;
                    for (std::int64_t i = 0; i < dh; ++i) dst[i] += src[i];
                }
    });
}

// inverse of split_heads: [batch*h, len, dh] -> [batch, len, h*dh].
template <typename T>
NodePtr<T> merge_heads(NodePtr<T> x, std::int64_t h) {
    detail::require_shape(x->value.rank() == 3, "merge_heads: rank-3 input expected");
    const std::int64_t bh = x->value.dim(0), l = x->value.dim(1), dh = x->value.dim(2);
    detail::require_shape(bh % h == 0, "merge_heads: batch not divisible by head count");
    const std::int64_t b = bh / h, d = h * dh;
    Tensor<T> out({b, l, d});
    for (std::int64_t bi = 0; bi < b; ++bi)
        for (std::int64_t hi = 0; hi < h; ++hi)
            for (std::int64_t li = 0; li < l; ++li)
                std::copy_n(x->value.data.data() + ((bi * h + hi) * l + li) * dh, dh,
                            out.data.data() + (bi * l + li) * d + hi * dh);
    return make_op<T>("merge_heads", std::move(out), {x}, [x, b, l, d, h, dh](Node<T>& self) {
        x->ensure_grad();
        for (std::int64_t bi = 0; bi < b; ++bi)
            for (std::int64_t hi = 0; hi < h; ++hi)
                for (std::int64_t li = 0; li < l; ++li) {
                    const T* src = self.grad.data.data() + (bi * l + li) * d + hi * dh;
                    T* dst = x->grad.data.data() + ((bi * h + hi) * l + li) * dh;
                    for (std::int64_t i = 0; i < dh; ++i) dst[i] += src[i];
                }
    });
}

// ---------------------------------------------------------------------------
// linear algebra ops
// ---------------------------------------------------------------------------

// x: [..., in] treated as rows, w: [in, out], b: [out].
template <typename T>
NodePtr<T> dense(NodePtr<T> x, NodePtr<T> w, NodePtr<T> b) {
    detail::require_shape(x->value.rank() >= 2, "dense: rank >= 2 input expected");
    detail::require_shape(w->value.rank() == 2, "dense: weight must be 2-d");
    const std::int64_t in = w->value.dim(0), out_dim = w->value.dim(1);
    detail::require_shape(x->value.dim(x->value.rank() - 1) == in, "dense: input width mismatch");
    detail::require_shape(b->value.numel() == out_dim, "dense: bias width mismatch");
    const std::int64_t rows = x->value.numel() / in;

    std::vector<std::int64_t> out_shape = x->value.shape;
    out_shape.back() = out_dim;
    Tensor<T> out(out_shape);
    {
        detail::ConstMatMap<T> xm(x->value.data.data(), rows, in);
        detail::ConstMatMap<T> wm(w->value.data.data(), in, out_dim);
        detail::MatMap<T> om(out.data.data(), rows, out_dim);
        om.noalias() = xm * wm;
        for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t c = 0; c < out_dim; ++c) out[r * out_dim + c] += b->value[c];
    }
    return make_op<T>("dense", std::move(out), {x, w, b}, [x, w, b, rows, in, out_dim](Node<T>& self) {
        detail::ConstMatMap<T> dy(self.grad.data.data(), rows, out_dim);
        if (x->requires_grad) {
            x->ensure_grad();
            detail::ConstMatMap<T> wm(w->value.data.data(), in, out_dim);
            detail::MatMap<T> dx(x->grad.data.data(), rows, in);
            dx.noalias() += dy * wm.transpose();
        }
        if (w->requires_grad) {
            w->ensure_grad();
            detail::ConstMatMap<T> xm(x->value.data.data(), rows, in);
            detail::MatMap<T> dw(w->grad.data.data(), in, out_dim);
            dw.noalias() += xm.transpose() * dy;
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t c = 0; c < out_dim; ++c) b->grad[c] += self.grad[r * out_dim + c];
        }
    });
}

// batched matmul: a [n, p, q] x b [n, q, r] -> [n, p, r]; with transpose_b,
// b is [n, r, q]. used for attention scores and context.
template <typename T>
NodePtr<T> bmm(NodePtr<T> a, NodePtr<T> b, bool transpose_b) {
    detail::require_shape(a->value.rank() == 3 && b->value.rank() == 3, "bmm: rank-3 inputs expected");
    const std::int64_t n = a->value.dim(0), p = a->value.dim(1), q = a->value.dim(2);
    detail::require_shape(b->value.dim(0) == n, "bmm: batch mismatch");
    const std::int64_t r = transpose_b ? b->value.dim(1) : b->value.dim(2);
    detail::require_shape((transpose_b ? b->value.dim(2) : b->value.dim(1)) == q, "bmm: inner dim mismatch");

    Tensor<T> out({n, p, r});
    for (std::int64_t i = 0; i < n; ++i) {
        detail::ConstMatMap<T> am(a->value.data.data() + i * p * q, p, q);
        detail::MatMap<T> om(out.data.data() + i * p * r, p, r);
        if (transpose_b) {
            detail::ConstMatMap<T> bm(b->value.data.data() + i * r * q, r, q);
            om.noalias() = am * bm.transpose();
        } else {
            detail::ConstMatMap<T> bm(b->value.data.data() + i * q * r, q, r);
            om.noalias() = am * bm;
        }
    }
    return make_op<T>("bmm", std::move(out), {a, b}, [a, b, transpose_b, n, p, q, r](Node<T>& self) {
        for (std::int64_t i = 0; i < n; ++i) {
            detail::ConstMatMap<T> dc(self.grad.data.data() + i * p * r, p, r);
            detail::ConstMatMap<T> am(a->value.data.data() + i * p * q, p, q);
            if (transpose_b) {
                detail::ConstMatMap<T> bm(b->value.data.data() + i * r * q, r, q);
                if (a->requires_grad) {
                    a->ensure_grad();
                    detail::MatMap<T> da(a->grad.data.data() + i * p * q, p, q);
                    da.noalias() += dc * bm;
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    detail::MatMap<T> db(b->grad.data.data() + i * r * q, r, q);
                    db.noalias() += dc.transpose() * am;
                }
            } else {
                detail::ConstMatMap<T> bm(b->value.data.data() + i * q * r, q, r);
                if (a->requires_grad) {
                    a->ensure_grad();
                    detail::MatMap<T> da(a->grad.data.data() + i * p * q, p, q);
                    da.noalias() += dc * bm.transpose();
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    detail::MatMap<T> db(b->grad.data.data() + i * q * r, q, r);
                    db.noalias() += am.transpose() * dc;
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// sequence ops
// ---------------------------------------------------------------------------

// ids: [batch, len] int32; table: [vocab, dim].
template <typename T>
NodePtr<T> embedding(const IntTensor& ids, NodePtr<T> table) {
    detail::require_shape(ids.rank() == 2, "embedding: rank-2 id tensor expected");
    detail::require_shape(table->value.rank() == 2, "embedding: rank-2 table expected");
    const std::int64_t batch = ids.dim(0), len = ids.dim(1);
    const std::int64_t vocab = table->value.dim(0), dim = table->value.dim(1);
    for (std::int64_t i = 0; i < ids.numel(); ++i)
        if (ids[i] < 0 || ids[i] >= vocab)
            raise(ErrorCode::ShapeError,
                  "token id " + std::to_string(ids[i]) + " outside vocabulary of " + std::to_string(vocab));

    Tensor<T> out({batch, len, dim});
    for (std::int64_t i = 0; i < batch * len; ++i)
        std::copy_n(table->value.data.data() + static_cast<std::int64_t>(ids[i]) * dim, dim,
                    out.data.data() + i * dim);
    return make_op<T>("embedding", std::move(out), {table}, [table, ids, dim](Node<T>& self) {
        if (!table->requires_grad) return; // frozen table: gradient stays absent
        table->ensure_grad();
        const std::int64_t rows = ids.numel();
        for (std::int64_t i = 0; i < rows; ++i) {
            const T* src = self.grad.data.data() + i * dim;
            T* dst = table->grad.data.data() + static_cast<std::int64_t>(ids[i]) * dim;
            for (std::int64_t jj = 0; jj < dim; ++jj) dst[jj] += src[jj];
        }
    });
}

// 1-d convolution, cross-correlation convention, "same" zero padding:
// y[b,t,o] = sum_{dk,i} x[b, t+dk-floor(k/2), i] * w[dk,i,o] + bias[o].
// odd k pads symmetrically; even k takes one extra element on the left.
// x: [batch, len, in_ch], w: [k, in_ch, out_ch], b: [out_ch].
// im2col buffer is O(batch * len * k * in_ch) and is cached for backward.
template <typename T>
NodePtr<T> conv1d(NodePtr<T> x, NodePtr<T> w, NodePtr<T> b) {
    detail::require_shape(x->value.rank() == 3, "conv1d: rank-3 input expected");
    detail::require_shape(w->value.rank() == 3, "conv1d: rank-3 weight expected");
    const std::int64_t batch = x->value.dim(0), len = x->value.dim(1), cin = x->value.dim(2);
    const std::int64_t k = w->value.dim(0), cout = w->value.dim(2);
    detail::require_shape(k >= 1, "conv1d: kernel size must be positive");
    detail::require_shape(len >= 1, "conv1d: empty sequence");
    detail::require_shape(w->value.dim(1) == cin, "conv1d: channel mismatch");
    detail::require_shape(b->value.numel() == cout, "conv1d: bias width mismatch");
    const std::int64_t pad = k / 2;
    const std::int64_t rows = batch * len, kc = k * cin;

    auto xcol = std::make_shared<Tensor<T>>(std::vector<std::int64_t>{rows, kc});
    for (std::int64_t bi = 0; bi < batch; ++bi)
        for (std::int64_t t = 0; t < len; ++t) {
            T* dst = xcol->data.data() + (bi * len + t) * kc;
            for (std::int64_t dk = 0; dk < k; ++dk) {
                const std::int64_t ts = t + dk - pad;
                if (ts >= 0 && ts < len)
                    std::copy_n(x->value.data.data() + (bi * len + ts) * cin, cin, dst + dk * cin);
                // else leave zeros (same padding)
            }
        }

    Tensor<T> out({batch, len, cout});
    {
        detail::ConstMatMap<T> cm(xcol->data.data(), rows, kc);
        detail::ConstMatMap<T> wm(w->value.data.data(), kc, cout); // [k,cin,cout] flattens to [k*cin, cout]
        detail::MatMap<T> om(out.data.data(), rows, cout);
        om.noalias() = cm * wm;
        for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t c = 0; c < cout; ++c) out[r * cout + c] += b->value[c];
    }
    return make_op<T>("conv1d", std::move(out), {x, w, b},
                      [x, w, b, xcol, batch, len, cin, cout, k, pad, rows, kc](Node<T>& self) {
        detail::ConstMatMap<T> dy(self.grad.data.data(), rows, cout);
        if (w->requires_grad) {
            w->ensure_grad();
            detail::ConstMatMap<T> cm(xcol->data.data(), rows, kc);
            detail::MatMap<T> dw(w->grad.data.data(), kc, cout);
            dw.noalias() += cm.transpose() * dy;
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t c = 0; c < cout; ++c) b->grad[c] += self.grad[r * cout + c];
        }
        if (x->requires_grad) {
            x->ensure_grad();
            Tensor<T> dcol({rows, kc});
            detail::ConstMatMap<T> wm(w->value.data.data(), kc, cout);
            detail::MatMap<T> dcm(dcol.data.data(), rows, kc);
            dcm.noalias() = dy * wm.transpose();
            for (std::int64_t bi = 0; bi < batch; ++bi)
                for (std::int64_t t = 0; t < len; ++t) {
                    const T* src = dcol.data.data() + (bi * len + t) * kc;
                    for (std::int64_t dk = 0; dk < k; ++dk) {
                        const std::int64_t ts = t + dk - pad;
                        if (ts < 0 || ts >= len) continue;
                        T* dst = x->grad.data.data() + (bi * len + ts) * cin;
                        for (std::int64_t i = 0; i < cin; ++i) dst[i] += src[dk * cin + i];
                    }
                }
        }
    });
}

// non-overlapping window-2 max pooling; trailing odd element dropped;
// gradient routes to the argmax, first element on ties.
template <typename T>
NodePtr<T> maxpool1d(NodePtr<T> x) {
    detail::require_shape(x->value.rank() == 3, "maxpool1d: rank-3 input expected");
    const std::int64_t batch = x->value.dim(0), len = x->value.dim(1), ch = x->value.dim(2);
    detail::require_shape(len >= 2, "maxpool1d: sequence shorter than pool window");
    const std::int64_t out_len = len / 2;
    Tensor<T> out({batch, out_len, ch});
    auto pick = std::make_shared<std::vector<std::int8_t>>(static_cast<std::size_t>(batch * out_len * ch));
    for (std::int64_t bi = 0; bi < batch; ++bi)
        for (std::int64_t t = 0; t < out_len; ++t)
            for (std::int64_t c = 0; c < ch; ++c) {
                const T a = x->value[(bi * len + 2 * t) * ch + c];
                const T b2 = x->value[(bi * len + 2 * t + 1) * ch + c];
                const bool second = b2 > a; // first wins ties
                out[(bi * out_len + t) * ch + c] = second ? b2 : a;
                (*pick)[static_cast<std::size_t>((bi * out_len + t) * ch + c)] = second ? 1 : 0;
            }
    return make_op<T>("maxpool1d", std::move(out), {x}, [x, pick, batch, len, ch, out_len](Node<T>& self) {
        x->ensure_grad();
        for (std::int64_t bi = 0; bi < batch; ++bi)
            for (std::int64_t t = 0; t < out_len; ++t)
                for (std::int64_t c = 0; c < ch; ++c) {
                    const std::int64_t oi = (bi * out_len + t) * ch + c;
                    const std::int64_t ts = 2 * t + (*pick)[static_cast<std::size_t>(oi)];
                    x->grad[(bi * len + ts) * ch + c] += self.grad[oi];
                }
    });
}

// per-channel max over the full time axis; ties keep the first index.
template <typename T>
NodePtr<T> global_maxpool1d(NodePtr<T> x) {
    detail::require_shape(x->value.rank() == 3, "global_maxpool1d: rank-3 input expected");
    const std::int64_t batch = x->value.dim(0), len = x->value.dim(1), ch = x->value.dim(2);
    detail::require_shape(len >= 1, "global_maxpool1d: empty sequence");
    Tensor<T> out({batch, ch});
    auto argmax = std::make_shared<std::vector<std::int32_t>>(static_cast<std::size_t>(batch * ch), 0);
    for (std::int64_t bi = 0; bi < batch; ++bi)
        for (std::int64_t c = 0; c < ch; ++c) {
            T best = x->value[(bi * len) * ch + c];
            std::int32_t best_t = 0;
            for (std::int64_t t = 1; t < len; ++t) {
                const T v = x->value[(bi * len + t) * ch + c];
                if (v > best) {
                    best = v;
                    best_t = static_cast<std::int32_t>(t);
                }
            }
            out[bi * ch + c] = best;
            (*argmax)[static_cast<std::size_t>(bi * ch + c)] = best_t;
        }
    return make_op<T>("global_maxpool1d", std::move(out), {x}, [x, argmax, batch, len, ch](Node<T>& self) {
        x->ensure_grad();
        for (std::int64_t bi = 0; bi < batch; ++bi)
            for (std::int64_t c = 0; c < ch; ++c) {
                const std::int64_t t = (*argmax)[static_cast<std::size_t>(bi * ch + c)];
                x->grad[(bi * len + t) * ch + c] += self.grad[bi * ch + c];
            }
    });
}

// ---------------------------------------------------------------------------
// regularization and loss
// ---------------------------------------------------------------------------

// inverted dropout: zero with probability rate, scale survivors by 1/(1-rate).
// identity in inference mode (no node created).
template <typename T>
NodePtr<T> dropout(NodePtr<T> x, double rate, bool training, std::mt19937_64& rng) {
    if (!training || rate <= 0.0) return x;
    detail::require_shape(rate < 1.0, "dropout: rate must be < 1");
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    auto mask = std::make_shared<std::vector<T>>(x->value.data.size());
    Tensor<T> out = x->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const T m = detail::uniform01(rng) < rate ? T(0) : keep_scale;
        (*mask)[i] = m;
        out.data[i] *= m;
    }
    return make_op<T>("dropout", std::move(out), {x}, [x, mask](Node<T>& self) {
        x->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i)
            x->grad[i] += self.grad[i] * (*mask)[static_cast<std::size_t>(i)];
    });
}

// mean over the batch of -ln p[label], probabilities clamped to >= 1e-12.
template <typename T>
NodePtr<T> cross_entropy(NodePtr<T> probs, const IntTensor& labels) {
    detail::require_shape(probs->value.rank() == 2, "cross_entropy: rank-2 probabilities expected");
    const std::int64_t batch = probs->value.dim(0), classes = probs->value.dim(1);
    detail::require_shape(labels.numel() == batch, "cross_entropy: label count mismatch");
    constexpr double kClamp = 1e-12;
    double loss = 0;
    for (std::int64_t i = 0; i < batch; ++i) {
        const std::int32_t y = labels[i];
        detail::require_shape(y >= 0 && y < classes, "cross_entropy: label out of range");
        loss += -std::log(std::max(static_cast<double>(probs->value[i * classes + y]), kClamp));
    }
    loss /= static_cast<double>(batch);
    return make_op<T>("cross_entropy", Tensor<T>::scalar(static_cast<T>(loss)), {probs},
                      [probs, labels, batch, classes](Node<T>& self) {
        probs->ensure_grad();
        const T g = self.grad.data[0];
        for (std::int64_t i = 0; i < batch; ++i) {
            const std::int32_t y = labels[i];
            const double p = static_cast<double>(probs->value[i * classes + y]);
            if (p > kClamp) // clamped probabilities have zero local derivative
                probs->grad[i * classes + y] -=
                    g * static_cast<T>(1.0 / (p * static_cast<double>(batch)));
        }
    });
}

// scalar sum of elementwise x * weights; gradient-check harness needs a
// scalar head over arbitrary op outputs.
template <typename T>
NodePtr<T> weighted_sum(NodePtr<T> x, const Tensor<T>& weights) {
    detail::require_shape(x->value.same_shape(weights), "weighted_sum: shape mismatch");
    double acc = 0;
    for (std::int64_t i = 0; i < x->value.numel(); ++i)
        acc += static_cast<double>(x->value[i]) * static_cast<double>(weights[i]);
    return make_op<T>("weighted_sum", Tensor<T>::scalar(static_cast<T>(acc)), {x},
                      [x, weights](Node<T>& self) {
        x->ensure_grad();
        const T g = self.grad.data[0];
        for (std::int64_t i = 0; i < x->grad.numel(); ++i) x->grad[i] += g * weights[i];
    });
}

// ---------------------------------------------------------------------------
// attention
// ---------------------------------------------------------------------------

template <typename T>
struct AttentionParams {
    NodePtr<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

// standard unmasked self-attention (padding positions participate; the spec
// flags this as the paper's implied behavior).
template <typename T>
NodePtr<T> multi_head_attention(NodePtr<T> x, const AttentionParams<T>& p, std::int64_t h) {
    detail::require_shape(x->value.rank() == 3, "attention: rank-3 input expected");
    const std::int64_t d = x->value.dim(2);
    if (h < 1 || d % h != 0) raise(ErrorCode::ConfigError, "d_model not divisible by head count");
    const std::int64_t dh = d / h;

    auto q = split_heads(dense(x, p.wq, p.bq), h);
    auto k = split_heads(dense(x, p.wk, p.bk), h);
    auto v = split_heads(dense(x, p.wv, p.bv), h);
    auto scores = scale(bmm(q, k, /*transpose_b=*/true), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
    auto weights = softmax_lastdim(scores);
    auto context = merge_heads(bmm(weights, v, /*transpose_b=*/false), h);
    return dense(context, p.wo, p.bo);
}

// sinusoidal table: PE[t, 2i] = sin(t / 10000^(2i/d)), PE[t, 2i+1] = cos(same).
template <typename T>
Tensor<T> positional_encoding(std::int64_t len, std::int64_t d_model) {
    Tensor<T> pe({len, d_model});
    for (std::int64_t t = 0; t < len; ++t)
        for (std::int64_t j = 0; j < d_model; ++j) {
            const double exponent = static_cast<double>(j - (j % 2)) / static_cast<double>(d_model);
            const double angle = static_cast<double>(t) / std::pow(10000.0, exponent);
            pe[t * d_model + j] = static_cast<T>(j % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    return pe;
}

} // namespace cmae::nn
