#pragma once

// Dense row-major tensors with reverse-mode gradient propagation.
// The graph is rebuilt on every forward pass and freed once the last
// tensor referencing it goes out of scope.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cil {

struct shape_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct state_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) {
        if (d <= 0) throw shape_error("non-positive dimension in shape " + shape_str(s));
        n *= static_cast<size_t>(d);
    }
    return n;
}

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated lazily, same length as data
    bool requires_grad = false;
    // set when this tensor is an op output whose gradient must flow
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void()> backward_fn;

    bool needs_grad() const { return requires_grad || !parents.empty(); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

// Value-semantics handle over a shared node in the autodiff graph.
template <typename T>
class Tensor {
public:
    Tensor() : impl_(std::make_shared<TensorImpl<T>>()) {}

    explicit Tensor(Shape shape, bool requires_grad = false)
        : impl_(std::make_shared<TensorImpl<T>>()) {
        impl_->shape = std::move(shape);
        impl_->data.assign(shape_numel(impl_->shape), T(0));
        impl_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
        : impl_(std::make_shared<TensorImpl<T>>()) {
        if (values.size() != shape_numel(shape))
            throw shape_error("data length " + std::to_string(values.size()) +
                              " does not match shape " + shape_str(shape));
        impl_->shape = std::move(shape);
        impl_->data = std::move(values);
        impl_->requires_grad = requires_grad;
    }

    static Tensor scalar(T v, bool requires_grad = false) {
        return Tensor(Shape{1}, std::vector<T>{v}, requires_grad);
    }

    const Shape& shape() const { return impl_->shape; }
    int dim(size_t i) const { return impl_->shape.at(i); }
    size_t rank() const { return impl_->shape.size(); }
    size_t numel() const { return impl_->data.size(); }

    std::vector<T>& data() { return impl_->data; }
    const std::vector<T>& data() const { return impl_->data; }
    std::vector<T>& grad() { return impl_->grad; }
    const std::vector<T>& grad() const { return impl_->grad; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool rg) { impl_->requires_grad = rg; }
    bool has_grad() const { return !impl_->grad.empty(); }

    T item() const {
        if (numel() != 1) throw shape_error("item() on tensor of shape " + shape_str(shape()));
        return impl_->data[0];
    }

    void zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), T(0)); }

    // Deep copy of values only, detached from the graph.
    Tensor detached() const {
        Tensor out(impl_->shape, impl_->data, false);
        return out;
    }

    std::shared_ptr<TensorImpl<T>> impl() const { return impl_; }

    // Reverse-mode sweep from a scalar root. Visits each node exactly once
    // in reverse topological order.
    void backward() {
        if (numel() != 1) throw shape_error("backward() requires a scalar root");
        impl_->ensure_grad();
        impl_->grad[0] = T(1);

        std::vector<TensorImpl<T>*> order;
        std::vector<TensorImpl<T>*> stack{impl_.get()};
        // 0 = unvisited, 1 = open, 2 = done
        std::vector<std::pair<TensorImpl<T>*, int>> marks;
        auto mark_of = [&](TensorImpl<T>* p) -> int& {
            for (auto& m : marks)
                if (m.first == p) return m.second;
            marks.emplace_back(p, 0);
            return marks.back().second;
        };
        while (!stack.empty()) {
            TensorImpl<T>* node = stack.back();
            int& m = mark_of(node);
            if (m == 0) {
                m = 1;
                for (auto& p : node->parents)
                    if (mark_of(p.get()) == 0) stack.push_back(p.get());
            } else {
                stack.pop_back();
                if (m == 1) {
                    m = 2;
                    order.push_back(node);
                }
            }
        }
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            TensorImpl<T>* node = *it;
            if (node->backward_fn && !node->grad.empty()) node->backward_fn();
        }
    }

private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

namespace detail {

template <typename T>
void attach(Tensor<T>& out, std::vector<Tensor<T>> inputs, std::function<void()> fn) {
    bool any = false;
    for (auto& in : inputs) any = any || in.impl()->needs_grad();
    if (!any) return;  // detached subgraph, no tape node
    auto impl = out.impl();
    for (auto& in : inputs) impl->parents.push_back(in.impl());
    impl->backward_fn = std::move(fn);
}

template <typename T>
bool wants(const Tensor<T>& t) {
    return t.impl()->needs_grad();
}

}  // namespace detail

// ---- elementwise ----

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw shape_error("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    auto* oi = out.impl().get();  // raw: a shared self-reference would leak the graph
    auto ai = a.impl();
    auto bi = b.impl();
    detail::attach(out, {a, b}, [oi, ai, bi] {
        if (ai->needs_grad()) {
            ai->ensure_grad();
            for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
        }
        if (bi->needs_grad()) {
            bi->ensure_grad();
            for (size_t i = 0; i < oi->grad.size(); ++i) bi->grad[i] += oi->grad[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw shape_error("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    auto* oi = out.impl().get();  // raw: a shared self-reference would leak the graph
    auto ai = a.impl();
    auto bi = b.impl();
    detail::attach(out, {a, b}, [oi, ai, bi] {
        if (ai->needs_grad()) {
            ai->ensure_grad();
            for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i] * bi->data[i];
        }
        if (bi->needs_grad()) {
            bi->ensure_grad();
            for (size_t i = 0; i < oi->grad.size(); ++i) bi->grad[i] += oi->grad[i] * ai->data[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    Tensor<T> out(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * c;
    auto* oi = out.impl().get();  // raw: a shared self-reference would leak the graph
    auto ai = a.impl();
    detail::attach(out, {a}, [oi, ai, c] {
        ai->ensure_grad();
        for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i] * c;
    });
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    Tensor<T> out(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
    auto* oi = out.impl().get();  // raw: a shared self-reference would leak the graph
    auto ai = a.impl();
    detail::attach(out, {a}, [oi, ai] {
        ai->ensure_grad();
        for (size_t i = 0; i < oi->grad.size(); ++i)
            if (ai->data[i] > T(0)) ai->grad[i] += oi->grad[i];
    });
    return out;
}

template <typename T>
Tensor<T> sum_sq(const Tensor<T>& a) {
    T s = 0;
    for (T v : a.data()) s += v * v;
    Tensor<T> out = Tensor<T>::scalar(s);
    auto* oi = out.impl().get();  // raw: a shared self-reference would leak the graph
    auto ai = a.impl();
    detail::attach(out, {a}, [oi, ai] {
        ai->ensure_grad();
        T g = oi->grad[0];
        for (size_t i = 0; i < ai->data.size(); ++i) ai->grad[i] += T(2) * ai->data[i] * g;
    });
    return out;
}

// ---- matmul / linear ----

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw shape_error("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> out(Shape{m, n});
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            T av = a.data()[i * k + p];
            if (av == T(0)) continue;
            for (int j = 0; j < n; ++j) out.data()[i * n + j] += av * b.data()[p * n + j];
        }
    auto* oi = out.impl().get();  // raw: a shared self-reference would leak the graph
    auto ai = a.impl();
    auto bi = b.impl();
    detail::attach(out, {a, b}, [oi, ai, bi, m, k, n] {
        if (ai->needs_grad()) {
            ai->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    T s = 0;
                    for (int j = 0; j < n; ++j) s += oi->grad[i * n + j] * bi->data[p * n + j];
                    ai->grad[i * k + p] += s;
                }
        }
        if (bi->needs_grad()) {
            bi->ensure_grad();
            for (int p = 0; p < k; ++p)
                for (int j = 0; j < n; ++j) {
                    T s = 0;
                    for (int i = 0; i < m; ++i) s += ai->data[i * k + p] * oi->grad[i * n + j];
                    bi->grad[p * n + j] += s;
                }
        }
    });
    return out;
}

// y[i,o] = sum_d x[i,d] * w[o,d] + b[o]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1))
        throw shape_error("linear: incompatible shapes " + shape_str(x.shape()) + " and " +
                          shape_str(w.shape()));
    if (b.rank() != 1 || b.dim(0) != w.dim(0)) throw shape_error("linear: bad bias shape");
    const int n = x.dim(0), d = x.dim(1), k = w.dim(0);
    Tensor<T> out(Shape{n, k});
    for (int i = 0; i < n; ++i)
        for (int o = 0; o < k; ++o) {
            T s = b.data()[o];
            for (int j = 0; j < d; ++j) s += x.data()[i * d + j] * w.data()[o * d + j];
            out.data()[i * k + o] = s;
        }
    auto* oi = out.impl().get();  // raw: a shared self-reference would leak the graph
    auto xi = x.impl();
    auto wi = w.impl();
    auto bi = b.impl();
    detail::attach(out, {x, w, b}, [oi, xi, wi, bi, n, d, k] {
        if (xi->needs_grad()) {
            xi->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j) {
                    T s = 0;
                    for (int o = 0; o < k; ++o) s += oi->grad[i * k + o] * wi->data[o * d + j];
                    xi->grad[i * d + j] += s;
                }
        }
        if (wi->needs_grad()) {
            wi->ensure_grad();
            for (int o = 0; o < k; ++o)
                for (int j = 0; j < d; ++j) {
                    T s = 0;
                    for (int i = 0; i < n; ++i) s += oi->grad[i * k + o] * xi->data[i * d + j];
                    wi->grad[o * d + j] += s;
                }
        }
        if (bi->needs_grad()) {
            bi->ensure_grad();
            for (int o = 0; o < k; ++o) {
                T s = 0;
                for (int i = 0; i < n; ++i) s += oi->grad[i * k + o];
                bi->grad[o] += s;
            }
        }
    });
    return out;
}

// ---- conv2d ----

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride,
                 int padding) {
    if (x.rank() != 4 || w.rank() != 4)
        throw shape_error("conv2d: expected 4-d input and weight, got " + shape_str(x.shape()) +
                          " and " + shape_str(w.shape()));
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int O = w.dim(0), Cw = w.dim(1), K = w.dim(2), K2 = w.dim(3);
    if (C != Cw || K != K2)
        throw shape_error("conv2d: weight " + shape_str(w.shape()) + " does not match input " +
                          shape_str(x.shape()));
    if (b.rank() != 1 || b.dim(0) != O) throw shape_error("conv2d: bad bias shape");
    const int Ho = conv_out_dim(H, K, stride, padding);
    const int Wo = conv_out_dim(W, K, stride, padding);
    if (Ho < 1 || Wo < 1)
        throw config_error("conv2d: non-positive output size for input " + shape_str(x.shape()));

    Tensor<T> out(Shape{N, O, Ho, Wo});
    auto xat = [&](int n, int c, int i, int j) -> T {
        return x.data()[((static_cast<size_t>(n) * C + c) * H + i) * W + j];
    };
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o)
            for (int i = 0; i < Ho; ++i)
                for (int j = 0; j < Wo; ++j) {
                    T s = b.data()[o];
                    for (int c = 0; c < C; ++c)
                        for (int u = 0; u < K; ++u) {
                            int ii = i * stride + u - padding;
                            if (ii < 0 || ii >= H) continue;
                            for (int v = 0; v < K; ++v) {
                                int jj = j * stride + v - padding;
                                if (jj < 0 || jj >= W) continue;
                                s += w.data()[((static_cast<size_t>(o) * C + c) * K + u) * K + v] *
                                     xat(n, c, ii, jj);
                            }
                        }
                    out.data()[((static_cast<size_t>(n) * O + o) * Ho + i) * Wo + j] = s;
                }

    auto* oi = out.impl().get();  // raw: a shared self-reference would leak the graph
    auto xi = x.impl();
    auto wi = w.impl();
    auto bi = b.impl();
    detail::attach(out, {x, w, b}, [oi, xi, wi, bi, N, C, H, W, O, K, Ho, Wo, stride, padding] {
        const bool gx = xi->needs_grad(), gw = wi->needs_grad(), gb = bi->needs_grad();
        if (gx) xi->ensure_grad();
        if (gw) wi->ensure_grad();
        if (gb) bi->ensure_grad();
        for (int n = 0; n < N; ++n)
            for (int o = 0; o < O; ++o)
                for (int i = 0; i < Ho; ++i)
                    for (int j = 0; j < Wo; ++j) {
                        T g = oi->grad[((static_cast<size_t>(n) * O + o) * Ho + i) * Wo + j];
                        if (g == T(0)) continue;
                        if (gb) bi->grad[o] += g;
                        for (int c = 0; c < C; ++c)
                            for (int u = 0; u < K; ++u) {
                                int ii = i * stride + u - padding;
                                if (ii < 0 || ii >= H) continue;
                                for (int v = 0; v < K; ++v) {
                                    int jj = j * stride + v - padding;
                                    if (jj < 0 || jj >= W) continue;
                                    size_t xo = ((static_cast<size_t>(n) * C + c) * H + ii) * W + jj;
                                    size_t wo = ((static_cast<size_t>(o) * C + c) * K + u) * K + v;
                                    if (gw) wi->grad[wo] += g * xi->data[xo];
                                    if (gx) xi->grad[xo] += g * wi->data[wo];
                                }
                            }
                    }
    });
    return out;
}

// ---- batchnorm2d ----

template <typename T>
struct BatchNormState {
    Tensor<T> gamma;
    Tensor<T> beta;
    std::vector<T> running_mean;
    std::vector<T> running_var;
    T eps = T(1e-5);
    T momentum = T(0.1);

    BatchNormState() = default;
    explicit BatchNormState(int channels, T eps_ = T(1e-5), T momentum_ = T(0.1))
        : gamma(Shape{channels}, std::vector<T>(channels, T(1)), true),
          beta(Shape{channels}, std::vector<T>(channels, T(0)), true),
          running_mean(channels, T(0)),
          running_var(channels, T(1)),
          eps(eps_),
          momentum(momentum_) {}

    int channels() const { return gamma.rank() ? gamma.dim(0) : 0; }

    void reset_identity() {
        std::fill(gamma.data().begin(), gamma.data().end(), T(1));
        std::fill(beta.data().begin(), beta.data().end(), T(0));
        std::fill(running_mean.begin(), running_mean.end(), T(0));
        std::fill(running_var.begin(), running_var.end(), T(1));
    }
};

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, BatchNormState<T>& bn, bool training) {
    if (x.rank() != 4) throw shape_error("batchnorm2d: expected 4-d input");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (C != bn.channels()) throw shape_error("batchnorm2d: channel mismatch");
    if (bn.eps <= T(0)) throw numeric_error("batchnorm2d: eps must be positive");
    if (training && N == 0) throw config_error("batchnorm2d: zero batch in training mode");

    const size_t plane = static_cast<size_t>(H) * W;
    const size_t m = static_cast<size_t>(N) * plane;
    std::vector<T> mean(C), var(C);
    if (training) {
        for (int c = 0; c < C; ++c) {
            T s = 0;
            for (int n = 0; n < N; ++n) {
                const T* p = x.data().data() + (static_cast<size_t>(n) * C + c) * plane;
                for (size_t i = 0; i < plane; ++i) s += p[i];
            }
            mean[c] = s / static_cast<T>(m);
            T v = 0;
            for (int n = 0; n < N; ++n) {
                const T* p = x.data().data() + (static_cast<size_t>(n) * C + c) * plane;
                for (size_t i = 0; i < plane; ++i) {
                    T d = p[i] - mean[c];
                    v += d * d;
                }
            }
            var[c] = v / static_cast<T>(m);
            bn.running_mean[c] = (T(1) - bn.momentum) * bn.running_mean[c] + bn.momentum * mean[c];
            bn.running_var[c] = (T(1) - bn.momentum) * bn.running_var[c] + bn.momentum * var[c];
        }
    } else {
        mean = bn.running_mean;
        var = bn.running_var;
    }

    std::vector<T> inv_std(C);
    for (int c = 0; c < C; ++c) inv_std[c] = T(1) / std::sqrt(var[c] + bn.eps);

    Tensor<T> out(x.shape());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* p = x.data().data() + (static_cast<size_t>(n) * C + c) * plane;
            T* q = out.data().data() + (static_cast<size_t>(n) * C + c) * plane;
            T g = bn.gamma.data()[c], b = bn.beta.data()[c], mu = mean[c], is = inv_std[c];
            for (size_t i = 0; i < plane; ++i) q[i] = g * (p[i] - mu) * is + b;
        }

    auto* oi = out.impl().get();  // raw: a shared self-reference would leak the graph
    auto xi = x.impl();
    auto gi = bn.gamma.impl();
    auto bi = bn.beta.impl();
    detail::attach(out, {x, bn.gamma, bn.beta},
                   [oi, xi, gi, bi, N, C, plane, m, mean, inv_std, training] {
        const bool gx = xi->needs_grad(), gg = gi->needs_grad(), gb = bi->needs_grad();
        if (gx) xi->ensure_grad();
        if (gg) gi->ensure_grad();
        if (gb) bi->ensure_grad();
        for (int c = 0; c < C; ++c) {
            T mu = mean[c], is = inv_std[c], gam = gi->data[c];
            T sum_dy = 0, sum_dy_xhat = 0;
            for (int n = 0; n < N; ++n) {
                size_t base = (static_cast<size_t>(n) * C + c) * plane;
                for (size_t i = 0; i < plane; ++i) {
                    T dy = oi->grad[base + i];
                    sum_dy += dy;
                    sum_dy_xhat += dy * (xi->data[base + i] - mu) * is;
                }
            }
            if (gg) gi->grad[c] += sum_dy_xhat;
            if (gb) bi->grad[c] += sum_dy;
            if (gx) {
                if (training) {
                    T inv_m = T(1) / static_cast<T>(m);
                    for (int n = 0; n < N; ++n) {
                        size_t base = (static_cast<size_t>(n) * C + c) * plane;
                        for (size_t i = 0; i < plane; ++i) {
                            T dy = oi->grad[base + i];
                            T xhat = (xi->data[base + i] - mu) * is;
                            xi->grad[base + i] +=
                                gam * is * (dy - inv_m * sum_dy - xhat * inv_m * sum_dy_xhat);
                        }
                    }
                } else {
                    for (int n = 0; n < N; ++n) {
                        size_t base = (static_cast<size_t>(n) * C + c) * plane;
                        for (size_t i = 0; i < plane; ++i)
                            xi->grad[base + i] += oi->grad[base + i] * gam * is;
                    }
                }
            }
        }
    });
    return out;
}

// ---- pooling ----

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    if (x.rank() != 4) throw shape_error("global_avg_pool: expected 4-d input");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const size_t plane = static_cast<size_t>(H) * W;
    Tensor<T> out(Shape{N, C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* p = x.data().data() + (static_cast<size_t>(n) * C + c) * plane;
            T s = 0;
            for (size_t i = 0; i < plane; ++i) s += p[i];
            out.data()[static_cast<size_t>(n) * C + c] = s / static_cast<T>(plane);
        }
    auto* oi = out.impl().get();  // raw: a shared self-reference would leak the graph
    auto xi = x.impl();
    detail::attach(out, {x}, [oi, xi, N, C, plane] {
        xi->ensure_grad();
        T inv = T(1) / static_cast<T>(plane);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                T g = oi->grad[static_cast<size_t>(n) * C + c] * inv;
                size_t base = (static_cast<size_t>(n) * C + c) * plane;
                for (size_t i = 0; i < plane; ++i) xi->grad[base + i] += g;
            }
    });
    return out;
}

// ---- losses ----

// Mean cross-entropy over masked-in rows; empty mask gives 0 with zero gradient.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels,
                                const std::vector<bool>* mask = nullptr) {
    if (logits.rank() != 2) throw shape_error("cross_entropy: expected 2-d logits");
    const int N = logits.dim(0), K = logits.dim(1);
    if (static_cast<int>(labels.size()) != N)
        throw shape_error("cross_entropy: label count does not match batch");
    if (mask && static_cast<int>(mask->size()) != N)
        throw shape_error("cross_entropy: mask size does not match batch");
    for (int i = 0; i < N; ++i)
        if (labels[i] < 0 || labels[i] >= K)
            throw config_error("cross_entropy: label " + std::to_string(labels[i]) +
                               " out of range [0," + std::to_string(K) + ")");

    int count = 0;
    for (int i = 0; i < N; ++i)
        if (!mask || (*mask)[i]) ++count;

    // softmax rows cached for backward
    auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(N) * K);
    T loss = 0;
    for (int i = 0; i < N; ++i) {
        const T* z = logits.data().data() + static_cast<size_t>(i) * K;
        T mx = z[0];
        for (int k = 1; k < K; ++k) mx = std::max(mx, z[k]);
        T sum = 0;
        for (int k = 0; k < K; ++k) sum += std::exp(z[k] - mx);
        T logsum = std::log(sum) + mx;
        for (int k = 0; k < K; ++k)
            (*probs)[static_cast<size_t>(i) * K + k] = std::exp(z[k] - logsum);
        if (!mask || (*mask)[i]) loss += logsum - z[labels[i]];
    }
    if (count > 0) loss /= static_cast<T>(count);
    Tensor<T> out = Tensor<T>::scalar(count > 0 ? loss : T(0));
    if (count == 0) return out;

    auto* oi = out.impl().get();  // raw: a shared self-reference would leak the graph
    auto li = logits.impl();
    std::vector<bool> m = mask ? *mask : std::vector<bool>(N, true);
    detail::attach(out, {logits}, [oi, li, probs, labels, m, N, K, count] {
        li->ensure_grad();
        T g = oi->grad[0] / static_cast<T>(count);
        for (int i = 0; i < N; ++i) {
            if (!m[i]) continue;
            for (int k = 0; k < K; ++k) {
                T p = (*probs)[static_cast<size_t>(i) * K + k];
                li->grad[static_cast<size_t>(i) * K + k] += g * (p - (k == labels[i] ? T(1) : T(0)));
            }
        }
    });
    return out;
}

// Mean squared Euclidean distance over masked-in rows. Gradient flows into a only.
template <typename T>
Tensor<T> masked_sq_dist(const Tensor<T>& a, const Tensor<T>& b_const,
                         const std::vector<bool>* mask = nullptr) {
    if (a.shape() != b_const.shape())
        throw shape_error("sq_dist: shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b_const.shape()));
    if (a.rank() != 2) throw shape_error("sq_dist: expected 2-d inputs");
    const int N = a.dim(0), D = a.dim(1);
    if (mask && static_cast<int>(mask->size()) != N)
        throw shape_error("sq_dist: mask size does not match batch");
    int count = 0;
    for (int i = 0; i < N; ++i)
        if (!mask || (*mask)[i]) ++count;
    T loss = 0;
    for (int i = 0; i < N; ++i) {
        if (mask && !(*mask)[i]) continue;
        for (int j = 0; j < D; ++j) {
            T d = a.data()[static_cast<size_t>(i) * D + j] - b_const.data()[static_cast<size_t>(i) * D + j];
            loss += d * d;
        }
    }
    Tensor<T> out = Tensor<T>::scalar(count > 0 ? loss / static_cast<T>(count) : T(0));
    if (count == 0) return out;
    auto* oi = out.impl().get();  // raw: a shared self-reference would leak the graph
    auto ai = a.impl();
    auto bv = std::make_shared<std::vector<T>>(b_const.data());
    std::vector<bool> m = mask ? *mask : std::vector<bool>(N, true);
    detail::attach(out, {a}, [oi, ai, bv, m, N, D, count] {
        ai->ensure_grad();
        T g = T(2) * oi->grad[0] / static_cast<T>(count);
        for (int i = 0; i < N; ++i) {
            if (!m[i]) continue;
            for (int j = 0; j < D; ++j) {
                size_t o = static_cast<size_t>(i) * D + j;
                ai->grad[o] += g * (ai->data[o] - (*bv)[o]);
            }
        }
    });
    return out;
}

}  // namespace cil
