#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A computation is a DAG of shared-ptr nodes built by the free functions
// below. backward() propagates adjoints through scratch buffers and adds the
// result into the persistent .grad of parameter leaves, so repeated backward
// calls accumulate. All loops run in a fixed left-to-right order and
// reductions accumulate in double, which makes every run bit-reproducible on
// a single thread.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "labelcl/error.hpp"
#include "labelcl/tensor.hpp"

namespace labelcl {

template <typename S>
struct Node {
    Tensor<S> value;
    Tensor<S> adjoint; // scratch, valid only inside backward()
    Tensor<S> grad;    // persistent accumulator, parameters only
    bool is_param = false;
    bool needs_grad = false;
    std::string name;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backprop; // reads this->adjoint, accumulates into parents' adjoints
};

template <typename S>
using Var = std::shared_ptr<Node<S>>;

template <typename S>
void check_finite(const Tensor<S>& t, const char* op) {
    if (!t.all_finite())
        throw NumericError(std::string(op) + " produced a non-finite value");
}

template <typename S>
Var<S> constant(Tensor<S> v) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(v);
    return n;
}

template <typename S>
Var<S> make_parameter(std::string name, Tensor<S> v) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(v);
    n->grad = Tensor<S>::zeros(n->value.shape);
    n->is_param = true;
    n->needs_grad = true;
    n->name = std::move(name);
    return n;
}

template <typename S>
Var<S> detach(const Var<S>& v) {
    return constant(Tensor<S>(v->value));
}

namespace detail {

template <typename S>
Var<S> new_op(Tensor<S> value, std::vector<Var<S>> parents, const char* op) {
    check_finite(value, op);
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->needs_grad) n->needs_grad = true;
    return n;
}

// y(m,n) += a(m,k) * b(k,n)
template <typename S>
void matmul_nn_acc(const Tensor<S>& a, const Tensor<S>& b, Tensor<S>& y) {
    const int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    for (int64_t i = 0; i < m; ++i) {
        const S* arow = &a.data[static_cast<size_t>(i * k)];
        S* yrow = &y.data[static_cast<size_t>(i * n)];
        for (int64_t p = 0; p < k; ++p) {
            const S av = arow[p];
            const S* brow = &b.data[static_cast<size_t>(p * n)];
            for (int64_t j = 0; j < n; ++j) yrow[j] += av * brow[j];
        }
    }
}

// y(m,n) += a(k,m)^T * b(k,n)
template <typename S>
void matmul_tn_acc(const Tensor<S>& a, const Tensor<S>& b, Tensor<S>& y) {
    const int64_t k = a.shape[0], m = a.shape[1], n = b.shape[1];
    for (int64_t p = 0; p < k; ++p) {
        const S* arow = &a.data[static_cast<size_t>(p * m)];
        const S* brow = &b.data[static_cast<size_t>(p * n)];
        for (int64_t i = 0; i < m; ++i) {
            const S av = arow[i];
            S* yrow = &y.data[static_cast<size_t>(i * n)];
            for (int64_t j = 0; j < n; ++j) yrow[j] += av * brow[j];
        }
    }
}

// y(m,n) += a(m,k) * b(n,k)^T
template <typename S>
void matmul_nt_acc(const Tensor<S>& a, const Tensor<S>& b, Tensor<S>& y) {
    const int64_t m = a.shape[0], k = a.shape[1], n = b.shape[0];
    for (int64_t i = 0; i < m; ++i) {
        const S* arow = &a.data[static_cast<size_t>(i * k)];
        for (int64_t j = 0; j < n; ++j) {
            const S* brow = &b.data[static_cast<size_t>(j * k)];
            S acc = S(0);
            for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            y.data[static_cast<size_t>(i * n + j)] += acc;
        }
    }
}

inline std::pair<int64_t, int64_t> rows_and_last(const Shape& shape) {
    int64_t last = shape.empty() ? 1 : shape.back();
    int64_t rows = 1;
    for (size_t i = 0; i + 1 < shape.size(); ++i) rows *= shape[i];
    return {rows, last};
}

} // namespace detail

// ---- elementwise -----------------------------------------------------------

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
    require_same_shape(a->value, b->value, "add");
    Tensor<S> out = a->value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
    auto n = detail::new_op(std::move(out), {a, b}, "add");
    Node<S>*self = n.get(), *pa = a.get(), *pb = b.get();
    n->backprop = [self, pa, pb] {
        for (int64_t i = 0; i < self->adjoint.numel(); ++i) {
            pa->adjoint[i] += self->adjoint[i];
            pb->adjoint[i] += self->adjoint[i];
        }
    };
    return n;
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
    require_same_shape(a->value, b->value, "sub");
    Tensor<S> out = a->value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
    auto n = detail::new_op(std::move(out), {a, b}, "sub");
    Node<S>*self = n.get(), *pa = a.get(), *pb = b.get();
    n->backprop = [self, pa, pb] {
        for (int64_t i = 0; i < self->adjoint.numel(); ++i) {
            pa->adjoint[i] += self->adjoint[i];
            pb->adjoint[i] -= self->adjoint[i];
        }
    };
    return n;
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
    require_same_shape(a->value, b->value, "mul");
    Tensor<S> out = a->value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
    auto n = detail::new_op(std::move(out), {a, b}, "mul");
    Node<S>*self = n.get(), *pa = a.get(), *pb = b.get();
    n->backprop = [self, pa, pb] {
        for (int64_t i = 0; i < self->adjoint.numel(); ++i) {
            pa->adjoint[i] += self->adjoint[i] * pb->value[i];
            pb->adjoint[i] += self->adjoint[i] * pa->value[i];
        }
    };
    return n;
}

template <typename S>
Var<S> scale(const Var<S>& a, S k) {
    Tensor<S> out = a->value;
    for (auto& v : out.data) v *= k;
    auto n = detail::new_op(std::move(out), {a}, "scale");
    Node<S>*self = n.get(), *pa = a.get();
    n->backprop = [self, pa, k] {
        for (int64_t i = 0; i < self->adjoint.numel(); ++i) pa->adjoint[i] += self->adjoint[i] * k;
    };
    return n;
}

template <typename S>
Var<S> add_const(const Var<S>& a, S c) {
    Tensor<S> out = a->value;
    for (auto& v : out.data) v += c;
    auto n = detail::new_op(std::move(out), {a}, "add_const");
    Node<S>*self = n.get(), *pa = a.get();
    n->backprop = [self, pa] {
        for (int64_t i = 0; i < self->adjoint.numel(); ++i) pa->adjoint[i] += self->adjoint[i];
    };
    return n;
}

template <typename S>
Var<S> relu(const Var<S>& a) {
    Tensor<S> out = a->value;
    for (auto& v : out.data) v = v > S(0) ? v : S(0);
    auto n = detail::new_op(std::move(out), {a}, "relu");
    Node<S>*self = n.get(), *pa = a.get();
    n->backprop = [self, pa] {
        for (int64_t i = 0; i < self->adjoint.numel(); ++i)
            if (pa->value[i] > S(0)) pa->adjoint[i] += self->adjoint[i];
    };
    return n;
}

template <typename S>
Var<S> gelu(const Var<S>& a) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    Tensor<S> out = a->value;
    for (auto& v : out.data) {
        double x = static_cast<double>(v);
        v = static_cast<S>(x * 0.5 * std::erfc(-x * inv_sqrt2));
    }
    auto n = detail::new_op(std::move(out), {a}, "gelu");
    Node<S>*self = n.get(), *pa = a.get();
    n->backprop = [self, pa] {
        for (int64_t i = 0; i < self->adjoint.numel(); ++i) {
            double x = static_cast<double>(pa->value[i]);
            double cdf = 0.5 * std::erfc(-x * inv_sqrt2);
            double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            pa->adjoint[i] += self->adjoint[i] * static_cast<S>(cdf + x * pdf);
        }
    };
    return n;
}

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
    Tensor<S> out = a->value;
    for (auto& v : out.data) {
        double x = static_cast<double>(v);
        v = static_cast<S>(x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)));
    }
    auto n = detail::new_op(std::move(out), {a}, "sigmoid");
    Node<S>*self = n.get(), *pa = a.get();
    n->backprop = [self, pa] {
        for (int64_t i = 0; i < self->adjoint.numel(); ++i) {
            S y = self->value[i];
            pa->adjoint[i] += self->adjoint[i] * y * (S(1) - y);
        }
    };
    return n;
}

template <typename S>
Var<S> log_e(const Var<S>& a) {
    Tensor<S> out = a->value;
    for (int64_t i = 0; i < out.numel(); ++i) {
        if (!(out[i] > S(0)))
            throw DomainError("log: non-positive input " + std::to_string(static_cast<double>(out[i])) +
                              " at flat index " + std::to_string(i));
        out[i] = static_cast<S>(std::log(static_cast<double>(out[i])));
    }
    auto n = detail::new_op(std::move(out), {a}, "log");
    Node<S>*self = n.get(), *pa = a.get();
    n->backprop = [self, pa] {
        for (int64_t i = 0; i < self->adjoint.numel(); ++i)
            pa->adjoint[i] += self->adjoint[i] / pa->value[i];
    };
    return n;
}

template <typename S>
Var<S> exp_e(const Var<S>& a) {
    Tensor<S> out = a->value;
    for (auto& v : out.data) v = static_cast<S>(std::exp(static_cast<double>(v)));
    auto n = detail::new_op(std::move(out), {a}, "exp");
    Node<S>*self = n.get(), *pa = a.get();
    n->backprop = [self, pa] {
        for (int64_t i = 0; i < self->adjoint.numel(); ++i)
            pa->adjoint[i] += self->adjoint[i] * self->value[i];
    };
    return n;
}

// Gradient passes through untouched entries only; clamped entries get zero.
template <typename S>
Var<S> clamp(const Var<S>& a, S lo, S hi) {
    Tensor<S> out = a->value;
    for (auto& v : out.data) v = v < lo ? lo : (v > hi ? hi : v);
    auto n = detail::new_op(std::move(out), {a}, "clamp");
    Node<S>*self = n.get(), *pa = a.get();
    n->backprop = [self, pa, lo, hi] {
        for (int64_t i = 0; i < self->adjoint.numel(); ++i)
            if (pa->value[i] >= lo && pa->value[i] <= hi) pa->adjoint[i] += self->adjoint[i];
    };
    return n;
}

// ---- linear algebra ---------------------------------------------------------

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
    require_rank(a->value, 2, "matmul lhs");
    require_rank(b->value, 2, "matmul rhs");
    if (a->value.cols() != b->value.rows())
        throw ShapeError("matmul: inner dimensions of " + shape_str(a->value.shape) + " and " +
                         shape_str(b->value.shape) + " differ");
    Tensor<S> out({a->value.rows(), b->value.cols()});
    detail::matmul_nn_acc(a->value, b->value, out);
    auto n = detail::new_op(std::move(out), {a, b}, "matmul");
    Node<S>*self = n.get(), *pa = a.get(), *pb = b.get();
    n->backprop = [self, pa, pb] {
        detail::matmul_nt_acc(self->adjoint, pb->value, pa->adjoint); // dA = G B^T
        detail::matmul_tn_acc(pa->value, self->adjoint, pb->adjoint); // dB = A^T G
    };
    return n;
}

template <typename S>
Var<S> transpose(const Var<S>& a) {
    require_rank(a->value, 2, "transpose");
    const int64_t m = a->value.rows(), c = a->value.cols();
    Tensor<S> out({c, m});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < c; ++j) out.at(j, i) = a->value.at(i, j);
    auto n = detail::new_op(std::move(out), {a}, "transpose");
    Node<S>*self = n.get(), *pa = a.get();
    n->backprop = [self, pa, m, c] {
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < c; ++j) pa->adjoint.at(i, j) += self->adjoint.at(j, i);
    };
    return n;
}

// a[..., j] + b[j] broadcast over all leading axes.
template <typename S>
Var<S> add_bias(const Var<S>& a, const Var<S>& b) {
    require_rank(b->value, 1, "add_bias bias");
    auto [rows, last] = detail::rows_and_last(a->value.shape);
    if (last != b->value.numel())
        throw ShapeError("add_bias: trailing axis of " + shape_str(a->value.shape) +
                         " does not match bias " + shape_str(b->value.shape));
    Tensor<S> out = a->value;
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < last; ++j) out[r * last + j] += b->value[j];
    auto n = detail::new_op(std::move(out), {a, b}, "add_bias");
    Node<S>*self = n.get(), *pa = a.get(), *pb = b.get();
    n->backprop = [self, pa, pb, rows, last] {
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < last; ++j) {
                pa->adjoint[r * last + j] += self->adjoint[r * last + j];
                pb->adjoint[j] += self->adjoint[r * last + j];
            }
    };
    return n;
}

// ---- shape ops --------------------------------------------------------------

template <typename S>
Var<S> reshape(const Var<S>& a, Shape new_shape) {
    if (shape_numel(new_shape) != a->value.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a->value.shape) + " as " +
                         shape_str(new_shape));
    Tensor<S> out(std::move(new_shape), a->value.data);
    auto n = detail::new_op(std::move(out), {a}, "reshape");
    Node<S>*self = n.get(), *pa = a.get();
    n->backprop = [self, pa] {
        for (int64_t i = 0; i < self->adjoint.numel(); ++i) pa->adjoint[i] += self->adjoint[i];
    };
    return n;
}

template <typename S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: empty input list");
    const int64_t c = parts[0]->value.cols();
    int64_t m = 0;
    for (const auto& p : parts) {
        require_rank(p->value, 2, "concat_rows");
        if (p->value.cols() != c)
            throw ShapeError("concat_rows: column counts differ: " + shape_str(parts[0]->value.shape) +
                             " vs " + shape_str(p->value.shape));
        m += p->value.rows();
    }
    Tensor<S> out({m, c});
    int64_t row = 0;
    for (const auto& p : parts) {
        std::copy(p->value.data.begin(), p->value.data.end(), out.data.begin() + row * c);
        row += p->value.rows();
    }
    auto n = detail::new_op(std::move(out), parts, "concat_rows");
    Node<S>* self = n.get();
    std::vector<Node<S>*> raw;
    raw.reserve(parts.size());
    for (const auto& p : parts) raw.push_back(p.get());
    n->backprop = [self, raw, c] {
        int64_t row = 0;
        for (Node<S>* p : raw) {
            const int64_t pr = p->value.rows();
            for (int64_t i = 0; i < pr * c; ++i) p->adjoint[i] += self->adjoint[row * c + i];
            row += pr;
        }
    };
    return n;
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: empty input list");
    const int64_t m = parts[0]->value.rows();
    int64_t c = 0;
    for (const auto& p : parts) {
        require_rank(p->value, 2, "concat_cols");
        if (p->value.rows() != m)
            throw ShapeError("concat_cols: row counts differ: " + shape_str(parts[0]->value.shape) +
                             " vs " + shape_str(p->value.shape));
        c += p->value.cols();
    }
    Tensor<S> out({m, c});
    int64_t col = 0;
    for (const auto& p : parts) {
        const int64_t pc = p->value.cols();
        for (int64_t i = 0; i < m; ++i)
            std::copy(p->value.data.begin() + i * pc, p->value.data.begin() + (i + 1) * pc,
                      out.data.begin() + i * c + col);
        col += pc;
    }
    auto n = detail::new_op(std::move(out), parts, "concat_cols");
    Node<S>* self = n.get();
    std::vector<Node<S>*> raw;
    raw.reserve(parts.size());
    for (const auto& p : parts) raw.push_back(p.get());
    n->backprop = [self, raw, m, c] {
        int64_t col = 0;
        for (Node<S>* p : raw) {
            const int64_t pc = p->value.cols();
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < pc; ++j)
                    p->adjoint[i * pc + j] += self->adjoint[i * c + col + j];
            col += pc;
        }
    };
    return n;
}

template <typename S>
Var<S> slice_cols(const Var<S>& a, int64_t c0, int64_t c1) {
    require_rank(a->value, 2, "slice_cols");
    const int64_t m = a->value.rows(), c = a->value.cols();
    if (c0 < 0 || c1 > c || c0 >= c1)
        throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") invalid for " + shape_str(a->value.shape));
    const int64_t w = c1 - c0;
    Tensor<S> out({m, w});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < w; ++j) out.at(i, j) = a->value.at(i, c0 + j);
    auto n = detail::new_op(std::move(out), {a}, "slice_cols");
    Node<S>*self = n.get(), *pa = a.get();
    n->backprop = [self, pa, m, w, c0] {
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < w; ++j) pa->adjoint.at(i, c0 + j) += self->adjoint.at(i, j);
    };
    return n;
}

template <typename S>
Var<S> select_rows(const Var<S>& a, std::vector<int64_t> idx) {
    require_rank(a->value, 2, "select_rows");
    const int64_t m = a->value.rows(), c = a->value.cols();
    for (int64_t i : idx)
        if (i < 0 || i >= m)
            throw ShapeError("select_rows: index " + std::to_string(i) + " out of range for " +
                             shape_str(a->value.shape));
    Tensor<S> out({static_cast<int64_t>(idx.size()), c});
    for (size_t r = 0; r < idx.size(); ++r)
        std::copy(a->value.data.begin() + idx[r] * c, a->value.data.begin() + (idx[r] + 1) * c,
                  out.data.begin() + static_cast<int64_t>(r) * c);
    auto n = detail::new_op(std::move(out), {a}, "select_rows");
    Node<S>*self = n.get(), *pa = a.get();
    n->backprop = [self, pa, idx = std::move(idx), c] {
        for (size_t r = 0; r < idx.size(); ++r)
            for (int64_t j = 0; j < c; ++j)
                pa->adjoint.at(idx[r], j) += self->adjoint.at(static_cast<int64_t>(r), j);
    };
    return n;
}

template <typename S>
Var<S> tile_rows(const Var<S>& a, int64_t times) {
    require_rank(a->value, 2, "tile_rows");
    if (times < 1) throw ContractError("tile_rows: times must be >= 1");
    const int64_t m = a->value.rows(), c = a->value.cols();
    Tensor<S> out({m * times, c});
    for (int64_t t = 0; t < times; ++t)
        std::copy(a->value.data.begin(), a->value.data.end(), out.data.begin() + t * m * c);
    auto n = detail::new_op(std::move(out), {a}, "tile_rows");
    Node<S>*self = n.get(), *pa = a.get();
    n->backprop = [self, pa, times, m, c] {
        for (int64_t t = 0; t < times; ++t)
            for (int64_t i = 0; i < m * c; ++i) pa->adjoint[i] += self->adjoint[t * m * c + i];
    };
    return n;
}

// ---- last-axis ops ----------------------------------------------------------

template <typename S>
Var<S> softmax_rows(const Var<S>& a) {
    auto [rows, last] = detail::rows_and_last(a->value.shape);
    if (last < 1) throw ShapeError("softmax_rows: empty trailing axis in " + shape_str(a->value.shape));
    Tensor<S> out = a->value;
    for (int64_t r = 0; r < rows; ++r) {
        S* x = &out.data[static_cast<size_t>(r * last)];
        S mx = x[0];
        for (int64_t j = 1; j < last; ++j) mx = x[j] > mx ? x[j] : mx;
        double sum = 0.0;
        for (int64_t j = 0; j < last; ++j) {
            double e = std::exp(static_cast<double>(x[j] - mx));
            x[j] = static_cast<S>(e);
            sum += e;
        }
        for (int64_t j = 0; j < last; ++j) x[j] = static_cast<S>(static_cast<double>(x[j]) / sum);
    }
    auto n = detail::new_op(std::move(out), {a}, "softmax_rows");
    Node<S>*self = n.get(), *pa = a.get();
    n->backprop = [self, pa, rows = rows, last = last] {
        for (int64_t r = 0; r < rows; ++r) {
            const S* y = &self->value.data[static_cast<size_t>(r * last)];
            const S* g = &self->adjoint.data[static_cast<size_t>(r * last)];
            double dot = 0.0;
            for (int64_t j = 0; j < last; ++j) dot += static_cast<double>(g[j]) * static_cast<double>(y[j]);
            S* d = &pa->adjoint.data[static_cast<size_t>(r * last)];
            for (int64_t j = 0; j < last; ++j)
                d[j] += y[j] * (g[j] - static_cast<S>(dot));
        }
    };
    return n;
}

template <typename S>
Var<S> l2_normalize_rows(const Var<S>& a) {
    auto [rows, last] = detail::rows_and_last(a->value.shape);
    Tensor<S> out = a->value;
    std::vector<double> inv_norm(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const S* x = &a->value.data[static_cast<size_t>(r * last)];
        double sq = 0.0;
        for (int64_t j = 0; j < last; ++j) sq += static_cast<double>(x[j]) * static_cast<double>(x[j]);
        if (sq <= 0.0)
            throw DomainError("l2_normalize: zero-norm vector at row " + std::to_string(r));
        double inv = 1.0 / std::sqrt(sq);
        inv_norm[static_cast<size_t>(r)] = inv;
        S* o = &out.data[static_cast<size_t>(r * last)];
        for (int64_t j = 0; j < last; ++j) o[j] = static_cast<S>(static_cast<double>(x[j]) * inv);
    }
    auto n = detail::new_op(std::move(out), {a}, "l2_normalize");
    Node<S>*self = n.get(), *pa = a.get();
    n->backprop = [self, pa, rows = rows, last = last, inv_norm = std::move(inv_norm)] {
        for (int64_t r = 0; r < rows; ++r) {
            const S* y = &self->value.data[static_cast<size_t>(r * last)];
            const S* g = &self->adjoint.data[static_cast<size_t>(r * last)];
            double dot = 0.0;
            for (int64_t j = 0; j < last; ++j) dot += static_cast<double>(g[j]) * static_cast<double>(y[j]);
            const double inv = inv_norm[static_cast<size_t>(r)];
            S* d = &pa->adjoint.data[static_cast<size_t>(r * last)];
            for (int64_t j = 0; j < last; ++j)
                d[j] += static_cast<S>((static_cast<double>(g[j]) - dot * static_cast<double>(y[j])) * inv);
        }
    };
    return n;
}

// Layer normalization over the trailing axis with learnable gain and bias.
template <typename S>
Var<S> layer_norm(const Var<S>& a, const Var<S>& gain, const Var<S>& bias, double eps = 1e-5) {
    auto [rows, last] = detail::rows_and_last(a->value.shape);
    require_rank(gain->value, 1, "layer_norm gain");
    require_rank(bias->value, 1, "layer_norm bias");
    if (gain->value.numel() != last || bias->value.numel() != last)
        throw ShapeError("layer_norm: gain/bias size does not match trailing axis of " +
                         shape_str(a->value.shape));
    Tensor<S> out(a->value.shape);
    Tensor<S> xhat(a->value.shape);
    std::vector<double> inv_std(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const S* x = &a->value.data[static_cast<size_t>(r * last)];
        double mean = 0.0;
        for (int64_t j = 0; j < last; ++j) mean += static_cast<double>(x[j]);
        mean /= static_cast<double>(last);
        double var = 0.0;
        for (int64_t j = 0; j < last; ++j) {
            double dxj = static_cast<double>(x[j]) - mean;
            var += dxj * dxj;
        }
        var /= static_cast<double>(last);
        double inv = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(r)] = inv;
        for (int64_t j = 0; j < last; ++j) {
            double h = (static_cast<double>(x[j]) - mean) * inv;
            xhat[r * last + j] = static_cast<S>(h);
            out[r * last + j] = static_cast<S>(h * static_cast<double>(gain->value[j]) +
                                               static_cast<double>(bias->value[j]));
        }
    }
    auto n = detail::new_op(std::move(out), {a, gain, bias}, "layer_norm");
    Node<S>*self = n.get(), *pa = a.get(), *pg = gain.get(), *pb = bias.get();
    n->backprop = [self, pa, pg, pb, rows = rows, last = last, xhat = std::move(xhat),
                   inv_std = std::move(inv_std)] {
        for (int64_t r = 0; r < rows; ++r) {
            const S* g = &self->adjoint.data[static_cast<size_t>(r * last)];
            const S* h = &xhat.data[static_cast<size_t>(r * last)];
            double m1 = 0.0, m2 = 0.0;
            for (int64_t j = 0; j < last; ++j) {
                double gg = static_cast<double>(g[j]) * static_cast<double>(pg->value[j]);
                m1 += gg;
                m2 += gg * static_cast<double>(h[j]);
            }
            m1 /= static_cast<double>(last);
            m2 /= static_cast<double>(last);
            const double inv = inv_std[static_cast<size_t>(r)];
            for (int64_t j = 0; j < last; ++j) {
                double gg = static_cast<double>(g[j]) * static_cast<double>(pg->value[j]);
                pa->adjoint[r * last + j] +=
                    static_cast<S>((gg - m1 - static_cast<double>(h[j]) * m2) * inv);
                pg->adjoint[j] += g[j] * h[j];
                pb->adjoint[j] += g[j];
            }
        }
    };
    return n;
}

// ---- reductions -------------------------------------------------------------

template <typename S>
Var<S> sum_all(const Var<S>& a) {
    double acc = 0.0;
    for (const S& v : a->value.data) acc += static_cast<double>(v);
    auto n = detail::new_op(Tensor<S>::scalar(static_cast<S>(acc)), {a}, "sum_all");
    Node<S>*self = n.get(), *pa = a.get();
    n->backprop = [self, pa] {
        const S g = self->adjoint[0];
        for (int64_t i = 0; i < pa->adjoint.numel(); ++i) pa->adjoint[i] += g;
    };
    return n;
}

template <typename S>
Var<S> mean_all(const Var<S>& a) {
    if (a->value.numel() == 0) throw ContractError("mean_all: empty tensor");
    return scale(sum_all(a), S(1) / static_cast<S>(a->value.numel()));
}

// Reduce the trailing axis: shape (..., n) -> (...).
template <typename S>
Var<S> sum_last(const Var<S>& a) {
    if (a->value.rank() < 1) throw ShapeError("sum_last: scalar input");
    auto [rows, last] = detail::rows_and_last(a->value.shape);
    Shape out_shape(a->value.shape.begin(), a->value.shape.end() - 1);
    Tensor<S> out(out_shape);
    for (int64_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (int64_t j = 0; j < last; ++j) acc += static_cast<double>(a->value[r * last + j]);
        out[r] = static_cast<S>(acc);
    }
    auto n = detail::new_op(std::move(out), {a}, "sum_last");
    Node<S>*self = n.get(), *pa = a.get();
    n->backprop = [self, pa, rows = rows, last = last] {
        for (int64_t r = 0; r < rows; ++r) {
            const S g = self->adjoint[r];
            for (int64_t j = 0; j < last; ++j) pa->adjoint[r * last + j] += g;
        }
    };
    return n;
}

// Per-row log-sum-exp over the entries where mask != 0, computed stably with a
// detached row maximum. Rows whose mask is empty yield 0 and receive no
// gradient. The mask is a plain tensor, never differentiated.
template <typename S>
Var<S> masked_lse_rows(const Var<S>& a, const Tensor<S>& mask) {
    require_rank(a->value, 2, "masked_lse_rows");
    require_same_shape(a->value, mask, "masked_lse_rows");
    const int64_t rows = a->value.rows(), cols = a->value.cols();
    Tensor<S> out({rows});
    for (int64_t r = 0; r < rows; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t j = 0; j < cols; ++j)
            if (mask.at(r, j) != S(0)) mx = std::max(mx, static_cast<double>(a->value.at(r, j)));
        if (!std::isfinite(mx)) {
            out[r] = S(0); // empty mask row
            continue;
        }
        double sum = 0.0;
        for (int64_t j = 0; j < cols; ++j)
            if (mask.at(r, j) != S(0)) sum += std::exp(static_cast<double>(a->value.at(r, j)) - mx);
        out[r] = static_cast<S>(mx + std::log(sum));
    }
    auto n = detail::new_op(std::move(out), {a}, "masked_lse_rows");
    Node<S>*self = n.get(), *pa = a.get();
    n->backprop = [self, pa, mask, rows, cols] {
        for (int64_t r = 0; r < rows; ++r) {
            const double g = static_cast<double>(self->adjoint[r]);
            if (g == 0.0) continue;
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t j = 0; j < cols; ++j)
                if (mask.at(r, j) != S(0)) mx = std::max(mx, static_cast<double>(pa->value.at(r, j)));
            if (!std::isfinite(mx)) continue;
            double sum = 0.0;
            for (int64_t j = 0; j < cols; ++j)
                if (mask.at(r, j) != S(0)) sum += std::exp(static_cast<double>(pa->value.at(r, j)) - mx);
            for (int64_t j = 0; j < cols; ++j)
                if (mask.at(r, j) != S(0))
                    pa->adjoint.at(r, j) += static_cast<S>(
                        g * std::exp(static_cast<double>(pa->value.at(r, j)) - mx) / sum);
        }
    };
    return n;
}

// ---- backward ---------------------------------------------------------------

namespace detail {

template <typename S>
std::vector<Node<S>*> topo_order(Node<S>* root) {
    std::vector<Node<S>*> topo;
    std::unordered_map<Node<S>*, int> state; // 0 unseen, 1 open, 2 done
    std::vector<Node<S>*> stack{root};
    while (!stack.empty()) {
        Node<S>* n = stack.back();
        int& st = state[n];
        if (st == 0) {
            st = 1;
            for (const auto& p : n->parents)
                if (state[p.get()] == 0) stack.push_back(p.get());
        } else {
            stack.pop_back();
            if (st == 1) {
                st = 2;
                topo.push_back(n);
            }
        }
    }
    return topo; // parents before children
}

} // namespace detail

// Propagate d(loss)/d(node) through the graph and add the result into the
// persistent grad of every reachable parameter. Calling twice on the same
// graph doubles the parameter gradients.
template <typename S>
void backward(const Var<S>& loss) {
    if (loss->value.numel() != 1)
        throw ContractError("backward: output must be a scalar, got shape " +
                            shape_str(loss->value.shape));
    auto topo = detail::topo_order(loss.get());
    for (Node<S>* n : topo) n->adjoint = Tensor<S>::zeros(n->value.shape);
    loss->adjoint[0] = S(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node<S>* n = *it;
        if (n->backprop && n->needs_grad) n->backprop();
    }
    for (Node<S>* n : topo) {
        if (n->is_param)
            for (int64_t i = 0; i < n->adjoint.numel(); ++i) n->grad[i] += n->adjoint[i];
        n->adjoint = Tensor<S>();
    }
}

// ---- parameters -------------------------------------------------------------

template <typename S>
class ParamStore {
public:
    Var<S> add(const std::string& name, Tensor<S> init) {
        if (names_.count(name)) throw ContractError("duplicate parameter name: " + name);
        names_.insert(name);
        params_.push_back(make_parameter(name, std::move(init)));
        return params_.back();
    }

    const std::vector<Var<S>>& all() const { return params_; }

    Var<S> find(const std::string& name) const {
        for (const auto& p : params_)
            if (p->name == name) return p;
        return nullptr;
    }

    void zero_grads() {
        for (auto& p : params_)
            for (auto& v : p->grad.data) v = S(0);
    }

    int64_t total_elements() const {
        int64_t n = 0;
        for (const auto& p : params_) n += p->value.numel();
        return n;
    }

private:
    std::vector<Var<S>> params_;
    std::unordered_set<std::string> names_;
};

} // namespace labelcl
