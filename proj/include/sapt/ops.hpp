// Differentiable operations over Value. Matrix products are backed by Eigen
// maps; everything else is plain loops. An op records parents and a backprop
// closure only when some input requires grad, so frozen-model inference
// builds no graph at all.
#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "sapt/value.hpp"

namespace sapt {

namespace detail {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

inline CMap cmap(const std::vector<double>& v, std::size_t r, std::size_t c) {
    return CMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
inline MMap mmap(std::vector<double>& v, std::size_t r, std::size_t c) {
    return MMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

inline bool any_requires_grad(std::initializer_list<const Value*> vs) {
    for (const Value* v : vs) {
        if (v->requires_grad()) return true;
    }
    return false;
}

inline Value make_result(Shape shape, std::vector<double> data, bool requires_grad) {
    auto v = Value::from(std::move(data), std::move(shape), requires_grad);
    return v;
}

inline void require_matrix(const Value& v, const char* who) {
    if (v.shape().size() != 2) throw DimensionError(std::string(who) + ": expected a matrix, got " + shape_str(v.shape()));
}
inline void require_vector(const Value& v, const char* who) {
    if (v.shape().size() != 1) throw DimensionError(std::string(who) + ": expected a vector, got " + shape_str(v.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// linear algebra

// a[m x k] * b[k x n] -> [m x n]
inline Value matmul(const Value& a, const Value& b) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1];
    const std::size_t k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2) {
        throw DimensionError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
    }
    bool rec = detail::any_requires_grad({&a, &b});
    std::vector<double> out(m * n);
    detail::mmap(out, m, n).noalias() = detail::cmap(a.data(), m, k) * detail::cmap(b.data(), k, n);
    Value res = detail::make_result({m, n}, std::move(out), rec);
    if (rec) {
        Node* rn = res.node();
        rn->parents = {a.ptr(), b.ptr()};
        rn->backprop = [m, k, n, ap = a.ptr(), bp = b.ptr()](Node& self) {
            auto g = detail::cmap(self.grad, m, n);
            if (ap->requires_grad) {
                ap->ensure_grad();
                detail::mmap(ap->grad, m, k).noalias() += g * detail::cmap(bp->data, k, n).transpose();
            }
            if (bp->requires_grad) {
                bp->ensure_grad();
                detail::mmap(bp->grad, k, n).noalias() += detail::cmap(ap->data, m, k).transpose() * g;
            }
        };
    }
    return res;
}

// a[m x k] * b[n x k]^T -> [m x n]
inline Value matmul_nt(const Value& a, const Value& b) {
    detail::require_matrix(a, "matmul_nt");
    detail::require_matrix(b, "matmul_nt");
    const std::size_t m = a.shape()[0], k = a.shape()[1];
    const std::size_t n = b.shape()[0], k2 = b.shape()[1];
    if (k != k2) {
        throw DimensionError("matmul_nt: inner dimensions disagree " + shape_str(a.shape()) + " * " + shape_str(b.shape()) + "^T");
    }
    bool rec = detail::any_requires_grad({&a, &b});
    std::vector<double> out(m * n);
    detail::mmap(out, m, n).noalias() = detail::cmap(a.data(), m, k) * detail::cmap(b.data(), n, k).transpose();
    Value res = detail::make_result({m, n}, std::move(out), rec);
    if (rec) {
        Node* rn = res.node();
        rn->parents = {a.ptr(), b.ptr()};
        rn->backprop = [m, k, n, ap = a.ptr(), bp = b.ptr()](Node& self) {
            auto g = detail::cmap(self.grad, m, n);
            if (ap->requires_grad) {
                ap->ensure_grad();
                detail::mmap(ap->grad, m, k).noalias() += g * detail::cmap(bp->data, n, k);
            }
            if (bp->requires_grad) {
                bp->ensure_grad();
                detail::mmap(bp->grad, n, k).noalias() += g.transpose() * detail::cmap(ap->data, m, k);
            }
        };
    }
    return res;
}

// W[m x k] * x[k] -> [m]
inline Value matvec(const Value& w, const Value& x) {
    detail::require_matrix(w, "matvec");
    detail::require_vector(x, "matvec");
    const std::size_t m = w.shape()[0], k = w.shape()[1];
    if (x.shape()[0] != k) {
        throw DimensionError("matvec: " + shape_str(w.shape()) + " * " + shape_str(x.shape()));
    }
    bool rec = detail::any_requires_grad({&w, &x});
    std::vector<double> out(m);
    Eigen::Map<Eigen::VectorXd>(out.data(), m).noalias() =
        detail::cmap(w.data(), m, k) * Eigen::Map<const Eigen::VectorXd>(x.data().data(), k);
    Value res = detail::make_result({m}, std::move(out), rec);
    if (rec) {
        Node* rn = res.node();
        rn->parents = {w.ptr(), x.ptr()};
        rn->backprop = [m, k, wp = w.ptr(), xp = x.ptr()](Node& self) {
            Eigen::Map<const Eigen::VectorXd> g(self.grad.data(), m);
            if (wp->requires_grad) {
                wp->ensure_grad();
                detail::mmap(wp->grad, m, k).noalias() += g * Eigen::Map<const Eigen::VectorXd>(xp->data.data(), k).transpose();
            }
            if (xp->requires_grad) {
                xp->ensure_grad();
                Eigen::Map<Eigen::VectorXd>(xp->grad.data(), k).noalias() += detail::cmap(wp->data, m, k).transpose() * g;
            }
        };
    }
    return res;
}

// ---------------------------------------------------------------------------
// elementwise

inline Value add(const Value& a, const Value& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("add: shapes disagree " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    bool rec = detail::any_requires_grad({&a, &b});
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    Value res = detail::make_result(a.shape(), std::move(out), rec);
    if (rec) {
        Node* rn = res.node();
        rn->parents = {a.ptr(), b.ptr()};
        rn->backprop = [ap = a.ptr(), bp = b.ptr()](Node& self) {
            for (Node* p : {ap.get(), bp.get()}) {
                if (!p->requires_grad) continue;
                p->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
            }
        };
    }
    return res;
}

inline Value sub(const Value& a, const Value& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("sub: shapes disagree " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    bool rec = detail::any_requires_grad({&a, &b});
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    Value res = detail::make_result(a.shape(), std::move(out), rec);
    if (rec) {
        Node* rn = res.node();
        rn->parents = {a.ptr(), b.ptr()};
        rn->backprop = [ap = a.ptr(), bp = b.ptr()](Node& self) {
            if (ap->requires_grad) {
                ap->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) ap->grad[i] += self.grad[i];
            }
            if (bp->requires_grad) {
                bp->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) bp->grad[i] -= self.grad[i];
            }
        };
    }
    return res;
}

inline Value mul(const Value& a, const Value& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("mul: shapes disagree " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    bool rec = detail::any_requires_grad({&a, &b});
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    Value res = detail::make_result(a.shape(), std::move(out), rec);
    if (rec) {
        Node* rn = res.node();
        rn->parents = {a.ptr(), b.ptr()};
        rn->backprop = [ap = a.ptr(), bp = b.ptr()](Node& self) {
            if (ap->requires_grad) {
                ap->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) ap->grad[i] += self.grad[i] * bp->data[i];
            }
            if (bp->requires_grad) {
                bp->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) bp->grad[i] += self.grad[i] * ap->data[i];
            }
        };
    }
    return res;
}

inline Value scale(const Value& a, double c) {
    bool rec = a.requires_grad();
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    Value res = detail::make_result(a.shape(), std::move(out), rec);
    if (rec) {
        Node* rn = res.node();
        rn->parents = {a.ptr()};
        rn->backprop = [c, ap = a.ptr()](Node& self) {
            ap->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) ap->grad[i] += self.grad[i] * c;
        };
    }
    return res;
}

// a + c * b, shapes equal.
inline Value add_scaled(const Value& a, const Value& b, double c) {
    if (a.shape() != b.shape()) {
        throw DimensionError("add_scaled: shapes disagree " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    bool rec = detail::any_requires_grad({&a, &b});
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + c * b.data()[i];
    Value res = detail::make_result(a.shape(), std::move(out), rec);
    if (rec) {
        Node* rn = res.node();
        rn->parents = {a.ptr(), b.ptr()};
        rn->backprop = [c, ap = a.ptr(), bp = b.ptr()](Node& self) {
            if (ap->requires_grad) {
                ap->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) ap->grad[i] += self.grad[i];
            }
            if (bp->requires_grad) {
                bp->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) bp->grad[i] += self.grad[i] * c;
            }
        };
    }
    return res;
}

inline Value silu(const Value& a) {
    bool rec = a.requires_grad();
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double x = a.data()[i];
        out[i] = x / (1.0 + std::exp(-x));
    }
    Value res = detail::make_result(a.shape(), std::move(out), rec);
    if (rec) {
        Node* rn = res.node();
        rn->parents = {a.ptr()};
        rn->backprop = [ap = a.ptr()](Node& self) {
            ap->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                double x = ap->data[i];
                double s = 1.0 / (1.0 + std::exp(-x));
                ap->grad[i] += self.grad[i] * s * (1.0 + x * (1.0 - s));
            }
        };
    }
    return res;
}

inline Value sum(const Value& a) {
    bool rec = a.requires_grad();
    double total = 0.0;
    for (double x : a.data()) total += x;
    Value res = detail::make_result({}, {total}, rec);
    if (rec) {
        Node* rn = res.node();
        rn->parents = {a.ptr()};
        rn->backprop = [ap = a.ptr()](Node& self) {
            ap->ensure_grad();
            for (double& g : ap->grad) g += self.grad[0];
        };
    }
    return res;
}

// ---------------------------------------------------------------------------
// structural ops

// Stack a[p x d] on top of b[m x d].
inline Value concat_rows(const Value& a, const Value& b) {
    detail::require_matrix(a, "concat_rows");
    detail::require_matrix(b, "concat_rows");
    if (a.shape()[1] != b.shape()[1]) {
        throw DimensionError("concat_rows: column counts disagree");
    }
    const std::size_t p = a.shape()[0], m = b.shape()[0], d = a.shape()[1];
    bool rec = detail::any_requires_grad({&a, &b});
    std::vector<double> out;
    out.reserve((p + m) * d);
    out.insert(out.end(), a.data().begin(), a.data().end());
    out.insert(out.end(), b.data().begin(), b.data().end());
    Value res = detail::make_result({p + m, d}, std::move(out), rec);
    if (rec) {
        Node* rn = res.node();
        rn->parents = {a.ptr(), b.ptr()};
        rn->backprop = [p, m, d, ap = a.ptr(), bp = b.ptr()](Node& self) {
            if (ap->requires_grad) {
                ap->ensure_grad();
                for (std::size_t i = 0; i < p * d; ++i) ap->grad[i] += self.grad[i];
            }
            if (bp->requires_grad) {
                bp->ensure_grad();
                for (std::size_t i = 0; i < m * d; ++i) bp->grad[i] += self.grad[p * d + i];
            }
        };
    }
    return res;
}

// Columns [c0, c1) of a matrix.
inline Value slice_cols(const Value& a, std::size_t c0, std::size_t c1) {
    detail::require_matrix(a, "slice_cols");
    const std::size_t m = a.shape()[0], d = a.shape()[1];
    if (c0 >= c1 || c1 > d) throw DimensionError("slice_cols: bad column range");
    const std::size_t w = c1 - c0;
    bool rec = a.requires_grad();
    std::vector<double> out(m * w);
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < w; ++c) out[r * w + c] = a.data()[r * d + c0 + c];
    }
    Value res = detail::make_result({m, w}, std::move(out), rec);
    if (rec) {
        Node* rn = res.node();
        rn->parents = {a.ptr()};
        rn->backprop = [m, d, c0, w, ap = a.ptr()](Node& self) {
            ap->ensure_grad();
            for (std::size_t r = 0; r < m; ++r) {
                for (std::size_t c = 0; c < w; ++c) ap->grad[r * d + c0 + c] += self.grad[r * w + c];
            }
        };
    }
    return res;
}

// Concatenate equal-height matrices side by side.
inline Value concat_cols(const std::vector<Value>& parts) {
    if (parts.empty()) throw UsageError("concat_cols: no parts");
    const std::size_t m = parts[0].shape()[0];
    std::size_t d = 0;
    bool rec = false;
    for (const Value& p : parts) {
        detail::require_matrix(p, "concat_cols");
        if (p.shape()[0] != m) throw DimensionError("concat_cols: row counts disagree");
        d += p.shape()[1];
        rec = rec || p.requires_grad();
    }
    std::vector<double> out(m * d);
    std::size_t off = 0;
    for (const Value& p : parts) {
        const std::size_t w = p.shape()[1];
        for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t c = 0; c < w; ++c) out[r * d + off + c] = p.data()[r * w + c];
        }
        off += w;
    }
    Value res = detail::make_result({m, d}, std::move(out), rec);
    if (rec) {
        Node* rn = res.node();
        std::vector<NodePtr> ps;
        ps.reserve(parts.size());
        for (const Value& p : parts) ps.push_back(p.ptr());
        rn->parents = ps;
        rn->backprop = [m, d, ps](Node& self) {
            std::size_t off = 0;
            for (const NodePtr& p : ps) {
                const std::size_t w = p->shape[1];
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::size_t r = 0; r < m; ++r) {
                        for (std::size_t c = 0; c < w; ++c) p->grad[r * w + c] += self.grad[r * d + off + c];
                    }
                }
                off += w;
            }
        };
    }
    return res;
}

// out = sum_i w[i] * xs[i]; all xs share one shape. Terms with w[i] == 0 are
// skipped in the forward accumulation, which makes a one-hot combination
// reproduce the selected tensor bit-for-bit.
inline Value weighted_sum(const Value& w, const std::vector<Value>& xs) {
    detail::require_vector(w, "weighted_sum");
    if (w.shape()[0] != xs.size()) {
        throw DimensionError("weighted_sum: weight count " + std::to_string(w.shape()[0]) +
                             " != tensor count " + std::to_string(xs.size()));
    }
    if (xs.empty()) throw UsageError("weighted_sum: no tensors");
    const Shape& shape = xs[0].shape();
    bool rec = w.requires_grad();
    for (const Value& x : xs) {
        if (x.shape() != shape) throw DimensionError("weighted_sum: tensor shapes disagree");
        rec = rec || x.requires_grad();
    }
    std::vector<double> out(xs[0].numel(), 0.0);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double wi = w.data()[i];
        if (wi == 0.0) continue;
        const auto& src = xs[i].data();
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += wi * src[j];
    }
    Value res = detail::make_result(shape, std::move(out), rec);
    if (rec) {
        Node* rn = res.node();
        std::vector<NodePtr> ps;
        ps.reserve(xs.size() + 1);
        ps.push_back(w.ptr());
        for (const Value& x : xs) ps.push_back(x.ptr());
        rn->parents = ps;
        rn->backprop = [wp = w.ptr(), ps](Node& self) {
            if (wp->requires_grad) {
                wp->ensure_grad();
                for (std::size_t i = 1; i < ps.size(); ++i) {
                    double dot = 0.0;
                    const auto& x = ps[i]->data;
                    for (std::size_t j = 0; j < x.size(); ++j) dot += x[j] * self.grad[j];
                    wp->grad[i - 1] += dot;
                }
            }
            for (std::size_t i = 1; i < ps.size(); ++i) {
                Node* x = ps[i].get();
                if (!x->requires_grad) continue;
                const double wi = wp->data[i - 1];
                if (wi == 0.0) continue;
                x->ensure_grad();
                for (std::size_t j = 0; j < x->grad.size(); ++j) x->grad[j] += wi * self.grad[j];
            }
        };
    }
    return res;
}

// logits_i = q . k_i over a list of key vectors.
inline Value dot_stack(const Value& q, const std::vector<Value>& keys) {
    detail::require_vector(q, "dot_stack");
    if (keys.empty()) throw UsageError("dot_stack: no keys");
    const std::size_t d = q.shape()[0];
    bool rec = q.requires_grad();
    for (const Value& k : keys) {
        detail::require_vector(k, "dot_stack");
        if (k.shape()[0] != d) throw DimensionError("dot_stack: key dimension disagrees with query");
        rec = rec || k.requires_grad();
    }
    std::vector<double> out(keys.size(), 0.0);
    for (std::size_t i = 0; i < keys.size(); ++i) {
        const auto& k = keys[i].data();
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += q.data()[j] * k[j];
        out[i] = s;
    }
    Value res = detail::make_result({keys.size()}, std::move(out), rec);
    if (rec) {
        Node* rn = res.node();
        std::vector<NodePtr> ps;
        ps.reserve(keys.size() + 1);
        ps.push_back(q.ptr());
        for (const Value& k : keys) ps.push_back(k.ptr());
        rn->parents = ps;
        rn->backprop = [d, qp = q.ptr(), ps](Node& self) {
            if (qp->requires_grad) {
                qp->ensure_grad();
                for (std::size_t i = 1; i < ps.size(); ++i) {
                    const double g = self.grad[i - 1];
                    const auto& k = ps[i]->data;
                    for (std::size_t j = 0; j < d; ++j) qp->grad[j] += g * k[j];
                }
            }
            for (std::size_t i = 1; i < ps.size(); ++i) {
                Node* k = ps[i].get();
                if (!k->requires_grad) continue;
                k->ensure_grad();
                const double g = self.grad[i - 1];
                for (std::size_t j = 0; j < d; ++j) k->grad[j] += g * qp->data[j];
            }
        };
    }
    return res;
}

// Rows of an embedding table selected by token id.
inline Value embedding_rows(const Value& table, const std::vector<int>& ids) {
    detail::require_matrix(table, "embedding_rows");
    const std::size_t v = table.shape()[0], d = table.shape()[1];
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= v) {
            throw InputError("embedding_rows: token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(v));
        }
    }
    bool rec = table.requires_grad();
    std::vector<double> out(ids.size() * d);
    for (std::size_t r = 0; r < ids.size(); ++r) {
        const double* src = table.data().data() + static_cast<std::size_t>(ids[r]) * d;
        std::copy(src, src + d, out.data() + r * d);
    }
    Value res = detail::make_result({ids.size(), d}, std::move(out), rec);
    if (rec) {
        Node* rn = res.node();
        rn->parents = {table.ptr()};
        rn->backprop = [d, ids, tp = table.ptr()](Node& self) {
            tp->ensure_grad();
            for (std::size_t r = 0; r < ids.size(); ++r) {
                double* dst = tp->grad.data() + static_cast<std::size_t>(ids[r]) * d;
                const double* g = self.grad.data() + r * d;
                for (std::size_t j = 0; j < d; ++j) dst[j] += g[j];
            }
        };
    }
    return res;
}

// ---------------------------------------------------------------------------
// normalization / attention primitives

// softmax(x / T) over a vector, computed with max subtraction.
inline Value softmax(const Value& x, double temperature) {
    detail::require_vector(x, "softmax");
    if (x.shape()[0] == 0) throw DimensionError("softmax: empty input");
    if (!(temperature > 0.0)) throw ParameterError("softmax: temperature must be positive");
    const std::size_t n = x.shape()[0];
    bool rec = x.requires_grad();
    std::vector<double> out(n);
    double mx = x.data()[0];
    for (double v : x.data()) mx = std::max(mx, v);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::exp((x.data()[i] - mx) / temperature);
        z += out[i];
    }
    for (double& v : out) v /= z;
    detail::check_finite(out, "softmax");
    Value res = detail::make_result({n}, std::move(out), rec);
    if (rec) {
        Node* rn = res.node();
        rn->parents = {x.ptr()};
        rn->backprop = [temperature, xp = x.ptr()](Node& self) {
            xp->ensure_grad();
            double inner = 0.0;
            for (std::size_t i = 0; i < self.data.size(); ++i) inner += self.grad[i] * self.data[i];
            for (std::size_t i = 0; i < self.data.size(); ++i) {
                xp->grad[i] += self.data[i] * (self.grad[i] - inner) / temperature;
            }
        };
    }
    return res;
}

// Row-wise softmax over the causal prefix: row i is normalized over columns
// 0..i, remaining columns are exactly zero.
inline Value causal_softmax(const Value& scores) {
    detail::require_matrix(scores, "causal_softmax");
    const std::size_t n = scores.shape()[0];
    if (scores.shape()[1] != n) throw DimensionError("causal_softmax: scores must be square");
    bool rec = scores.requires_grad();
    std::vector<double> out(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = scores.data().data() + i * n;
        double mx = row[0];
        for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
            out[i * n + j] = std::exp(row[j] - mx);
            z += out[i * n + j];
        }
        for (std::size_t j = 0; j <= i; ++j) out[i * n + j] /= z;
    }
    detail::check_finite(out, "causal_softmax");
    Value res = detail::make_result({n, n}, std::move(out), rec);
    if (rec) {
        Node* rn = res.node();
        rn->parents = {scores.ptr()};
        rn->backprop = [n, sp = scores.ptr()](Node& self) {
            sp->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                const double* p = self.data.data() + i * n;
                const double* g = self.grad.data() + i * n;
                double inner = 0.0;
                for (std::size_t j = 0; j <= i; ++j) inner += g[j] * p[j];
                double* dst = sp->grad.data() + i * n;
                for (std::size_t j = 0; j <= i; ++j) dst[j] += p[j] * (g[j] - inner);
            }
        };
    }
    return res;
}

// LayerNorm over the last dimension with population variance; accepts a
// vector [d] or a matrix [m x d] normalized row by row.
inline Value layer_norm(const Value& x, const Value& gamma, const Value& beta, double eps) {
    detail::require_vector(gamma, "layer_norm");
    detail::require_vector(beta, "layer_norm");
    const std::size_t rank = x.shape().size();
    if (rank != 1 && rank != 2) throw DimensionError("layer_norm: expected vector or matrix");
    const std::size_t d = x.shape()[rank - 1];
    const std::size_t m = rank == 2 ? x.shape()[0] : 1;
    if (d < 2) throw DimensionError("layer_norm: normalized dimension must be >= 2");
    if (gamma.shape()[0] != d || beta.shape()[0] != d) throw DimensionError("layer_norm: affine parameters must have length d");
    bool rec = detail::any_requires_grad({&x, &gamma, &beta});
    std::vector<double> out(m * d);
    std::vector<double> xhat(m * d);
    std::vector<double> inv_std(m);
    for (std::size_t r = 0; r < m; ++r) {
        const double* row = x.data().data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            double c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double s = 1.0 / std::sqrt(var + eps);
        inv_std[r] = s;
        for (std::size_t j = 0; j < d; ++j) {
            double xh = (row[j] - mean) * s;
            xhat[r * d + j] = xh;
            out[r * d + j] = xh * gamma.data()[j] + beta.data()[j];
        }
    }
    detail::check_finite(out, "layer_norm");
    Value res = detail::make_result(x.shape(), std::move(out), rec);
    if (rec) {
        Node* rn = res.node();
        rn->parents = {x.ptr(), gamma.ptr(), beta.ptr()};
        rn->backprop = [m, d, xhat = std::move(xhat), inv_std = std::move(inv_std), xp = x.ptr(), gp = gamma.ptr(),
                        bp = beta.ptr()](Node& self) {
            for (std::size_t r = 0; r < m; ++r) {
                const double* g = self.grad.data() + r * d;
                const double* xh = xhat.data() + r * d;
                if (gp->requires_grad) {
                    gp->ensure_grad();
                    for (std::size_t j = 0; j < d; ++j) gp->grad[j] += g[j] * xh[j];
                }
                if (bp->requires_grad) {
                    bp->ensure_grad();
                    for (std::size_t j = 0; j < d; ++j) bp->grad[j] += g[j];
                }
                if (xp->requires_grad) {
                    xp->ensure_grad();
                    double mean_gg = 0.0, mean_ggx = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double gg = g[j] * gp->data[j];
                        mean_gg += gg;
                        mean_ggx += gg * xh[j];
                    }
                    mean_gg /= static_cast<double>(d);
                    mean_ggx /= static_cast<double>(d);
                    double* dst = xp->grad.data() + r * d;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double gg = g[j] * gp->data[j];
                        dst[j] += (gg - mean_gg - xh[j] * mean_ggx) * inv_std[r];
                    }
                }
            }
        };
    }
    return res;
}

// Column-wise maximum over the rows of E[m x d]; the subgradient is routed to
// the first row attaining the maximum in each column.
inline Value max_pool_seq(const Value& e) {
    detail::require_matrix(e, "max_pool_seq");
    const std::size_t m = e.shape()[0], d = e.shape()[1];
    if (m == 0) throw InputError("max_pool_seq: empty sequence");
    bool rec = e.requires_grad();
    std::vector<double> out(d);
    std::vector<std::size_t> argmax(d, 0);
    for (std::size_t j = 0; j < d; ++j) {
        double best = e.data()[j];
        std::size_t best_r = 0;
        for (std::size_t r = 1; r < m; ++r) {
            const double v = e.data()[r * d + j];
            if (v > best) {
                best = v;
                best_r = r;
            }
        }
        out[j] = best;
        argmax[j] = best_r;
    }
    Value res = detail::make_result({d}, std::move(out), rec);
    if (rec) {
        Node* rn = res.node();
        rn->parents = {e.ptr()};
        rn->backprop = [d, argmax = std::move(argmax), ep = e.ptr()](Node& self) {
            ep->ensure_grad();
            for (std::size_t j = 0; j < d; ++j) ep->grad[argmax[j] * d + j] += self.grad[j];
        };
    }
    return res;
}

// D_KL(p || q) = sum_i p_i ln(p_i / q_i) with the 0 ln 0 = 0 convention.
// Callers must smooth q so that q_i > 0 wherever p_i > 0.
inline Value kl_divergence(const Value& p, const Value& q) {
    detail::require_vector(p, "kl_divergence");
    detail::require_vector(q, "kl_divergence");
    if (p.shape() != q.shape()) throw DimensionError("kl_divergence: lengths disagree");
    const std::size_t n = p.shape()[0];
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double pi = p.data()[i], qi = q.data()[i];
        if (pi < 0.0 || qi < 0.0) throw DomainError("kl_divergence: negative probability");
        if (pi > 0.0) {
            if (qi == 0.0) throw DomainError("kl_divergence: q has zero mass where p > 0; smooth the target first");
            total += pi * std::log(pi / qi);
        }
    }
    if (!std::isfinite(total)) throw NumericError("kl_divergence: non-finite result");
    bool rec = detail::any_requires_grad({&p, &q});
    Value res = detail::make_result({}, {total}, rec);
    if (rec) {
        Node* rn = res.node();
        rn->parents = {p.ptr(), q.ptr()};
        rn->backprop = [n, pp = p.ptr(), qp = q.ptr()](Node& self) {
            const double g = self.grad[0];
            if (pp->requires_grad) {
                pp->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) {
                    const double pi = pp->data[i];
                    if (pi > 0.0) pp->grad[i] += g * (std::log(pi / qp->data[i]) + 1.0);
                }
            }
            if (qp->requires_grad) {
                qp->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) {
                    const double pi = pp->data[i];
                    if (pi > 0.0) qp->grad[i] -= g * pi / qp->data[i];
                }
            }
        };
    }
    return res;
}

// Mean negative log-likelihood over masked-in positions of logits[L x V].
inline Value cross_entropy(const Value& logits, const std::vector<int>& targets, const std::vector<std::uint8_t>& mask) {
    detail::require_matrix(logits, "cross_entropy");
    const std::size_t l = logits.shape()[0], v = logits.shape()[1];
    if (targets.size() != l || mask.size() != l) {
        throw DimensionError("cross_entropy: targets/mask length must equal the number of positions");
    }
    std::size_t active = 0;
    for (std::size_t i = 0; i < l; ++i) {
        if (!mask[i]) continue;
        ++active;
        if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) {
            throw InputError("cross_entropy: target id outside vocabulary at position " + std::to_string(i));
        }
    }
    if (active == 0) throw InputError("cross_entropy: every position is masked out");
    bool rec = logits.requires_grad();
    // Cache the stabilized log-normalizers for the backward pass.
    std::vector<double> row_max(l, 0.0), row_lse(l, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < l; ++i) {
        if (!mask[i]) continue;
        const double* row = logits.data().data() + i * v;
        double mx = row[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
        row_max[i] = mx;
        row_lse[i] = std::log(z);
        total += (mx + row_lse[i]) - row[targets[i]];
    }
    total /= static_cast<double>(active);
    if (!std::isfinite(total)) throw NumericError("cross_entropy: non-finite loss");
    Value res = detail::make_result({}, {total}, rec);
    if (rec) {
        Node* rn = res.node();
        rn->parents = {logits.ptr()};
        rn->backprop = [l, v, active, targets, mask, row_max = std::move(row_max), row_lse = std::move(row_lse),
                        lp = logits.ptr()](Node& self) {
            lp->ensure_grad();
            const double g = self.grad[0] / static_cast<double>(active);
            for (std::size_t i = 0; i < l; ++i) {
                if (!mask[i]) continue;
                const double* row = lp->data.data() + i * v;
                double* dst = lp->grad.data() + i * v;
                const double denom = row_max[i] + row_lse[i];
                for (std::size_t j = 0; j < v; ++j) {
                    const double p = std::exp(row[j] - denom);
                    dst[j] += g * (p - (static_cast<std::size_t>(targets[i]) == static_cast<std::size_t>(j) ? 1.0 : 0.0));
                }
            }
        };
    }
    return res;
}

}  // namespace sapt
