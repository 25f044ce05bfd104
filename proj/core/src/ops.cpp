#include "resformer/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace resformer {

namespace {

using detail::Node;
using detail::NodePtr;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

Tensor make_op(Shape shape, std::vector<double> values, std::vector<NodePtr> parents,
               std::function<void(Node&)> backward_fn) {
    auto node = detail::make_node(std::move(shape), std::move(values));
    if (detail::grad_enabled()) {
        bool any = false;
        for (const auto& p : parents) any = any || p->needs_grad;
        if (any) {
            node->needs_grad = true;
            node->parents = std::move(parents);
            node->backward_fn = std::move(backward_fn);
        }
    }
    return Tensor(std::move(node));
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
    const int r = std::max(ra, rb);
    Shape out(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) {
        const int64_t da = i < ra ? a[static_cast<size_t>(ra - 1 - i)] : 1;
        const int64_t db = i < rb ? b[static_cast<size_t>(rb - 1 - i)] : 1;
        if (da != db && da != 1 && db != 1) {
            throw ShapeError("cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
        }
        out[static_cast<size_t>(r - 1 - i)] = std::max(da, db);
    }
    return out;
}

// Strides of `in` per output dim, 0 where the input dim is broadcast.
std::vector<int64_t> broadcast_strides(const Shape& out, const Shape& in) {
    const int r = static_cast<int>(out.size());
    const int ri = static_cast<int>(in.size());
    std::vector<int64_t> strides(static_cast<size_t>(r), 0);
    int64_t run = 1;
    for (int i = 0; i < ri; ++i) {  // from the back
        const int64_t din = in[static_cast<size_t>(ri - 1 - i)];
        strides[static_cast<size_t>(r - 1 - i)] = (din == 1) ? 0 : run;
        run *= din;
    }
    return strides;
}

// Calls fn(out_flat, a_flat, b_flat) for every output element, row-major.
template <class F>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, F&& fn) {
    const int64_t n = shape_numel(out);
    if (out == a && out == b) {
        for (int64_t i = 0; i < n; ++i) fn(i, i, i);
        return;
    }
    const auto sa = broadcast_strides(out, a);
    const auto sb = broadcast_strides(out, b);
    const int r = static_cast<int>(out.size());
    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    int64_t ai = 0, bi = 0;
    for (int64_t count = 0;;) {
        fn(count, ai, bi);
        if (++count == n) break;
        for (int d = r - 1; d >= 0; --d) {
            ++idx[static_cast<size_t>(d)];
            ai += sa[static_cast<size_t>(d)];
            bi += sb[static_cast<size_t>(d)];
            if (idx[static_cast<size_t>(d)] < out[static_cast<size_t>(d)]) break;
            ai -= sa[static_cast<size_t>(d)] * out[static_cast<size_t>(d)];
            bi -= sb[static_cast<size_t>(d)] * out[static_cast<size_t>(d)];
            idx[static_cast<size_t>(d)] = 0;
        }
    }
}

int normalize_axis(int axis, int rank) {
    int a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
    }
    return a;
}

// outer x axis x inner decomposition around one axis.
struct AxisSplit {
    int64_t outer, size, inner;
};

AxisSplit split_axis(const Shape& shape, int axis) {
    AxisSplit s{1, shape[static_cast<size_t>(axis)], 1};
    for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

std::vector<double> transpose_values(const std::vector<double>& v, const Shape& shape, int ax0,
                                     int ax1) {
    const int r = static_cast<int>(shape.size());
    std::vector<int64_t> in_strides(static_cast<size_t>(r), 1);
    for (int i = r - 2; i >= 0; --i) {
        in_strides[static_cast<size_t>(i)] =
            in_strides[static_cast<size_t>(i + 1)] * shape[static_cast<size_t>(i + 1)];
    }
    Shape out_shape = shape;
    std::swap(out_shape[static_cast<size_t>(ax0)], out_shape[static_cast<size_t>(ax1)]);
    std::vector<int64_t> strides = in_strides;  // input stride per *output* dim
    std::swap(strides[static_cast<size_t>(ax0)], strides[static_cast<size_t>(ax1)]);

    std::vector<double> out(v.size());
    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    int64_t src = 0;
    const int64_t n = static_cast<int64_t>(v.size());
    for (int64_t count = 0;;) {
        out[static_cast<size_t>(count)] = v[static_cast<size_t>(src)];
        if (++count == n) break;
        for (int d = r - 1; d >= 0; --d) {
            ++idx[static_cast<size_t>(d)];
            src += strides[static_cast<size_t>(d)];
            if (idx[static_cast<size_t>(d)] < out_shape[static_cast<size_t>(d)]) break;
            src -= strides[static_cast<size_t>(d)] * out_shape[static_cast<size_t>(d)];
            idx[static_cast<size_t>(d)] = 0;
        }
    }
    return out;
}

// Elementwise unary with derivative expressed from (x, y).
Tensor unary_op(const Tensor& x, double (*f)(double), double (*df)(double, double)) {
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    return make_op(x.shape(), std::move(out), {x.node()}, [df](Node& self) {
        const auto& p = self.parents[0];
        if (!p->needs_grad) return;
        auto& pg = p->ensure_grad();
        const auto& g = *self.grad;
        for (size_t i = 0; i < g.size(); ++i) {
            pg[i] += g[i] * df(p->values[i], self.values[i]);
        }
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    Shape out_shape = broadcast_shape(a.shape(), b.shape());
    std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
    const auto& av = a.values();
    const auto& bv = b.values();
    for_each_broadcast(out_shape, a.shape(), b.shape(), [&](int64_t o, int64_t i, int64_t j) {
        out[static_cast<size_t>(o)] = av[static_cast<size_t>(i)] + bv[static_cast<size_t>(j)];
    });
    return make_op(std::move(out_shape), std::move(out), {a.node(), b.node()}, [](Node& self) {
        const auto& g = *self.grad;
        const auto& pa = self.parents[0];
        const auto& pb = self.parents[1];
        if (pa->needs_grad) {
            auto& ga = pa->ensure_grad();
            for_each_broadcast(self.shape, pa->shape, pb->shape,
                               [&](int64_t o, int64_t i, int64_t) {
                                   ga[static_cast<size_t>(i)] += g[static_cast<size_t>(o)];
                               });
        }
        if (pb->needs_grad) {
            auto& gb = pb->ensure_grad();
            for_each_broadcast(self.shape, pa->shape, pb->shape,
                               [&](int64_t o, int64_t, int64_t j) {
                                   gb[static_cast<size_t>(j)] += g[static_cast<size_t>(o)];
                               });
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
    Shape out_shape = broadcast_shape(a.shape(), b.shape());
    std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
    const auto& av = a.values();
    const auto& bv = b.values();
    for_each_broadcast(out_shape, a.shape(), b.shape(), [&](int64_t o, int64_t i, int64_t j) {
        out[static_cast<size_t>(o)] = av[static_cast<size_t>(i)] * bv[static_cast<size_t>(j)];
    });
    return make_op(std::move(out_shape), std::move(out), {a.node(), b.node()}, [](Node& self) {
        const auto& g = *self.grad;
        const auto& pa = self.parents[0];
        const auto& pb = self.parents[1];
        if (pa->needs_grad) {
            auto& ga = pa->ensure_grad();
            for_each_broadcast(self.shape, pa->shape, pb->shape,
                               [&](int64_t o, int64_t i, int64_t j) {
                                   ga[static_cast<size_t>(i)] +=
                                       g[static_cast<size_t>(o)] * pb->values[static_cast<size_t>(j)];
                               });
        }
        if (pb->needs_grad) {
            auto& gb = pb->ensure_grad();
            for_each_broadcast(self.shape, pa->shape, pb->shape,
                               [&](int64_t o, int64_t i, int64_t j) {
                                   gb[static_cast<size_t>(j)] +=
                                       g[static_cast<size_t>(o)] * pa->values[static_cast<size_t>(i)];
                               });
        }
    });
}

Tensor affine(const Tensor& x, double mul_c, double add_c) {
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) out[i] = mul_c * xv[i] + add_c;
    return make_op(x.shape(), std::move(out), {x.node()}, [mul_c](Node& self) {
        const auto& p = self.parents[0];
        if (!p->needs_grad) return;
        auto& pg = p->ensure_grad();
        const auto& g = *self.grad;
        for (size_t i = 0; i < g.size(); ++i) pg[i] += mul_c * g[i];
    });
}

Tensor scale(const Tensor& x, double s) { return affine(x, s, 0.0); }

namespace {

struct MatmulPlan {
    int64_t batch = 1, m = 0, k = 0, n = 0;
    bool a_batched = false, b_batched = false;
    Shape out_shape;
};

MatmulPlan plan_matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2) {
        throw ShapeError("matmul requires rank >= 2 operands, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    }
    MatmulPlan p;
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    p.m = sa[sa.size() - 2];
    p.k = sa[sa.size() - 1];
    const int64_t bk = sb[sb.size() - 2];
    p.n = sb[sb.size() - 1];
    if (p.k != bk) {
        throw ShapeError("matmul inner dimensions disagree: " + shape_str(sa) + " x " +
                         shape_str(sb));
    }
    Shape batch_a(sa.begin(), sa.end() - 2);
    Shape batch_b(sb.begin(), sb.end() - 2);
    p.a_batched = !batch_a.empty();
    p.b_batched = !batch_b.empty();
    Shape batch;
    if (p.a_batched && p.b_batched) {
        if (batch_a != batch_b) {
            throw ShapeError("matmul batch dimensions disagree: " + shape_str(sa) + " x " +
                             shape_str(sb));
        }
        batch = batch_a;
    } else if (p.a_batched) {
        batch = batch_a;
    } else if (p.b_batched) {
        batch = batch_b;
    }
    p.batch = shape_numel(batch);
    p.out_shape = batch;
    p.out_shape.push_back(p.m);
    p.out_shape.push_back(p.n);
    return p;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    const MatmulPlan p = plan_matmul(a, b);
    std::vector<double> out(static_cast<size_t>(p.batch * p.m * p.n), 0.0);
    const double* av = a.values().data();
    const double* bv = b.values().data();
    for (int64_t s = 0; s < p.batch; ++s) {
        ConstMap A(av + (p.a_batched ? s * p.m * p.k : 0), p.m, p.k);
        ConstMap B(bv + (p.b_batched ? s * p.k * p.n : 0), p.k, p.n);
        MutMap C(out.data() + s * p.m * p.n, p.m, p.n);
        C.noalias() = A * B;
    }
    return make_op(p.out_shape, std::move(out), {a.node(), b.node()}, [p](Node& self) {
        const auto& pa = self.parents[0];
        const auto& pb = self.parents[1];
        const double* g = self.grad->data();
        if (pa->needs_grad) {
            double* ga = pa->ensure_grad().data();
            const double* bv = pb->values.data();
            for (int64_t s = 0; s < p.batch; ++s) {
                ConstMap G(g + s * p.m * p.n, p.m, p.n);
                ConstMap B(bv + (p.b_batched ? s * p.k * p.n : 0), p.k, p.n);
                MutMap dA(ga + (p.a_batched ? s * p.m * p.k : 0), p.m, p.k);
                dA.noalias() += G * B.transpose();
            }
        }
        if (pb->needs_grad) {
            double* gb = pb->ensure_grad().data();
            const double* av = pa->values.data();
            for (int64_t s = 0; s < p.batch; ++s) {
                ConstMap G(g + s * p.m * p.n, p.m, p.n);
                ConstMap A(av + (p.a_batched ? s * p.m * p.k : 0), p.m, p.k);
                MutMap dB(gb + (p.b_batched ? s * p.k * p.n : 0), p.k, p.n);
                dB.noalias() += A.transpose() * G;
            }
        }
    });
}

Tensor transpose(const Tensor& x, int axis0, int axis1) {
    const int r = x.rank();
    const int a0 = normalize_axis(axis0, r);
    const int a1 = normalize_axis(axis1, r);
    Shape out_shape = x.shape();
    std::swap(out_shape[static_cast<size_t>(a0)], out_shape[static_cast<size_t>(a1)]);
    std::vector<double> out = transpose_values(x.values(), x.shape(), a0, a1);
    return make_op(std::move(out_shape), std::move(out), {x.node()}, [a0, a1](Node& self) {
        const auto& p = self.parents[0];
        if (!p->needs_grad) return;
        auto& pg = p->ensure_grad();
        // transposing the gradient back lines it up with the input layout
        const auto gt = transpose_values(*self.grad, self.shape, a0, a1);
        for (size_t i = 0; i < gt.size(); ++i) pg[i] += gt[i];
    });
}

Tensor reshape(const Tensor& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel()) {
        throw ShapeError("reshape from " + shape_str(x.shape()) + " to " + shape_str(new_shape) +
                         " changes element count");
    }
    return make_op(std::move(new_shape), x.values(), {x.node()}, [](Node& self) {
        const auto& p = self.parents[0];
        if (!p->needs_grad) return;
        auto& pg = p->ensure_grad();
        const auto& g = *self.grad;
        for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
    });
}

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t length) {
    const int a = normalize_axis(axis, x.rank());
    const AxisSplit sp = split_axis(x.shape(), a);
    if (start < 0 || length < 0 || start + length > sp.size) {
        throw ShapeError("slice [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") out of range for axis size " +
                         std::to_string(sp.size));
    }
    Shape out_shape = x.shape();
    out_shape[static_cast<size_t>(a)] = length;
    std::vector<double> out(static_cast<size_t>(sp.outer * length * sp.inner));
    const auto& xv = x.values();
    for (int64_t o = 0; o < sp.outer; ++o) {
        const double* src = xv.data() + (o * sp.size + start) * sp.inner;
        double* dst = out.data() + o * length * sp.inner;
        std::copy(src, src + length * sp.inner, dst);
    }
    return make_op(std::move(out_shape), std::move(out), {x.node()},
                   [sp, start, length](Node& self) {
                       const auto& p = self.parents[0];
                       if (!p->needs_grad) return;
                       auto& pg = p->ensure_grad();
                       const auto& g = *self.grad;
                       for (int64_t o = 0; o < sp.outer; ++o) {
                           const double* src = g.data() + o * length * sp.inner;
                           double* dst = pg.data() + (o * sp.size + start) * sp.inner;
                           for (int64_t i = 0; i < length * sp.inner; ++i) dst[i] += src[i];
                       }
                   });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    const int a = normalize_axis(axis, parts[0].rank());
    Shape out_shape = parts[0].shape();
    int64_t total = 0;
    for (const auto& t : parts) {
        Shape s = t.shape();
        if (static_cast<int>(s.size()) != parts[0].rank()) {
            throw ShapeError("concat rank mismatch");
        }
        s[static_cast<size_t>(a)] = 0;
        Shape ref = out_shape;
        ref[static_cast<size_t>(a)] = 0;
        if (s != ref) {
            throw ShapeError("concat shape mismatch: " + shape_str(t.shape()) + " vs " +
                             shape_str(parts[0].shape()));
        }
        total += t.dim(a);
    }
    out_shape[static_cast<size_t>(a)] = total;
    const AxisSplit sp = split_axis(out_shape, a);

    std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
    std::vector<int64_t> sizes;
    std::vector<NodePtr> parents;
    int64_t offset = 0;
    for (const auto& t : parts) {
        const int64_t len = t.dim(a);
        const auto& v = t.values();
        for (int64_t o = 0; o < sp.outer; ++o) {
            const double* src = v.data() + o * len * sp.inner;
            double* dst = out.data() + (o * sp.size + offset) * sp.inner;
            std::copy(src, src + len * sp.inner, dst);
        }
        offset += len;
        sizes.push_back(len);
        parents.push_back(t.node());
    }
    return make_op(std::move(out_shape), std::move(out), std::move(parents),
                   [sp, sizes](Node& self) {
                       const auto& g = *self.grad;
                       int64_t offset = 0;
                       for (size_t pi = 0; pi < self.parents.size(); ++pi) {
                           const int64_t len = sizes[pi];
                           const auto& p = self.parents[pi];
                           if (p->needs_grad) {
                               auto& pg = p->ensure_grad();
                               for (int64_t o = 0; o < sp.outer; ++o) {
                                   const double* src = g.data() + (o * sp.size + offset) * sp.inner;
                                   double* dst = pg.data() + o * len * sp.inner;
                                   for (int64_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
                               }
                           }
                           offset += len;
                       }
                   });
}

Tensor relu(const Tensor& x) {
    return unary_op(
        x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
    return unary_op(
        x, [](double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); },
        [](double v, double) {
            const double cdf = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
            const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
            return cdf + v * pdf;
        });
}

Tensor tanh(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(
        x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor softmax(const Tensor& x, int axis) {
    const int a = normalize_axis(axis, x.rank());
    const AxisSplit sp = split_axis(x.shape(), a);
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (int64_t o = 0; o < sp.outer; ++o) {
        for (int64_t i = 0; i < sp.inner; ++i) {
            const int64_t base = o * sp.size * sp.inner + i;
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t j = 0; j < sp.size; ++j) {
                mx = std::max(mx, xv[static_cast<size_t>(base + j * sp.inner)]);
            }
            double denom = 0.0;
            for (int64_t j = 0; j < sp.size; ++j) {
                const double e = std::exp(xv[static_cast<size_t>(base + j * sp.inner)] - mx);
                out[static_cast<size_t>(base + j * sp.inner)] = e;
                denom += e;
            }
            for (int64_t j = 0; j < sp.size; ++j) {
                out[static_cast<size_t>(base + j * sp.inner)] /= denom;
            }
        }
    }
    return make_op(x.shape(), std::move(out), {x.node()}, [sp](Node& self) {
        const auto& p = self.parents[0];
        if (!p->needs_grad) return;
        auto& pg = p->ensure_grad();
        const auto& g = *self.grad;
        const auto& y = self.values;
        for (int64_t o = 0; o < sp.outer; ++o) {
            for (int64_t i = 0; i < sp.inner; ++i) {
                const int64_t base = o * sp.size * sp.inner + i;
                double dot = 0.0;
                for (int64_t j = 0; j < sp.size; ++j) {
                    const size_t k = static_cast<size_t>(base + j * sp.inner);
                    dot += g[k] * y[k];
                }
                for (int64_t j = 0; j < sp.size; ++j) {
                    const size_t k = static_cast<size_t>(base + j * sp.inner);
                    pg[k] += y[k] * (g[k] - dot);
                }
            }
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() < 1) throw ShapeError("layer_norm requires rank >= 1 input");
    const int64_t d = x.dim(-1);
    if (d == 0) throw ShapeError("layer_norm over an empty last dimension");
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
        throw ShapeError("layer_norm gamma/beta must have shape [" + std::to_string(d) +
                         "], got " + shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
    }
    const int64_t rows = x.numel() / d;
    const auto& xv = x.values();
    const auto& gv = gamma.values();
    const auto& bv = beta.values();
    std::vector<double> out(xv.size());
    std::vector<double> mean_r(static_cast<size_t>(rows));
    std::vector<double> inv_std_r(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * d;
        double m = 0.0;
        for (int64_t j = 0; j < d; ++j) m += row[j];
        m /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) var += (row[j] - m) * (row[j] - m);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        mean_r[static_cast<size_t>(r)] = m;
        inv_std_r[static_cast<size_t>(r)] = inv;
        double* orow = out.data() + r * d;
        for (int64_t j = 0; j < d; ++j) {
            orow[j] = (row[j] - m) * inv * gv[static_cast<size_t>(j)] + bv[static_cast<size_t>(j)];
        }
    }
    return make_op(x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
                   [d, rows, mean_r = std::move(mean_r),
                    inv_std_r = std::move(inv_std_r)](Node& self) {
                       const auto& px = self.parents[0];
                       const auto& pgm = self.parents[1];
                       const auto& pbt = self.parents[2];
                       const auto& g = *self.grad;
                       const auto& xv = px->values;
                       const auto& gv = pgm->values;
                       double* dx = px->needs_grad ? px->ensure_grad().data() : nullptr;
                       double* dgm = pgm->needs_grad ? pgm->ensure_grad().data() : nullptr;
                       double* dbt = pbt->needs_grad ? pbt->ensure_grad().data() : nullptr;
                       std::vector<double> xhat(static_cast<size_t>(d));
                       for (int64_t r = 0; r < rows; ++r) {
                           const double m = mean_r[static_cast<size_t>(r)];
                           const double inv = inv_std_r[static_cast<size_t>(r)];
                           const double* xrow = xv.data() + r * d;
                           const double* grow = g.data() + r * d;
                           for (int64_t j = 0; j < d; ++j) xhat[static_cast<size_t>(j)] = (xrow[j] - m) * inv;
                           if (dgm || dbt) {
                               for (int64_t j = 0; j < d; ++j) {
                                   if (dgm) dgm[j] += grow[j] * xhat[static_cast<size_t>(j)];
                                   if (dbt) dbt[j] += grow[j];
                               }
                           }
                           if (dx) {
                               double mean_gh = 0.0, mean_ghx = 0.0;
                               for (int64_t j = 0; j < d; ++j) {
                                   const double gh = grow[j] * gv[static_cast<size_t>(j)];
                                   mean_gh += gh;
                                   mean_ghx += gh * xhat[static_cast<size_t>(j)];
                               }
                               mean_gh /= static_cast<double>(d);
                               mean_ghx /= static_cast<double>(d);
                               for (int64_t j = 0; j < d; ++j) {
                                   const double gh = grow[j] * gv[static_cast<size_t>(j)];
                                   dx[r * d + j] +=
                                       inv * (gh - mean_gh - xhat[static_cast<size_t>(j)] * mean_ghx);
                               }
                           }
                       }
                   });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int64_t>& ids,
                        const Shape& id_shape) {
    if (table.rank() != 2) {
        throw ShapeError("embedding table must be rank 2, got " + shape_str(table.shape()));
    }
    if (static_cast<int64_t>(ids.size()) != shape_numel(id_shape)) {
        throw ShapeError("id count does not match id shape " + shape_str(id_shape));
    }
    const int64_t vocab = table.dim(0);
    const int64_t d = table.dim(1);
    const auto& tv = table.values();
    std::vector<double> out(ids.size() * static_cast<size_t>(d));
    for (size_t i = 0; i < ids.size(); ++i) {
        const int64_t id = ids[i];
        if (id < 0 || id >= vocab) {
            throw ShapeError("embedding id " + std::to_string(id) + " out of range [0, " +
                             std::to_string(vocab) + ")");
        }
        std::copy(tv.begin() + id * d, tv.begin() + (id + 1) * d,
                  out.begin() + static_cast<int64_t>(i) * d);
    }
    Shape out_shape = id_shape;
    out_shape.push_back(d);
    return make_op(std::move(out_shape), std::move(out), {table.node()}, [ids, d](Node& self) {
        const auto& p = self.parents[0];
        if (!p->needs_grad) return;
        auto& pg = p->ensure_grad();
        const auto& g = *self.grad;
        for (size_t i = 0; i < ids.size(); ++i) {
            const double* src = g.data() + static_cast<int64_t>(i) * d;
            double* dst = pg.data() + ids[i] * d;
            for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
}

Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.values()) total += v;
    return make_op({1}, {total}, {x.node()}, [](Node& self) {
        const auto& p = self.parents[0];
        if (!p->needs_grad) return;
        auto& pg = p->ensure_grad();
        const double g = (*self.grad)[0];
        for (auto& v : pg) v += g;
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor reduce_sum(const Tensor& x, int axis) {
    const int a = normalize_axis(axis, x.rank());
    const AxisSplit sp = split_axis(x.shape(), a);
    Shape out_shape;
    for (int i = 0; i < x.rank(); ++i) {
        if (i != a) out_shape.push_back(x.dim(i));
    }
    if (out_shape.empty()) out_shape = {1};
    const auto& xv = x.values();
    std::vector<double> out(static_cast<size_t>(sp.outer * sp.inner), 0.0);
    for (int64_t o = 0; o < sp.outer; ++o) {
        for (int64_t j = 0; j < sp.size; ++j) {
            const double* src = xv.data() + (o * sp.size + j) * sp.inner;
            double* dst = out.data() + o * sp.inner;
            for (int64_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
        }
    }
    return make_op(std::move(out_shape), std::move(out), {x.node()}, [sp](Node& self) {
        const auto& p = self.parents[0];
        if (!p->needs_grad) return;
        auto& pg = p->ensure_grad();
        const auto& g = *self.grad;
        for (int64_t o = 0; o < sp.outer; ++o) {
            for (int64_t j = 0; j < sp.size; ++j) {
                const double* src = g.data() + o * sp.inner;
                double* dst = pg.data() + (o * sp.size + j) * sp.inner;
                for (int64_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
            }
        }
    });
}

Tensor reduce_mean(const Tensor& x, int axis) {
    const int a = normalize_axis(axis, x.rank());
    return scale(reduce_sum(x, a), 1.0 / static_cast<double>(x.dim(a)));
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernel) {
    if (x.rank() != 3) {
        throw ShapeError("depthwise_conv1d input must be [B, T, C], got " + shape_str(x.shape()));
    }
    if (kernel.rank() != 2) {
        throw ShapeError("depthwise_conv1d kernel must be [K, C], got " +
                         shape_str(kernel.shape()));
    }
    const int64_t B = x.dim(0), T = x.dim(1), C = x.dim(2);
    const int64_t K = kernel.dim(0);
    if (kernel.dim(1) != C) {
        throw ShapeError("kernel channels " + std::to_string(kernel.dim(1)) +
                         " do not match input channels " + std::to_string(C));
    }
    if (K % 2 == 0) {
        throw ConfigError("depthwise_conv1d kernel width must be odd, got " + std::to_string(K));
    }
    const int64_t P = (K - 1) / 2;
    const auto& xv = x.values();
    const auto& kv = kernel.values();
    std::vector<double> out(xv.size(), 0.0);
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t t = 0; t < T; ++t) {
            double* orow = out.data() + (b * T + t) * C;
            for (int64_t k = 0; k < K; ++k) {
                const int64_t s = t + k - P;
                if (s < 0 || s >= T) continue;
                const double* xrow = xv.data() + (b * T + s) * C;
                const double* krow = kv.data() + k * C;
                for (int64_t c = 0; c < C; ++c) orow[c] += krow[c] * xrow[c];
            }
        }
    }
    return make_op(x.shape(), std::move(out), {x.node(), kernel.node()}, [B, T, C, K, P](Node& self) {
        const auto& px = self.parents[0];
        const auto& pk = self.parents[1];
        const auto& g = *self.grad;
        if (px->needs_grad) {
            auto& dx = px->ensure_grad();
            const auto& kv = pk->values;
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t t = 0; t < T; ++t) {
                    const double* grow = g.data() + (b * T + t) * C;
                    for (int64_t k = 0; k < K; ++k) {
                        const int64_t s = t + k - P;
                        if (s < 0 || s >= T) continue;
                        double* xrow = dx.data() + (b * T + s) * C;
                        const double* krow = kv.data() + k * C;
                        for (int64_t c = 0; c < C; ++c) xrow[c] += krow[c] * grow[c];
                    }
                }
            }
        }
        if (pk->needs_grad) {
            auto& dk = pk->ensure_grad();
            const auto& xv = px->values;
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t t = 0; t < T; ++t) {
                    const double* grow = g.data() + (b * T + t) * C;
                    for (int64_t k = 0; k < K; ++k) {
                        const int64_t s = t + k - P;
                        if (s < 0 || s >= T) continue;
                        const double* xrow = xv.data() + (b * T + s) * C;
                        double* krow = dk.data() + k * C;
                        for (int64_t c = 0; c < C; ++c) krow[c] += xrow[c] * grow[c];
                    }
                }
            }
        }
    });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& targets,
                     const std::vector<double>& weights) {
    if (logits.rank() != 2) {
        throw ShapeError("cross_entropy logits must be [N, V], got " + shape_str(logits.shape()));
    }
    const int64_t N = logits.dim(0), V = logits.dim(1);
    if (static_cast<int64_t>(targets.size()) != N || static_cast<int64_t>(weights.size()) != N) {
        throw ShapeError("cross_entropy targets/weights must have length " + std::to_string(N));
    }
    double total_w = 0.0;
    for (double w : weights) total_w += w;
    if (total_w <= 0.0) throw ShapeError("cross_entropy total weight must be positive");

    const auto& lv = logits.values();
    std::vector<double> probs(lv.size());
    double loss = 0.0;
    for (int64_t i = 0; i < N; ++i) {
        const int64_t y = targets[static_cast<size_t>(i)];
        if (y < 0 || y >= V) {
            throw ShapeError("cross_entropy target " + std::to_string(y) + " out of range [0, " +
                             std::to_string(V) + ")");
        }
        const double* row = lv.data() + i * V;
        double mx = row[0];
        for (int64_t v = 1; v < V; ++v) mx = std::max(mx, row[v]);
        double denom = 0.0;
        for (int64_t v = 0; v < V; ++v) denom += std::exp(row[v] - mx);
        const double lse = mx + std::log(denom);
        for (int64_t v = 0; v < V; ++v) {
            probs[static_cast<size_t>(i * V + v)] = std::exp(row[v] - lse);
        }
        loss += weights[static_cast<size_t>(i)] * (lse - row[y]);
    }
    loss /= total_w;
    return make_op({1}, {loss}, {logits.node()},
                   [N, V, targets, weights, total_w, probs = std::move(probs)](Node& self) {
                       const auto& p = self.parents[0];
                       if (!p->needs_grad) return;
                       auto& pg = p->ensure_grad();
                       const double g = (*self.grad)[0];
                       for (int64_t i = 0; i < N; ++i) {
                           const double w = weights[static_cast<size_t>(i)];
                           if (w == 0.0) continue;
                           const double c = g * w / total_w;
                           double* dst = pg.data() + i * V;
                           const double* pr = probs.data() + i * V;
                           for (int64_t v = 0; v < V; ++v) dst[v] += c * pr[v];
                           dst[targets[static_cast<size_t>(i)]] -= c;
                       }
                   });
}

Tensor detach(const Tensor& x) { return Tensor::from_values(x.shape(), x.values()); }

}  // namespace resformer
