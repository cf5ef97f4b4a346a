#include "sva/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace sva {

namespace {

void require_rank(const Tensor& x, int rank, const char* op) {
    if (x.rank() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + x.shape_str());
}

bool any_grad(const Tape& t, Var a, Var b) { return t.needs_grad(a) || t.needs_grad(b); }

} // namespace

Var add(Tape& t, Var a, Var b) {
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    require_same_shape(av, bv, "add");
    Tensor out(av.shape());
    out.vec() = av.vec() + bv.vec();
    return t.op(std::move(out), any_grad(t, a, b), [a, b](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        if (tp.needs_grad(a)) tp.grad_buf(a).vec() += g.vec();
        if (tp.needs_grad(b)) tp.grad_buf(b).vec() += g.vec();
    });
}

Var sub(Tape& t, Var a, Var b) {
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    require_same_shape(av, bv, "sub");
    Tensor out(av.shape());
    out.vec() = av.vec() - bv.vec();
    return t.op(std::move(out), any_grad(t, a, b), [a, b](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        if (tp.needs_grad(a)) tp.grad_buf(a).vec() += g.vec();
        if (tp.needs_grad(b)) tp.grad_buf(b).vec() -= g.vec();
    });
}

Var mul(Tape& t, Var a, Var b) {
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    require_same_shape(av, bv, "mul");
    Tensor out(av.shape());
    out.array() = av.array() * bv.array();
    return t.op(std::move(out), any_grad(t, a, b), [a, b](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        if (tp.needs_grad(a)) tp.grad_buf(a).array() += g.array() * tp.val(b).array();
        if (tp.needs_grad(b)) tp.grad_buf(b).array() += g.array() * tp.val(a).array();
    });
}

Var scale(Tape& t, Var a, double c) {
    const Tensor& av = t.val(a);
    Tensor out(av.shape());
    out.vec() = av.vec() * c;
    return t.op(std::move(out), t.needs_grad(a), [a, c](Tape& tp, Var self) {
        tp.grad_buf(a).vec() += c * tp.grad(self).vec();
    });
}

Var one_minus(Tape& t, Var a) {
    const Tensor& av = t.val(a);
    Tensor out(av.shape());
    out.array() = 1.0 - av.array();
    return t.op(std::move(out), t.needs_grad(a), [a](Tape& tp, Var self) {
        tp.grad_buf(a).vec() -= tp.grad(self).vec();
    });
}

Var relu(Tape& t, Var a) {
    const Tensor& av = t.val(a);
    Tensor out(av.shape());
    out.array() = av.array().max(0.0);
    return t.op(std::move(out), t.needs_grad(a), [a](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        tp.grad_buf(a).array() += g.array() * (tp.val(a).array() > 0.0).cast<double>();
    });
}

Var tanh_(Tape& t, Var a) {
    const Tensor& av = t.val(a);
    Tensor out(av.shape());
    out.array() = av.array().tanh();
    return t.op(std::move(out), t.needs_grad(a), [a](Tape& tp, Var self) {
        const auto y = tp.val(self).array();
        tp.grad_buf(a).array() += tp.grad(self).array() * (1.0 - y * y);
    });
}

Var sigmoid_(Tape& t, Var a) {
    const Tensor& av = t.val(a);
    Tensor out(av.shape());
    out.array() = 0.5 * (0.5 * av.array()).tanh() + 0.5;
    return t.op(std::move(out), t.needs_grad(a), [a](Tape& tp, Var self) {
        const auto y = tp.val(self).array();
        tp.grad_buf(a).array() += tp.grad(self).array() * y * (1.0 - y);
    });
}

Var exp_(Tape& t, Var a) {
    const Tensor& av = t.val(a);
    Tensor out(av.shape());
    out.array() = av.array().exp();
    return t.op(std::move(out), t.needs_grad(a), [a](Tape& tp, Var self) {
        tp.grad_buf(a).array() += tp.grad(self).array() * tp.val(self).array();
    });
}

Var matmul(Tape& t, Var a, Var b) {
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    require_rank(av, 2, "matmul");
    require_rank(bv, 2, "matmul");
    if (av.dim(1) != bv.dim(0))
        throw ShapeError("matmul: inner dims differ, " + av.shape_str() + " vs " + bv.shape_str());
    Tensor out({av.dim(0), bv.dim(1)});
    out.mat() = av.mat() * bv.mat();
    return t.op(std::move(out), any_grad(t, a, b), [a, b](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        if (tp.needs_grad(a)) tp.grad_buf(a).mat() += g.mat() * tp.val(b).mat().transpose();
        if (tp.needs_grad(b)) tp.grad_buf(b).mat() += tp.val(a).mat().transpose() * g.mat();
    });
}

Var matvec(Tape& t, Var a, Var x) {
    const Tensor& av = t.val(a);
    const Tensor& xv = t.val(x);
    require_rank(av, 2, "matvec");
    require_rank(xv, 1, "matvec");
    if (av.dim(1) != xv.dim(0))
        throw ShapeError("matvec: " + av.shape_str() + " vs " + xv.shape_str());
    Tensor out({av.dim(0)});
    out.vec() = av.mat() * xv.vec();
    return t.op(std::move(out), any_grad(t, a, x), [a, x](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        if (tp.needs_grad(a)) tp.grad_buf(a).mat() += g.vec() * tp.val(x).vec().transpose();
        if (tp.needs_grad(x)) tp.grad_buf(x).vec() += tp.val(a).mat().transpose() * g.vec();
    });
}

Var matvec_t(Tape& t, Var a, Var x) {
    const Tensor& av = t.val(a);
    const Tensor& xv = t.val(x);
    require_rank(av, 2, "matvec_t");
    require_rank(xv, 1, "matvec_t");
    if (av.dim(0) != xv.dim(0))
        throw ShapeError("matvec_t: " + av.shape_str() + " vs " + xv.shape_str());
    Tensor out({av.dim(1)});
    out.vec() = av.mat().transpose() * xv.vec();
    return t.op(std::move(out), any_grad(t, a, x), [a, x](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        if (tp.needs_grad(a)) tp.grad_buf(a).mat() += tp.val(x).vec() * g.vec().transpose();
        if (tp.needs_grad(x)) tp.grad_buf(x).vec() += tp.val(a).mat() * g.vec();
    });
}

Var colwise_mul(Tape& t, Var a, Var v) {
    const Tensor& av = t.val(a);
    const Tensor& vv = t.val(v);
    require_rank(av, 2, "colwise_mul");
    require_rank(vv, 1, "colwise_mul");
    if (av.dim(0) != vv.dim(0))
        throw ShapeError("colwise_mul: " + av.shape_str() + " vs " + vv.shape_str());
    Tensor out(av.shape());
    out.mat() = av.mat().array().colwise() * vv.vec().array();
    return t.op(std::move(out), any_grad(t, a, v), [a, v](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        if (tp.needs_grad(a))
            tp.grad_buf(a).mat() += (g.mat().array().colwise() * tp.val(v).vec().array()).matrix();
        if (tp.needs_grad(v))
            tp.grad_buf(v).vec() += (g.mat().array() * tp.val(a).mat().array()).rowwise().sum().matrix();
    });
}

Var row(Tape& t, Var a, int r) {
    const Tensor& av = t.val(a);
    require_rank(av, 2, "row");
    if (r < 0 || r >= av.dim(0))
        throw ShapeError("row: index " + std::to_string(r) + " outside " + av.shape_str());
    Tensor out({av.dim(1)});
    out.vec() = av.mat().row(r).transpose();
    return t.op(std::move(out), t.needs_grad(a), [a, r](Tape& tp, Var self) {
        tp.grad_buf(a).mat().row(r) += tp.grad(self).vec().transpose();
    });
}

Var column(Tape& t, Var a, int c) {
    const Tensor& av = t.val(a);
    require_rank(av, 2, "column");
    if (c < 0 || c >= av.dim(1))
        throw ShapeError("column: index " + std::to_string(c) + " outside " + av.shape_str());
    Tensor out({av.dim(0)});
    out.vec() = av.mat().col(c);
    return t.op(std::move(out), t.needs_grad(a), [a, c](Tape& tp, Var self) {
        tp.grad_buf(a).mat().col(c) += tp.grad(self).vec();
    });
}

Var element(Tape& t, Var a, Index i) {
    const Tensor& av = t.val(a);
    if (i < 0 || i >= av.size())
        throw ShapeError("element: flat index " + std::to_string(i) + " outside " + av.shape_str());
    Tensor out = Tensor::scalar(av[i]);
    return t.op(std::move(out), t.needs_grad(a), [a, i](Tape& tp, Var self) {
        tp.grad_buf(a)[i] += tp.grad(self)[0];
    });
}

Var concat2(Tape& t, Var a, Var b) {
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    require_rank(av, 1, "concat2");
    require_rank(bv, 1, "concat2");
    const int m = av.dim(0), n = bv.dim(0);
    Tensor out({m + n});
    out.vec().head(m) = av.vec();
    out.vec().tail(n) = bv.vec();
    return t.op(std::move(out), any_grad(t, a, b), [a, b, m, n](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        if (tp.needs_grad(a)) tp.grad_buf(a).vec() += g.vec().head(m);
        if (tp.needs_grad(b)) tp.grad_buf(b).vec() += g.vec().tail(n);
    });
}

Var reshape(Tape& t, Var a, std::vector<int> shape) {
    const Tensor& av = t.val(a);
    Tensor out(shape);
    if (out.size() != av.size())
        throw ShapeError("reshape: size mismatch, " + av.shape_str() + " -> " + out.shape_str());
    out.vec() = av.vec();
    return t.op(std::move(out), t.needs_grad(a), [a](Tape& tp, Var self) {
        tp.grad_buf(a).vec() += tp.grad(self).vec();
    });
}

Var softmax(Tape& t, Var a) {
    const Tensor& av = t.val(a);
    require_rank(av, 1, "softmax");
    Tensor out(av.shape());
    const double m = av.vec().maxCoeff();
    out.array() = (av.array() - m).exp();
    out.vec() /= out.vec().sum();
    return t.op(std::move(out), t.needs_grad(a), [a](Tape& tp, Var self) {
        const auto y = tp.val(self).vec();
        const auto g = tp.grad(self).vec();
        const double dot = y.dot(g);
        tp.grad_buf(a).array() += (g.array() - dot) * y.array();
    });
}

Var sum_all(Tape& t, Var a) {
    Tensor out = Tensor::scalar(t.val(a).vec().sum());
    return t.op(std::move(out), t.needs_grad(a), [a](Tape& tp, Var self) {
        tp.grad_buf(a).array() += tp.grad(self)[0];
    });
}

Var clamp_min(Tape& t, Var a, double lo) {
    const Tensor& av = t.val(a);
    if (av.size() != 1) throw ShapeError("clamp_min: expected scalar, got " + av.shape_str());
    const double x = av[0];
    Tensor out = Tensor::scalar(std::max(x, lo));
    return t.op(std::move(out), t.needs_grad(a), [a, x, lo](Tape& tp, Var self) {
        if (x >= lo) tp.grad_buf(a)[0] += tp.grad(self)[0];
    });
}

Var div_by(Tape& t, Var v, Var s) {
    const Tensor& vv = t.val(v);
    const Tensor& sv = t.val(s);
    if (sv.size() != 1) throw ShapeError("div_by: divisor must be scalar, got " + sv.shape_str());
    if (sv[0] == 0.0) throw NumericError("div_by: division by zero");
    Tensor out(vv.shape());
    out.vec() = vv.vec() / sv[0];
    return t.op(std::move(out), any_grad(t, v, s), [v, s](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        const double sc = tp.val(s)[0];
        if (tp.needs_grad(v)) tp.grad_buf(v).vec() += g.vec() / sc;
        if (tp.needs_grad(s)) tp.grad_buf(s)[0] -= g.vec().dot(tp.val(self).vec()) / sc;
    });
}

Var bernoulli_table(Tape& t, Var p) {
    const Tensor& pv = t.val(p);
    require_rank(pv, 1, "bernoulli_table");
    const int m = pv.dim(0);
    Tensor out({2, m});
    out.mat().row(0) = (1.0 - pv.array()).matrix().transpose();
    out.mat().row(1) = pv.vec().transpose();
    return t.op(std::move(out), t.needs_grad(p), [p](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        tp.grad_buf(p).vec() += (g.mat().row(1) - g.mat().row(0)).transpose();
    });
}

Var edge_concat(Tape& t, Var x, const std::vector<std::pair<int, int>>& edges) {
    const Tensor& xv = t.val(x);
    require_rank(xv, 2, "edge_concat");
    const int d = xv.dim(0);
    const int m = xv.dim(1);
    const int ecount = static_cast<int>(edges.size());
    for (const auto& [i, j] : edges)
        if (i < 0 || i >= m || j < 0 || j >= m)
            throw ShapeError("edge_concat: edge endpoint outside node range");
    Tensor out({2 * d, ecount});
    for (int e = 0; e < ecount; ++e) {
        out.mat().col(e).head(d) = xv.mat().col(edges[static_cast<std::size_t>(e)].first);
        out.mat().col(e).tail(d) = xv.mat().col(edges[static_cast<std::size_t>(e)].second);
    }
    return t.op(std::move(out), t.needs_grad(x), [x, edges, d](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        auto dx = tp.grad_buf(x).mat();
        for (int e = 0; e < static_cast<int>(edges.size()); ++e) {
            dx.col(edges[static_cast<std::size_t>(e)].first) += g.mat().col(e).head(d);
            dx.col(edges[static_cast<std::size_t>(e)].second) += g.mat().col(e).tail(d);
        }
    });
}

Var dropout(Tape& t, Var a, double rate, Rng& rng, bool training) {
    if (!training || rate == 0.0) return a;
    if (rate < 0.0 || rate >= 1.0)
        throw ConfigError("dropout: rate must lie in [0,1), got " + std::to_string(rate));
    const Tensor& av = t.val(a);
    const double inv = 1.0 / (1.0 - rate);
    Tensor mask(av.shape());
    for (Index i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < rate ? 0.0 : inv;
    Tensor out(av.shape());
    out.array() = av.array() * mask.array();
    auto mp = std::make_shared<Tensor>(std::move(mask));
    return t.op(std::move(out), t.needs_grad(a), [a, mp](Tape& tp, Var self) {
        tp.grad_buf(a).array() += tp.grad(self).array() * mp->array();
    });
}

int conv_out_extent(int in, int k, int stride, int pad) {
    const int span = in + 2 * pad - k;
    if (stride <= 0 || span < 0 || span % stride != 0)
        throw ShapeError("conv geometry does not tile: in=" + std::to_string(in) +
                         " k=" + std::to_string(k) + " stride=" + std::to_string(stride) +
                         " pad=" + std::to_string(pad));
    return span / stride + 1;
}

namespace {

MatrixRM im2col(const Tensor& x, int k, int stride, int pad, int oh, int ow) {
    const int c_in = x.dim(0), h = x.dim(1), w = x.dim(2);
    MatrixRM cols = MatrixRM::Zero(static_cast<Index>(c_in) * k * k, static_cast<Index>(oh) * ow);
    for (int c = 0; c < c_in; ++c)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                const Index r = (static_cast<Index>(c) * k + ki) * k + kj;
                for (int oi = 0; oi < oh; ++oi) {
                    const int ii = oi * stride - pad + ki;
                    if (ii < 0 || ii >= h) continue;
                    for (int oj = 0; oj < ow; ++oj) {
                        const int jj = oj * stride - pad + kj;
                        if (jj < 0 || jj >= w) continue;
                        cols(r, static_cast<Index>(oi) * ow + oj) =
                            x[(static_cast<Index>(c) * h + ii) * w + jj];
                    }
                }
            }
    return cols;
}

void col2im_add(const MatrixRM& cols, int c_in, int h, int w, int k, int stride, int pad,
                int oh, int ow, Tensor& dx) {
    for (int c = 0; c < c_in; ++c)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                const Index r = (static_cast<Index>(c) * k + ki) * k + kj;
                for (int oi = 0; oi < oh; ++oi) {
                    const int ii = oi * stride - pad + ki;
                    if (ii < 0 || ii >= h) continue;
                    for (int oj = 0; oj < ow; ++oj) {
                        const int jj = oj * stride - pad + kj;
                        if (jj < 0 || jj >= w) continue;
                        dx[(static_cast<Index>(c) * h + ii) * w + jj] +=
                            cols(r, static_cast<Index>(oi) * ow + oj);
                    }
                }
            }
}

} // namespace

Var conv2d(Tape& t, Var x, Var w, int stride, int pad) {
    const Tensor& xv = t.val(x);
    const Tensor& wv = t.val(w);
    require_rank(xv, 3, "conv2d input");
    require_rank(wv, 4, "conv2d weight");
    if (wv.dim(2) != wv.dim(3))
        throw ShapeError("conv2d: kernel must be square, got " + wv.shape_str());
    if (wv.dim(1) != xv.dim(0))
        throw ShapeError("conv2d: channel mismatch, " + xv.shape_str() + " vs " + wv.shape_str());
    const int o = wv.dim(0), k = wv.dim(2);
    const int oh = conv_out_extent(xv.dim(1), k, stride, pad);
    const int ow = conv_out_extent(xv.dim(2), k, stride, pad);
    auto cols = std::make_shared<MatrixRM>(im2col(xv, k, stride, pad, oh, ow));
    Tensor out({o, oh, ow});
    out.mat_view(o, oh * ow) = wv.mat_view(o, wv.size() / o) * (*cols);
    const int ci = xv.dim(0), h = xv.dim(1), wid = xv.dim(2);
    return t.op(std::move(out), any_grad(t, x, w),
                [x, w, cols, o, k, stride, pad, oh, ow, ci, h, wid](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        const auto gm = g.mat_view(o, static_cast<Index>(oh) * ow);
        if (tp.needs_grad(w)) {
            Tensor& dw = tp.grad_buf(w);
            dw.mat_view(o, dw.size() / o) += gm * cols->transpose();
        }
        if (tp.needs_grad(x)) {
            const Tensor& wv2 = tp.val(w);
            MatrixRM dcols = wv2.mat_view(o, wv2.size() / o).transpose() * gm;
            col2im_add(dcols, ci, h, wid, k, stride, pad, oh, ow, tp.grad_buf(x));
        }
    });
}

Var cross_entropy(Tape& t, Var logits, int target) {
    const Tensor& lv = t.val(logits);
    require_rank(lv, 1, "cross_entropy");
    if (target < 0 || target >= lv.dim(0))
        throw ShapeError("cross_entropy: target " + std::to_string(target) +
                         " outside " + lv.shape_str());
    const double m = lv.vec().maxCoeff();
    const double lse = m + std::log((lv.array() - m).exp().sum());
    Tensor out = Tensor::scalar(lse - lv[target]);
    return t.op(std::move(out), t.needs_grad(logits), [logits, target](Tape& tp, Var self) {
        const Tensor& lv2 = tp.val(logits);
        const double m2 = lv2.vec().maxCoeff();
        Eigen::ArrayXd p = (lv2.array() - m2).exp();
        p /= p.sum();
        p[target] -= 1.0;
        tp.grad_buf(logits).array() += tp.grad(self)[0] * p;
    });
}

} // namespace sva
