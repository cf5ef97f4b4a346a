#include "sva/infer_ops.hpp"

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "sva/error.hpp"
#include "sva/inference.hpp"

namespace sva {

namespace {

void validate_tables(const GridGraph& g, const Tensor& unary, const Tensor& ln_pair, int t_steps) {
    if (unary.rank() != 2 || unary.dim(0) != 2 || unary.dim(1) != g.m)
        throw ShapeError("inference op: unary must be [2x" + std::to_string(g.m) + "], got " +
                         unary.shape_str());
    if (ln_pair.rank() != 2 || ln_pair.dim(0) != 4 || ln_pair.dim(1) != g.edge_count())
        throw ShapeError("inference op: pairwise must be [4x" + std::to_string(g.edge_count()) +
                         "], got " + ln_pair.shape_str());
    if (t_steps < 0) throw ConfigError("inference step count must be >= 0");
}

struct MfSaved {
    std::vector<Tensor> b;   // b[0..T], each (2, M)
    std::vector<Tensor> e;   // exp(coupling) per step 1..T, each (2, M)
    std::vector<Tensor> s;   // per-node normalizer per step 1..T, each (M)
};

} // namespace

Var mf_infer_op(Tape& t, Var unary, Var ln_pair, const GridGraph& g, int t_steps) {
    const Tensor& uv = t.val(unary);
    const Tensor& lv = t.val(ln_pair);
    validate_tables(g, uv, lv, t_steps);

    auto saved = std::make_shared<MfSaved>();
    saved->b.push_back(uv);
    for (int step = 1; step <= t_steps; ++step) {
        const Tensor& prev = saved->b.back();
        Tensor expc({2, g.m});
        Tensor norm({g.m});
        Tensor next({2, g.m});
        for (int i = 0; i < g.m; ++i) {
            double u[2];
            for (int z = 0; z < 2; ++z) {
                double coupling = 0.0;
                for (const auto& [e, j] : g.incident[static_cast<std::size_t>(i)])
                    for (int zj = 0; zj < 2; ++zj)
                        coupling += prev.at(zj, j) * lv.at(pair_code(g, e, i, z, zj), e);
                expc.at(z, i) = std::exp(coupling);
                u[z] = uv.at(z, i) * expc.at(z, i);
            }
            const double s = u[0] + u[1];
            norm[i] = s;
            next.at(0, i) = u[0] / s;
            next.at(1, i) = u[1] / s;
        }
        saved->e.push_back(std::move(expc));
        saved->s.push_back(std::move(norm));
        saved->b.push_back(std::move(next));
    }

    Tensor out = saved->b.back();
    const bool ng = t.needs_grad(unary) || t.needs_grad(ln_pair);
    const GridGraph* gp = &g;
    return t.op(std::move(out), ng, [unary, ln_pair, gp, saved, t_steps](Tape& tp, Var self) {
        const GridGraph& gr = *gp;
        const Tensor& uv2 = tp.val(unary);
        const Tensor& lv2 = tp.val(ln_pair);
        const bool want_u = tp.needs_grad(unary);
        const bool want_l = tp.needs_grad(ln_pair);
        Tensor du = Tensor::zeros({2, gr.m});
        Tensor dl = Tensor::zeros({4, gr.edge_count()});
        Tensor db = tp.grad(self);
        for (int step = t_steps; step >= 1; --step) {
            const Tensor& bt = saved->b[static_cast<std::size_t>(step)];
            const Tensor& bprev = saved->b[static_cast<std::size_t>(step) - 1];
            const Tensor& et = saved->e[static_cast<std::size_t>(step) - 1];
            const Tensor& st = saved->s[static_cast<std::size_t>(step) - 1];
            Tensor db_prev = Tensor::zeros({2, gr.m});
            for (int i = 0; i < gr.m; ++i) {
                const double dot = db.at(0, i) * bt.at(0, i) + db.at(1, i) * bt.at(1, i);
                for (int z = 0; z < 2; ++z) {
                    const double dunnorm = (db.at(z, i) - dot) / st[i];
                    du.at(z, i) += dunnorm * et.at(z, i);
                    const double dcoupling = dunnorm * uv2.at(z, i) * et.at(z, i);
                    for (const auto& [e, j] : gr.incident[static_cast<std::size_t>(i)]) {
                        for (int zj = 0; zj < 2; ++zj) {
                            const int code = pair_code(gr, e, i, z, zj);
                            dl.at(code, e) += dcoupling * bprev.at(zj, j);
                            db_prev.at(zj, j) += dcoupling * lv2.at(code, e);
                        }
                    }
                }
            }
            db = std::move(db_prev);
        }
        du.vec() += db.vec();  // b0 = unary verbatim
        if (want_u) tp.grad_buf(unary).vec() += du.vec();
        if (want_l) tp.grad_buf(ln_pair).vec() += dl.vec();
    });
}

namespace {

struct LbpSaved {
    std::vector<Tensor> m;    // message generations 0..T, each (2E, 2)
    std::vector<Tensor> upd;  // normalized pre-damping updates per step 1..T
    std::vector<Tensor> sn;   // update normalizers per step 1..T, each (2E)
};

// Product over messages into `node` at state z from generation `msgs`,
// excluding arrivals from nodes listed in (skip_a, skip_b); pass -1 to skip
// nothing.
double msg_product(const GridGraph& g, const Tensor& msgs, int node, int skip_a, int skip_b,
                   int z) {
    double p = 1.0;
    for (const auto& [e, k] : g.incident[static_cast<std::size_t>(node)]) {
        if (k == skip_a || k == skip_b) continue;
        p *= msgs.at(directed_index(g, e, node), z);
    }
    return p;
}

} // namespace

Var lbp_infer_op(Tape& t, Var unary, Var ln_pair, const GridGraph& g, int t_steps,
                 double damping) {
    const Tensor& uv = t.val(unary);
    const Tensor& lv = t.val(ln_pair);
    validate_tables(g, uv, lv, t_steps);
    if (damping < 0.0 || damping >= 1.0)
        throw ConfigError("damping must lie in [0,1), got " + std::to_string(damping));

    const int ecount = g.edge_count();
    auto saved = std::make_shared<LbpSaved>();
    saved->m.push_back(Tensor::full({2 * ecount, 2}, 0.5));
    for (int step = 1; step <= t_steps; ++step) {
        const Tensor& prev = saved->m.back();
        Tensor upd({2 * ecount, 2});
        Tensor sn({2 * ecount});
        Tensor next({2 * ecount, 2});
        for (int e = 0; e < ecount; ++e) {
            const Edge& ed = g.edges[static_cast<std::size_t>(e)];
            for (int dir = 0; dir < 2; ++dir) {
                const int src = dir == 0 ? ed.i : ed.j;
                const int dst = dir == 0 ? ed.j : ed.i;
                const int de = 2 * e + dir;
                double n[2];
                for (int zd = 0; zd < 2; ++zd) {
                    double acc = 0.0;
                    for (int zs = 0; zs < 2; ++zs)
                        acc += std::exp(lv.at(pair_code(g, e, src, zs, zd), e)) * uv.at(zs, src) *
                               msg_product(g, prev, src, dst, -1, zs);
                    n[zd] = acc;
                }
                const double s = n[0] + n[1];
                sn[de] = s;
                for (int zd = 0; zd < 2; ++zd) {
                    upd.at(de, zd) = n[zd] / s;
                    next.at(de, zd) = (1.0 - damping) * upd.at(de, zd) + damping * prev.at(de, zd);
                }
            }
        }
        saved->upd.push_back(std::move(upd));
        saved->sn.push_back(std::move(sn));
        saved->m.push_back(std::move(next));
    }

    const Tensor& mfinal = saved->m.back();
    Tensor out({2, g.m});
    for (int i = 0; i < g.m; ++i) {
        double r[2];
        for (int z = 0; z < 2; ++z) r[z] = uv.at(z, i) * msg_product(g, mfinal, i, -1, -1, z);
        const double s = r[0] + r[1];
        out.at(0, i) = r[0] / s;
        out.at(1, i) = r[1] / s;
    }

    const bool ng = t.needs_grad(unary) || t.needs_grad(ln_pair);
    const GridGraph* gp = &g;
    return t.op(std::move(out), ng, [unary, ln_pair, gp, saved, t_steps, damping](Tape& tp,
                                                                                  Var self) {
        const GridGraph& gr = *gp;
        const int ec = gr.edge_count();
        const Tensor& uv2 = tp.val(unary);
        const Tensor& lv2 = tp.val(ln_pair);
        const Tensor& grad_out = tp.grad(self);
        const Tensor& bt = tp.val(self);
        Tensor du = Tensor::zeros({2, gr.m});
        Tensor dl = Tensor::zeros({4, ec});
        Tensor dm = Tensor::zeros({2 * ec, 2});

        // Readout: b_i = r_i / sum(r_i) with r_i(z) = psi_i(z) * prod of
        // incoming final messages.
        const Tensor& mfin = saved->m.back();
        for (int i = 0; i < gr.m; ++i) {
            double r[2], p[2];
            for (int z = 0; z < 2; ++z) {
                p[z] = msg_product(gr, mfin, i, -1, -1, z);
                r[z] = uv2.at(z, i) * p[z];
            }
            const double s = r[0] + r[1];
            const double dot = grad_out.at(0, i) * bt.at(0, i) + grad_out.at(1, i) * bt.at(1, i);
            for (int z = 0; z < 2; ++z) {
                const double dr = (grad_out.at(z, i) - dot) / s;
                du.at(z, i) += dr * p[z];
                for (const auto& [e, k] : gr.incident[static_cast<std::size_t>(i)])
                    dm.at(directed_index(gr, e, i), z) +=
                        dr * uv2.at(z, i) * msg_product(gr, mfin, i, k, -1, z);
            }
        }

        // Message updates, newest step first.
        for (int step = t_steps; step >= 1; --step) {
            const Tensor& prev = saved->m[static_cast<std::size_t>(step) - 1];
            const Tensor& upd = saved->upd[static_cast<std::size_t>(step) - 1];
            const Tensor& sn = saved->sn[static_cast<std::size_t>(step) - 1];
            Tensor dm_prev = Tensor::zeros({2 * ec, 2});
            for (int e = 0; e < ec; ++e) {
                const Edge& ed = gr.edges[static_cast<std::size_t>(e)];
                for (int dir = 0; dir < 2; ++dir) {
                    const int src = dir == 0 ? ed.i : ed.j;
                    const int dst = dir == 0 ? ed.j : ed.i;
                    const int de = 2 * e + dir;
                    const double dupd0 = (1.0 - damping) * dm.at(de, 0);
                    const double dupd1 = (1.0 - damping) * dm.at(de, 1);
                    dm_prev.at(de, 0) += damping * dm.at(de, 0);
                    dm_prev.at(de, 1) += damping * dm.at(de, 1);
                    const double dot = dupd0 * upd.at(de, 0) + dupd1 * upd.at(de, 1);
                    const double dn[2] = {(dupd0 - dot) / sn[de], (dupd1 - dot) / sn[de]};
                    double dc[2] = {0.0, 0.0};
                    for (int zs = 0; zs < 2; ++zs) {
                        const double c = msg_product(gr, prev, src, dst, -1, zs);
                        for (int zd = 0; zd < 2; ++zd) {
                            const int code = pair_code(gr, e, src, zs, zd);
                            const double psi = std::exp(lv2.at(code, e));
                            const double contrib = dn[zd] * psi;
                            dl.at(code, e) += contrib * uv2.at(zs, src) * c;
                            du.at(zs, src) += contrib * c;
                            dc[zs] += contrib * uv2.at(zs, src);
                        }
                    }
                    for (const auto& [e2, k] : gr.incident[static_cast<std::size_t>(src)]) {
                        if (k == dst) continue;
                        for (int zs = 0; zs < 2; ++zs)
                            dm_prev.at(directed_index(gr, e2, src), zs) +=
                                dc[zs] * msg_product(gr, prev, src, dst, k, zs);
                    }
                }
            }
            dm = std::move(dm_prev);
        }

        if (tp.needs_grad(unary)) tp.grad_buf(unary).vec() += du.vec();
        if (tp.needs_grad(ln_pair)) tp.grad_buf(ln_pair).vec() += dl.vec();
    });
}

} // namespace sva
