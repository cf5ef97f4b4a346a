#include "sva/inference.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "sva/error.hpp"
#include "sva/tape.hpp"

namespace sva {

void validate_inference_config(const InferenceConfig& cfg) {
    if (cfg.t_steps < 0)
        throw ConfigError("inference step count must be >= 0, got " + std::to_string(cfg.t_steps));
    if (cfg.damping < 0.0 || cfg.damping >= 1.0)
        throw ConfigError("damping must lie in [0,1), got " + std::to_string(cfg.damping));
}

namespace {

void debug_check_normalized(const Tensor& table, const char* what) {
    if constexpr (kDebugChecks) {
        for (int c = 0; c < table.dim(1); ++c) {
            const double s = table.at(0, c) + table.at(1, c);
            if (std::abs(s - 1.0) > 1e-12)
                throw NumericError(std::string(what) + " lost normalization: column sum " +
                                   std::to_string(s));
        }
    } else {
        (void)table;
        (void)what;
    }
}

// One mean-field update of node i, reading neighbor beliefs from `nbr_src`
// and writing into column i of `dst`.
void mf_update_node(const GridGraph& g, const PotentialTable& pot, const Tensor& nbr_src,
                    int i, Tensor& dst) {
    double u[2];
    for (int z = 0; z < 2; ++z) {
        double coupling = 0.0;
        for (const auto& [e, j] : g.incident[static_cast<std::size_t>(i)])
            for (int zj = 0; zj < 2; ++zj)
                coupling += nbr_src.at(zj, j) * pot.ln_pair.at(pair_code(g, e, i, z, zj), e);
        u[z] = pot.unary.at(z, i) * std::exp(coupling);
    }
    const double s = u[0] + u[1];
    dst.at(0, i) = u[0] / s;
    dst.at(1, i) = u[1] / s;
}

} // namespace

Beliefs mean_field_infer(const GridGraph& g, const PotentialTable& pot,
                         const InferenceConfig& cfg) {
    validate_potentials(g, pot);
    validate_inference_config(cfg);
    Beliefs out;
    out.steps.reserve(static_cast<std::size_t>(cfg.t_steps) + 1);
    out.steps.push_back(pot.unary);  // b0 = unary verbatim
    for (int t = 1; t <= cfg.t_steps; ++t) {
        if (cfg.schedule == Schedule::parallel) {
            const Tensor& prev = out.steps.back();
            Tensor next({2, g.m});
            for (int i = 0; i < g.m; ++i) mf_update_node(g, pot, prev, i, next);
            out.steps.push_back(std::move(next));
        } else {
            Tensor next = out.steps.back();
            for (int i = 0; i < g.m; ++i) mf_update_node(g, pot, next, i, next);
            out.steps.push_back(std::move(next));
        }
        debug_check_normalized(out.steps.back(), "mean-field beliefs");
    }
    return out;
}

namespace {

// Product of incoming messages at `node` over state z, excluding the message
// arriving from `exclude` (pass -1 to keep all).
double incoming_product(const GridGraph& g, const Tensor& msgs, int node, int exclude, int z) {
    double p = 1.0;
    for (const auto& [e, k] : g.incident[static_cast<std::size_t>(node)]) {
        if (k == exclude) continue;
        p *= msgs.at(directed_index(g, e, node), z);
    }
    return p;
}

} // namespace

Beliefs lbp_infer(const GridGraph& g, const PotentialTable& pot, const InferenceConfig& cfg,
                  Messages* out_messages) {
    validate_potentials(g, pot);
    validate_inference_config(cfg);
    const int ecount = g.edge_count();
    Tensor msgs = Tensor::full({2 * ecount, 2}, 0.5);
    Tensor next = msgs;
    for (int t = 1; t <= cfg.t_steps; ++t) {
        for (int e = 0; e < ecount; ++e) {
            const Edge& ed = g.edges[static_cast<std::size_t>(e)];
            for (int dir = 0; dir < 2; ++dir) {
                const int src = dir == 0 ? ed.i : ed.j;
                const int dst = dir == 0 ? ed.j : ed.i;
                double n[2];
                for (int zd = 0; zd < 2; ++zd) {
                    double acc = 0.0;
                    for (int zs = 0; zs < 2; ++zs)
                        acc += std::exp(pot.ln_pair.at(pair_code(g, e, src, zs, zd), e)) *
                               pot.unary.at(zs, src) * incoming_product(g, msgs, src, dst, zs);
                    n[zd] = acc;
                }
                const double s = n[0] + n[1];
                const int de = 2 * e + dir;
                next.at(de, 0) = (1.0 - cfg.damping) * (n[0] / s) + cfg.damping * msgs.at(de, 0);
                next.at(de, 1) = (1.0 - cfg.damping) * (n[1] / s) + cfg.damping * msgs.at(de, 1);
            }
        }
        std::swap(msgs, next);
        if constexpr (kDebugChecks) {
            for (int de = 0; de < 2 * ecount; ++de) {
                const double s = msgs.at(de, 0) + msgs.at(de, 1);
                if (std::abs(s - 1.0) > 1e-12)
                    throw NumericError("message lost normalization: sum " + std::to_string(s));
            }
        }
    }
    Tensor readout({2, g.m});
    for (int i = 0; i < g.m; ++i) {
        double r[2];
        for (int z = 0; z < 2; ++z)
            r[z] = pot.unary.at(z, i) * incoming_product(g, msgs, i, -1, z);
        const double s = r[0] + r[1];
        readout.at(0, i) = r[0] / s;
        readout.at(1, i) = r[1] / s;
    }
    debug_check_normalized(readout, "LBP beliefs");
    if (out_messages) {
        out_messages->m = msgs;
        out_messages->t = cfg.t_steps;
    }
    Beliefs out;
    out.steps.push_back(std::move(readout));
    return out;
}

Tensor beliefs_to_attention(const Beliefs& b) {
    const Tensor& last = b.final_step();
    Tensor a({last.dim(1)});
    a.vec() = last.mat().row(1).transpose();
    return a;
}

} // namespace sva
