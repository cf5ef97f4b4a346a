#include "sva/model.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <utility>

#include "sva/adam.hpp"
#include "sva/checkpoint.hpp"
#include "sva/error.hpp"
#include "sva/infer_ops.hpp"
#include "sva/init.hpp"
#include "sva/ops.hpp"

namespace sva {

Variant parse_variant(const std::string& name) {
    if (name == "SM") return Variant::SM;
    if (name == "SIG") return Variant::SIG;
    if (name == "MF") return Variant::MF;
    if (name == "LBP") return Variant::LBP;
    if (name == "SIG-G2") return Variant::SIG_G2;
    if (name == "MF-G2") return Variant::MF_G2;
    if (name == "LBP-G2") return Variant::LBP_G2;
    if (name == "MF-SIG") return Variant::MF_SIG;
    if (name == "LBP-SIG") return Variant::LBP_SIG;
    throw ConfigError("unknown variant: " + name);
}

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::SM: return "SM";
        case Variant::SIG: return "SIG";
        case Variant::MF: return "MF";
        case Variant::LBP: return "LBP";
        case Variant::SIG_G2: return "SIG-G2";
        case Variant::MF_G2: return "MF-G2";
        case Variant::LBP_G2: return "LBP-G2";
        case Variant::MF_SIG: return "MF-SIG";
        case Variant::LBP_SIG: return "LBP-SIG";
    }
    throw ConfigError("unknown variant enum value");
}

std::vector<GlimpseKind> variant_glimpses(Variant v) {
    using G = GlimpseKind;
    switch (v) {
        case Variant::SM: return {G::softmax};
        case Variant::SIG: return {G::sigmoid};
        case Variant::MF: return {G::mf};
        case Variant::LBP: return {G::lbp};
        case Variant::SIG_G2: return {G::sigmoid, G::sigmoid};
        case Variant::MF_G2: return {G::mf, G::mf};
        case Variant::LBP_G2: return {G::lbp, G::lbp};
        case Variant::MF_SIG: return {G::mf, G::sigmoid};
        case Variant::LBP_SIG: return {G::lbp, G::sigmoid};
    }
    throw ConfigError("unknown variant enum value");
}

int ModelConfig::feature_h() const {
    return conv_out_extent(conv_out_extent(img_h, conv1_k, conv1_stride, conv1_pad), conv2_k,
                           conv2_stride, conv2_pad);
}

int ModelConfig::feature_w() const {
    return conv_out_extent(conv_out_extent(img_w, conv1_k, conv1_stride, conv1_pad), conv2_k,
                           conv2_stride, conv2_pad);
}

void ModelConfig::validate() const {
    if (h <= 0 || w <= 0 || n_i <= 0 || n_q <= 0 || n_c <= 0 || vocab < 2 || max_tokens < 1 ||
        img_c <= 0 || img_h <= 0 || img_w <= 0 || conv1_ch <= 0)
        throw ConfigError("model dimensions must be positive");
    if (k_answers < 2) throw ConfigError("answer count must be >= 2");
    if (t_steps < 0) throw ConfigError("inference step count must be >= 0");
    if (dropout_q < 0.0 || dropout_q >= 1.0 || dropout_cls < 0.0 || dropout_cls >= 1.0)
        throw ConfigError("dropout probabilities must lie in [0,1)");
    try {
        if (feature_h() != h || feature_w() != w)
            throw ConfigError("conv stack yields a " + std::to_string(feature_h()) + "x" +
                              std::to_string(feature_w()) + " feature map, grid wants " +
                              std::to_string(h) + "x" + std::to_string(w));
    } catch (const ShapeError& e) {
        throw ConfigError(std::string("conv geometry invalid: ") + e.what());
    }
}

namespace {

const std::map<std::string, int ModelConfig::*>& int_fields() {
    static const std::map<std::string, int ModelConfig::*> f = {
        {"n_i", &ModelConfig::n_i},
        {"n_q", &ModelConfig::n_q},
        {"n_c", &ModelConfig::n_c},
        {"h", &ModelConfig::h},
        {"w", &ModelConfig::w},
        {"k_answers", &ModelConfig::k_answers},
        {"t_steps", &ModelConfig::t_steps},
        {"vocab", &ModelConfig::vocab},
        {"max_tokens", &ModelConfig::max_tokens},
        {"img_c", &ModelConfig::img_c},
        {"img_h", &ModelConfig::img_h},
        {"img_w", &ModelConfig::img_w},
        {"conv1_ch", &ModelConfig::conv1_ch},
        {"conv1_k", &ModelConfig::conv1_k},
        {"conv1_stride", &ModelConfig::conv1_stride},
        {"conv1_pad", &ModelConfig::conv1_pad},
        {"conv2_k", &ModelConfig::conv2_k},
        {"conv2_stride", &ModelConfig::conv2_stride},
        {"conv2_pad", &ModelConfig::conv2_pad},
    };
    return f;
}

const std::map<std::string, double ModelConfig::*>& double_fields() {
    static const std::map<std::string, double ModelConfig::*> f = {
        {"dropout_q", &ModelConfig::dropout_q},
        {"dropout_cls", &ModelConfig::dropout_cls},
    };
    return f;
}

} // namespace

void write_model_config(std::ostream& os, const ModelConfig& cfg) {
    os << "variant=" << variant_name(cfg.variant) << "\n";
    for (const auto& [key, member] : int_fields()) os << key << "=" << cfg.*member << "\n";
    for (const auto& [key, member] : double_fields()) os << key << "=" << cfg.*member << "\n";
}

void write_model_config(const std::string& path, const ModelConfig& cfg) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open model config for writing: " + path);
    write_model_config(os, cfg);
    if (!os) throw DataError("write failed for model config: " + path);
}

ModelConfig read_model_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open model config: " + path);
    ModelConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError(path + ":" + std::to_string(lineno) + ": expected key=value");
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        try {
            if (key == "variant") {
                cfg.variant = parse_variant(value);
            } else if (auto it = int_fields().find(key); it != int_fields().end()) {
                cfg.*(it->second) = std::stoi(value);
            } else if (auto dt = double_fields().find(key); dt != double_fields().end()) {
                cfg.*(dt->second) = std::stod(value);
            } else {
                throw DataError(path + ":" + std::to_string(lineno) + ": unknown key " + key);
            }
        } catch (const std::invalid_argument&) {
            throw DataError(path + ":" + std::to_string(lineno) + ": bad value for " + key);
        } catch (const std::out_of_range&) {
            throw DataError(path + ":" + std::to_string(lineno) + ": bad value for " + key);
        } catch (const ConfigError& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw DataError(path + ": " + e.what());
    }
    return cfg;
}

ModelParams init_params(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    ModelParams p;
    ParamStore& s = p.store;
    p.conv1 = s.add("conv1/w", glorot_conv(cfg.conv1_ch, cfg.img_c, cfg.conv1_k, rng));
    p.conv2 = s.add("conv2/w", glorot_conv(cfg.n_i, cfg.conv1_ch, cfg.conv2_k, rng));
    p.gru_wz = s.add("gru/w_z", glorot_dense(cfg.n_q, cfg.vocab, rng));
    p.gru_wr = s.add("gru/w_r", glorot_dense(cfg.n_q, cfg.vocab, rng));
    p.gru_wh = s.add("gru/w_h", glorot_dense(cfg.n_q, cfg.vocab, rng));
    p.gru_uz = s.add("gru/u_z", glorot_dense(cfg.n_q, cfg.n_q, rng));
    p.gru_ur = s.add("gru/u_r", glorot_dense(cfg.n_q, cfg.n_q, rng));
    p.gru_uh = s.add("gru/u_h", glorot_dense(cfg.n_q, cfg.n_q, rng));
    p.gru_bz = s.add("gru/b_z", Tensor::zeros({cfg.n_q}));
    p.gru_br = s.add("gru/b_r", Tensor::zeros({cfg.n_q}));
    p.gru_bh = s.add("gru/b_h", Tensor::zeros({cfg.n_q}));
    const auto kinds = variant_glimpses(cfg.variant);
    for (std::size_t gi = 0; gi < kinds.size(); ++gi) {
        const std::string prefix = "g" + std::to_string(gi) + "/";
        GlimpseSlots gs;
        gs.u_x = s.add(prefix + "u_x", glorot_dense(cfg.n_c, cfg.n_i, rng));
        gs.u_q = s.add(prefix + "u_q", glorot_dense(cfg.n_c, cfg.n_q, rng));
        gs.u = s.add(prefix + "u", glorot_dense(1, cfg.n_c, rng));
        if (kinds[gi] == GlimpseKind::mf || kinds[gi] == GlimpseKind::lbp) {
            gs.v_y = s.add(prefix + "v_y", glorot_dense(cfg.n_c, 2 * cfg.n_i, rng));
            gs.v_q = s.add(prefix + "v_q", glorot_dense(cfg.n_c, cfg.n_q, rng));
            gs.v = s.add(prefix + "v", glorot_dense(4, cfg.n_c, rng));
        }
        p.glimpse.push_back(gs);
    }
    p.wc_hat = s.add("cls/wc_hat", glorot_dense(cfg.n_c, cfg.n_i, rng));
    p.wq_hat = s.add("cls/wq_hat", glorot_dense(cfg.n_c, cfg.n_q, rng));
    p.wc_tilde = s.add("cls/wc_tilde", glorot_dense(cfg.n_c, cfg.n_i, rng));
    p.wq_tilde = s.add("cls/wq_tilde", glorot_dense(cfg.n_c, cfg.n_q, rng));
    p.w_cls = s.add("cls/w", glorot_dense(cfg.k_answers, 2 * cfg.n_c, rng));
    return p;
}

void save_params(const std::string& path, const ModelParams& params) {
    Records records;
    for (int slot = 0; slot < params.store.size(); ++slot)
        records.emplace_back(params.store.name(slot), params.store.value(slot));
    write_checkpoint(path, records);
}

void load_params(const std::string& path, ModelParams& params) {
    const Records records = read_checkpoint(path);
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, tensor] : records) {
        if (!by_name.emplace(name, &tensor).second)
            throw DataError("duplicate checkpoint record: " + name);
    }
    for (int slot = 0; slot < params.store.size(); ++slot) {
        const std::string& name = params.store.name(slot);
        auto it = by_name.find(name);
        if (it == by_name.end()) throw DataError("checkpoint is missing parameter: " + name);
        Tensor& dst = params.store.value(slot);
        if (!dst.same_shape(*it->second))
            throw ShapeError("checkpoint parameter " + name + " has shape " +
                             it->second->shape_str() + ", config wants " + dst.shape_str());
        dst = *it->second;
        by_name.erase(it);
    }
    for (const auto& [name, tensor] : by_name) {
        (void)tensor;
        if (name.rfind("adam/", 0) != 0)
            throw DataError("checkpoint has unexpected record: " + name);
    }
}

namespace {

struct GlimpseOut {
    GlimpseKind kind;
    Var map;         // attention weights actually used for the context
    Var context;     // (n_i)
    Tensor map_val;  // artifact copy of the normalized attention map
    Tensor unary_map;
    double s_sum = 0.0;
    Tensor beliefs_val;  // structured kinds only
};

Var bilinear_cols(Tape& tape, Var proj_x, Var cols, Var proj_q, Var q) {
    // tanh(P_x * cols) with every column scaled by tanh(P_q * q).
    return colwise_mul(tape, tanh_(tape, matmul(tape, proj_x, cols)),
                       tanh_(tape, matvec(tape, proj_q, q)));
}

GlimpseOut run_glimpse(Tape& tape, const ModelConfig& cfg, const GridGraph& grid,
                       const GlimpseSlots& slots, GlimpseKind kind, Var feats, Var q,
                       bool training, Rng* rng) {
    // Dropout precedes every learned projection; the context pooling below
    // stays on the clean features.
    auto drop = [&](Var v) {
        return (training && rng) ? dropout(tape, v, cfg.dropout_cls, *rng, true) : v;
    };
    GlimpseOut out;
    out.kind = kind;
    const Var pooled =
        bilinear_cols(tape, tape.param(slots.u_x), drop(feats), tape.param(slots.u_q), drop(q));
    const Var scores =
        reshape(tape, matmul(tape, tape.param(slots.u), pooled), {cfg.m()});  // U g(x_i, q)

    if (kind == GlimpseKind::softmax) {
        out.map = softmax(tape, scores);
        out.context = matvec(tape, feats, out.map);
        out.map_val = tape.val(out.map);
        out.unary_map = out.map_val;
        out.s_sum = tape.val(out.map).vec().sum();
        return out;
    }

    const Var p1 = sigmoid_(tape, scores);  // psi_i(1)
    out.unary_map = tape.val(p1);
    Var weights_src = p1;
    if (kind == GlimpseKind::mf || kind == GlimpseKind::lbp) {
        if (slots.v_y < 0 || slots.v_q < 0 || slots.v < 0)
            throw ConfigError("parameter set lacks pairwise tables for a structured glimpse");
        const Var unary_tab = bernoulli_table(tape, p1);
        std::vector<std::pair<int, int>> edge_pairs;
        edge_pairs.reserve(grid.edges.size());
        for (const Edge& e : grid.edges) edge_pairs.emplace_back(e.i, e.j);
        const Var y = edge_concat(tape, feats, edge_pairs);
        const Var pooled_pair =
            bilinear_cols(tape, tape.param(slots.v_y), drop(y), tape.param(slots.v_q), drop(q));
        const Var ln_pair = tanh_(tape, matmul(tape, tape.param(slots.v), pooled_pair));
        const Var beliefs = kind == GlimpseKind::mf
                                ? mf_infer_op(tape, unary_tab, ln_pair, grid, cfg.t_steps)
                                : lbp_infer_op(tape, unary_tab, ln_pair, grid, cfg.t_steps);
        out.beliefs_val = tape.val(beliefs);
        weights_src = row(tape, beliefs, 1);  // b_i(1)
    }
    const Var s = sum_all(tape, weights_src);
    out.s_sum = tape.val(s)[0];
    if (out.s_sum <= 1e-8)
        throw NumericError("degenerate attention: sum of region weights " +
                           std::to_string(out.s_sum) + " <= 1e-8");
    out.map = div_by(tape, weights_src, s);
    out.map_val = tape.val(out.map);
    out.context = matvec(tape, feats, out.map);
    return out;
}

} // namespace

Var conv_stack(Tape& tape, const ModelConfig& cfg, ModelParams& params, Var image) {
    const Tensor& img = tape.val(image);
    if (img.rank() != 3 || img.dim(0) != cfg.img_c || img.dim(1) != cfg.img_h ||
        img.dim(2) != cfg.img_w)
        throw ShapeError("image must be [" + std::to_string(cfg.img_c) + "x" +
                         std::to_string(cfg.img_h) + "x" + std::to_string(cfg.img_w) + "], got " +
                         img.shape_str());
    const Var h1 = relu(
        tape, conv2d(tape, image, tape.param(params.conv1), cfg.conv1_stride, cfg.conv1_pad));
    return relu(tape,
                conv2d(tape, h1, tape.param(params.conv2), cfg.conv2_stride, cfg.conv2_pad));
}

Var encode_question(Tape& tape, const ModelConfig& cfg, ModelParams& params,
                    const std::vector<int>& tokens, bool training, Rng* rng) {
    Var h = tape.constant(Tensor::zeros({cfg.n_q}));
    for (int tok : tokens) {
        if (tok < 0 || tok >= cfg.vocab)
            throw DataError("token id " + std::to_string(tok) + " outside vocabulary of " +
                            std::to_string(cfg.vocab));
        if (tok == 0) continue;  // pad
        // Word dropout on the one-hot input: a token's single hot element is
        // either zeroed or inverse-scaled, so all three gate embeddings share
        // one Bernoulli draw per step.
        double keep = 1.0;
        if (training && rng && cfg.dropout_q > 0.0)
            keep = rng->uniform() < cfg.dropout_q ? 0.0 : 1.0 / (1.0 - cfg.dropout_q);
        auto emb = [&](int w) {
            const Var c = column(tape, tape.param(w), tok);
            return keep == 1.0 ? c : scale(tape, c, keep);
        };
        const Var z = sigmoid_(tape, add(tape,
                                         add(tape, emb(params.gru_wz),
                                             matvec(tape, tape.param(params.gru_uz), h)),
                                         tape.param(params.gru_bz)));
        const Var r = sigmoid_(tape, add(tape,
                                         add(tape, emb(params.gru_wr),
                                             matvec(tape, tape.param(params.gru_ur), h)),
                                         tape.param(params.gru_br)));
        const Var cand = tanh_(
            tape, add(tape,
                      add(tape, emb(params.gru_wh),
                          matvec(tape, tape.param(params.gru_uh), mul(tape, r, h))),
                      tape.param(params.gru_bh)));
        h = add(tape, mul(tape, one_minus(tape, z), h), mul(tape, z, cand));
    }
    return h;
}

ForwardResult forward(Tape& tape, const ModelConfig& cfg, ModelParams& params,
                      const GridGraph& grid, const Tensor& image,
                      const std::vector<int>& tokens, bool training, Rng* dropout_rng,
                      bool want_trajectory) {
    if (grid.h != cfg.h || grid.w != cfg.w)
        throw ConfigError("grid does not match model config");
    if (training && (cfg.dropout_q > 0.0 || cfg.dropout_cls > 0.0) && !dropout_rng)
        throw ConfigError("training with dropout requires an rng");
    const auto kinds = variant_glimpses(cfg.variant);
    if (params.glimpse.size() != kinds.size())
        throw ConfigError("parameter set does not match variant " + variant_name(cfg.variant));

    const Var img = tape.constant(image);
    const Var fmap = conv_stack(tape, cfg, params, img);
    const Var feats = reshape(tape, fmap, {cfg.n_i, cfg.m()});
    Var q = encode_question(tape, cfg, params, tokens, training, dropout_rng);
    auto drop_cls = [&](Var v) {
        return (training && dropout_rng) ? dropout(tape, v, cfg.dropout_cls, *dropout_rng, true)
                                         : v;
    };

    std::vector<GlimpseOut> glimpses;
    for (std::size_t gi = 0; gi < kinds.size(); ++gi)
        glimpses.push_back(run_glimpse(tape, cfg, grid, params.glimpse[gi], kinds[gi], feats, q,
                                       training, dropout_rng));

    const GlimpseOut& g0 = glimpses.front();
    const Var s_hat =
        mul(tape, tanh_(tape, matvec(tape, tape.param(params.wc_hat), drop_cls(g0.context))),
            tanh_(tape, matvec(tape, tape.param(params.wq_hat), drop_cls(q))));
    Var s_tilde = s_hat;  // 1-glimpse variants feed the pooled vector twice
    if (glimpses.size() == 2) {
        const GlimpseOut& g1 = glimpses.back();
        s_tilde =
            mul(tape, tanh_(tape, matvec(tape, tape.param(params.wc_tilde), drop_cls(g1.context))),
                tanh_(tape, matvec(tape, tape.param(params.wq_tilde), drop_cls(q))));
    }
    Var cat = concat2(tape, s_hat, s_tilde);
    cat = drop_cls(cat);
    const Var logits = matvec(tape, tape.param(params.w_cls), cat);

    ForwardResult res;
    res.logits = logits;
    ForwardArtifacts& art = res.art;
    art.unary_map = g0.unary_map;
    if (!g0.beliefs_val.empty()) {
        Tensor smap({cfg.m()});
        smap.vec() = g0.beliefs_val.mat().row(1).transpose();
        art.structured_map = smap;
    }
    for (const auto& g : glimpses) art.attention_maps.push_back(g.map_val);
    art.c_hat = tape.val(g0.context);
    art.c_tilde = glimpses.size() == 2 ? tape.val(glimpses.back().context) : art.c_hat;
    art.s_hat = tape.val(s_hat);
    art.s_tilde = tape.val(s_tilde);
    art.logits = tape.val(logits);
    art.s_sum = g0.s_sum;

    if (want_trajectory) {
        for (std::size_t gi = 0; gi < kinds.size(); ++gi) {
            if (kinds[gi] != GlimpseKind::mf && kinds[gi] != GlimpseKind::lbp) continue;
            // Rebuild the potential tables this glimpse produced and rerun the
            // plain inference to expose the per-step trajectory.
            PotentialTable pot;
            pot.unary = Tensor({2, cfg.m()});
            const Tensor& p1 = glimpses[gi].unary_map;
            pot.unary.mat().row(0) = (1.0 - p1.array()).matrix().transpose();
            pot.unary.mat().row(1) = p1.vec().transpose();
            // The pairwise table is not kept on the artifact path; recompute
            // it without the tape.
            Tape scratch(&params.store);
            const Var img2 = scratch.constant(image);
            const Var f2 = reshape(scratch, conv_stack(scratch, cfg, params, img2),
                                   {cfg.n_i, cfg.m()});
            const Var q2 = encode_question(scratch, cfg, params, tokens);
            std::vector<std::pair<int, int>> edge_pairs;
            for (const Edge& e : grid.edges) edge_pairs.emplace_back(e.i, e.j);
            const Var y2 = edge_concat(scratch, f2, edge_pairs);
            const GlimpseSlots& slots = params.glimpse[gi];
            const Var pooled2 = bilinear_cols(scratch, scratch.param(slots.v_y), y2,
                                              scratch.param(slots.v_q), q2);
            const Var ln2 = tanh_(scratch, matmul(scratch, scratch.param(slots.v), pooled2));
            pot.ln_pair = scratch.val(ln2);
            InferenceConfig icfg;
            icfg.t_steps = cfg.t_steps;
            if (kinds[gi] == GlimpseKind::mf) {
                art.trajectories.push_back(mean_field_infer(grid, pot, icfg));
            } else {
                // LBP renders as (psi_i, final b): prepend the unary table to
                // the single-step readout.
                const Beliefs readout = lbp_infer(grid, pot, icfg);
                Beliefs traj;
                traj.steps.push_back(pot.unary);
                traj.steps.push_back(readout.final_step());
                art.trajectories.push_back(std::move(traj));
            }
        }
    }
    return res;
}

int predict_answer(const Tensor& logits) {
    int best = 0;
    for (Index i = 1; i < logits.size(); ++i)
        if (logits[i] > logits[best]) best = static_cast<int>(i);
    return best;
}

} // namespace sva
