#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <vector>

#include "sva/crf.hpp"
#include "sva/error.hpp"
#include "sva/infer_ops.hpp"
#include "sva/inference.hpp"
#include "sva/ops.hpp"
#include "sva/rng.hpp"
#include "sva/tape.hpp"
#include "sva/tensor.hpp"
#include "test_util.hpp"

using namespace sva;
using sva::test::check_param_grads;
using sva::test::max_abs_diff;
using sva::test::random_tensor;

namespace {

PotentialTable random_potentials(const GridGraph& g, std::uint64_t seed) {
    Rng rng(seed);
    PotentialTable pot;
    pot.unary = random_tensor({2, g.m}, rng, 0.2, 2.0);
    // Pairwise logs produced by a tanh squash live in [-1, 1].
    pot.ln_pair = random_tensor({4, g.edge_count()}, rng, -1.0, 1.0);
    return pot;
}

} // namespace

TEST_CASE("inference config validation") {
    InferenceConfig cfg;
    cfg.t_steps = -1;
    CHECK_THROWS_AS(validate_inference_config(cfg), ConfigError);
    cfg.t_steps = 3;
    cfg.damping = 1.0;
    CHECK_THROWS_AS(validate_inference_config(cfg), ConfigError);
    cfg.damping = -0.1;
    CHECK_THROWS_AS(validate_inference_config(cfg), ConfigError);
    cfg.damping = 0.0;
    CHECK_NOTHROW(validate_inference_config(cfg));
}

TEST_CASE("mean field: frozen single-edge update value") {
    // Two nodes, uniform unary, pair log 0.96 only when both are on.  After
    // one parallel step each node's on-belief is sigmoid(0.5 * 0.96).
    GridGraph g = build_grid(1, 2);
    PotentialTable pot;
    pot.unary = Tensor::full({2, 2}, 0.5);
    pot.ln_pair = Tensor({4, 1}, {0.0, 0.0, 0.0, 0.96});
    InferenceConfig cfg;
    cfg.t_steps = 1;
    Beliefs b = mean_field_infer(g, pot, cfg);
    REQUIRE(b.steps.size() == 2);
    const double want = 1.0 / (1.0 + std::exp(-0.48));
    CHECK(want == doctest::Approx(0.61774787));  // pinned independently
    for (int i = 0; i < 2; ++i) {
        CHECK(b.final_step().at(1, i) == doctest::Approx(want).epsilon(1e-12));
        CHECK(b.final_step().at(0, i) == doctest::Approx(1.0 - want).epsilon(1e-12));
    }
}

TEST_CASE("mean field: step zero is the unary table verbatim") {
    GridGraph g = build_grid(2, 2);
    PotentialTable pot = random_potentials(g, 3);
    InferenceConfig cfg;
    cfg.t_steps = 0;
    Beliefs b = mean_field_infer(g, pot, cfg);
    REQUIRE(b.steps.size() == 1);
    CHECK(b.t_steps() == 0);
    CHECK(max_abs_diff(b.steps[0], pot.unary) == 0.0);  // copied, not normalized
}

TEST_CASE("mean field: updated beliefs are normalized distributions") {
    GridGraph g = build_grid(3, 3);
    PotentialTable pot = random_potentials(g, 5);
    InferenceConfig cfg;
    cfg.t_steps = 4;
    Beliefs b = mean_field_infer(g, pot, cfg);
    REQUIRE(b.steps.size() == 5);
    for (std::size_t t = 1; t < b.steps.size(); ++t)
        for (int i = 0; i < g.m; ++i)
            CHECK(b.steps[t].at(0, i) + b.steps[t].at(1, i) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("mean field: parallel and sequential reach the same fixed point") {
    GridGraph g = build_grid(3, 3);
    PotentialTable pot = random_potentials(g, 7);
    InferenceConfig par;
    par.t_steps = 200;
    par.schedule = Schedule::parallel;
    InferenceConfig seq = par;
    seq.schedule = Schedule::sequential;
    Beliefs bp = mean_field_infer(g, pot, par);
    Beliefs bs = mean_field_infer(g, pot, seq);
    CHECK(max_abs_diff(bp.final_step(), bs.final_step()) < 1e-9);
    // And the fixed point is stable: one more sweep barely moves it.
    CHECK(max_abs_diff(bp.steps[199], bp.steps[200]) < 1e-10);
}

TEST_CASE("mean field: sequential sweeps never increase the free energy") {
    for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
        GridGraph g = build_grid(3, 3);
        PotentialTable pot = random_potentials(g, seed);
        InferenceConfig cfg;
        cfg.t_steps = 30;
        cfg.schedule = Schedule::sequential;
        Beliefs b = mean_field_infer(g, pot, cfg);
        // Skip the raw unary step: free energy is defined for distributions.
        for (std::size_t t = 1; t + 1 < b.steps.size(); ++t) {
            const double f0 = mean_field_free_energy(g, pot, b.steps[t]);
            const double f1 = mean_field_free_energy(g, pot, b.steps[t + 1]);
            CHECK(f1 <= f0 + 1e-10);
        }
    }
}

TEST_CASE("mean field: free energy of the fixed point bounds -log Z") {
    GridGraph g = build_grid(3, 3);
    PotentialTable pot = random_potentials(g, 17);
    InferenceConfig cfg;
    cfg.t_steps = 100;
    cfg.schedule = Schedule::sequential;
    Beliefs b = mean_field_infer(g, pot, cfg);
    const double f = mean_field_free_energy(g, pot, b.final_step());
    const double neg_log_z = -exact_log_partition(g, pot);
    CHECK(f >= neg_log_z - 1e-9);
    // The bound should also be reasonably tight for mild couplings.
    CHECK(f - neg_log_z < 1.0);
}

TEST_CASE("lbp: uniform initial messages and step-0 readout") {
    GridGraph g = build_grid(2, 2);
    PotentialTable pot = random_potentials(g, 19);
    InferenceConfig cfg;
    cfg.t_steps = 0;
    Messages msgs;
    Beliefs b = lbp_infer(g, pot, cfg, &msgs);
    REQUIRE(b.steps.size() == 1);
    CHECK(msgs.t == 0);
    REQUIRE(msgs.m.dim(0) == 2 * g.edge_count());
    for (Index i = 0; i < msgs.m.size(); ++i) CHECK(msgs.m[i] == 0.5);
    // With all messages at 0.5 the readout is the normalized unary table.
    for (int i = 0; i < g.m; ++i) {
        const double s = pot.unary.at(0, i) + pot.unary.at(1, i);
        CHECK(b.final_step().at(1, i) ==
              doctest::Approx(pot.unary.at(1, i) / s).epsilon(1e-12));
    }
}

TEST_CASE("lbp: exact marginals on trees once messages traverse the diameter") {
    // 1xN grids are chains, i.e. trees, where loopy BP is exact.
    for (int n : {2, 4, 6}) {
        GridGraph g = build_grid(1, n);
        PotentialTable pot = random_potentials(g, 100 + static_cast<std::uint64_t>(n));
        InferenceConfig cfg;
        cfg.t_steps = n;  // >= diameter
        Beliefs b = lbp_infer(g, pot, cfg);
        Tensor exact = exact_node_marginals(g, pot);
        CHECK(max_abs_diff(b.final_step(), exact) < 1e-10);
    }
}

TEST_CASE("lbp: close to exact marginals on a mildly coupled loopy grid") {
    GridGraph g = build_grid(3, 3);
    Rng rng(23);
    PotentialTable pot;
    pot.unary = random_tensor({2, g.m}, rng, 0.2, 2.0);
    pot.ln_pair = random_tensor({4, g.edge_count()}, rng, -0.3, 0.3);
    InferenceConfig cfg;
    cfg.t_steps = 60;
    Beliefs b = lbp_infer(g, pot, cfg);
    Tensor exact = exact_node_marginals(g, pot);
    CHECK(max_abs_diff(b.final_step(), exact) < 0.02);
}

TEST_CASE("lbp: damping converges to the same fixed point") {
    GridGraph g = build_grid(3, 3);
    PotentialTable pot = random_potentials(g, 29);
    InferenceConfig plain;
    plain.t_steps = 300;
    InferenceConfig damped = plain;
    damped.damping = 0.5;
    Beliefs b0 = lbp_infer(g, pot, plain);
    Beliefs b1 = lbp_infer(g, pot, damped);
    CHECK(max_abs_diff(b0.final_step(), b1.final_step()) < 1e-8);
}

TEST_CASE("lbp: messages stay normalized") {
    GridGraph g = build_grid(3, 3);
    PotentialTable pot = random_potentials(g, 31);
    InferenceConfig cfg;
    cfg.t_steps = 5;
    cfg.damping = 0.3;
    Messages msgs;
    lbp_infer(g, pot, cfg, &msgs);
    CHECK(msgs.t == 5);
    for (int d = 0; d < msgs.m.dim(0); ++d)
        CHECK(msgs.m.at(d, 0) + msgs.m.at(d, 1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("beliefs_to_attention extracts the on-row") {
    Beliefs b;
    b.steps.push_back(Tensor({2, 3}, {0.4, 0.1, 0.9, 0.6, 0.9, 0.1}));
    Tensor att = beliefs_to_attention(b);
    REQUIRE(att.shape() == std::vector<int>{3});
    CHECK(att[0] == doctest::Approx(0.6));
    CHECK(att[1] == doctest::Approx(0.9));
    CHECK(att[2] == doctest::Approx(0.1));
}

// ---------------------------------------------------------------------------
// Differentiable inference layers.
// ---------------------------------------------------------------------------

TEST_CASE("mf_infer_op forward matches the plain solver") {
    GridGraph g = build_grid(2, 3);
    PotentialTable pot = random_potentials(g, 37);
    InferenceConfig cfg;
    cfg.t_steps = 3;
    Beliefs plain = mean_field_infer(g, pot, cfg);

    Tape tape;
    Var out = mf_infer_op(tape, tape.constant(pot.unary), tape.constant(pot.ln_pair), g, 3);
    CHECK(max_abs_diff(tape.val(out), plain.final_step()) < 1e-14);
}

TEST_CASE("lbp_infer_op forward matches the plain solver") {
    GridGraph g = build_grid(2, 3);
    PotentialTable pot = random_potentials(g, 41);
    for (double damping : {0.0, 0.4}) {
        InferenceConfig cfg;
        cfg.t_steps = 4;
        cfg.damping = damping;
        Beliefs plain = lbp_infer(g, pot, cfg);
        Tape tape;
        Var out = lbp_infer_op(tape, tape.constant(pot.unary), tape.constant(pot.ln_pair), g,
                               4, damping);
        CHECK(max_abs_diff(tape.val(out), plain.final_step()) < 1e-14);
    }
}

TEST_CASE("fd: mf_infer_op gradients w.r.t. unary and pairwise potentials") {
    GridGraph g = build_grid(2, 2);
    Rng rng(43);
    ParamStore store;
    const int unary = store.add("unary", random_tensor({2, g.m}, rng, 0.3, 1.5));
    const int ln_pair = store.add("ln_pair", random_tensor({4, g.edge_count()}, rng, -0.8, 0.8));
    const Tensor wts = [&] {
        Rng r(44);
        return random_tensor({2, g.m}, r, 0.1, 1.0);
    }();
    for (int t_steps : {0, 1, 3}) {
        check_param_grads(
            store,
            [&](Tape& t) {
                Var b = mf_infer_op(t, t.param(unary), t.param(ln_pair), g, t_steps);
                return sum_all(t, mul(t, b, t.constant(wts)));
            },
            1e-5, 5e-6);
    }
}

TEST_CASE("fd: lbp_infer_op gradients w.r.t. unary and pairwise potentials") {
    GridGraph g = build_grid(2, 2);
    Rng rng(47);
    ParamStore store;
    const int unary = store.add("unary", random_tensor({2, g.m}, rng, 0.3, 1.5));
    const int ln_pair = store.add("ln_pair", random_tensor({4, g.edge_count()}, rng, -0.8, 0.8));
    const Tensor wts = [&] {
        Rng r(48);
        return random_tensor({2, g.m}, r, 0.1, 1.0);
    }();
    const std::vector<std::pair<int, double>> cases = {{0, 0.0}, {1, 0.0}, {3, 0.0}, {3, 0.5}};
    for (auto [t_steps, damping] : cases) {
        check_param_grads(
            store,
            [&, steps = t_steps, d = damping](Tape& t) {
                Var b = lbp_infer_op(t, t.param(unary), t.param(ln_pair), g, steps, d);
                return sum_all(t, mul(t, b, t.constant(wts)));
            },
            1e-5, 5e-6);
    }
}

TEST_CASE("infer ops reject mis-shaped potential tables") {
    GridGraph g = build_grid(2, 2);
    Tape tape;
    Var bad_unary = tape.constant(Tensor({2, 3}));
    Var pair = tape.constant(Tensor::full({4, 4}, 0.1));
    CHECK_THROWS_AS(mf_infer_op(tape, bad_unary, pair, g, 1), ShapeError);
    Var unary = tape.constant(Tensor::full({2, 4}, 0.5));
    Var bad_pair = tape.constant(Tensor({4, 2}));
    CHECK_THROWS_AS(lbp_infer_op(tape, unary, bad_pair, g, 1), ShapeError);
}
