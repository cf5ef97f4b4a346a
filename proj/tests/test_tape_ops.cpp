#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "sva/adam.hpp"
#include "sva/checkpoint.hpp"
#include "sva/error.hpp"
#include "sva/init.hpp"
#include "sva/ops.hpp"
#include "sva/rng.hpp"
#include "sva/tape.hpp"
#include "sva/tensor.hpp"
#include "test_util.hpp"

using namespace sva;
using sva::test::check_param_grads;
using sva::test::random_tensor;

namespace {

/// Weighted scalar readout so every output element receives a distinct
/// gradient seed: sum(out * weights).
Var weighted_sum(Tape& t, Var out, const Tensor& weights) {
    return sum_all(t, mul(t, out, t.constant(weights)));
}

Tensor weights_for(const std::vector<int>& shape, std::uint64_t seed = 17) {
    Rng rng(seed);
    return random_tensor(shape, rng, 0.1, 1.0);
}

} // namespace

TEST_CASE("tape records values and routes gradients into the store") {
    ParamStore store;
    const int w = store.add("w", Tensor({2}, {1.0, -2.0}));
    Tape tape(&store);
    Var v = tape.param(w);
    Var s = sum_all(tape, mul(tape, v, v));  // sum w_i^2
    CHECK(tape.val(s)[0] == doctest::Approx(5.0));
    tape.backward(s);
    CHECK(store.grad(w)[0] == doctest::Approx(2.0));
    CHECK(store.grad(w)[1] == doctest::Approx(-4.0));

    // Gradients accumulate across backward sweeps until cleared.
    Tape tape2(&store);
    Var v2 = tape2.param(w);
    tape2.backward(sum_all(tape2, mul(tape2, v2, v2)));
    CHECK(store.grad(w)[0] == doctest::Approx(4.0));
    store.zero_grads();
    CHECK(store.grad(w)[0] == 0.0);
}

TEST_CASE("backward requires a scalar root or an explicit seed") {
    Tape tape;
    Var x = tape.input(Tensor({2}, {1.0, 2.0}));
    Var y = scale(tape, x, 3.0);
    CHECK_THROWS_AS(tape.backward(y), ShapeError);
    tape.backward(y, Tensor({2}, {1.0, 10.0}));
    CHECK(tape.grad(x)[0] == doctest::Approx(3.0));
    CHECK(tape.grad(x)[1] == doctest::Approx(30.0));
}

TEST_CASE("grad_enabled=false records values but no parameter gradients") {
    ParamStore store;
    const int w = store.add("w", Tensor({1}, {2.0}));
    store.zero_grads();
    Tape tape(&store, /*grad_enabled=*/false);
    CHECK_FALSE(tape.grad_enabled());
    Var v = tape.param(w);
    Var s = mul(tape, v, v);
    CHECK(tape.val(s)[0] == doctest::Approx(4.0));
    CHECK_FALSE(tape.needs_grad(v));
    tape.backward(s);
    CHECK(store.grad(w)[0] == 0.0);
    CHECK(tape.backward_visits() == 0);
}

TEST_CASE("inputs get gradients even on a grad-disabled tape") {
    // Receptive-field analysis path: parameters frozen, image gradient wanted.
    ParamStore store;
    const int w = store.add("w", Tensor({1}, {3.0}));
    store.zero_grads();
    Tape tape(&store, false);
    Var img = tape.input(Tensor({2}, {1.0, 2.0}));
    Var s = sum_all(tape, colwise_mul(tape, reshape(tape, img, {1, 2}), tape.param(w)));
    tape.backward(s);
    CHECK(tape.has_grad(img));
    CHECK(tape.grad(img)[0] == doctest::Approx(3.0));
    CHECK(tape.grad(img)[1] == doctest::Approx(3.0));
    CHECK(store.grad(w)[0] == 0.0);
}

TEST_CASE("constants never collect gradients") {
    Tape tape;
    Var c = tape.constant(Tensor({2}, {1.0, 1.0}));
    Var x = tape.input(Tensor({2}, {2.0, 3.0}));
    Var s = sum_all(tape, mul(tape, c, x));
    tape.backward(s);
    CHECK_FALSE(tape.needs_grad(c));
    CHECK_FALSE(tape.has_grad(c));
    CHECK(tape.grad(x)[0] == doctest::Approx(1.0));
}

// ---------------------------------------------------------------------------
// Finite-difference checks, one per op.
// ---------------------------------------------------------------------------

TEST_CASE("fd: elementwise binary and unary ops") {
    Rng rng(5);
    ParamStore store;
    const int a = store.add("a", random_tensor({2, 3}, rng, 0.2, 1.5));
    const int b = store.add("b", random_tensor({2, 3}, rng, 0.2, 1.5));
    const Tensor wts = weights_for({2, 3});

    check_param_grads(store, [&](Tape& t) {
        return weighted_sum(t, add(t, t.param(a), t.param(b)), wts);
    });
    check_param_grads(store, [&](Tape& t) {
        return weighted_sum(t, sub(t, t.param(a), t.param(b)), wts);
    });
    check_param_grads(store, [&](Tape& t) {
        return weighted_sum(t, mul(t, t.param(a), t.param(b)), wts);
    });
    check_param_grads(store, [&](Tape& t) {
        return weighted_sum(t, scale(t, t.param(a), -2.5), wts);
    });
    check_param_grads(store, [&](Tape& t) {
        return weighted_sum(t, one_minus(t, t.param(a)), wts);
    });
    check_param_grads(store, [&](Tape& t) {
        return weighted_sum(t, tanh_(t, t.param(a)), wts);
    });
    check_param_grads(store, [&](Tape& t) {
        return weighted_sum(t, sigmoid_(t, t.param(a)), wts);
    });
    check_param_grads(store, [&](Tape& t) {
        return weighted_sum(t, exp_(t, scale(t, t.param(a), 0.5)), wts);
    });
}

TEST_CASE("fd: relu away from the kink") {
    ParamStore store;
    const int a = store.add("a", Tensor({4}, {-1.5, -0.3, 0.4, 2.0}));
    const Tensor wts = weights_for({4});
    check_param_grads(store, [&](Tape& t) {
        return weighted_sum(t, relu(t, t.param(a)), wts);
    });
    // Value check including both sides of the kink.
    Tape tape(&store);
    const Tensor& v = tape.val(relu(tape, tape.param(a)));
    CHECK(v[0] == 0.0);
    CHECK(v[1] == 0.0);
    CHECK(v[2] == doctest::Approx(0.4));
    CHECK(v[3] == doctest::Approx(2.0));
}

TEST_CASE("fd: matrix products") {
    Rng rng(6);
    ParamStore store;
    const int a = store.add("a", random_tensor({3, 4}, rng));
    const int b = store.add("b", random_tensor({4, 2}, rng));
    const int x = store.add("x", random_tensor({4}, rng));
    const int y = store.add("y", random_tensor({3}, rng));

    check_param_grads(store, [&](Tape& t) {
        return weighted_sum(t, matmul(t, t.param(a), t.param(b)), weights_for({3, 2}));
    });
    check_param_grads(store, [&](Tape& t) {
        return weighted_sum(t, matvec(t, t.param(a), t.param(x)), weights_for({3}));
    });
    check_param_grads(store, [&](Tape& t) {
        return weighted_sum(t, matvec_t(t, t.param(a), t.param(y)), weights_for({4}));
    });
}

TEST_CASE("matvec_t equals transpose-then-multiply") {
    Rng rng(7);
    Tensor a = random_tensor({3, 2}, rng);
    Tensor y = random_tensor({3}, rng);
    Tape tape;
    const Tensor& out = tape.val(matvec_t(tape, tape.constant(a), tape.constant(y)));
    for (int c = 0; c < 2; ++c) {
        double want = 0.0;
        for (int r = 0; r < 3; ++r) want += a.at(r, c) * y[r];
        CHECK(out[c] == doctest::Approx(want));
    }
}

TEST_CASE("fd: colwise_mul broadcasts a column vector over a matrix") {
    Rng rng(8);
    ParamStore store;
    const int a = store.add("a", random_tensor({3, 5}, rng));
    const int v = store.add("v", random_tensor({3}, rng));
    check_param_grads(store, [&](Tape& t) {
        return weighted_sum(t, colwise_mul(t, t.param(a), t.param(v)), weights_for({3, 5}));
    });
    Tape tape(&store);
    const Tensor& out =
        tape.val(colwise_mul(tape, tape.param(a), tape.param(v)));
    CHECK(out.at(1, 2) == doctest::Approx(store.value(a).at(1, 2) * store.value(v)[1]));
}

TEST_CASE("fd: slicing and restructuring ops") {
    Rng rng(9);
    ParamStore store;
    const int a = store.add("a", random_tensor({3, 4}, rng));
    const int u = store.add("u", random_tensor({3}, rng));
    const int w = store.add("w", random_tensor({2}, rng));

    check_param_grads(store, [&](Tape& t) {
        return weighted_sum(t, row(t, t.param(a), 1), weights_for({4}));
    });
    check_param_grads(store, [&](Tape& t) {
        return weighted_sum(t, column(t, t.param(a), 2), weights_for({3}));
    });
    check_param_grads(store, [&](Tape& t) {
        return element(t, t.param(a), 7);
    });
    check_param_grads(store, [&](Tape& t) {
        return weighted_sum(t, concat2(t, t.param(u), t.param(w)), weights_for({5}));
    });
    check_param_grads(store, [&](Tape& t) {
        return weighted_sum(t, reshape(t, t.param(a), {2, 6}), weights_for({2, 6}));
    });
    CHECK_THROWS_AS(([&] {
                        Tape t(&store);
                        reshape(t, t.param(a), {5, 3});
                    }()),
                    ShapeError);
}

TEST_CASE("fd: softmax, sum, clamp, division by a scalar var") {
    Rng rng(10);
    ParamStore store;
    const int a = store.add("a", random_tensor({5}, rng, -2.0, 2.0));
    const int s = store.add("s", Tensor({1}, {0.7}));

    check_param_grads(store, [&](Tape& t) {
        return weighted_sum(t, softmax(t, t.param(a)), weights_for({5}));
    });
    check_param_grads(store, [&](Tape& t) { return sum_all(t, t.param(a)); });
    check_param_grads(store, [&](Tape& t) {
        // 0.7 sits above the clamp floor, so the gradient passes through.
        return clamp_min(t, t.param(s), 0.2);
    });
    check_param_grads(store, [&](Tape& t) {
        return weighted_sum(t, div_by(t, t.param(a), t.param(s)), weights_for({5}));
    });
}

TEST_CASE("clamp_min blocks gradient below the floor") {
    ParamStore store;
    const int s = store.add("s", Tensor({1}, {0.05}));
    store.zero_grads();
    Tape tape(&store);
    Var c = clamp_min(tape, tape.param(s), 0.2);
    CHECK(tape.val(c)[0] == doctest::Approx(0.2));
    tape.backward(c);
    CHECK(store.grad(s)[0] == 0.0);
}

TEST_CASE("softmax matches the frozen two-logit value") {
    Tape tape;
    Var p = softmax(tape, tape.constant(Tensor({2}, {std::log(3.0), 0.0})));
    CHECK(tape.val(p)[0] == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(tape.val(p)[1] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("softmax is shift invariant and survives large logits") {
    Tape tape;
    Var a = softmax(tape, tape.constant(Tensor({3}, {1000.0, 1001.0, 999.0})));
    const Tensor v = tape.val(a);  // copy: later pushes may reallocate the tape
    CHECK(v.all_finite());
    CHECK(v[0] + v[1] + v[2] == doctest::Approx(1.0));
    Var b = softmax(tape, tape.constant(Tensor({3}, {0.0, 1.0, -1.0})));
    for (int i = 0; i < 3; ++i) CHECK(v[i] == doctest::Approx(tape.val(b)[i]));
}

TEST_CASE("fd: bernoulli_table and edge_concat") {
    Rng rng(11);
    ParamStore store;
    const int p = store.add("p", random_tensor({4}, rng, 0.1, 0.9));
    const int x = store.add("x", random_tensor({3, 4}, rng));

    check_param_grads(store, [&](Tape& t) {
        return weighted_sum(t, bernoulli_table(t, t.param(p)), weights_for({2, 4}));
    });
    const std::vector<std::pair<int, int>> edges = {{0, 1}, {1, 3}, {2, 0}};
    check_param_grads(store, [&](Tape& t) {
        return weighted_sum(t, edge_concat(t, t.param(x), edges), weights_for({6, 3}));
    });

    Tape tape(&store);
    const Tensor& table = tape.val(bernoulli_table(tape, tape.param(p)));
    CHECK(table.dim(0) == 2);
    CHECK(table.dim(1) == 4);
    for (int i = 0; i < 4; ++i) {
        CHECK(table.at(1, i) == doctest::Approx(store.value(p)[i]));
        CHECK(table.at(0, i) == doctest::Approx(1.0 - store.value(p)[i]));
    }
    const Tensor& cat = tape.val(edge_concat(tape, tape.param(x), edges));
    CHECK(cat.dim(0) == 6);
    CHECK(cat.dim(1) == 3);
    // Column 2 stacks node-2 features above node-0 features.
    for (int r = 0; r < 3; ++r) {
        CHECK(cat.at(r, 2) == doctest::Approx(store.value(x).at(r, 2)));
        CHECK(cat.at(r + 3, 2) == doctest::Approx(store.value(x).at(r, 0)));
    }
}

TEST_CASE("fd: conv2d with stride and padding") {
    Rng rng(12);
    ParamStore store;
    const int x = store.add("x", random_tensor({2, 5, 5}, rng));
    const int w = store.add("w", random_tensor({3, 2, 3, 3}, rng));
    check_param_grads(
        store,
        [&](Tape& t) {
            return weighted_sum(t, conv2d(t, t.param(x), t.param(w), 2, 1),
                                weights_for({3, 3, 3}));
        },
        1e-5, 5e-6);
}

TEST_CASE("conv2d output extents and a hand-checked value") {
    CHECK(conv_out_extent(30, 4, 2, 1) == 15);
    CHECK(conv_out_extent(15, 9, 3, 0) == 3);
    CHECK(conv_out_extent(5, 3, 2, 1) == 3);
    CHECK(conv_out_extent(1, 1, 1, 0) == 1);

    // 1x2x2 input, 1x1x2x2 kernel, stride 1, no padding: dot product.
    Tape tape;
    Var x = tape.constant(Tensor({1, 2, 2}, {1.0, 2.0, 3.0, 4.0}));
    Var w = tape.constant(Tensor({1, 1, 2, 2}, {0.5, -1.0, 2.0, 0.25}));
    const Tensor& out = tape.val(conv2d(tape, x, w, 1, 0));
    CHECK(out.shape() == std::vector<int>{1, 1, 1});
    CHECK(out[0] == doctest::Approx(0.5 - 2.0 + 6.0 + 1.0));

    // With padding 1 the same kernel slides over a 4x4 padded field.
    const Tensor& padded = tape.val(conv2d(tape, x, w, 1, 1));
    CHECK(padded.shape() == std::vector<int>{1, 3, 3});
    // Top-left window sees only x(0,0) against kernel tap (1,1).
    CHECK(padded[0] == doctest::Approx(1.0 * 0.25));
}

TEST_CASE("cross_entropy matches the frozen value and differentiates") {
    Tape tape;
    Var loss =
        cross_entropy(tape, tape.constant(Tensor({2}, {std::log(3.0), 0.0})), 0);
    // p(target) = 0.75, loss = ln(4/3).
    CHECK(tape.val(loss)[0] == doctest::Approx(std::log(4.0 / 3.0)).epsilon(1e-12));

    Rng rng(13);
    ParamStore store;
    const int logits = store.add("logits", random_tensor({4}, rng, -2.0, 2.0));
    check_param_grads(store,
                      [&](Tape& t) { return cross_entropy(t, t.param(logits), 2); });

    CHECK_THROWS_AS(([&] {
                        Tape t;
                        cross_entropy(t, t.constant(Tensor({3}, {0.0, 0.0, 0.0})), 3);
                    }()),
                    ShapeError);
}

TEST_CASE("dropout semantics") {
    Tensor ones = Tensor::full({1000}, 1.0);
    Rng rng(21);

    // Eval mode and rate 0 are exact identities.
    {
        Tape tape;
        Var x = tape.constant(ones);
        const Tensor& ev = tape.val(dropout(tape, x, 0.5, rng, /*training=*/false));
        for (Index i = 0; i < ev.size(); ++i) CHECK(ev[i] == 1.0);
        const Tensor& z = tape.val(dropout(tape, x, 0.0, rng, /*training=*/true));
        for (Index i = 0; i < z.size(); ++i) CHECK(z[i] == 1.0);
    }

    // Training mode: survivors are scaled by 1/(1-rate), the rest are zero,
    // and the drop fraction is near the rate.
    {
        const double rate = 0.3;
        Tape tape;
        Var x = tape.constant(ones);
        Var d = dropout(tape, x, rate, rng, true);
        const Tensor& v = tape.val(d);
        int dropped = 0;
        for (Index i = 0; i < v.size(); ++i) {
            if (v[i] == 0.0) {
                ++dropped;
            } else {
                CHECK(v[i] == doctest::Approx(1.0 / (1.0 - rate)));
            }
        }
        CHECK(dropped > 200);
        CHECK(dropped < 400);

        // Gradient flows only through survivors, with the same scaling.
        Tape t2;
        Rng rng2(22);
        Var y = t2.input(ones);
        Var dy = dropout(t2, y, rate, rng2, true);
        t2.backward(sum_all(t2, dy));
        const Tensor& val = t2.val(dy);
        const Tensor& g = t2.grad(y);
        for (Index i = 0; i < g.size(); ++i)
            CHECK(g[i] == doctest::Approx(val[i]));  // both 0 or both 1/(1-rate)
    }

    CHECK_THROWS_AS(([&] {
                        Tape t;
                        Rng r(1);
                        dropout(t, t.constant(ones), 1.0, r, true);
                    }()),
                    ConfigError);
}

TEST_CASE("adam first step moves by roughly lr regardless of gradient scale") {
    for (double g0 : {100.0, 1.0, 1e-3}) {
        ParamStore store;
        const int w = store.add("w", Tensor({1}, {0.0}));
        store.zero_grads();
        store.grad(w)[0] = g0;
        AdamState adam(store);
        AdamConfig cfg;
        cfg.lr = 0.1;
        adam.step(store, cfg);
        CHECK(store.value(w)[0] == doctest::Approx(-0.1).epsilon(1e-4));
    }
}

TEST_CASE("adam drives a quadratic toward its minimum") {
    ParamStore store;
    const int w = store.add("w", Tensor({1}, {1.0}));
    AdamState adam(store);
    AdamConfig cfg;
    cfg.lr = 0.05;
    for (int step = 0; step < 300; ++step) {
        store.zero_grads();
        Tape tape(&store);
        Var v = tape.param(w);
        tape.backward(mul(tape, v, v));
        adam.step(store, cfg);
    }
    CHECK(std::abs(store.value(w)[0]) < 0.05);
    CHECK(adam.steps() == 300);
}

TEST_CASE("adam state shape must match the store") {
    ParamStore a;
    a.add("w", Tensor({1}, {0.0}));
    AdamState adam(a);
    ParamStore b;
    b.add("w", Tensor({1}, {0.0}));
    b.add("v", Tensor({1}, {0.0}));
    AdamConfig cfg;
    CHECK_THROWS_AS(adam.step(b, cfg), ConfigError);
}

TEST_CASE("glorot initializers respect their bounds") {
    Rng rng(31);
    Tensor d = glorot_dense(20, 30, rng);
    const double bound_d = std::sqrt(6.0 / (20 + 30));
    double mean = 0.0;
    for (Index i = 0; i < d.size(); ++i) {
        CHECK(std::abs(d[i]) <= bound_d);
        mean += d[i];
    }
    mean /= static_cast<double>(d.size());
    CHECK(std::abs(mean) < 0.05);

    Tensor c = glorot_conv(16, 3, 4, rng);
    CHECK(c.shape() == std::vector<int>{16, 3, 4, 4});
    const double bound_c = std::sqrt(6.0 / (3 * 16 + 16 * 16));
    for (Index i = 0; i < c.size(); ++i) CHECK(std::abs(c[i]) <= bound_c);
}

TEST_CASE("checkpoint round trip is bit exact") {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "sva_test_ckpt.svac";
    Rng rng(41);
    Records recs;
    recs.emplace_back("alpha/w", random_tensor({3, 4}, rng));
    recs.emplace_back("beta/b", random_tensor({7}, rng));
    recs.emplace_back("gamma", Tensor({1}, {-0.0}));
    write_checkpoint(path.string(), recs);

    Records back = read_checkpoint(path.string());
    REQUIRE(back.size() == recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
        CHECK(back[i].first == recs[i].first);
        REQUIRE(back[i].second.same_shape(recs[i].second));
        for (Index k = 0; k < recs[i].second.size(); ++k)
            CHECK(back[i].second[k] == recs[i].second[k]);
    }
    fs::remove(path);
}

TEST_CASE("checkpoint read rejects missing and corrupt files") {
    namespace fs = std::filesystem;
    CHECK_THROWS_AS(read_checkpoint("/nonexistent/dir/x.svac"), DataError);
    const fs::path path = fs::temp_directory_path() / "sva_test_garbage.svac";
    {
        std::FILE* f = std::fopen(path.string().c_str(), "wb");
        REQUIRE(f != nullptr);
        std::fputs("not a checkpoint", f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(read_checkpoint(path.string()), DataError);
    fs::remove(path);
}
