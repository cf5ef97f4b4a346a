#pragma once

#include <utility>
#include <vector>

#include "sva/rng.hpp"
#include "sva/tape.hpp"
#include "sva/tensor.hpp"

namespace sva {

// Elementwise (same-shape operands).
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double c);
Var one_minus(Tape& t, Var a);
Var relu(Tape& t, Var a);
Var tanh_(Tape& t, Var a);
Var sigmoid_(Tape& t, Var a);
Var exp_(Tape& t, Var a);

// Linear algebra. Rank-2 matrices are row-major (rows, cols).
Var matmul(Tape& t, Var a, Var b);    // (m,k)·(k,n) -> (m,n)
Var matvec(Tape& t, Var a, Var x);    // (m,n)·(n,)  -> (m,)
Var matvec_t(Tape& t, Var a, Var x);  // (m,n)ᵀ·(m,) -> (n,)

// out(i,j) = a(i,j)·v(i): scales every column of a by v.
Var colwise_mul(Tape& t, Var a, Var v);

// Selection / structure.
Var row(Tape& t, Var a, int r);
Var column(Tape& t, Var a, int c);
Var element(Tape& t, Var a, Index i);     // flat index -> scalar
Var concat2(Tape& t, Var a, Var b);       // rank-1 ++ rank-1
Var reshape(Tape& t, Var a, std::vector<int> shape);

// Reductions and normalizations.
Var softmax(Tape& t, Var a);              // rank-1
Var sum_all(Tape& t, Var a);              // -> scalar
Var clamp_min(Tape& t, Var a, double lo); // scalar, zero grad below lo
Var div_by(Tape& t, Var v, Var s);        // tensor / scalar-var

// (M,) success probabilities -> (2,M) table: row 0 = 1-p, row 1 = p.
Var bernoulli_table(Tape& t, Var p);

// Columns of x are per-node features; output column e is [x_i; x_j]
// for edge e = (i, j).
Var edge_concat(Tape& t, Var x, const std::vector<std::pair<int, int>>& edges);

// Inverted dropout: identity when !training or rate == 0.
Var dropout(Tape& t, Var a, double rate, Rng& rng, bool training);

// x: (C,H,W), w: (O,C,k,k); zero padding, square kernel/stride, no bias.
Var conv2d(Tape& t, Var x, Var w, int stride, int pad);

// Stable softmax cross-entropy against a hard target index -> scalar.
Var cross_entropy(Tape& t, Var logits, int target);

// Output spatial size of a conv along one axis; throws unless it divides evenly.
int conv_out_extent(int in, int k, int stride, int pad);

} // namespace sva
