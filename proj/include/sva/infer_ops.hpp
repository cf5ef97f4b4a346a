#pragma once

#include "sva/crf.hpp"
#include "sva/tape.hpp"

namespace sva {

/// Unfolded parallel-schedule mean field as a single differentiable tape op.
/// unary: (2, M) psi values; ln_pair: (4, E) log pairwise values. Returns the
/// (2, M) beliefs after t_steps. The grid must outlive the tape.
Var mf_infer_op(Tape& t, Var unary, Var ln_pair, const GridGraph& g, int t_steps);

/// Unfolded synchronous loopy BP (uniform init, optional damping, belief
/// readout) as a single differentiable tape op. Same conventions as above.
Var lbp_infer_op(Tape& t, Var unary, Var ln_pair, const GridGraph& g, int t_steps,
                 double damping = 0.0);

} // namespace sva
