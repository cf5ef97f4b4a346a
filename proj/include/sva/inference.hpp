#pragma once

#include <vector>

#include "sva/crf.hpp"
#include "sva/tensor.hpp"

namespace sva {

/// Belief trajectory: steps[t] is the (2, M) marginal table after t steps,
/// so steps.front() is the initialization and steps.size() == T+1.
struct Beliefs {
    std::vector<Tensor> steps;

    const Tensor& final_step() const { return steps.back(); }
    int t_steps() const { return static_cast<int>(steps.size()) - 1; }
};

/// Directed messages: row 2e is i->j and row 2e+1 is j->i for canonical edge
/// e = (i, j); columns are the two states of the target node.
struct Messages {
    Tensor m;
    int t = 0;
};

enum class Schedule { parallel, sequential };

struct InferenceConfig {
    int t_steps = 3;
    Schedule schedule = Schedule::parallel;  // mean field only
    double damping = 0.0;                    // LBP only
};

void validate_inference_config(const InferenceConfig& cfg);

/// Directed-message row index for the message k -> i on edge e = (i', j').
inline int directed_index(const GridGraph& g, int e, int into_node) {
    return 2 * e + (g.edges[static_cast<std::size_t>(e)].j == into_node ? 0 : 1);
}

/// Pairwise table code for value (z_src, z_dst) when traversing edge e from
/// src to dst; transposes when the traversal runs against the canonical
/// orientation.
inline int pair_code(const GridGraph& g, int e, int src, int z_src, int z_dst) {
    return g.edges[static_cast<std::size_t>(e)].i == src ? 2 * z_src + z_dst
                                                         : 2 * z_dst + z_src;
}

/// Unfolded mean field. b0 = unary verbatim; each step sets
/// b_i(z) ∝ psi_i(z) * exp(sum_j sum_{z'} b_j(z') ln psi_e(z, z')), normalized
/// per node. Parallel schedule reads only step t-1; sequential reads the
/// latest values within the sweep.
Beliefs mean_field_infer(const GridGraph& g, const PotentialTable& pot,
                         const InferenceConfig& cfg);

/// Unfolded loopy belief propagation, synchronous flooding from uniform
/// messages, optional damping, belief readout after T steps. If out_messages
/// is non-null, the final message set is stored there.
Beliefs lbp_infer(const GridGraph& g, const PotentialTable& pot, const InferenceConfig& cfg,
                  Messages* out_messages = nullptr);

/// The attention map: b_i(1) from the final step.
Tensor beliefs_to_attention(const Beliefs& b);

} // namespace sva
