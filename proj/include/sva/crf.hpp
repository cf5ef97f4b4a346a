#pragma once

#include <utility>
#include <vector>

#include "sva/tensor.hpp"

namespace sva {

/// Undirected edge with the canonical orientation i < j.
struct Edge {
    int i = 0;
    int j = 0;
};

/// H x W lattice over binary nodes. Node index is row-major: i = row*w + col.
/// Edges are listed in canonical order: nodes ascending, and per node the
/// right neighbor before the down neighbor.
struct GridGraph {
    int h = 0;
    int w = 0;
    int m = 0;
    std::vector<Edge> edges;
    std::vector<std::vector<int>> nbrs;                      // neighbors per node
    std::vector<std::vector<std::pair<int, int>>> incident;  // (edge index, neighbor) per node

    int edge_count() const { return static_cast<int>(edges.size()); }
};

GridGraph build_grid(int h, int w);

/// Potentials over a grid. Unary entries are the values psi_i(z) themselves
/// (strictly positive); pairwise entries are stored in log space, matching
/// how the model produces them.
///   unary:   (2, M)  unary(z, i)            = psi_i(z)
///   ln_pair: (4, E)  ln_pair(2*z_i + z_j, e) = ln psi_e(z_i, z_j),
/// where (i, j) is the canonical orientation of edge e.
struct PotentialTable {
    Tensor unary;
    Tensor ln_pair;
};

/// Throws ShapeError unless the table matches the grid.
void validate_potentials(const GridGraph& g, const PotentialTable& pot);

/// Unnormalized joint log-score of one assignment:
/// sum_i ln psi_i(z_i) + sum_e ln psi_e(z_i, z_j).
double joint_log_score(const GridGraph& g, const PotentialTable& pot,
                       const std::vector<int>& z);

/// ln Z by full enumeration of the 2^M states (streaming logsumexp).
/// Throws CapacityError for M > 24.
double exact_log_partition(const GridGraph& g, const PotentialTable& pot);

/// Exact node marginals, shape (2, M), by full enumeration.
Tensor exact_node_marginals(const GridGraph& g, const PotentialTable& pot);

/// Exact pairwise marginals, shape (4, E), code 2*z_i + z_j per edge.
Tensor exact_pair_marginals(const GridGraph& g, const PotentialTable& pot);

/// Mean-field free energy of a fully factorized distribution b (shape (2, M)):
///   F(b) = sum_i sum_z b_i(z) (ln b_i(z) - ln psi_i(z))
///        - sum_e sum_{z_i,z_j} b_i(z_i) b_j(z_j) ln psi_e(z_i,z_j)
/// with the 0 * ln 0 = 0 convention. F(b) >= -ln Z for every valid b.
double mean_field_free_energy(const GridGraph& g, const PotentialTable& pot,
                              const Tensor& beliefs);

} // namespace sva
