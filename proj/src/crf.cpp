#include "sva/crf.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "sva/error.hpp"

namespace sva {

GridGraph build_grid(int h, int w) {
    if (h <= 0 || w <= 0)
        throw ConfigError("grid dimensions must be positive, got " + std::to_string(h) + "x" +
                          std::to_string(w));
    GridGraph g;
    g.h = h;
    g.w = w;
    g.m = h * w;
    g.nbrs.resize(static_cast<std::size_t>(g.m));
    g.incident.resize(static_cast<std::size_t>(g.m));
    for (int row = 0; row < h; ++row) {
        for (int col = 0; col < w; ++col) {
            const int i = row * w + col;
            if (col + 1 < w) g.edges.push_back({i, i + 1});
            if (row + 1 < h) g.edges.push_back({i, i + w});
        }
    }
    for (int e = 0; e < g.edge_count(); ++e) {
        const Edge& ed = g.edges[static_cast<std::size_t>(e)];
        g.nbrs[static_cast<std::size_t>(ed.i)].push_back(ed.j);
        g.nbrs[static_cast<std::size_t>(ed.j)].push_back(ed.i);
        g.incident[static_cast<std::size_t>(ed.i)].emplace_back(e, ed.j);
        g.incident[static_cast<std::size_t>(ed.j)].emplace_back(e, ed.i);
    }
    return g;
}

void validate_potentials(const GridGraph& g, const PotentialTable& pot) {
    if (pot.unary.rank() != 2 || pot.unary.dim(0) != 2 || pot.unary.dim(1) != g.m)
        throw ShapeError("unary table must be [2x" + std::to_string(g.m) + "], got " +
                         pot.unary.shape_str());
    if (pot.ln_pair.rank() != 2 || pot.ln_pair.dim(0) != 4 || pot.ln_pair.dim(1) != g.edge_count())
        throw ShapeError("pairwise table must be [4x" + std::to_string(g.edge_count()) +
                         "], got " + pot.ln_pair.shape_str());
}

double joint_log_score(const GridGraph& g, const PotentialTable& pot, const std::vector<int>& z) {
    validate_potentials(g, pot);
    if (static_cast<int>(z.size()) != g.m)
        throw ShapeError("assignment length " + std::to_string(z.size()) +
                         " does not match node count " + std::to_string(g.m));
    double s = 0.0;
    for (int i = 0; i < g.m; ++i) {
        const int zi = z[static_cast<std::size_t>(i)];
        if (zi != 0 && zi != 1) throw ConfigError("assignments must be binary");
        s += std::log(pot.unary.at(zi, i));
    }
    for (int e = 0; e < g.edge_count(); ++e) {
        const Edge& ed = g.edges[static_cast<std::size_t>(e)];
        const int code = 2 * z[static_cast<std::size_t>(ed.i)] + z[static_cast<std::size_t>(ed.j)];
        s += pot.ln_pair.at(code, e);
    }
    return s;
}

namespace {

constexpr int kEnumCap = 24;

void require_enumerable(const GridGraph& g) {
    if (g.m > kEnumCap)
        throw CapacityError("exact enumeration capped at " + std::to_string(kEnumCap) +
                            " nodes, grid has " + std::to_string(g.m));
}

// Joint log-score of the state encoded bitwise (bit i = z_i).
double state_score(const GridGraph& g, const PotentialTable& pot, std::uint32_t s) {
    double acc = 0.0;
    for (int i = 0; i < g.m; ++i) acc += std::log(pot.unary.at((s >> i) & 1u, i));
    for (int e = 0; e < g.edge_count(); ++e) {
        const Edge& ed = g.edges[static_cast<std::size_t>(e)];
        const int code = 2 * static_cast<int>((s >> ed.i) & 1u) + static_cast<int>((s >> ed.j) & 1u);
        acc += pot.ln_pair.at(code, e);
    }
    return acc;
}

// Max joint log-score over all states (first logsumexp pass).
double max_state_score(const GridGraph& g, const PotentialTable& pot) {
    const std::uint64_t total = 1ull << g.m;
    double best = -std::numeric_limits<double>::infinity();
    for (std::uint64_t s = 0; s < total; ++s)
        best = std::max(best, state_score(g, pot, static_cast<std::uint32_t>(s)));
    return best;
}

} // namespace

double exact_log_partition(const GridGraph& g, const PotentialTable& pot) {
    validate_potentials(g, pot);
    require_enumerable(g);
    const double mx = max_state_score(g, pot);
    const std::uint64_t total = 1ull << g.m;
    double acc = 0.0;
    for (std::uint64_t s = 0; s < total; ++s)
        acc += std::exp(state_score(g, pot, static_cast<std::uint32_t>(s)) - mx);
    return mx + std::log(acc);
}

Tensor exact_node_marginals(const GridGraph& g, const PotentialTable& pot) {
    validate_potentials(g, pot);
    require_enumerable(g);
    const double mx = max_state_score(g, pot);
    const std::uint64_t total = 1ull << g.m;
    Tensor marg({2, g.m});
    double z = 0.0;
    for (std::uint64_t s = 0; s < total; ++s) {
        const double w = std::exp(state_score(g, pot, static_cast<std::uint32_t>(s)) - mx);
        z += w;
        for (int i = 0; i < g.m; ++i) marg.at(static_cast<int>((s >> i) & 1u), i) += w;
    }
    marg.vec() /= z;
    return marg;
}

Tensor exact_pair_marginals(const GridGraph& g, const PotentialTable& pot) {
    validate_potentials(g, pot);
    require_enumerable(g);
    const double mx = max_state_score(g, pot);
    const std::uint64_t total = 1ull << g.m;
    Tensor marg({4, g.edge_count()});
    double z = 0.0;
    for (std::uint64_t s = 0; s < total; ++s) {
        const double w = std::exp(state_score(g, pot, static_cast<std::uint32_t>(s)) - mx);
        z += w;
        for (int e = 0; e < g.edge_count(); ++e) {
            const Edge& ed = g.edges[static_cast<std::size_t>(e)];
            const int code =
                2 * static_cast<int>((s >> ed.i) & 1u) + static_cast<int>((s >> ed.j) & 1u);
            marg.at(code, e) += w;
        }
    }
    marg.vec() /= z;
    return marg;
}

double mean_field_free_energy(const GridGraph& g, const PotentialTable& pot,
                              const Tensor& beliefs) {
    validate_potentials(g, pot);
    if (beliefs.rank() != 2 || beliefs.dim(0) != 2 || beliefs.dim(1) != g.m)
        throw ShapeError("beliefs must be [2x" + std::to_string(g.m) + "], got " +
                         beliefs.shape_str());
    double f = 0.0;
    for (int i = 0; i < g.m; ++i) {
        for (int z = 0; z < 2; ++z) {
            const double b = beliefs.at(z, i);
            if (b > 0.0) f += b * (std::log(b) - std::log(pot.unary.at(z, i)));
        }
    }
    for (int e = 0; e < g.edge_count(); ++e) {
        const Edge& ed = g.edges[static_cast<std::size_t>(e)];
        for (int zi = 0; zi < 2; ++zi)
            for (int zj = 0; zj < 2; ++zj)
                f -= beliefs.at(zi, ed.i) * beliefs.at(zj, ed.j) * pot.ln_pair.at(2 * zi + zj, e);
    }
    return f;
}

} // namespace sva
