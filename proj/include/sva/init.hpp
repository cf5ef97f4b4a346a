#pragma once

#include <cmath>
#include <vector>

#include "sva/rng.hpp"
#include "sva/tensor.hpp"

namespace sva {

/// Uniform on [-a, a] with a = sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform(std::vector<int> shape, int fan_in, int fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / (static_cast<double>(fan_in) + fan_out));
    Tensor t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(-a, a);
    return t;
}

/// Dense weight (rows, cols): columns feed in, rows feed out.
inline Tensor glorot_dense(int rows, int cols, Rng& rng) {
    return glorot_uniform({rows, cols}, cols, rows, rng);
}

/// Conv kernel (out_ch, in_ch, k, k): fans count full receptive patches.
inline Tensor glorot_conv(int out_ch, int in_ch, int k, Rng& rng) {
    return glorot_uniform({out_ch, in_ch, k, k}, in_ch * k * k, out_ch * k * k, rng);
}

} // namespace sva
