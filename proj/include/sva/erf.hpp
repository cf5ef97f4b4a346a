#pragma once

#include <vector>

#include "sva/model.hpp"
#include "sva/tensor.hpp"

namespace sva {

/// Inclusive pixel box [r0,r1] x [c0,c1], clipped to the image.
struct PixelBox {
    int r0 = 0, c0 = 0, r1 = 0, c1 = 0;
    bool contains(int r, int c) const { return r >= r0 && r <= r1 && c >= c0 && c <= c1; }
};

/// Theoretical receptive field of conv-stack feature (row, col) via
/// stride/kernel interval arithmetic.
PixelBox theoretical_rf(const ModelConfig& cfg, int row, int col);

/// Squared input gradient of one feature activation, summed over the image's
/// color channels: seed d/dy = 1 at (channel, row, col), backpropagate the
/// conv stack only, return the (img_h, img_w) map.
Tensor erf_single(const ModelConfig& cfg, ModelParams& params, const Tensor& image, int row,
                  int col, int channel);

struct ErfMap {
    Tensor map;  // (img_h, img_w), entrywise sum over channels / mean over images
    int row = 0, col = 0;
    std::vector<int> channels;
    int image_count = 0;
};

/// `want` channel indices at regular intervals through [0, total).
std::vector<int> evenly_spaced_channels(int total, int want);

/// Per-image sum of erf_single over the channel subset, averaged over images.
ErfMap erf_aggregate(const ModelConfig& cfg, ModelParams& params,
                     const std::vector<Tensor>& images, int row, int col,
                     const std::vector<int>& channels);

/// Separable Gaussian blur with zero padding; kernel truncated at 3*sigma and
/// renormalized to sum 1. sigma = 0 is the identity.
Tensor gaussian_smooth(const Tensor& map, double sigma);

} // namespace sva
