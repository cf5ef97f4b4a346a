#pragma once

#include <string>

#include "sva/tensor.hpp"

namespace sva {

/// Min-max normalize a rank-2 map to [0,255] and write binary PGM (P5). A
/// constant map normalizes to all zeros with a warning on stderr.
void write_pgm(const std::string& path, const Tensor& map);

/// Read a binary PGM back as a rank-2 tensor of the stored byte values.
Tensor read_pgm(const std::string& path);

/// Read a binary PPM (P6) as a (3,H,W) tensor scaled to [0,1].
Tensor read_ppm(const std::string& path);

/// Blend a min-max-normalized heat map onto an RGB image ((3,H,W), values in
/// [0,1]) at weight 1/2 each and write binary PPM (P6). Map and image must
/// share H x W.
void write_ppm_overlay(const std::string& path, const Tensor& image, const Tensor& map);

/// Integer-factor nearest-neighbor upscale of a rank-2 map.
Tensor upscale_nearest(const Tensor& map, int factor);

} // namespace sva
