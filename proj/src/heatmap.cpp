#include "sva/heatmap.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <string>

#include "sva/error.hpp"

namespace sva {

namespace {

// Min-max normalization to [0,1]; constant maps flatten to zero (warned).
Tensor normalize01(const Tensor& map, const std::string& what) {
    if (map.rank() != 2) throw ShapeError(what + " expects a rank-2 map");
    if (!map.all_finite()) throw NumericError(what + " map has non-finite values");
    const double lo = map.vec().minCoeff();
    const double hi = map.vec().maxCoeff();
    Tensor out = Tensor::zeros(map.shape());
    if (hi == lo) {
        std::cerr << "warning: constant map, writing all-zero " << what << "\n";
        return out;
    }
    out.array() = (map.array() - lo) / (hi - lo);
    return out;
}

} // namespace

void write_pgm(const std::string& path, const Tensor& map) {
    const Tensor norm = normalize01(map, "heat map");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open heat map for writing: " + path);
    os << "P5\n" << map.dim(1) << " " << map.dim(0) << "\n255\n";
    for (Index i = 0; i < norm.size(); ++i)
        os.put(static_cast<char>(std::lround(255.0 * norm[i])));
    if (!os) throw DataError("write failed for heat map: " + path);
}

Tensor read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open heat map: " + path);
    std::string magic;
    long w = 0, h = 0, maxval = 0;
    if (!(is >> magic >> w >> h >> maxval) || magic != "P5" || w <= 0 || h <= 0 ||
        maxval != 255)
        throw DataError("not an 8-bit binary PGM: " + path);
    is.get();  // single whitespace after the header
    Tensor map({static_cast<int>(h), static_cast<int>(w)});
    for (Index i = 0; i < map.size(); ++i) {
        const int byte = is.get();
        if (byte == std::char_traits<char>::eof()) throw DataError("heat map truncated: " + path);
        map[i] = static_cast<double>(byte);
    }
    return map;
}

Tensor read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open image: " + path);
    std::string magic;
    long w = 0, h = 0, maxval = 0;
    if (!(is >> magic >> w >> h >> maxval) || magic != "P6" || w <= 0 || h <= 0 ||
        maxval != 255)
        throw DataError("not an 8-bit binary PPM: " + path);
    is.get();  // single whitespace after the header
    Tensor img({3, static_cast<int>(h), static_cast<int>(w)});
    for (Index r = 0; r < h; ++r)
        for (Index c = 0; c < w; ++c)
            for (Index ch = 0; ch < 3; ++ch) {
                const int byte = is.get();
                if (byte == std::char_traits<char>::eof())
                    throw DataError("image truncated: " + path);
                img[(ch * h + r) * w + c] = byte / 255.0;
            }
    return img;
}

void write_ppm_overlay(const std::string& path, const Tensor& image, const Tensor& map) {
    if (image.rank() != 3 || image.dim(0) != 3)
        throw ShapeError("overlay expects a (3,H,W) image, got " + image.shape_str());
    const Tensor heat = normalize01(map, "overlay");
    if (image.dim(1) != map.dim(0) || image.dim(2) != map.dim(1))
        throw ShapeError("overlay map " + map.shape_str() + " does not match image " +
                         image.shape_str());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open overlay for writing: " + path);
    const Index hgt = image.dim(1), wid = image.dim(2);
    os << "P6\n" << wid << " " << hgt << "\n255\n";
    for (Index r = 0; r < hgt; ++r)
        for (Index c = 0; c < wid; ++c)
            for (Index ch = 0; ch < 3; ++ch) {
                const double v = 0.5 * image[(ch * hgt + r) * wid + c] + 0.5 * heat[r * wid + c];
                os.put(static_cast<char>(std::lround(255.0 * v)));
            }
    if (!os) throw DataError("write failed for overlay: " + path);
}

Tensor upscale_nearest(const Tensor& map, int factor) {
    if (map.rank() != 2) throw ShapeError("upscale expects a rank-2 map");
    if (factor < 1) throw ConfigError("upscale factor must be >= 1");
    const Index h = map.dim(0), w = map.dim(1);
    Tensor out({static_cast<int>(h) * factor, static_cast<int>(w) * factor});
    for (Index r = 0; r < h * factor; ++r)
        for (Index c = 0; c < w * factor; ++c) out[r * (w * factor) + c] = map.at(r / factor, c / factor);
    return out;
}

} // namespace sva
