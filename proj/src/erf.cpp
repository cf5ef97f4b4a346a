#include "sva/erf.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "sva/error.hpp"
#include "sva/ops.hpp"
#include "sva/tape.hpp"

namespace sva {

PixelBox theoretical_rf(const ModelConfig& cfg, int row, int col) {
    if (row < 0 || row >= cfg.feature_h() || col < 0 || col >= cfg.feature_w())
        throw ConfigError("feature location (" + std::to_string(row) + "," +
                          std::to_string(col) + ") outside the feature map");
    // Feature (r,c) of conv2 reads conv1 rows [s2*r - p2, s2*r - p2 + k2 - 1]
    // clipped to conv1's output (out-of-range rows are padding, which reads no
    // input); a conv1 pixel a reads input rows [s1*a - p1, s1*a - p1 + k1 - 1].
    const auto back = [&](int pos, int extent1, int extent0) {
        int lo = cfg.conv2_stride * pos - cfg.conv2_pad;
        int hi = lo + cfg.conv2_k - 1;
        lo = std::max(lo, 0);
        hi = std::min(hi, extent1 - 1);
        const int in_lo = cfg.conv1_stride * lo - cfg.conv1_pad;
        const int in_hi = cfg.conv1_stride * hi - cfg.conv1_pad + cfg.conv1_k - 1;
        return std::pair<int, int>{std::max(in_lo, 0), std::min(in_hi, extent0 - 1)};
    };
    const int mid_h = conv_out_extent(cfg.img_h, cfg.conv1_k, cfg.conv1_stride, cfg.conv1_pad);
    const int mid_w = conv_out_extent(cfg.img_w, cfg.conv1_k, cfg.conv1_stride, cfg.conv1_pad);
    PixelBox box;
    std::tie(box.r0, box.r1) = back(row, mid_h, cfg.img_h);
    std::tie(box.c0, box.c1) = back(col, mid_w, cfg.img_w);
    return box;
}

Tensor erf_single(const ModelConfig& cfg, ModelParams& params, const Tensor& image, int row,
                  int col, int channel) {
    if (channel < 0 || channel >= cfg.n_i)
        throw ConfigError("channel " + std::to_string(channel) + " outside feature channels");
    theoretical_rf(cfg, row, col);  // bounds check on (row, col)
    Tape tape(&params.store, /*grad_enabled=*/false);
    const Var img = tape.input(image);
    const Var fmap = conv_stack(tape, cfg, params, img);
    Tensor seed = Tensor::zeros(tape.val(fmap).shape());
    seed[(static_cast<Index>(channel) * cfg.feature_h() + row) * cfg.feature_w() + col] = 1.0;
    tape.backward(fmap, seed);
    const Tensor& g = tape.grad(img);  // (3, img_h, img_w)
    Tensor map = Tensor::zeros({cfg.img_h, cfg.img_w});
    const Index plane = static_cast<Index>(cfg.img_h) * cfg.img_w;
    for (Index ch = 0; ch < cfg.img_c; ++ch)
        map.array() += g.vec().segment(ch * plane, plane).array().square();
    return map;
}

std::vector<int> evenly_spaced_channels(int total, int want) {
    if (total <= 0 || want <= 0) throw ConfigError("channel counts must be positive");
    const int n = std::min(total, want);
    std::vector<int> idx;
    idx.reserve(static_cast<std::size_t>(n));
    if (n == 1) {
        idx.push_back(0);
        return idx;
    }
    for (int k = 0; k < n; ++k)
        idx.push_back(static_cast<int>(
            std::lround(static_cast<double>(k) * (total - 1) / (n - 1))));
    idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    return idx;
}

ErfMap erf_aggregate(const ModelConfig& cfg, ModelParams& params,
                     const std::vector<Tensor>& images, int row, int col,
                     const std::vector<int>& channels) {
    if (images.empty()) throw ConfigError("effective receptive field needs at least one image");
    if (channels.empty()) throw ConfigError("channel subset must be nonempty");
    ErfMap out;
    out.row = row;
    out.col = col;
    out.channels = channels;
    out.image_count = static_cast<int>(images.size());
    out.map = Tensor::zeros({cfg.img_h, cfg.img_w});
    for (const Tensor& image : images)
        for (int channel : channels)
            out.map.vec() += erf_single(cfg, params, image, row, col, channel).vec();
    out.map.vec() /= static_cast<double>(images.size());
    return out;
}

Tensor gaussian_smooth(const Tensor& map, double sigma) {
    if (map.rank() != 2) throw ShapeError("smoothing expects a rank-2 map");
    if (sigma < 0.0) throw ConfigError("sigma must be >= 0");
    if (sigma == 0.0) return map;
    const int radius = static_cast<int>(std::floor(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double norm = 0.0;
    for (int d = -radius; d <= radius; ++d) {
        kernel[static_cast<std::size_t>(d + radius)] = std::exp(-0.5 * d * d / (sigma * sigma));
        norm += kernel[static_cast<std::size_t>(d + radius)];
    }
    for (double& w : kernel) w /= norm;

    const int h = static_cast<int>(map.dim(0)), w = static_cast<int>(map.dim(1));
    Tensor rows = Tensor::zeros({h, w});
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int d = -radius; d <= radius; ++d) {
                const int cc = c + d;
                if (cc >= 0 && cc < w)
                    acc += kernel[static_cast<std::size_t>(d + radius)] * map.at(r, cc);
            }
            rows.at(r, c) = acc;
        }
    Tensor out = Tensor::zeros({h, w});
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int d = -radius; d <= radius; ++d) {
                const int rr = r + d;
                if (rr >= 0 && rr < h)
                    acc += kernel[static_cast<std::size_t>(d + radius)] * rows.at(rr, c);
            }
            out.at(r, c) = acc;
        }
    return out;
}

} // namespace sva
