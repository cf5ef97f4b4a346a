#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "sva/crf.hpp"
#include "sva/inference.hpp"
#include "sva/rng.hpp"
#include "sva/tape.hpp"
#include "sva/tensor.hpp"

namespace sva {

enum class Variant { SM, SIG, MF, LBP, SIG_G2, MF_G2, LBP_G2, MF_SIG, LBP_SIG };

/// Attention mechanism of one glimpse.
enum class GlimpseKind { softmax, sigmoid, mf, lbp };

Variant parse_variant(const std::string& name);  // throws ConfigError on unknown tag
std::string variant_name(Variant v);
std::vector<GlimpseKind> variant_glimpses(Variant v);

struct ModelConfig {
    int n_i = 50;   // region feature channels
    int n_q = 128;  // question encoding size
    int n_c = 128;  // bilinear pool size
    int h = 3;
    int w = 3;
    int k_answers = 2;
    Variant variant = Variant::MF_G2;
    int t_steps = 3;
    double dropout_q = 0.2;    // question vector
    double dropout_cls = 0.2;  // pooled classifier features
    int vocab = 12;
    int max_tokens = 5;
    int img_c = 3;
    int img_h = 30;
    int img_w = 30;
    int conv1_ch = 16;
    int conv1_k = 4;
    int conv1_stride = 2;
    int conv1_pad = 1;
    int conv2_k = 9;  // out channels = n_i
    int conv2_stride = 3;
    int conv2_pad = 0;

    int m() const { return h * w; }
    int feature_h() const;
    int feature_w() const;
    void validate() const;  // throws ConfigError
};

/// Serialize/parse the hyperparameters as key=value lines.
void write_model_config(std::ostream& os, const ModelConfig& cfg);
void write_model_config(const std::string& path, const ModelConfig& cfg);
ModelConfig read_model_config(const std::string& path);

/// Parameter slots of one glimpse; pairwise slots are -1 for unstructured
/// kinds.
struct GlimpseSlots {
    int u_x = -1;
    int u_q = -1;
    int u = -1;
    int v_y = -1;
    int v_q = -1;
    int v = -1;
};

struct ModelParams {
    ParamStore store;
    int conv1 = -1;
    int conv2 = -1;
    int gru_wz = -1, gru_wr = -1, gru_wh = -1;
    int gru_uz = -1, gru_ur = -1, gru_uh = -1;
    int gru_bz = -1, gru_br = -1, gru_bh = -1;
    std::vector<GlimpseSlots> glimpse;
    int wc_hat = -1, wq_hat = -1;
    int wc_tilde = -1, wq_tilde = -1;
    int w_cls = -1;
};

ModelParams init_params(const ModelConfig& cfg, Rng& rng);

/// Checkpoint round trip; load throws DataError on missing/extra records and
/// ShapeError when a record disagrees with the config's shapes.
void save_params(const std::string& path, const ModelParams& params);
void load_params(const std::string& path, ModelParams& params);

struct ForwardArtifacts {
    Tensor unary_map;                    // psi_i(1) of glimpse 0
    Tensor structured_map;               // b_i(1) of glimpse 0 (structured kinds)
    std::vector<Tensor> attention_maps;  // final map per glimpse
    std::vector<Beliefs> trajectories;   // per structured glimpse, when requested:
                                         // MF = b^0..b^T, LBP = (psi table, final b)
    Tensor c_hat, c_tilde;
    Tensor s_hat, s_tilde;
    Tensor logits;
    double s_sum = 0.0;  // S = sum_i of glimpse 0's map before normalization
};

struct ForwardResult {
    Var logits;
    ForwardArtifacts art;
};

/// Full forward pass. `training` enables dropout (rng required then);
/// `want_trajectory` additionally runs plain inference to record per-step
/// beliefs for rendering. The grid must match cfg and outlive the tape.
ForwardResult forward(Tape& tape, const ModelConfig& cfg, ModelParams& params,
                      const GridGraph& grid, const Tensor& image,
                      const std::vector<int>& tokens, bool training = false,
                      Rng* dropout_rng = nullptr, bool want_trajectory = false);

/// Conv feature extractor alone: image (C,H,W) -> features (n_i, fh, fw).
Var conv_stack(Tape& tape, const ModelConfig& cfg, ModelParams& params, Var image);

/// Question encoder: GRU over non-pad token ids -> (n_q) hidden state.
/// When training with an rng, each step's one-hot input is dropped whole
/// (rate dropout_q) with inverted scaling.
Var encode_question(Tape& tape, const ModelConfig& cfg, ModelParams& params,
                    const std::vector<int>& tokens, bool training = false, Rng* rng = nullptr);

/// Answer index from logits: argmax, lowest index on exact ties.
int predict_answer(const Tensor& logits);

} // namespace sva
