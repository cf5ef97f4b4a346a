#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sva/adam.hpp"
#include "sva/model.hpp"
#include "sva/shapes.hpp"

namespace sva {

struct TrainConfig {
    int epochs = 30;
    int batch = 64;
    std::uint64_t seed = 0;
    AdamConfig adam;                     // adam.lr is the learning rate
    double early_stop_train_acc = -1.0;  // stop once eval-mode train accuracy
                                         // reaches this fraction; <= 0 disables
    std::string checkpoint_path;         // best-by-test-accuracy parameters
};

/// Accuracy counters bucketed by query length 3/4/5.
struct EvalBuckets {
    std::array<std::int64_t, 3> correct{};
    std::array<std::int64_t, 3> count{};

    std::int64_t total_correct() const { return correct[0] + correct[1] + correct[2]; }
    std::int64_t total_count() const { return count[0] + count[1] + count[2]; }
    double accuracy(int length) const {
        const auto k = static_cast<std::size_t>(length - 3);
        return count[k] == 0 ? 0.0 : static_cast<double>(correct[k]) / count[k];
    }
    double overall() const {
        return total_count() == 0 ? 0.0 : static_cast<double>(total_correct()) / total_count();
    }
};

/// Deterministic evaluation-mode accuracy (no dropout, no gradients).
EvalBuckets evaluate(const ModelConfig& cfg, ModelParams& params, const GridGraph& grid,
                     const std::vector<ShapesSample>& samples);

struct EpochStats {
    double train_loss = 0.0;  // mean per-sample cross-entropy over the epoch
    double train_acc = 0.0;   // eval-mode accuracy on the training split
    double test_acc = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> epochs;
    int best_epoch = 0;  // 1-based epoch whose checkpoint is on disk
    EvalBuckets best_test;
    EvalBuckets best_train;
};

/// Mini-batch Adam training: seeded shuffle per epoch, mean-of-sample-losses
/// gradients, per-epoch eval-mode train/test accuracy, best-by-test-accuracy
/// checkpointing. A non-finite loss aborts with NumericError; the best
/// checkpoint written so far stays on disk.
TrainResult train_model(const ModelConfig& cfg, ModelParams& params, const GridGraph& grid,
                        const std::vector<ShapesSample>& train,
                        const std::vector<ShapesSample>& test, const TrainConfig& tcfg);

/// Structured-text metrics: config echo, per-epoch rows, best-epoch test
/// accuracy overall and per query length, wall clock (last line).
void write_metrics(const std::string& path, const ModelConfig& cfg, const TrainConfig& tcfg,
                   const TrainResult& result, double wall_seconds);

} // namespace sva
