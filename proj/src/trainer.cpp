#include "sva/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <vector>

#include "sva/error.hpp"
#include "sva/ops.hpp"

namespace sva {

EvalBuckets evaluate(const ModelConfig& cfg, ModelParams& params, const GridGraph& grid,
                     const std::vector<ShapesSample>& samples) {
    EvalBuckets buckets;
    for (const ShapesSample& sample : samples) {
        if (sample.length < 3 || sample.length > 5)
            throw DataError("sample query length " + std::to_string(sample.length) +
                            " outside 3..5");
        Tape tape(&params.store, /*grad_enabled=*/false);
        const ForwardResult fwd = forward(tape, cfg, params, grid, sample.image, sample.tokens);
        const auto k = static_cast<std::size_t>(sample.length - 3);
        buckets.count[k] += 1;
        buckets.correct[k] += predict_answer(fwd.art.logits) == sample.answer ? 1 : 0;
    }
    return buckets;
}

TrainResult train_model(const ModelConfig& cfg, ModelParams& params, const GridGraph& grid,
                        const std::vector<ShapesSample>& train,
                        const std::vector<ShapesSample>& test, const TrainConfig& tcfg) {
    if (tcfg.epochs < 1) throw ConfigError("epoch count must be >= 1");
    if (tcfg.batch < 1) throw ConfigError("batch size must be >= 1");
    if (train.empty()) throw ConfigError("training split is empty");
    if (test.empty()) throw ConfigError("test split is empty");
    if (tcfg.checkpoint_path.empty()) throw ConfigError("checkpoint path must be set");

    Rng shuffle_rng(seed_for(tcfg.seed, 1));
    Rng dropout_rng(seed_for(tcfg.seed, 2));
    AdamState adam;
    adam.reset(params.store);

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    double best_acc = -1.0;
    for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        for (std::size_t i = order.size() - 1; i > 0; --i)
            std::swap(order[i], order[shuffle_rng.below(i + 1)]);

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += tcfg.batch) {
            const std::size_t n =
                std::min(order.size() - start, static_cast<std::size_t>(tcfg.batch));
            params.store.zero_grads();
            double batch_sum = 0.0;
            for (std::size_t b = 0; b < n; ++b) {
                const ShapesSample& sample = train[order[start + b]];
                Tape tape(&params.store);
                const ForwardResult fwd = forward(tape, cfg, params, grid, sample.image,
                                                  sample.tokens, true, &dropout_rng);
                const Var loss = cross_entropy(tape, fwd.logits, sample.answer);
                batch_sum += tape.val(loss)[0];
                tape.backward(loss, Tensor::scalar(1.0 / static_cast<double>(n)));
            }
            if (!std::isfinite(batch_sum))
                throw NumericError("non-finite training loss in epoch " + std::to_string(epoch) +
                                   "; best checkpoint so far is retained");
            adam.step(params.store, tcfg.adam);
            loss_sum += batch_sum;
        }

        EpochStats stats;
        stats.train_loss = loss_sum / static_cast<double>(train.size());
        const EvalBuckets train_buckets = evaluate(cfg, params, grid, train);
        const EvalBuckets test_buckets = evaluate(cfg, params, grid, test);
        stats.train_acc = train_buckets.overall();
        stats.test_acc = test_buckets.overall();
        result.epochs.push_back(stats);

        const bool improved = stats.test_acc > best_acc;
        if (improved) {
            best_acc = stats.test_acc;
            result.best_epoch = epoch;
            result.best_test = test_buckets;
            result.best_train = train_buckets;
            save_params(tcfg.checkpoint_path, params);
        }
        std::cout << "epoch " << epoch << "/" << tcfg.epochs << std::fixed
                  << std::setprecision(6) << " train_loss=" << stats.train_loss
                  << " train_acc=" << stats.train_acc << " test_acc=" << stats.test_acc
                  << (improved ? " *" : "") << std::defaultfloat << std::endl;
        if (tcfg.early_stop_train_acc > 0.0 && stats.train_acc >= tcfg.early_stop_train_acc) {
            std::cout << "early stop: train accuracy reached "
                      << tcfg.early_stop_train_acc << "\n";
            break;
        }
    }
    return result;
}

void write_metrics(const std::string& path, const ModelConfig& cfg, const TrainConfig& tcfg,
                   const TrainResult& result, double wall_seconds) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open metrics file for writing: " + path);
    os << std::setprecision(17);
    os << "command=train\n";
    write_model_config(os, cfg);
    os << "epochs=" << tcfg.epochs << "\n";
    os << "batch=" << tcfg.batch << "\n";
    os << "lr=" << tcfg.adam.lr << "\n";
    os << "seed=" << tcfg.seed << "\n";
    os << "early_stop_train_acc=" << tcfg.early_stop_train_acc << "\n";
    os << "epochs_run=" << result.epochs.size() << "\n";
    for (std::size_t k = 0; k < result.epochs.size(); ++k) {
        const EpochStats& e = result.epochs[k];
        os << "epoch." << k + 1 << ".train_loss=" << e.train_loss << "\n";
        os << "epoch." << k + 1 << ".train_acc=" << e.train_acc << "\n";
        os << "epoch." << k + 1 << ".test_acc=" << e.test_acc << "\n";
    }
    os << "best_epoch=" << result.best_epoch << "\n";
    os << "train_acc_at_best=" << result.best_train.overall() << "\n";
    for (int length = 3; length <= 5; ++length) {
        os << "test_acc_len" << length << "=" << result.best_test.accuracy(length) << "\n";
        os << "test_count_len" << length << "="
           << result.best_test.count[static_cast<std::size_t>(length - 3)] << "\n";
    }
    os << "test_acc_overall=" << result.best_test.overall() << "\n";
    os << "wall_clock_seconds=" << wall_seconds << "\n";
    if (!os) throw DataError("write failed for metrics file: " + path);
}

} // namespace sva
