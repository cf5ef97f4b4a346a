// Command-line harness: dataset generation, training, evaluation, inference
// with attention rendering, and effective-receptive-field analysis.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sva/crf.hpp"
#include "sva/erf.hpp"
#include "sva/error.hpp"
#include "sva/heatmap.hpp"
#include "sva/model.hpp"
#include "sva/shapes.hpp"
#include "sva/trainer.hpp"

namespace sva {
namespace {

namespace fs = std::filesystem;

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::vector<int> strip_pads(const std::vector<int>& tokens) {
    std::vector<int> out;
    for (int id : tokens) {
        if (id == kPadTok) break;
        out.push_back(id);
    }
    return out;
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
    std::string out;
    std::uint64_t seed = 0;
    std::string size = "small";
    int train_size = -1;  // -1 = use the named size
    int test_size = -1;
    double occupancy = 0.5;
    bool no_balance = false;
    int max_tokens = kQueryMaxTokens;
};

void write_manifest(const std::string& path, const GenerateArgs& args, int train_size,
                    int test_size, const GenerateResult& train, const GenerateResult& test) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open manifest for writing: " + path);
    os << std::setprecision(17);
    os << "seed=" << args.seed << "\n";
    os << "train_size=" << train_size << "\n";
    os << "test_size=" << test_size << "\n";
    os << "occupancy=" << args.occupancy << "\n";
    os << "balance=" << (args.no_balance ? 0 : 1) << "\n";
    os << "max_tokens=" << args.max_tokens << "\n";
    os << "train_dropped_queries=" << train.dropped_queries << "\n";
    os << "test_dropped_queries=" << test.dropped_queries << "\n";
    os << "train_yes_fraction=" << train.yes_fraction() << "\n";
    os << "test_yes_fraction=" << test.yes_fraction() << "\n";
    if (!os) throw DataError("write failed for manifest: " + path);
}

int cmd_generate(const GenerateArgs& args) {
    int train_size = args.train_size, test_size = args.test_size;
    if (train_size < 0 || test_size < 0) {
        if (args.size == "small") {
            train_size = 14592;
            test_size = 1024;
        } else if (args.size == "medium") {
            train_size = 29184;
            test_size = 2048;
        } else if (args.size == "large") {
            train_size = 43776;
            test_size = 3072;
        } else {
            throw ConfigError("unknown dataset size: " + args.size);
        }
        if (args.train_size >= 0) train_size = args.train_size;
        if (args.test_size >= 0) test_size = args.test_size;
    }
    fs::create_directories(args.out);

    GenerateConfig gcfg;
    gcfg.seed = args.seed;
    gcfg.occupancy = args.occupancy;
    gcfg.balance = !args.no_balance;
    gcfg.max_tokens = args.max_tokens;

    gcfg.size = train_size;
    gcfg.test_split = false;
    const GenerateResult train = generate_split(gcfg);
    gcfg.size = test_size;
    gcfg.test_split = true;
    const GenerateResult test = generate_split(gcfg);

    std::int64_t verified = 0, total = 0;
    for (const auto* result : {&train, &test})
        for (const ShapesSample& sample : result->samples) {
            total += 1;
            verified +=
                evaluate_query(sample.layout, strip_pads(sample.tokens)) == sample.answer ? 1 : 0;
        }
    if (verified != total)
        throw DataError("label audit failed: " + std::to_string(total - verified) +
                        " labels disagree with evaluate_query");

    write_svds(args.out + "/train.svds", train.samples, args.max_tokens);
    write_svds(args.out + "/test.svds", test.samples, args.max_tokens);
    write_manifest(args.out + "/manifest.txt", args, train_size, test_size, train, test);

    std::cout << std::setprecision(4);
    std::cout << "train: " << train.samples.size() << " samples, " << train.dropped_queries
              << " dropped queries, yes fraction " << train.yes_fraction() << "\n";
    std::cout << "test: " << test.samples.size() << " samples, " << test.dropped_queries
              << " dropped queries, yes fraction " << test.yes_fraction() << "\n";
    std::cout << "label audit: " << verified << "/" << total << " re-verified\n";
    std::cout << "wrote " << args.out << "/train.svds, " << args.out << "/test.svds, "
              << args.out << "/manifest.txt\n";
    return 0;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
    std::string train_path, test_path, out;
    std::uint64_t seed = 0;
    std::string variant = "MF-G2";
    int epochs = 30;
    int batch = 64;
    double lr = 1e-3;
    std::vector<double> lr_grid;
    int t_steps = 3;
    double dropout_q = 0.2;
    double dropout_cls = 0.2;
    double early_stop_train_acc = -1.0;
    int max_train = -1;  // truncate the training split (overfit experiments)
    int n_c = 128, n_q = 128, n_i = 50;
};

int cmd_train(const TrainArgs& args) {
    int max_tokens_train = 0, max_tokens_test = 0;
    std::vector<ShapesSample> train = read_svds(args.train_path, &max_tokens_train);
    const std::vector<ShapesSample> test = read_svds(args.test_path, &max_tokens_test);
    if (max_tokens_train != max_tokens_test)
        throw DataError("train/test splits disagree on max token length");
    if (args.max_train >= 0 && static_cast<std::size_t>(args.max_train) < train.size())
        train.resize(static_cast<std::size_t>(args.max_train));

    ModelConfig cfg;
    cfg.variant = parse_variant(args.variant);
    cfg.t_steps = args.t_steps;
    cfg.dropout_q = args.dropout_q;
    cfg.dropout_cls = args.dropout_cls;
    cfg.max_tokens = max_tokens_train;
    cfg.n_c = args.n_c;
    cfg.n_q = args.n_q;
    cfg.n_i = args.n_i;
    cfg.validate();

    fs::create_directories(args.out);
    write_model_config(args.out + "/model.cfg", cfg);
    const GridGraph grid = build_grid(cfg.h, cfg.w);

    const std::vector<double> lrs = args.lr_grid.empty() ? std::vector<double>{args.lr}
                                                         : args.lr_grid;
    double best_overall = -1.0;
    std::size_t best_k = 0;
    for (std::size_t k = 0; k < lrs.size(); ++k) {
        const std::string tag = lrs.size() == 1 ? "" : "_lr" + std::to_string(k);
        TrainConfig tcfg;
        tcfg.epochs = args.epochs;
        tcfg.batch = args.batch;
        tcfg.seed = args.seed;
        tcfg.adam.lr = lrs[k];
        tcfg.early_stop_train_acc = args.early_stop_train_acc;
        tcfg.checkpoint_path = args.out + "/best" + tag + ".svac";

        if (lrs.size() > 1)
            std::cout << "=== learning rate " << lrs[k] << " (" << k + 1 << "/" << lrs.size()
                      << ") ===\n";
        Rng init_rng(seed_for(args.seed, 0));
        ModelParams params = init_params(cfg, init_rng);
        const auto start = std::chrono::steady_clock::now();
        const TrainResult result = train_model(cfg, params, grid, train, test, tcfg);
        write_metrics(args.out + "/metrics" + tag + ".txt", cfg, tcfg, result,
                      seconds_since(start));
        const double acc = result.best_test.overall();
        std::cout << "learning rate " << lrs[k] << ": best test accuracy "
                  << std::setprecision(6) << acc << " (epoch " << result.best_epoch << ")\n";
        if (acc > best_overall) {
            best_overall = acc;
            best_k = k;
        }
    }
    if (lrs.size() > 1) {
        const std::string tag = "_lr" + std::to_string(best_k);
        fs::copy_file(args.out + "/best" + tag + ".svac", args.out + "/best.svac",
                      fs::copy_options::overwrite_existing);
        fs::copy_file(args.out + "/metrics" + tag + ".txt", args.out + "/metrics.txt",
                      fs::copy_options::overwrite_existing);
        std::cout << "grid winner: lr " << lrs[best_k] << " with test accuracy "
                  << std::setprecision(6) << best_overall << "\n";
    }
    std::cout << "wrote " << args.out << "/best.svac, " << args.out << "/metrics.txt, "
              << args.out << "/model.cfg\n";
    return 0;
}

// ----------------------------------------------------- model loading helper

struct LoadedModel {
    ModelConfig cfg;
    ModelParams params;
};

LoadedModel load_model(const std::string& model_dir, std::string config_path,
                       std::string checkpoint_path) {
    if (config_path.empty()) config_path = model_dir + "/model.cfg";
    if (checkpoint_path.empty()) checkpoint_path = model_dir + "/best.svac";
    LoadedModel lm;
    lm.cfg = read_model_config(config_path);
    Rng init_rng(0);  // placeholder values; the checkpoint overwrites them
    lm.params = init_params(lm.cfg, init_rng);
    load_params(checkpoint_path, lm.params);
    return lm;
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
    std::string model_dir, config_path, checkpoint_path, data_path, out;
};

int cmd_eval(const EvalArgs& args) {
    const auto start = std::chrono::steady_clock::now();
    LoadedModel lm = load_model(args.model_dir, args.config_path, args.checkpoint_path);
    const std::vector<ShapesSample> samples = read_svds(args.data_path);
    const GridGraph grid = build_grid(lm.cfg.h, lm.cfg.w);
    const EvalBuckets buckets = evaluate(lm.cfg, lm.params, grid, samples);

    std::cout << "Query Length        3         4         5       All\n";
    std::cout << "Accuracy     " << std::fixed << std::setprecision(4);
    for (int length = 3; length <= 5; ++length)
        std::cout << std::setw(9) << buckets.accuracy(length) << " ";
    std::cout << std::setw(9) << buckets.overall() << "\n";
    std::cout << "Count        " << std::defaultfloat;
    for (int length = 3; length <= 5; ++length)
        std::cout << std::setw(9) << buckets.count[static_cast<std::size_t>(length - 3)] << " ";
    std::cout << std::setw(9) << buckets.total_count() << "\n";

    if (!args.out.empty()) {
        std::ofstream os(args.out, std::ios::trunc);
        if (!os) throw DataError("cannot open metrics file for writing: " + args.out);
        os << std::setprecision(17);
        os << "command=eval\n";
        write_model_config(os, lm.cfg);
        os << "data=" << args.data_path << "\n";
        for (int length = 3; length <= 5; ++length) {
            os << "test_acc_len" << length << "=" << buckets.accuracy(length) << "\n";
            os << "test_count_len" << length << "="
               << buckets.count[static_cast<std::size_t>(length - 3)] << "\n";
        }
        os << "test_acc_overall=" << buckets.overall() << "\n";
        os << "wall_clock_seconds=" << seconds_since(start) << "\n";
        if (!os) throw DataError("write failed for metrics file: " + args.out);
    }
    return 0;
}

// ----------------------------------------------------- attention rendering

Tensor map_to_grid(const ModelConfig& cfg, const Tensor& map) {
    Tensor grid({cfg.h, cfg.w});
    grid.vec() = map.vec();
    return grid;
}

void render_attention(const ModelConfig& cfg, const ForwardArtifacts& art, const Tensor& image,
                      const std::string& out_dir) {
    if (cfg.img_h % cfg.h != 0 || cfg.img_w % cfg.w != 0)
        throw ConfigError("image extent must be a multiple of the grid for rendering");
    const int factor = cfg.img_h / cfg.h;
    fs::create_directories(out_dir);
    const auto kinds = variant_glimpses(cfg.variant);
    std::size_t traj = 0;
    std::vector<std::string> written;
    for (std::size_t gi = 0; gi < kinds.size(); ++gi) {
        const std::string prefix = out_dir + "/attn_g" + std::to_string(gi);
        const auto emit = [&](const std::string& name, const Tensor& map) {
            const std::string path = prefix + "_" + name + ".ppm";
            write_ppm_overlay(path, image, upscale_nearest(map_to_grid(cfg, map), factor));
            written.push_back(path);
        };
        if (kinds[gi] == GlimpseKind::softmax || kinds[gi] == GlimpseKind::sigmoid) {
            emit("map", art.attention_maps[gi]);
            continue;
        }
        const Beliefs& steps = art.trajectories[traj++];
        if (kinds[gi] == GlimpseKind::mf) {
            for (std::size_t t = 0; t < steps.steps.size(); ++t) {
                Tensor map({cfg.m()});
                map.vec() = steps.steps[t].mat().row(1).transpose();
                emit("b" + std::to_string(t), map);
            }
        } else {
            Tensor psi({cfg.m()}), final_b({cfg.m()});
            psi.vec() = steps.steps.front().mat().row(1).transpose();
            final_b.vec() = steps.steps.back().mat().row(1).transpose();
            emit("psi", psi);
            emit("b", final_b);
        }
    }
    for (const std::string& path : written) std::cout << "wrote " << path << "\n";
}

void print_prediction(const ModelConfig& cfg, const Tensor& logits) {
    const int answer = predict_answer(logits);
    Tensor probs = Tensor::zeros(logits.shape());
    const double mx = logits.vec().maxCoeff();
    probs.array() = (logits.array() - mx).exp();
    probs.vec() /= probs.vec().sum();
    const std::string name =
        cfg.k_answers == 2 ? (answer == 1 ? "yes" : "no") : std::to_string(answer);
    std::cout << "answer: " << name << " (confidence " << std::fixed << std::setprecision(4)
              << probs[answer] << ")" << std::defaultfloat << "\n";
}

// ------------------------------------------------------------------- infer

struct InferArgs {
    std::string model_dir, config_path, checkpoint_path, image_path, query, out;
};

int cmd_infer(const InferArgs& args) {
    LoadedModel lm = load_model(args.model_dir, args.config_path, args.checkpoint_path);
    const Tensor image = read_ppm(args.image_path);
    std::vector<int> tokens = tokenize(args.query);
    validate_query(tokens);
    if (static_cast<int>(tokens.size()) > lm.cfg.max_tokens)
        throw DataError("query longer than the model's max token length");
    tokens.resize(static_cast<std::size_t>(lm.cfg.max_tokens), kPadTok);

    const GridGraph grid = build_grid(lm.cfg.h, lm.cfg.w);
    Tape tape(&lm.params.store, /*grad_enabled=*/false);
    const ForwardResult fwd = forward(tape, lm.cfg, lm.params, grid, image, tokens, false,
                                      nullptr, /*want_trajectory=*/!args.out.empty());
    print_prediction(lm.cfg, fwd.art.logits);
    if (!args.out.empty()) render_attention(lm.cfg, fwd.art, image, args.out);
    return 0;
}

struct RenderArgs {
    std::string model_dir, config_path, checkpoint_path, data_path, out;
    int index = 0;
};

int cmd_render_attention(const RenderArgs& args) {
    LoadedModel lm = load_model(args.model_dir, args.config_path, args.checkpoint_path);
    const std::vector<ShapesSample> samples = read_svds(args.data_path);
    if (args.index < 0 || static_cast<std::size_t>(args.index) >= samples.size())
        throw ConfigError("sample index " + std::to_string(args.index) + " outside 0.." +
                          std::to_string(samples.size() - 1));
    const ShapesSample& sample = samples[static_cast<std::size_t>(args.index)];

    const GridGraph grid = build_grid(lm.cfg.h, lm.cfg.w);
    Tape tape(&lm.params.store, /*grad_enabled=*/false);
    const ForwardResult fwd = forward(tape, lm.cfg, lm.params, grid, sample.image,
                                      sample.tokens, false, nullptr, /*want_trajectory=*/true);
    std::cout << "query: " << detokenize(sample.tokens) << "\n";
    std::cout << "ground truth: " << (sample.answer == 1 ? "yes" : "no") << "\n";
    print_prediction(lm.cfg, fwd.art.logits);
    render_attention(lm.cfg, fwd.art, sample.image, args.out);
    return 0;
}

// --------------------------------------------------------------------- erf

struct ErfArgs {
    std::string model_dir, config_path, checkpoint_path, data_path, out;
    int images = 32;
    int row = -1, col = -1;  // -1 = feature-map center
    int channels = 32;
    double sigma = 4.0;
};

int cmd_erf(const ErfArgs& args) {
    LoadedModel lm = load_model(args.model_dir, args.config_path, args.checkpoint_path);
    const std::vector<ShapesSample> samples = read_svds(args.data_path);
    if (samples.empty()) throw DataError("dataset is empty: " + args.data_path);
    if (args.images < 1) throw ConfigError("image count must be >= 1");
    const int row = args.row >= 0 ? args.row : lm.cfg.feature_h() / 2;
    const int col = args.col >= 0 ? args.col : lm.cfg.feature_w() / 2;

    std::vector<Tensor> images;
    const std::size_t n = std::min(samples.size(), static_cast<std::size_t>(args.images));
    images.reserve(n);
    for (std::size_t i = 0; i < n; ++i) images.push_back(samples[i].image);

    const std::vector<int> channels = evenly_spaced_channels(lm.cfg.n_i, args.channels);
    const ErfMap erf = erf_aggregate(lm.cfg, lm.params, images, row, col, channels);
    const Tensor smooth = gaussian_smooth(erf.map, args.sigma);

    const PixelBox box = theoretical_rf(lm.cfg, row, col);
    double inside = 0.0, totalm = 0.0;
    for (Index r = 0; r < erf.map.dim(0); ++r)
        for (Index c = 0; c < erf.map.dim(1); ++c) {
            totalm += erf.map.at(r, c);
            if (box.contains(static_cast<int>(r), static_cast<int>(c)))
                inside += erf.map.at(r, c);
        }

    fs::create_directories(args.out);
    write_pgm(args.out + "/erf_raw.pgm", erf.map);
    write_pgm(args.out + "/erf_smooth.pgm", smooth);

    std::cout << "feature location (" << row << "," << col << "), " << images.size()
              << " images, " << channels.size() << " channels, sigma " << args.sigma << "\n";
    std::cout << "theoretical receptive field rows [" << box.r0 << "," << box.r1 << "] cols ["
              << box.c0 << "," << box.c1 << "]\n";
    std::cout << "mass inside receptive field: "
              << (totalm > 0.0 ? inside / totalm : 0.0) * 100.0 << "%\n";
    std::cout << "wrote " << args.out << "/erf_raw.pgm, " << args.out << "/erf_smooth.pgm\n";
    return 0;
}

// -------------------------------------------------------------------- main

int run(int argc, char** argv) {
    CLI::App app{"structured visual attention over grid CRFs"};
    app.require_subcommand(1);
    app.set_config("--config", "", "read options from a key=value file");

    GenerateArgs gen;
    CLI::App* g = app.add_subcommand("generate", "generate a synthetic shapes dataset");
    g->add_option("--out", gen.out, "output directory")->required();
    g->add_option("--seed", gen.seed, "master seed")->required();
    g->add_option("--size", gen.size, "named size: small, medium, large");
    g->add_option("--train-size", gen.train_size, "explicit train sample count");
    g->add_option("--test-size", gen.test_size, "explicit test sample count");
    g->add_option("--occupancy", gen.occupancy, "cell occupancy probability");
    g->add_flag("--no-balance", gen.no_balance, "disable per-query yes/no balancing");
    g->add_option("--max-tokens", gen.max_tokens, "token padding length");

    TrainArgs tra;
    CLI::App* t = app.add_subcommand("train", "train a model variant");
    t->add_option("--train", tra.train_path, "training split file")->required();
    t->add_option("--test", tra.test_path, "test split file")->required();
    t->add_option("--out", tra.out, "output directory")->required();
    t->add_option("--seed", tra.seed, "master seed")->required();
    t->add_option("--variant", tra.variant,
                  "SM, SIG, MF, LBP, SIG-G2, MF-G2, LBP-G2, MF-SIG, LBP-SIG");
    t->add_option("--epochs", tra.epochs, "training epochs");
    t->add_option("--batch", tra.batch, "mini-batch size");
    t->add_option("--lr", tra.lr, "Adam learning rate");
    t->add_option("--lr-grid", tra.lr_grid, "comma-separated learning-rate grid")
        ->delimiter(',');
    t->add_option("--t-steps", tra.t_steps, "inference steps T");
    t->add_option("--dropout-q", tra.dropout_q, "dropout on the question encoding");
    t->add_option("--dropout-cls", tra.dropout_cls, "dropout on the classifier features");
    t->add_option("--early-stop-train-acc", tra.early_stop_train_acc,
                  "stop once train accuracy reaches this fraction");
    t->add_option("--max-train", tra.max_train, "truncate the training split to N samples");
    t->add_option("--n-c", tra.n_c, "bilinear pool size");
    t->add_option("--n-q", tra.n_q, "question encoding size");
    t->add_option("--n-i", tra.n_i, "region feature channels");

    EvalArgs eva;
    CLI::App* e = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    e->add_option("--model", eva.model_dir, "model directory (model.cfg + best.svac)");
    e->add_option("--model-config", eva.config_path, "explicit model config path");
    e->add_option("--checkpoint", eva.checkpoint_path, "explicit checkpoint path");
    e->add_option("--data", eva.data_path, "split file")->required();
    e->add_option("--out", eva.out, "metrics file to write");

    InferArgs inf;
    CLI::App* i = app.add_subcommand("infer", "answer one query about one image");
    i->add_option("--model", inf.model_dir, "model directory (model.cfg + best.svac)");
    i->add_option("--model-config", inf.config_path, "explicit model config path");
    i->add_option("--checkpoint", inf.checkpoint_path, "explicit checkpoint path");
    i->add_option("--image", inf.image_path, "input image (binary PPM)")->required();
    i->add_option("--query", inf.query, "query text, e.g. 'is red below green'")->required();
    i->add_option("--out", inf.out, "directory for attention overlays");

    RenderArgs ren;
    CLI::App* r = app.add_subcommand("render-attention", "render attention for a dataset sample");
    r->add_option("--model", ren.model_dir, "model directory (model.cfg + best.svac)");
    r->add_option("--model-config", ren.config_path, "explicit model config path");
    r->add_option("--checkpoint", ren.checkpoint_path, "explicit checkpoint path");
    r->add_option("--data", ren.data_path, "split file")->required();
    r->add_option("--index", ren.index, "sample index")->required();
    r->add_option("--out", ren.out, "output directory")->required();

    ErfArgs erf;
    CLI::App* x = app.add_subcommand("erf", "effective receptive field of the conv stack");
    x->add_option("--model", erf.model_dir, "model directory (model.cfg + best.svac)");
    x->add_option("--model-config", erf.config_path, "explicit model config path");
    x->add_option("--checkpoint", erf.checkpoint_path, "explicit checkpoint path");
    x->add_option("--data", erf.data_path, "split file supplying images")->required();
    x->add_option("--out", erf.out, "output directory")->required();
    x->add_option("--images", erf.images, "number of images to average");
    x->add_option("--row", erf.row, "feature row (default: center)");
    x->add_option("--col", erf.col, "feature column (default: center)");
    x->add_option("--channels", erf.channels, "channel subset size");
    x->add_option("--sigma", erf.sigma, "Gaussian smoothing sigma");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : 1;
    }

    if (g->parsed()) return cmd_generate(gen);
    if (t->parsed()) return cmd_train(tra);
    if (e->parsed()) return cmd_eval(eva);
    if (i->parsed()) return cmd_infer(inf);
    if (r->parsed()) return cmd_render_attention(ren);
    if (x->parsed()) return cmd_erf(erf);
    return 1;
}

} // namespace
} // namespace sva

int main(int argc, char** argv) {
    try {
        return sva::run(argc, argv);
    } catch (const sva::NumericError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const sva::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const sva::ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return 2;
    } catch (const sva::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const sva::CapacityError& e) {
        std::cerr << "capacity error: " << e.what() << "\n";
        return 1;
    } catch (const sva::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
