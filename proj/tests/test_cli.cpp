#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#ifndef SVA_BIN_PATH
#error "SVA_BIN_PATH must point at the sva executable"
#endif

namespace fs = std::filesystem;

namespace {

const std::string kBin = SVA_BIN_PATH;

struct RunResult {
    int exit_code = -1;
    std::string output;
};

/// Run the CLI with stdout+stderr captured to a file.
RunResult run(const std::string& args) {
    static int counter = 0;
    const fs::path log = fs::temp_directory_path() / ("sva_cli_log_" +
                                                      std::to_string(counter++) + ".txt");
    const std::string cmd = kBin + " " + args + " > " + log.string() + " 2>&1";
    const int raw = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    std::ifstream is(log);
    std::stringstream ss;
    ss << is.rdbuf();
    r.output = ss.str();
    fs::remove(log);
    return r;
}

std::string slurp_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is.good());
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

/// Workspace shared by the pipeline cases, built once on first use.
struct Workspace {
    fs::path root;
    fs::path data;
    fs::path model;

    Workspace() {
        root = fs::temp_directory_path() / "sva_cli_ws";
        fs::remove_all(root);
        fs::create_directories(root);
        data = root / "data";
        model = root / "model";

        RunResult g = run("generate --out " + data.string() +
                          " --seed 5 --train-size 48 --test-size 24");
        REQUIRE_MESSAGE(g.exit_code == 0, g.output);

        RunResult t = run("train --train " + (data / "train.svds").string() + " --test " +
                          (data / "test.svds").string() + " --out " + model.string() +
                          " --seed 7 --variant MF --epochs 1 --batch 16 --t-steps 1" +
                          " --n-c 8 --n-q 8 --n-i 6 --dropout-q 0 --dropout-cls 0");
        REQUIRE_MESSAGE(t.exit_code == 0, t.output);
    }
};

const Workspace& ws() {
    static Workspace w;
    return w;
}

} // namespace

TEST_CASE("generate writes splits plus manifest and is byte-reproducible") {
    const fs::path dir = ws().data;
    CHECK(fs::exists(dir / "train.svds"));
    CHECK(fs::exists(dir / "test.svds"));
    CHECK(fs::exists(dir / "manifest.txt"));
    const std::string manifest = slurp_bytes(dir / "manifest.txt");
    CHECK(manifest.find("seed=5") != std::string::npos);
    CHECK(manifest.find("train_size=48") != std::string::npos);

    const fs::path dir2 = ws().root / "data_again";
    RunResult g = run("generate --out " + dir2.string() +
                      " --seed 5 --train-size 48 --test-size 24");
    REQUIRE_MESSAGE(g.exit_code == 0, g.output);
    CHECK(slurp_bytes(dir / "train.svds") == slurp_bytes(dir2 / "train.svds"));
    CHECK(slurp_bytes(dir / "test.svds") == slurp_bytes(dir2 / "test.svds"));

    const fs::path dir3 = ws().root / "data_other";
    RunResult h = run("generate --out " + dir3.string() +
                      " --seed 6 --train-size 48 --test-size 24");
    REQUIRE_MESSAGE(h.exit_code == 0, h.output);
    CHECK(slurp_bytes(dir / "train.svds") != slurp_bytes(dir3 / "train.svds"));
}

TEST_CASE("train leaves a loadable model directory") {
    const fs::path dir = ws().model;
    CHECK(fs::exists(dir / "model.cfg"));
    CHECK(fs::exists(dir / "best.svac"));
    CHECK(fs::exists(dir / "metrics.txt"));
    const std::string metrics = slurp_bytes(dir / "metrics.txt");
    CHECK(metrics.find("command=train\n") != std::string::npos);
    CHECK(metrics.find("variant=MF\n") != std::string::npos);
    CHECK(metrics.find("epoch.1.train_loss=") != std::string::npos);
    const std::size_t wall = metrics.find("wall_clock_seconds=");
    REQUIRE(wall != std::string::npos);
    CHECK(metrics.find('\n', wall) == metrics.size() - 1);
}

TEST_CASE("eval prints the accuracy table and writes metrics on request") {
    RunResult e = run("eval --model " + ws().model.string() + " --data " +
                      (ws().data / "test.svds").string() + " --out " +
                      (ws().root / "eval_metrics.txt").string());
    REQUIRE_MESSAGE(e.exit_code == 0, e.output);
    CHECK(e.output.find("Query Length") != std::string::npos);
    CHECK(e.output.find("Accuracy") != std::string::npos);
    const std::string metrics = slurp_bytes(ws().root / "eval_metrics.txt");
    CHECK(metrics.find("command=eval\n") != std::string::npos);
    CHECK(metrics.find("test_acc_overall=") != std::string::npos);
}

TEST_CASE("render-attention emits per-step overlays for a mean-field model") {
    const fs::path out = ws().root / "attn";
    RunResult r = run("render-attention --model " + ws().model.string() + " --data " +
                      (ws().data / "test.svds").string() + " --index 3 --out " + out.string());
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    CHECK(r.output.find("query:") != std::string::npos);
    // MF with t_steps=1 renders b0 and b1 for the single glimpse.
    CHECK(fs::exists(out / "attn_g0_b0.ppm"));
    CHECK(fs::exists(out / "attn_g0_b1.ppm"));
    CHECK_FALSE(fs::exists(out / "attn_g0_b2.ppm"));
    CHECK_FALSE(fs::exists(out / "attn_g1_b0.ppm"));

    // An out-of-range index is a bad argument, i.e. a usage error.
    RunResult bad = run("render-attention --model " + ws().model.string() + " --data " +
                        (ws().data / "test.svds").string() + " --index 9999 --out " +
                        out.string());
    CHECK(bad.exit_code == 1);
}

TEST_CASE("erf writes raw and smoothed maps and reports mass inside the box") {
    const fs::path out = ws().root / "erf";
    RunResult r = run("erf --model " + ws().model.string() + " --data " +
                      (ws().data / "test.svds").string() + " --out " + out.string() +
                      " --images 4 --channels 3");
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    CHECK(fs::exists(out / "erf_raw.pgm"));
    CHECK(fs::exists(out / "erf_smooth.pgm"));
    CHECK(r.output.find("theoretical receptive field rows") != std::string::npos);
    CHECK(r.output.find("mass inside receptive field:") != std::string::npos);
}

TEST_CASE("infer answers a query about a ppm image") {
    // A black 30x30 image: valid input, model answers something.
    const fs::path img = ws().root / "black.ppm";
    {
        std::ofstream os(img, std::ios::binary);
        os << "P6\n30 30\n255\n";
        for (int i = 0; i < 30 * 30 * 3; ++i) os.put('\0');
    }
    RunResult r = run("infer --model " + ws().model.string() + " --image " + img.string() +
                      " --query 'is red below green'");
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    CHECK(r.output.find("answer:") != std::string::npos);

    // With --out the attention overlays land in the directory.
    const fs::path out = ws().root / "infer_attn";
    RunResult r2 = run("infer --model " + ws().model.string() + " --image " + img.string() +
                       " --query 'is red below green' --out " + out.string());
    REQUIRE_MESSAGE(r2.exit_code == 0, r2.output);
    CHECK(fs::exists(out / "attn_g0_b0.ppm"));

    // Bad grammar is a data error.
    RunResult r3 = run("infer --model " + ws().model.string() + " --image " + img.string() +
                       " --query 'red below green'");
    CHECK(r3.exit_code == 2);

    // A non-image file is a data error.
    const fs::path junk = ws().root / "junk.ppm";
    {
        std::ofstream os(junk);
        os << "not an image";
    }
    RunResult r4 = run("infer --model " + ws().model.string() + " --image " + junk.string() +
                       " --query 'is red below green'");
    CHECK(r4.exit_code == 2);
}

TEST_CASE("usage and data errors map to the documented exit codes") {
    CHECK(run("").exit_code == 1);                       // missing subcommand
    CHECK(run("generate --seed 1").exit_code == 1);      // missing required --out
    CHECK(run("bogus-subcommand").exit_code == 1);
    CHECK(run("generate --out /tmp/sva_cli_badsize --seed 1 --size enormous").exit_code == 1);
    CHECK(run("train --train /nonexistent.svds --test /nonexistent.svds --out /tmp/x --seed 1")
              .exit_code == 2);
    CHECK(run("eval --model /nonexistent_model_dir --data " +
              (ws().data / "test.svds").string())
              .exit_code == 2);
}
