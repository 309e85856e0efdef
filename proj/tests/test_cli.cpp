// End-to-end checks of the command-line tool: exit codes, report emission,
// read-only evaluation, and the infer round trip. Receives the binary path
// as argv[1] via ctest.

#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "agf/data.hpp"

namespace fs = std::filesystem;

namespace {

std::string g_bin;

int run(const std::string& args, std::string* out = nullptr) {
    const fs::path tmp = fs::temp_directory_path() / "agf_cli_out.txt";
    const std::string cmd = g_bin + " " + args + " > " + tmp.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    if (out) {
        std::ifstream in(tmp);
        std::stringstream buf;
        buf << in.rdbuf();
        *out = buf.str();
    }
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace

TEST_CASE("no arguments and unknown subcommands exit 2 with usage text") {
    std::string out;
    CHECK(run("", &out) == 2);
    CHECK(out.find("subcommand") != std::string::npos);
    CHECK(run("frobnicate", &out) == 2);
    CHECK(run("eval --no-such-flag", &out) == 2);
}

TEST_CASE("validation failures exit 1") {
    std::string out;
    CHECK(run("inspect --variant Q", &out) == 1);
    CHECK(out.find("error:") != std::string::npos);
    CHECK(run("eval --checkpoint /nonexistent.ckpt --data /nonexistent.json", &out) == 1);
}

TEST_CASE("inspect prints the variant tables") {
    std::string out;
    CHECK(run("inspect --variant B", &out) == 0);
    CHECK(out.find("11.7 M") != std::string::npos);
    CHECK(out.find("197.4 M") != std::string::npos);

    const fs::path js = fs::temp_directory_path() / "agf_cost.json";
    CHECK(run("inspect --variant XS --json " + js.string()) == 0);
    CHECK(slurp(js).find("param_count") != std::string::npos);
    fs::remove(js);
}

TEST_CASE("synth, train, eval, infer round trip") {
    const fs::path root = fs::temp_directory_path() / "agf_cli_pipeline";
    fs::remove_all(root);
    fs::create_directories(root);

    CHECK(run("synth --out " + (root / "data").string() + " --seed 4 --sequences 3 --frames 8") == 0);
    CHECK(fs::exists(root / "data" / "manifest.json"));

    {
        std::ofstream cfg(root / "run.json");
        cfg << R"({"model": {"blocks": 1, "dim": 8, "motion_dim": 8, "frames": 4, "joints": 17, "heads": 2},)"
            << R"("train": {"epochs": 2, "batch_size": 4, "lr": 1e-3, "seed": 2}})";
    }
    CHECK(run("train --config " + (root / "run.json").string() + " --data " + (root / "data" / "manifest.json").string() +
              " --out " + (root / "out").string() + " --plot") == 0);
    CHECK(fs::exists(root / "out" / "best.ckpt"));
    CHECK(fs::exists(root / "out" / "epochs.csv"));
    CHECK(fs::exists(root / "out" / "epochs.svg"));

    // the plot is emitted only under --plot
    CHECK(run("train --config " + (root / "run.json").string() + " --data " +
              (root / "data" / "manifest.json").string() + " --out " + (root / "noplot").string()) == 0);
    CHECK(!fs::exists(root / "noplot" / "epochs.svg"));
    {
        std::ifstream csv(root / "out" / "epochs.csv");
        std::string header;
        std::getline(csv, header);
        CHECK(header == "epoch,lr,train_loss,eval_p1,eval_p2,eval_accel");
        std::string line;
        int rows = 0;
        while (std::getline(csv, line))
            if (!line.empty()) ++rows;
        CHECK(rows == 3);  // untrained row + 2 epochs
    }

    // eval must not mutate the checkpoint or the dataset
    const std::string ckpt_before = slurp(root / "out" / "best.ckpt");
    const std::string data_before = slurp(root / "data" / "seq_000_2d.json");
    std::string out;
    CHECK(run("eval --checkpoint " + (root / "out" / "best.ckpt").string() + " --data " +
                  (root / "data" / "manifest.json").string() + " --out " + (root / "report").string() + " --tta-flip",
              &out) == 0);
    CHECK(out.find("P1") != std::string::npos);
    CHECK(slurp(root / "out" / "best.ckpt") == ckpt_before);
    CHECK(slurp(root / "data" / "seq_000_2d.json") == data_before);
    CHECK(fs::exists(root / "report" / "report.json"));
    CHECK(fs::exists(root / "report" / "report.csv"));
    CHECK(slurp(root / "report" / "report.json").find("per_action") != std::string::npos);

    // infer produces a loadable 3d sequence of the same length
    CHECK(run("infer --checkpoint " + (root / "out" / "best.ckpt").string() + " --input " +
              (root / "data" / "seq_000_2d.json").string() + " --out " + (root / "pred.json").string()) == 0);
    auto pred = agf::load_sequence((root / "pred.json").string());
    CHECK(pred.kind == "3d");
    CHECK(pred.frames == 8);
    CHECK(pred.joints == 17);

    fs::remove_all(root);
}

TEST_CASE("gradcheck subcommand runs the tensor suite") {
    std::string out;
    CHECK(run("gradcheck --module tensor --seed 3", &out) == 0);
    CHECK(out.find("[PASS]") != std::string::npos);
    CHECK(out.find("all checks passed") != std::string::npos);
}

int main(int argc, char** argv) {
    if (argc > 1) g_bin = argv[1];
    doctest::Context ctx;
    ctx.applyCommandLine(1, argv);
    return ctx.run();
}
