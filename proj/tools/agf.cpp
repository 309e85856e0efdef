// Command-line entry point: dataset synthesis, training, evaluation,
// inference, complexity inspection, and the gradient-check suite. Every
// subcommand is deterministic under --seed; timestamps appear only in the
// meta.generated_at field of JSON reports.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "agf/accounting.hpp"
#include "agf/data.hpp"
#include "agf/gradsuite.hpp"
#include "agf/metrics.hpp"
#include "agf/model.hpp"
#include "agf/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct SynthSpec {
    std::size_t sequences = 8;
    std::size_t frames = 27;
    double fps = 50.0;
    double noise_sigma_px = 0.0;
    std::uint64_t seed = 0;
    std::vector<std::string> actions = {"walk", "wave", "turn", "jump"};
};

SynthSpec synth_spec_from_json(const std::string& text) {
    json j = json::parse(text);
    SynthSpec s;
    s.sequences = j.value("sequences", s.sequences);
    s.frames = j.value("frames", s.frames);
    s.fps = j.value("fps", s.fps);
    s.noise_sigma_px = j.value("noise_sigma_px", s.noise_sigma_px);
    s.seed = j.value("seed", s.seed);
    if (j.contains("actions")) s.actions = j["actions"].get<std::vector<std::string>>();
    return s;
}

int cmd_synth(const std::string& config_path, const std::string& out_dir, std::int64_t seed_override,
              std::int64_t sequences, std::int64_t frames, double noise) {
    SynthSpec spec;
    if (!config_path.empty()) spec = synth_spec_from_json(read_file(config_path));
    if (seed_override >= 0) spec.seed = static_cast<std::uint64_t>(seed_override);
    if (sequences > 0) spec.sequences = static_cast<std::size_t>(sequences);
    if (frames > 0) spec.frames = static_cast<std::size_t>(frames);
    if (noise >= 0.0) spec.noise_sigma_px = noise;

    fs::create_directories(out_dir);
    std::vector<agf::ManifestEntry> manifest;
    for (std::size_t i = 0; i < spec.sequences; ++i) {
        auto scene = agf::default_scene(spec.seed * 100003 + i);
        scene.fps = spec.fps;
        scene.noise_sigma_px = spec.noise_sigma_px;
        const std::string action = spec.actions.empty() ? "" : spec.actions[i % spec.actions.size()];
        auto pair = agf::generate_synthetic_sequence(scene, spec.frames, action);
        char name[32];
        std::snprintf(name, sizeof(name), "seq_%03zu", i);
        const std::string p2d = std::string(name) + "_2d.json";
        const std::string p3d = std::string(name) + "_3d.json";
        agf::save_sequence(pair.input2d, (fs::path(out_dir) / p2d).string());
        agf::save_sequence(pair.target3d, (fs::path(out_dir) / p3d).string());
        manifest.push_back({p2d, p3d, action});
    }
    agf::save_manifest(manifest, (fs::path(out_dir) / "manifest.json").string());
    std::cout << "wrote " << spec.sequences << " sequences (" << spec.frames << " frames) to " << out_dir << "\n";
    return 0;
}

struct RunConfigs {
    agf::ModelConfig model;
    agf::TrainConfig train;
};

RunConfigs run_configs_from_file(const std::string& path) {
    json j = json::parse(read_file(path));
    RunConfigs out;
    if (j.contains("model")) out.model = agf::model_config_from_json(j["model"].dump());
    if (j.contains("train")) out.train = agf::train_config_from_json(j["train"].dump());
    return out;
}

int cmd_train(const std::string& config_path, const std::string& data_path, const std::string& eval_path,
              const std::string& out_dir, std::int64_t seed_override, bool plot) {
    auto cfgs = run_configs_from_file(config_path);
    if (seed_override >= 0) cfgs.train.seed = static_cast<std::uint64_t>(seed_override);
    auto train_data = agf::load_dataset(data_path, cfgs.model.joints);
    auto eval_data = eval_path.empty() ? train_data : agf::load_dataset(eval_path, cfgs.model.joints);

    auto result = agf::train_run(cfgs.model, cfgs.train, train_data, eval_data, out_dir);
    if (plot && !out_dir.empty())
        write_file((fs::path(out_dir) / "epochs.svg").string(), agf::epoch_log_to_svg(result.log));
    const auto& last = result.log.back();
    std::cout << "trained " << cfgs.train.epochs << " epochs; final train loss " << last.train_loss
              << ", eval P1 " << last.eval_p1 << " mm (best " << result.best_p1 << " mm at epoch "
              << result.best_epoch << ")\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, const std::string& out_dir, bool tta,
             bool plot_unused) {
    (void)plot_unused;
    auto ckpt = agf::load_checkpoint(ckpt_path);
    auto data = agf::load_dataset(data_path, ckpt.model_config.joints);
    auto report = agf::evaluate(ckpt.model, data, ckpt.train_config.target_scale_mm, tta);
    const std::string js = agf::report_to_json(report, timestamp_utc());
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_file((fs::path(out_dir) / "report.json").string(), js + "\n");
        write_file((fs::path(out_dir) / "report.csv").string(), agf::report_to_csv(report));
    }
    std::cout << "P1 " << report.mpjpe_mm << " mm, P2 " << report.p_mpjpe_mm << " mm, PCK " << report.pck_pct
              << "%, AUC " << report.auc_pct << "%, accel " << report.accel_err_mm << " mm\n";
    return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& input_path, const std::string& out_path, bool tta) {
    auto ckpt = agf::load_checkpoint(ckpt_path);
    auto seq = agf::load_sequence(input_path, ckpt.model_config.joints);
    if (seq.kind != "2d") throw std::runtime_error("infer: input must be a 2d sequence");
    auto pred = agf::predict_sequence(ckpt.model, seq, ckpt.train_config.target_scale_mm, tta);

    agf::PoseSequence out;
    out.frames = pred.frames;
    out.joints = pred.joints;
    out.kind = "3d";
    out.fps = seq.fps;
    out.action = seq.action;
    out.values.assign(pred.values.begin(), pred.values.end());
    agf::save_sequence(out, out_path);
    std::cout << "wrote " << out.frames << "-frame 3d estimate to " << out_path << "\n";
    return 0;
}

int cmd_inspect(const std::string& variant, const std::string& config_path, const std::string& json_path) {
    agf::ModelConfig cfg;
    if (!variant.empty())
        cfg = agf::variant_config(variant);
    else if (!config_path.empty())
        cfg = run_configs_from_file(config_path).model;
    else
        throw std::runtime_error("inspect: needs --variant or --config");
    auto report = agf::count_macs(cfg);
    std::cout << cost_report_table(report, cfg);
    if (!json_path.empty()) write_file(json_path, agf::cost_report_to_json(report, cfg) + "\n");
    return 0;
}

int cmd_gradcheck(const std::string& module, unsigned threads, std::uint64_t seed) {
    bool all_pass = true;
    auto print = [&](const agf::GradCheckResult& r) {
        std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << "  max_rel_err=" << r.max_rel_err
                  << "  tol=" << r.tolerance << "\n";
        all_pass = all_pass && r.pass;
    };
    if (module == "tensor" || module == "all")
        for (const auto& r : agf::run_primitive_gradchecks(seed)) print(r);
    if (module == "model" || module == "all") {
        for (const auto& r : agf::run_module_gradchecks(seed)) print(r);
        print(agf::run_full_model_gradcheck(seed, threads));
    }
    std::cout << (all_pass ? "gradcheck: all checks passed\n" : "gradcheck: FAILURES\n");
    return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"2D-to-3D human pose lifting: dual attention/graph-convolution streams with adaptive fusion"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic motion dataset");
    std::string synth_config, synth_out = "data_out";
    std::int64_t synth_seed = -1, synth_sequences = -1, synth_frames = -1;
    double synth_noise = -1.0;
    synth->add_option("--config", synth_config, "Synthesis config JSON");
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--seed", synth_seed, "Seed override");
    synth->add_option("--sequences", synth_sequences, "Sequence count override");
    synth->add_option("--frames", synth_frames, "Frames per sequence override");
    synth->add_option("--noise", synth_noise, "2D noise sigma in pixels");

    // train
    auto* train = app.add_subcommand("train", "Train a model");
    std::string train_config, train_data, train_eval, train_out = "train_out";
    std::int64_t train_seed = -1;
    bool train_plot = false;
    train->add_option("--config", train_config, "Run config JSON with model/train sections")->required();
    train->add_option("--data", train_data, "Training dataset manifest")->required();
    train->add_option("--eval-data", train_eval, "Evaluation dataset manifest (defaults to --data)");
    train->add_option("--out", train_out, "Output directory");
    train->add_option("--seed", train_seed, "Seed override");
    train->add_flag("--plot", train_plot, "Also write an SVG plot of per-epoch metrics");

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    std::string eval_ckpt, eval_data, eval_out;
    bool eval_tta = false;
    eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
    eval->add_option("--data", eval_data, "Dataset manifest")->required();
    eval->add_option("--out", eval_out, "Report output directory");
    eval->add_flag("--tta-flip", eval_tta, "Average predictions with the un-flipped flipped-input pass");

    // infer
    auto* infer = app.add_subcommand("infer", "Lift one 2d sequence to 3d");
    std::string infer_ckpt, infer_in, infer_out = "pred.json";
    bool infer_tta = false;
    infer->add_option("--checkpoint", infer_ckpt, "Checkpoint file")->required();
    infer->add_option("--input", infer_in, "Input 2d sequence JSON")->required();
    infer->add_option("--out", infer_out, "Output 3d sequence JSON");
    infer->add_flag("--tta-flip", infer_tta, "Flip-averaged prediction");

    // inspect
    auto* inspect = app.add_subcommand("inspect", "Parameter and MAC accounting");
    std::string inspect_variant, inspect_config, inspect_json;
    inspect->add_option("--variant", inspect_variant, "Named variant: XS, S, B, or L");
    inspect->add_option("--config", inspect_config, "Run config JSON");
    inspect->add_option("--json", inspect_json, "Also write the cost report as JSON");

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
    std::string grad_module = "all";
    unsigned grad_threads = std::max(1u, std::thread::hardware_concurrency());
    std::uint64_t grad_seed = 7;
    gradcheck->add_option("--module", grad_module, "tensor, model, or all")
        ->check(CLI::IsMember({"tensor", "model", "all"}));
    gradcheck->add_option("--threads", grad_threads, "Worker threads for the full-model check");
    gradcheck->add_option("--seed", grad_seed, "Suite seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*synth) return cmd_synth(synth_config, synth_out, synth_seed, synth_sequences, synth_frames, synth_noise);
        if (*train) return cmd_train(train_config, train_data, train_eval, train_out, train_seed, train_plot);
        if (*eval) return cmd_eval(eval_ckpt, eval_data, eval_out, eval_tta, false);
        if (*infer) return cmd_infer(infer_ckpt, infer_in, infer_out, infer_tta);
        if (*inspect) return cmd_inspect(inspect_variant, inspect_config, inspect_json);
        if (*gradcheck) return cmd_gradcheck(grad_module, grad_threads, grad_seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
