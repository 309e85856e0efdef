#include "agf/train.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace agf {

void TrainConfig::validate() const {
    if (lr_init <= 0.0) throw std::runtime_error("train config: lr_init must be positive");
    if (lr_decay <= 0.0 || lr_decay > 1.0) throw std::runtime_error("train config: lr_decay must be in (0, 1]");
    if (epochs == 0) throw std::runtime_error("train config: epochs must be >= 1");
    if (batch_size == 0) throw std::runtime_error("train config: batch_size must be >= 1");
    if (weight_decay < 0.0) throw std::runtime_error("train config: weight_decay must be nonnegative");
    if (loss.lambda_velocity < 0.0) throw std::runtime_error("train config: lambda_velocity must be nonnegative");
    if (target_scale_mm <= 0.0) throw std::runtime_error("train config: target_scale_mm must be positive");
    if (flip_prob < 0.0 || flip_prob > 1.0) throw std::runtime_error("train config: flip_prob must be in [0, 1]");
}

TrainConfig train_config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("train config: invalid JSON: ") + e.what());
    }
    TrainConfig cfg;
    cfg.lr_init = j.value("lr", cfg.lr_init);
    cfg.lr_decay = j.value("lr_decay", cfg.lr_decay);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.loss.lambda_velocity = j.value("lambda_velocity", cfg.loss.lambda_velocity);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.beta1 = j.value("beta1", cfg.beta1);
    cfg.beta2 = j.value("beta2", cfg.beta2);
    cfg.eps = j.value("eps", cfg.eps);
    cfg.clip_norm = j.value("clip_norm", cfg.clip_norm);
    cfg.target_scale_mm = j.value("target_scale_mm", cfg.target_scale_mm);
    cfg.flip_prob = j.value("flip_prob", cfg.flip_prob);
    cfg.validate();
    return cfg;
}

std::string train_config_to_json(const TrainConfig& cfg) {
    nlohmann::json j;
    j["lr"] = cfg.lr_init;
    j["lr_decay"] = cfg.lr_decay;
    j["weight_decay"] = cfg.weight_decay;
    j["batch_size"] = cfg.batch_size;
    j["epochs"] = cfg.epochs;
    j["lambda_velocity"] = cfg.loss.lambda_velocity;
    j["seed"] = cfg.seed;
    j["beta1"] = cfg.beta1;
    j["beta2"] = cfg.beta2;
    j["eps"] = cfg.eps;
    j["clip_norm"] = cfg.clip_norm;
    j["target_scale_mm"] = cfg.target_scale_mm;
    j["flip_prob"] = cfg.flip_prob;
    return j.dump(2);
}

double lr_at_epoch(std::size_t epoch, const TrainConfig& cfg) {
    return cfg.lr_init * std::pow(cfg.lr_decay, static_cast<double>(epoch));
}

// --- checkpoints ------------------------------------------------------------

namespace {

constexpr char kMagic[] = "AGFCKPT1\n";

void write_f32_le(std::string& out, float value) {
    const std::uint32_t u = std::bit_cast<std::uint32_t>(value);
    out.push_back(static_cast<char>(u & 0xff));
    out.push_back(static_cast<char>((u >> 8) & 0xff));
    out.push_back(static_cast<char>((u >> 16) & 0xff));
    out.push_back(static_cast<char>((u >> 24) & 0xff));
}

float read_f32_le(const std::string& blob, std::size_t offset) {
    std::uint32_t u = 0;
    for (int i = 3; i >= 0; --i) u = (u << 8) | static_cast<std::uint8_t>(blob[offset + i]);
    return std::bit_cast<float>(u);
}

void write_u64_le(std::ostream& out, std::uint64_t v) {
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(bytes, 8);
}

std::uint64_t read_u64_le(std::istream& in) {
    char bytes[8];
    in.read(bytes, 8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(bytes[i]);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model<float>& model, const TrainConfig& tcfg) {
    const auto& params = model.params();
    nlohmann::json manifest;
    manifest["format"] = 1;
    manifest["config"] = nlohmann::json::parse(model_config_to_json(model.config()));
    manifest["train_config"] = nlohmann::json::parse(train_config_to_json(tcfg));

    std::string blob;
    nlohmann::json entries = nlohmann::json::array();
    auto append = [&](const std::string& p, const Shape& shape, const std::vector<float>& values,
                      const char* kind) {
        nlohmann::json e;
        e["path"] = p;
        e["shape"] = shape;
        e["dtype"] = "f32";
        e["offset"] = blob.size();
        e["kind"] = kind;
        entries.push_back(std::move(e));
        for (float v : values) write_f32_le(blob, v);
    };
    for (const auto& e : params.entries()) append(e.path, e.tensor.shape(), e.tensor.data(), "param");
    for (const auto& [prefix, bn] : params.bn_layers()) {
        append(prefix + ".running_mean", {bn.mean.size()}, bn.mean, "bn_mean");
        append(prefix + ".running_var", {bn.var.size()}, bn.var, "bn_var");
    }
    manifest["entries"] = std::move(entries);
    manifest["blob_bytes"] = blob.size();
    const std::string manifest_text = manifest.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    out.write(kMagic, sizeof(kMagic) - 1);
    write_u64_le(out, manifest_text.size());
    out.write(manifest_text.data(), static_cast<std::streamsize>(manifest_text.size()));
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw std::runtime_error("checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[sizeof(kMagic) - 1];
    in.read(magic, sizeof(magic));
    if (!in || std::string(magic, sizeof(magic)) != std::string(kMagic, sizeof(magic)))
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const std::uint64_t manifest_len = read_u64_le(in);
    std::string manifest_text(manifest_len, '\0');
    in.read(manifest_text.data(), static_cast<std::streamsize>(manifest_len));
    nlohmann::json manifest = nlohmann::json::parse(manifest_text);
    const std::uint64_t blob_bytes = manifest["blob_bytes"].get<std::uint64_t>();
    std::string blob(blob_bytes, '\0');
    in.read(blob.data(), static_cast<std::streamsize>(blob_bytes));
    if (!in) throw std::runtime_error("checkpoint: truncated blob in " + path);

    ModelConfig mcfg = model_config_from_json(manifest["config"].dump());
    TrainConfig tcfg = train_config_from_json(manifest["train_config"].dump());

    const auto specs = enumerate_parameters(mcfg);
    std::map<std::string, const ParamSpec*> by_path;
    for (const auto& s : specs) by_path[s.path] = &s;

    ParameterStore<float> store;
    std::map<std::string, BatchNormStats<float>>& bn = store.bn_layers();
    for (const auto& e : manifest["entries"]) {
        const std::string p = e["path"].get<std::string>();
        Shape shape = e["shape"].get<Shape>();
        const std::size_t offset = e["offset"].get<std::size_t>();
        const std::size_t count = numel_of(shape);
        if (offset + count * 4 > blob.size())
            throw std::runtime_error("checkpoint: entry '" + p + "' overruns the blob");
        std::vector<float> values(count);
        for (std::size_t i = 0; i < count; ++i) values[i] = read_f32_le(blob, offset + i * 4);
        const std::string kind = e["kind"].get<std::string>();
        if (kind == "param") {
            auto it = by_path.find(p);
            if (it == by_path.end()) throw std::runtime_error("checkpoint: unexpected parameter '" + p + "'");
            if (it->second->shape != shape)
                throw std::runtime_error("checkpoint: shape mismatch for '" + p + "'");
            store.add(p, Tensor<float>(std::move(shape), std::move(values)), true, it->second->decay);
        } else {
            const std::string prefix = p.substr(0, p.rfind('.'));
            auto& stats = bn[prefix];
            (kind == "bn_mean" ? stats.mean : stats.var) = std::move(values);
        }
    }
    for (const auto& s : specs) {
        if (!s.trainable) continue;
        bool found = false;
        for (const auto& e : store.entries()) found |= e.path == s.path;
        if (!found) throw std::runtime_error("checkpoint: missing parameter '" + s.path + "'");
    }
    return Checkpoint{mcfg, tcfg, Model<float>(mcfg, std::move(store))};
}

// --- batched input assembly ---------------------------------------------------

Tensor<float> batch_input(const std::vector<SequencePair>& window_pairs) {
    if (window_pairs.empty()) throw std::runtime_error("batch: empty window list");
    const std::size_t T = window_pairs[0].input2d.frames, J = window_pairs[0].input2d.joints;
    std::vector<float> values;
    values.reserve(window_pairs.size() * T * J * 3);
    for (const auto& pair : window_pairs)
        values.insert(values.end(), pair.input2d.values.begin(), pair.input2d.values.end());
    return Tensor<float>({window_pairs.size() * T, J, 3}, std::move(values));
}

Tensor<float> batch_target(const std::vector<SequencePair>& window_pairs, std::size_t root, double scale_mm) {
    if (window_pairs.empty()) throw std::runtime_error("batch: empty window list");
    const std::size_t T = window_pairs[0].target3d.frames, J = window_pairs[0].target3d.joints;
    std::vector<float> values;
    values.reserve(window_pairs.size() * T * J * 3);
    for (const auto& pair : window_pairs)
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < J; ++j)
                for (std::size_t c = 0; c < 3; ++c)
                    values.push_back(static_cast<float>(
                        (pair.target3d.at(t, j, c) - pair.target3d.at(t, root, c)) / scale_mm));
    return Tensor<float>({window_pairs.size() * T, J, 3}, std::move(values));
}

// --- evaluation ----------------------------------------------------------------

namespace {

// one eval-mode pass over a T-frame window, millimeters out
std::vector<double> predict_window(Model<float>& model, const PoseSequence& window, double scale_mm, bool tta_flip,
                                   const SkeletonSpec& skeleton) {
    auto run = [&](const PoseSequence& w) {
        std::vector<float> v(w.values.begin(), w.values.end());
        Tensor<float> x({w.frames, w.joints, 3}, std::move(v));
        return model.forward(x, 1, RunMode::eval);
    };
    auto out = run(window);
    std::vector<double> pred(out.data().begin(), out.data().end());
    if (tta_flip) {
        auto flipped_out = run(horizontal_flip(window, skeleton));
        // un-flip the mirrored prediction, then average the two passes
        PoseSequence mirrored;
        mirrored.frames = window.frames;
        mirrored.joints = window.joints;
        mirrored.kind = "3d";
        mirrored.values.assign(flipped_out.data().begin(), flipped_out.data().end());
        auto unflipped = horizontal_flip(mirrored, skeleton);
        for (std::size_t i = 0; i < pred.size(); ++i)
            pred[i] = 0.5 * (pred[i] + static_cast<double>(unflipped.values[i]));
    }
    for (auto& v : pred) v *= scale_mm;
    return pred;
}

PoseSequence window_of(const PoseSequence& s, std::size_t start, std::size_t len) {
    PoseSequence out = s;
    out.frames = len;
    out.values.assign(s.values.begin() + start * s.joints * 3, s.values.begin() + (start + len) * s.joints * 3);
    return out;
}

}  // namespace

PoseArray predict_sequence(Model<float>& model, const PoseSequence& input2d, double scale_mm, bool tta_flip) {
    const std::size_t T = model.config().frames;
    if (input2d.frames < T)
        throw std::runtime_error("predict: sequence has " + std::to_string(input2d.frames) +
                                 " frames, model needs at least " + std::to_string(T));
    const auto& skeleton = model.config().skeleton;
    PoseArray pred(input2d.frames, input2d.joints);
    std::size_t covered = 0;
    while (covered < input2d.frames) {
        std::size_t start = covered;
        if (start + T > input2d.frames) start = input2d.frames - T;  // final overlapping window
        auto values = predict_window(model, window_of(input2d, start, T), scale_mm, tta_flip, skeleton);
        for (std::size_t t = covered; t < start + T; ++t)
            for (std::size_t i = 0; i < input2d.joints * 3; ++i)
                pred.values[t * input2d.joints * 3 + i] = values[(t - start) * input2d.joints * 3 + i];
        covered = start + T;
    }
    return pred;
}

MetricsReport evaluate(Model<float>& model, const Dataset& data, double scale_mm, bool tta_flip) {
    const std::size_t T = model.config().frames;
    const std::size_t root = model.config().skeleton.root_index;
    const auto& skeleton = model.config().skeleton;
    std::vector<EvalPair> pairs;
    for (std::size_t i = 0; i < data.pairs.size(); ++i) {
        const auto& seq = data.pairs[i];
        if (seq.input2d.frames < T)
            throw std::runtime_error("eval: sequence " + std::to_string(i) + " has " +
                                     std::to_string(seq.input2d.frames) + " frames, model needs " +
                                     std::to_string(T));
        for (std::size_t start = 0; start + T <= seq.input2d.frames; start += T) {
            auto window2d = window_of(seq.input2d, start, T);
            auto values = predict_window(model, window2d, scale_mm, tta_flip, skeleton);
            EvalPair pair;
            pair.pred = PoseArray(T, seq.input2d.joints);
            pair.pred.values = std::move(values);
            pair.gt = PoseArray(T, seq.input2d.joints);
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t j = 0; j < seq.input2d.joints; ++j)
                    for (std::size_t c = 0; c < 3; ++c)
                        pair.gt.at(t, j, c) = static_cast<double>(seq.target3d.at(start + t, j, c)) -
                                              static_cast<double>(seq.target3d.at(start + t, root, c));
            pair.action = data.actions[i];
            pairs.push_back(std::move(pair));
        }
    }
    return aggregate_report(pairs, root);
}

// --- training loop --------------------------------------------------------------

std::string epoch_log_to_csv(const std::vector<EpochLog>& log) {
    std::ostringstream out;
    out.precision(10);
    out << "epoch,lr,train_loss,eval_p1,eval_p2,eval_accel\n";
    for (const auto& row : log)
        out << row.epoch << "," << row.lr << "," << row.train_loss << "," << row.eval_p1 << "," << row.eval_p2 << ","
            << row.eval_accel << "\n";
    return out.str();
}

std::string epoch_log_to_svg(const std::vector<EpochLog>& log) {
    const double w = 640.0, h = 240.0, pad = 32.0;
    std::ostringstream out;
    out.precision(6);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    auto series = [&](auto getter, const char* color, const char* label, double ly) {
        if (log.size() < 2) return;
        double lo = getter(log[0]), hi = lo;
        for (const auto& row : log) {
            lo = std::min(lo, getter(row));
            hi = std::max(hi, getter(row));
        }
        if (hi == lo) hi = lo + 1.0;
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < log.size(); ++i) {
            const double x = pad + (w - 2 * pad) * static_cast<double>(i) / static_cast<double>(log.size() - 1);
            const double y = h - pad - (h - 2 * pad) * (getter(log[i]) - lo) / (hi - lo);
            out << x << "," << y << " ";
        }
        out << "\"/>\n";
        out << "<text x=\"" << pad << "\" y=\"" << ly << "\" fill=\"" << color << "\" font-size=\"11\">" << label
            << " [" << lo << ", " << hi << "]</text>\n";
    };
    series([](const EpochLog& r) { return r.train_loss; }, "#1f77b4", "train loss", 14.0);
    series([](const EpochLog& r) { return r.eval_p1; }, "#d62728", "eval P1 (mm)", 28.0);
    out << "</svg>\n";
    return out.str();
}

TrainResult train_run(const ModelConfig& mcfg, const TrainConfig& tcfg, const Dataset& train_data,
                      const Dataset& eval_data, const std::string& out_dir) {
    mcfg.validate();
    tcfg.validate();
    namespace fs = std::filesystem;
    if (!out_dir.empty()) fs::create_directories(out_dir);

    Model<float> model(mcfg, tcfg.seed);
    OptimizerState<float> opt;
    Rng data_rng(tcfg.seed ^ 0x9e3779b97f4a7c15ull);
    const std::size_t root = mcfg.skeleton.root_index;

    TrainResult result;
    result.best_p1 = std::numeric_limits<double>::infinity();

    auto mean_train_loss = [&]() {
        // loss of the current parameters over one deterministic eval-order pass
        Rng probe_rng(tcfg.seed);
        auto batches = make_batches(train_data, tcfg.batch_size, mcfg.frames, /*train=*/false, probe_rng);
        double total = 0.0;
        std::size_t count = 0;
        for (const auto& batch : batches) {
            std::vector<SequencePair> windows;
            for (const auto& s : batch) windows.push_back(materialize_sample(train_data, s, mcfg.frames, mcfg.skeleton));
            auto x = batch_input(windows);
            auto gt = batch_target(windows, root, tcfg.target_scale_mm);
            auto pred = model.forward(x, windows.size(), RunMode::eval);
            total += total_loss(pred, gt, windows.size(), mcfg.frames, tcfg.loss).item();
            count += 1;
        }
        return total / static_cast<double>(count);
    };

    auto log_epoch = [&](std::size_t epoch, double lr, double train_loss) {
        auto report = evaluate(model, eval_data, tcfg.target_scale_mm, /*tta_flip=*/false);
        EpochLog row;
        row.epoch = epoch;
        row.lr = lr;
        row.train_loss = train_loss;
        row.eval_p1 = report.mpjpe_mm;
        row.eval_p2 = report.p_mpjpe_mm;
        row.eval_accel = report.accel_err_mm;
        result.log.push_back(row);
        if (row.eval_p1 < result.best_p1) {
            result.best_p1 = row.eval_p1;
            result.best_epoch = epoch;
            if (!out_dir.empty()) save_checkpoint((fs::path(out_dir) / "best.ckpt").string(), model, tcfg);
        }
    };

    log_epoch(0, lr_at_epoch(0, tcfg), mean_train_loss());

    for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(epoch - 1, tcfg);
        auto batches = make_batches(train_data, tcfg.batch_size, mcfg.frames, /*train=*/true, data_rng, tcfg.flip_prob);
        double loss_sum = 0.0;
        std::size_t step = 0;
        for (const auto& batch : batches) {
            std::vector<SequencePair> windows;
            for (const auto& s : batch) windows.push_back(materialize_sample(train_data, s, mcfg.frames, mcfg.skeleton));
            auto x = batch_input(windows);
            auto gt = batch_target(windows, root, tcfg.target_scale_mm);

            Tape<float> tape;
            double loss_value = 0.0;
            {
                TapeGuard<float> guard(tape);
                auto pred = model.forward(x, windows.size(), RunMode::train);
                auto loss = total_loss(pred, gt, windows.size(), mcfg.frames, tcfg.loss);
                loss_value = loss.item();
                if (!std::isfinite(loss_value))
                    throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                             std::to_string(step));
                backward(loss);
            }
            adamw_step(model.params(), opt, lr, tcfg);
            loss_sum += loss_value;
            ++step;
        }
        log_epoch(epoch, lr, loss_sum / static_cast<double>(std::max<std::size_t>(1, step)));
    }

    if (!out_dir.empty()) {
        save_checkpoint((fs::path(out_dir) / "last.ckpt").string(), model, tcfg);
        std::ofstream csv(fs::path(out_dir) / "epochs.csv");
        csv << epoch_log_to_csv(result.log);
    }
    return result;
}

}  // namespace agf
