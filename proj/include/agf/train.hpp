#pragma once

// Optimization recipe: AdamW with decoupled weight decay, exponential
// per-epoch learning-rate decay, flip augmentation during training, optional
// flip averaging at test time. Training is single-writer; evaluation runs
// against frozen parameters.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "agf/data.hpp"
#include "agf/loss.hpp"
#include "agf/metrics.hpp"
#include "agf/model.hpp"

namespace agf {

struct TrainConfig {
    double lr_init = 5e-4;
    double lr_decay = 0.99;  // per epoch
    double weight_decay = 0.01;
    std::size_t batch_size = 16;
    std::size_t epochs = 90;
    LossConfig loss;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 0.0;          // 0 disables global-norm clipping
    double target_scale_mm = 1000.0;  // 3D targets are root-centered and divided by this
    double flip_prob = 0.5;           // training-time flip augmentation probability

    void validate() const;
};

TrainConfig train_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& cfg);

double lr_at_epoch(std::size_t epoch, const TrainConfig& cfg);

// Per-parameter first/second moment accumulators plus the shared step count.
template <typename T>
struct OptimizerState {
    struct Slot {
        std::vector<T> m;
        std::vector<T> v;
    };
    std::vector<Slot> slots;
    std::size_t step = 0;
};

// One decoupled-weight-decay Adam step over every trainable entry of the
// store, consuming the accumulated gradients. Decay skips entries flagged
// decay == false (norm affines, positional embeddings). Throws naming the
// parameter on a non-finite gradient.
template <typename T>
void adamw_step(ParameterStore<T>& params, OptimizerState<T>& state, double lr, const TrainConfig& cfg) {
    auto& entries = params.entries();
    if (state.slots.empty()) {
        state.slots.resize(entries.size());
        for (std::size_t i = 0; i < entries.size(); ++i) {
            state.slots[i].m.assign(entries[i].tensor.numel(), T(0));
            state.slots[i].v.assign(entries[i].tensor.numel(), T(0));
        }
    }
    if (state.slots.size() != entries.size())
        throw std::runtime_error("optimizer: state does not match the parameter store");

    double grad_sq = 0.0;
    for (auto& e : entries)
        for (const T g : e.tensor.grad()) {
            if (!std::isfinite(static_cast<double>(g)))
                throw std::runtime_error("optimizer: non-finite gradient for parameter '" + e.path + "'");
            grad_sq += static_cast<double>(g) * static_cast<double>(g);
        }
    double grad_scale = 1.0;
    if (cfg.clip_norm > 0.0) {
        const double norm = std::sqrt(grad_sq);
        if (norm > cfg.clip_norm) grad_scale = cfg.clip_norm / norm;
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

    for (std::size_t i = 0; i < entries.size(); ++i) {
        auto& data = entries[i].tensor.mutable_data();
        const auto& grad = entries[i].tensor.grad();
        auto& slot = state.slots[i];
        const bool decay = entries[i].decay && cfg.weight_decay > 0.0;
        for (std::size_t k = 0; k < data.size(); ++k) {
            if (decay) data[k] -= static_cast<T>(lr * cfg.weight_decay) * data[k];
            const double g = static_cast<double>(grad[k]) * grad_scale;
            slot.m[k] = static_cast<T>(cfg.beta1 * slot.m[k] + (1.0 - cfg.beta1) * g);
            slot.v[k] = static_cast<T>(cfg.beta2 * slot.v[k] + (1.0 - cfg.beta2) * g * g);
            const double mhat = slot.m[k] / bc1;
            const double vhat = slot.v[k] / bc2;
            data[k] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
        entries[i].tensor.zero_grad();
    }
}

// --- checkpoints ------------------------------------------------------------

// Single-file archive: magic, manifest length, JSON manifest (parameter
// path -> shape/dtype/offset plus a config echo), then a little-endian f32
// blob. Round trips are bit-exact; no timestamps inside.
void save_checkpoint(const std::string& path, const Model<float>& model, const TrainConfig& tcfg);

struct Checkpoint {
    ModelConfig model_config;
    TrainConfig train_config;
    Model<float> model;
};

Checkpoint load_checkpoint(const std::string& path);

// --- batched input assembly ---------------------------------------------------

// (B*T) x J x 3 input tensor from 2D windows.
Tensor<float> batch_input(const std::vector<SequencePair>& window_pairs);
// (B*T) x J x 3 target tensor: per-frame root-centered, divided by scale_mm.
Tensor<float> batch_target(const std::vector<SequencePair>& window_pairs, std::size_t root, double scale_mm);

// --- evaluation ----------------------------------------------------------------

// Root-relative millimeter predictions for one 2D sequence, windowed at the
// model's frame count with stride T; a shorter tail is covered by one final
// overlapping window. Throws if the sequence is shorter than T.
PoseArray predict_sequence(Model<float>& model, const PoseSequence& input2d, double scale_mm, bool tta_flip);

// Aggregated metrics over a dataset. Ground truth is root-centered before
// comparison; only full non-overlapping windows are scored. When tta_flip is
// set, predictions average the plain pass with the un-flipped prediction of
// the flipped input.
MetricsReport evaluate(Model<float>& model, const Dataset& data, double scale_mm, bool tta_flip);

// --- training loop --------------------------------------------------------------

struct EpochLog {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double eval_p1 = 0.0;
    double eval_p2 = 0.0;
    double eval_accel = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;
    double best_p1 = 0.0;
};

std::string epoch_log_to_csv(const std::vector<EpochLog>& log);

// Static line plot of train loss and eval P1 per epoch.
std::string epoch_log_to_svg(const std::vector<EpochLog>& log);

// Deterministic given the seed. Row 0 logs the untrained model; rows 1..E
// follow each epoch. Saves best-by-eval-P1 and final checkpoints under
// out_dir when non-empty. Aborts with epoch/step context on non-finite loss.
TrainResult train_run(const ModelConfig& mcfg, const TrainConfig& tcfg, const Dataset& train_data,
                      const Dataset& eval_data, const std::string& out_dir);

}  // namespace agf
