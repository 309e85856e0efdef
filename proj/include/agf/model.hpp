#pragma once

// The 2D-to-3D lifting network: linear token embedding with optional
// positional terms, N dual-stream blocks (attention metaformers in one
// stream, graph-convolution metaformers over the skeleton and a dynamic
// temporal K-NN graph in the other, adaptively fused), and a tanh motion
// head with a 3D regression layer.
//
// Instantiate with T = float for training and T = double for gradient
// verification. Parameters are read-only during inference; concurrent
// forward passes on distinct tapes are safe.

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "agf/graph.hpp"
#include "agf/model_config.hpp"
#include "agf/rng.hpp"
#include "agf/tensor.hpp"

namespace agf {

enum class RunMode {
    train,               // batch-norm uses batch stats and updates running buffers
    train_frozen_stats,  // batch stats, no buffer update (gradient checks)
    eval,                // running stats
};

template <typename T>
class ParameterStore {
public:
    struct Entry {
        std::string path;
        Tensor<T> tensor;
        bool trainable = true;
        bool decay = true;
    };

    static ParameterStore build(const ModelConfig& cfg, std::uint64_t seed) {
        ParameterStore store;
        Rng rng(seed);
        for (const auto& spec : enumerate_parameters(cfg)) {
            if (!spec.trainable) {  // batch-norm running buffers
                const std::string prefix = spec.path.substr(0, spec.path.rfind('.'));
                auto& bn = store.bn_[prefix];
                auto& dst = spec.path.ends_with("running_mean") ? bn.mean : bn.var;
                dst.assign(numel_of(spec.shape), spec.init == ParamInit::ones ? T(1) : T(0));
                continue;
            }
            std::vector<T> values(numel_of(spec.shape));
            switch (spec.init) {
                case ParamInit::zeros: break;
                case ParamInit::ones:
                    std::fill(values.begin(), values.end(), T(1));
                    break;
                case ParamInit::xavier_uniform: {
                    const double fan_in = static_cast<double>(spec.shape[0]);
                    const double fan_out = static_cast<double>(spec.shape.back());
                    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
                    for (auto& v : values) v = static_cast<T>(rng.uniform(-limit, limit));
                    break;
                }
                case ParamInit::pos_embed_normal:
                    for (auto& v : values) v = static_cast<T>(rng.normal(0.0, 0.02));
                    break;
            }
            Entry e;
            e.path = spec.path;
            e.tensor = Tensor<T>(spec.shape, std::move(values));
            e.tensor.set_requires_grad(true);
            e.trainable = true;
            e.decay = spec.decay;
            store.index_[spec.path] = store.entries_.size();
            store.entries_.push_back(std::move(e));
        }
        return store;
    }

    Tensor<T>& at(const std::string& path) {
        auto it = index_.find(path);
        if (it == index_.end()) throw std::runtime_error("params: no parameter named '" + path + "'");
        return entries_[it->second].tensor;
    }
    const Tensor<T>& at(const std::string& path) const {
        auto it = index_.find(path);
        if (it == index_.end()) throw std::runtime_error("params: no parameter named '" + path + "'");
        return entries_[it->second].tensor;
    }

    BatchNormStats<T>& bn_stats(const std::string& prefix) {
        auto it = bn_.find(prefix);
        if (it == bn_.end()) throw std::runtime_error("params: no batch-norm layer at '" + prefix + "'");
        return it->second;
    }

    // For tests and checkpoint loading; paths must stay unique.
    void add(const std::string& path, Tensor<T> tensor, bool trainable = true, bool decay = true) {
        tensor.set_requires_grad(trainable);
        index_[path] = entries_.size();
        entries_.push_back({path, std::move(tensor), trainable, decay});
    }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }
    std::map<std::string, BatchNormStats<T>>& bn_layers() { return bn_; }
    const std::map<std::string, BatchNormStats<T>>& bn_layers() const { return bn_; }

    std::size_t trainable_scalars() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.tensor.numel();
        return n;
    }

    void zero_grads() {
        for (auto& e : entries_) e.tensor.zero_grad();
    }

private:
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
    std::map<std::string, BatchNormStats<T>> bn_;
};

template <typename T>
struct ForwardResult {
    Tensor<T> output;  // (B*T) x J x 3
    Tensor<T> motion;  // (B*T*J) x d'
};

template <typename T>
class Model {
public:
    Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        params_ = ParameterStore<T>::build(cfg_, seed);
        spatial_adj_ = build_skeleton_adjacency(cfg_.skeleton);
    }

    // Adopt externally constructed parameters (checkpoint loading).
    Model(ModelConfig cfg, ParameterStore<T> params) : cfg_(std::move(cfg)), params_(std::move(params)) {
        cfg_.validate();
        spatial_adj_ = build_skeleton_adjacency(cfg_.skeleton);
    }

    const ModelConfig& config() const { return cfg_; }
    ParameterStore<T>& params() { return params_; }
    const ParameterStore<T>& params() const { return params_; }

    Tensor<T> forward(const Tensor<T>& x, std::size_t batch, RunMode mode) {
        return forward_detailed(x, batch, mode).output;
    }

    ForwardResult<T> forward_detailed(const Tensor<T>& x, std::size_t batch, RunMode mode) {
        if (x.rank() != 3 || x.shape()[0] != batch * cfg_.frames || x.shape()[1] != cfg_.joints || x.shape()[2] != 3)
            throw std::runtime_error("model: input shape " + shape_str(x.shape()) + " does not match batch " +
                                     std::to_string(batch) + " x " + std::to_string(cfg_.frames) + " frames x " +
                                     std::to_string(cfg_.joints) + " joints x 3");
        auto h = embed_inputs(x, batch);
        for (std::size_t b = 0; b < cfg_.blocks; ++b) {
            h = agformer_block(h, b, batch, mode);
            check_finite(h, b);
        }
        const std::size_t tokens = batch * cfg_.frames * cfg_.joints;
        auto flat = reshape(h, {tokens, cfg_.dim});
        auto motion = agf::tanh(linear("head.motion", flat));
        auto out = linear("head.out", motion);
        ForwardResult<T> result;
        result.output = reshape(out, {batch * cfg_.frames, cfg_.joints, std::size_t(3)});
        result.motion = motion;
        return result;
    }

    // Per-joint linear projection plus optional spatial/temporal position
    // embeddings, (B*T) x J x 3 -> (B*T) x J x d.
    Tensor<T> embed_inputs(const Tensor<T>& x, std::size_t batch) {
        const std::size_t rows = batch * cfg_.frames;
        auto flat = reshape(x, {rows * cfg_.joints, std::size_t(3)});
        auto h = reshape(linear("embed", flat), {rows, cfg_.joints, cfg_.dim});
        if (cfg_.use_spatial_pe) h = bcast_add_axis0(h, params_.at("pe.spatial"));
        if (cfg_.use_temporal_pe) {
            auto pe = params_.at("pe.temporal");
            h = bcast_add_axis1(h, batch == 1 ? pe : repeat_axis0(pe, batch));
        }
        return h;
    }

    Tensor<T> agformer_block(const Tensor<T>& x, std::size_t block, std::size_t batch, RunMode mode) {
        const std::string p = "block" + std::to_string(block);
        switch (cfg_.composition) {
            case CompositionMode::parallel: {
                auto tf = transformer_stream(x, p, batch);
                auto gf = gcn_stream(x, p, batch, mode);
                return adaptive_fuse(p, tf, gf);
            }
            case CompositionMode::seq_gcn_then_attn:
                return transformer_stream(gcn_stream(x, p, batch, mode), p, batch);
            case CompositionMode::seq_attn_then_gcn:
                return gcn_stream(transformer_stream(x, p, batch), p, batch, mode);
            case CompositionMode::attn_only:
                return transformer_stream(x, p, batch);
            case CompositionMode::gcn_only:
                return gcn_stream(x, p, batch, mode);
        }
        throw std::runtime_error("model: unknown composition mode");
    }

    // Multi-head scaled dot-product self-attention over the middle axis of
    // (B, n, d) tokens.
    Tensor<T> attention_mixer(const std::string& prefix, const Tensor<T>& tokens) {
        const std::size_t rows = tokens.shape()[0], n = tokens.shape()[1], d = tokens.shape()[2];
        const std::size_t dk = cfg_.head_dim();
        auto flat = reshape(tokens, {rows * n, d});
        const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
        std::vector<Tensor<T>> heads;
        heads.reserve(cfg_.heads);
        for (std::size_t h = 0; h < cfg_.heads; ++h) {
            const std::string hs = std::to_string(h);
            auto q = reshape(linear(prefix + ".q" + hs, flat), {rows, n, dk});
            auto k = reshape(linear(prefix + ".k" + hs, flat), {rows, n, dk});
            auto v = reshape(linear(prefix + ".v" + hs, flat), {rows, n, dk});
            auto attn = softmax_last(mul_scalar(bmm(q, transpose_last2(k)), scale));
            heads.push_back(bmm(attn, v));
        }
        auto merged = cfg_.heads == 1 ? heads[0] : concat_last(heads);
        return reshape(linear(prefix + ".out", reshape(merged, {rows * n, d})), {rows, n, d});
    }

    // relu(residual + BN(adj.tokens.W1 + tokens.W2)) on (B, n, d) tokens with
    // a constant normalized adjacency per batch row. The residual defaults to
    // the mixer input itself.
    Tensor<T> gcn_mixer(const std::string& prefix, const Tensor<T>& tokens, const Tensor<T>& adj, RunMode mode,
                        const Tensor<T>* residual = nullptr) {
        const std::size_t rows = tokens.shape()[0], n = tokens.shape()[1], d = tokens.shape()[2];
        auto agg = reshape(bmm(adj, tokens), {rows * n, d});
        auto flat = reshape(tokens, {rows * n, d});
        auto mixed = add(matmul(agg, params_.at(prefix + ".w1")), matmul(flat, params_.at(prefix + ".w2")));
        auto normed = batch_norm(mixed, params_.at(prefix + ".bn.gamma"), params_.at(prefix + ".bn.beta"),
                                 params_.bn_stats(prefix + ".bn"), mode != RunMode::eval,
                                 mode == RunMode::train);
        return relu(add(residual ? *residual : tokens, reshape(normed, {rows, n, d})));
    }

    // y = mixer(Norm(x)) + x; z = MLP(Norm(y)) + y. The post_norm flag moves
    // both norms after their residual sums instead.
    Tensor<T> metaformer(const std::string& prefix, const Tensor<T>& tokens,
                         const std::function<Tensor<T>(const Tensor<T>&)>& mixer) {
        if (!cfg_.post_norm) {
            auto y = add(tokens, mixer(norm(prefix + ".norm1", tokens)));
            return add(y, mlp(prefix + ".mlp", norm(prefix + ".norm2", y)));
        }
        auto y = norm(prefix + ".norm1", add(tokens, mixer(tokens)));
        return norm(prefix + ".norm2", add(y, mlp(prefix + ".mlp", y)));
    }

    // Per-position convex combination of the two streams, weights from a
    // softmax over a learned linear map of the concatenated features.
    Tensor<T> adaptive_fuse(const std::string& block_prefix, const Tensor<T>& tf, const Tensor<T>& gf) {
        const std::size_t rows = tf.shape()[0], n = tf.shape()[1], d = tf.shape()[2];
        auto cat = reshape(concat_last(std::vector<Tensor<T>>{tf, gf}), {rows * n, 2 * d});
        auto logits = reshape(linear(block_prefix + ".fuse", cat), {rows, n, std::size_t(2)});
        auto alpha = softmax_last(logits);
        auto a_tf = slice_last(alpha, 0, 1);
        auto a_gf = slice_last(alpha, 1, 1);
        return add(scale_channels(tf, a_tf), scale_channels(gf, a_gf));
    }

    Tensor<T> transformer_stream(const Tensor<T>& x, const std::string& block_prefix, std::size_t batch) {
        auto mixer_s = [&](const Tensor<T>& t) { return attention_mixer(block_prefix + ".tf_s.attn", t); };
        auto s = metaformer(block_prefix + ".tf_s", x, mixer_s);
        auto tt = to_temporal(s, batch);
        auto mixer_t = [&](const Tensor<T>& t) { return attention_mixer(block_prefix + ".tf_t.attn", t); };
        return to_spatial(metaformer(block_prefix + ".tf_t", tt, mixer_t), batch);
    }

    Tensor<T> gcn_stream(const Tensor<T>& x, const std::string& block_prefix, std::size_t batch, RunMode mode) {
        auto mixer_s = [&](const Tensor<T>& t) {
            return gcn_mixer(block_prefix + ".gf_s.gcn", t, tiled_spatial_adjacency(t.shape()[0]), mode);
        };
        auto s = metaformer(block_prefix + ".gf_s", x, mixer_s);
        auto tt = to_temporal(s, batch);
        // the temporal graph is dynamic: rebuilt from the mixer's own input
        // features on every pass
        auto mixer_t = [&](const Tensor<T>& t) {
            return gcn_mixer(block_prefix + ".gf_t.gcn", t, temporal_adjacency(t), mode);
        };
        return to_spatial(metaformer(block_prefix + ".gf_t", tt, mixer_t), batch);
    }

private:
    Tensor<T> linear(const std::string& prefix, const Tensor<T>& flat) {
        return add_bias_row(matmul(flat, params_.at(prefix + ".weight")), params_.at(prefix + ".bias"));
    }

    Tensor<T> norm(const std::string& prefix, const Tensor<T>& x) {
        return layer_norm(x, params_.at(prefix + ".gamma"), params_.at(prefix + ".beta"));
    }

    Tensor<T> mlp(const std::string& prefix, const Tensor<T>& tokens) {
        const std::size_t rows = tokens.shape()[0], n = tokens.shape()[1], d = tokens.shape()[2];
        auto flat = reshape(tokens, {rows * n, d});
        auto h = linear(prefix + ".fc2", gelu(linear(prefix + ".fc1", flat)));
        return reshape(h, {rows, n, d});
    }

    // (B*T, J, d) -> (B*J, T, d)
    Tensor<T> to_temporal(const Tensor<T>& x, std::size_t batch) {
        auto grouped = reshape(x, {batch, cfg_.frames, cfg_.joints, cfg_.dim});
        return reshape(permute_0213(grouped), {batch * cfg_.joints, cfg_.frames, cfg_.dim});
    }

    // (B*J, T, d) -> (B*T, J, d)
    Tensor<T> to_spatial(const Tensor<T>& x, std::size_t batch) {
        auto grouped = reshape(x, {batch, cfg_.joints, cfg_.frames, cfg_.dim});
        return reshape(permute_0213(grouped), {batch * cfg_.frames, cfg_.joints, cfg_.dim});
    }

    Tensor<T> tiled_spatial_adjacency(std::size_t rows) {
        const std::size_t n = cfg_.joints;
        std::vector<T> values(rows * n * n);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < n * n; ++i) values[r * n * n + i] = static_cast<T>(spatial_adj_.values[i]);
        return Tensor<T>({rows, n, n}, std::move(values));
    }

    // Per-row K-NN similarity graph over frames from the current features.
    Tensor<T> temporal_adjacency(const Tensor<T>& tokens) {
        const std::size_t rows = tokens.shape()[0], frames = tokens.shape()[1], d = tokens.shape()[2];
        std::vector<T> values(rows * frames * frames);
        std::vector<double> feats(frames * d);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t i = 0; i < frames * d; ++i)
                feats[i] = static_cast<double>(tokens.data()[r * frames * d + i]);
            auto adj = build_temporal_knn_adjacency(feats, frames, d, cfg_.temporal_k, cfg_.temporal_chain_union);
            for (std::size_t i = 0; i < frames * frames; ++i)
                values[r * frames * frames + i] = static_cast<T>(adj.values[i]);
        }
        return Tensor<T>({rows, frames, frames}, std::move(values));
    }

    void check_finite(const Tensor<T>& h, std::size_t block) const {
        for (const T v : h.data())
            if (!std::isfinite(static_cast<double>(v)))
                throw std::runtime_error("model: non-finite activations after block " + std::to_string(block));
    }

    ModelConfig cfg_;
    ParameterStore<T> params_;
    NormalizedAdjacency spatial_adj_;
};

}  // namespace agf
