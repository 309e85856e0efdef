#pragma once

// Architecture hyperparameters and the named parameter layout they induce.
// enumerate_parameters() is the single source of truth: the model allocates
// from it and the cost accounting sums over it, so the two cannot drift.

#include <cstddef>
#include <string>
#include <vector>

#include "agf/graph.hpp"
#include "agf/tensor.hpp"

namespace agf {

enum class CompositionMode {
    parallel,
    seq_gcn_then_attn,
    seq_attn_then_gcn,
    attn_only,
    gcn_only,
};

CompositionMode composition_from_string(const std::string& name);
std::string composition_to_string(CompositionMode mode);

struct ModelConfig {
    std::size_t blocks = 16;        // N
    std::size_t dim = 128;          // d
    std::size_t motion_dim = 512;   // d'
    std::size_t frames = 243;       // T
    std::size_t joints = 17;        // J
    std::size_t heads = 8;          // h
    std::size_t mlp_ratio = 4;      // expansion in each MLP
    std::size_t temporal_k = 2;     // K-NN neighbors in the temporal graph
    CompositionMode composition = CompositionMode::parallel;
    bool use_spatial_pe = true;
    bool use_temporal_pe = false;
    bool post_norm = false;
    bool temporal_chain_union = false;
    SkeletonSpec skeleton = default_h36m_skeleton();

    std::size_t head_dim() const { return dim / heads; }
    void validate() const;
};

// Named variants: XS(N=12, d=64, T=27), S(26, 64, 81), B(16, 128, 243),
// L(26, 128, 243); everything else at defaults.
ModelConfig variant_config(const std::string& name);

ModelConfig model_config_from_json(const std::string& text);
std::string model_config_to_json(const ModelConfig& cfg);

enum class ParamInit { xavier_uniform, zeros, ones, pos_embed_normal };

struct ParamSpec {
    std::string path;
    Shape shape;
    ParamInit init = ParamInit::xavier_uniform;
    bool trainable = true;  // false for batch-norm running buffers
    bool decay = true;      // weight decay applies
};

// Ordered parameter layout for a config; stable across runs, drives
// initialization order, checkpoint layout, and parameter counting.
std::vector<ParamSpec> enumerate_parameters(const ModelConfig& cfg);

}  // namespace agf
