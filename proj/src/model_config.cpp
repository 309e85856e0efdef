#include "agf/model_config.hpp"

#include <stdexcept>

#include <json.hpp>

namespace agf {

CompositionMode composition_from_string(const std::string& name) {
    if (name == "parallel") return CompositionMode::parallel;
    if (name == "seq_gcn_then_attn") return CompositionMode::seq_gcn_then_attn;
    if (name == "seq_attn_then_gcn") return CompositionMode::seq_attn_then_gcn;
    if (name == "attn_only") return CompositionMode::attn_only;
    if (name == "gcn_only") return CompositionMode::gcn_only;
    throw std::runtime_error("config: unknown composition mode '" + name + "'");
}

std::string composition_to_string(CompositionMode mode) {
    switch (mode) {
        case CompositionMode::parallel: return "parallel";
        case CompositionMode::seq_gcn_then_attn: return "seq_gcn_then_attn";
        case CompositionMode::seq_attn_then_gcn: return "seq_attn_then_gcn";
        case CompositionMode::attn_only: return "attn_only";
        case CompositionMode::gcn_only: return "gcn_only";
    }
    return "parallel";
}

void ModelConfig::validate() const {
    if (blocks == 0 || dim == 0 || motion_dim == 0 || frames == 0 || joints == 0 || heads == 0 || mlp_ratio == 0)
        throw std::runtime_error("config: all counts must be positive");
    if (dim % heads != 0)
        throw std::runtime_error("config: dim " + std::to_string(dim) + " not divisible by heads " +
                                 std::to_string(heads));
    if (temporal_k == 0) throw std::runtime_error("config: temporal_k must be positive");
    skeleton.validate();
    if (skeleton.joint_count != joints)
        throw std::runtime_error("config: skeleton has " + std::to_string(skeleton.joint_count) +
                                 " joints, config declares " + std::to_string(joints));
}

ModelConfig variant_config(const std::string& name) {
    ModelConfig cfg;
    if (name == "XS") {
        cfg.blocks = 12;
        cfg.dim = 64;
        cfg.frames = 27;
    } else if (name == "S") {
        cfg.blocks = 26;
        cfg.dim = 64;
        cfg.frames = 81;
    } else if (name == "B") {
        cfg.blocks = 16;
        cfg.dim = 128;
        cfg.frames = 243;
    } else if (name == "L") {
        cfg.blocks = 26;
        cfg.dim = 128;
        cfg.frames = 243;
    } else {
        throw std::runtime_error("config: unknown variant '" + name + "' (expected XS, S, B, or L)");
    }
    return cfg;
}

ModelConfig model_config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("config: invalid JSON: ") + e.what());
    }
    ModelConfig cfg;
    if (j.contains("variant")) cfg = variant_config(j["variant"].get<std::string>());
    cfg.blocks = j.value("blocks", cfg.blocks);
    cfg.dim = j.value("dim", cfg.dim);
    cfg.motion_dim = j.value("motion_dim", cfg.motion_dim);
    cfg.frames = j.value("frames", cfg.frames);
    cfg.joints = j.value("joints", cfg.joints);
    cfg.heads = j.value("heads", cfg.heads);
    cfg.mlp_ratio = j.value("mlp_ratio", cfg.mlp_ratio);
    cfg.temporal_k = j.value("temporal_k", cfg.temporal_k);
    if (j.contains("composition")) cfg.composition = composition_from_string(j["composition"].get<std::string>());
    cfg.use_spatial_pe = j.value("spatial_pe", cfg.use_spatial_pe);
    cfg.use_temporal_pe = j.value("temporal_pe", cfg.use_temporal_pe);
    cfg.post_norm = j.value("post_norm", cfg.post_norm);
    cfg.temporal_chain_union = j.value("temporal_chain_union", cfg.temporal_chain_union);
    if (j.contains("skeleton")) {
        if (j["skeleton"].is_string())
            cfg.skeleton = load_skeleton(j["skeleton"].get<std::string>());
        else
            cfg.skeleton = parse_skeleton_json(j["skeleton"].dump());
        cfg.joints = cfg.skeleton.joint_count;
    }
    cfg.validate();
    return cfg;
}

std::string model_config_to_json(const ModelConfig& cfg) {
    nlohmann::json j;
    j["blocks"] = cfg.blocks;
    j["dim"] = cfg.dim;
    j["motion_dim"] = cfg.motion_dim;
    j["frames"] = cfg.frames;
    j["joints"] = cfg.joints;
    j["heads"] = cfg.heads;
    j["mlp_ratio"] = cfg.mlp_ratio;
    j["temporal_k"] = cfg.temporal_k;
    j["composition"] = composition_to_string(cfg.composition);
    j["spatial_pe"] = cfg.use_spatial_pe;
    j["temporal_pe"] = cfg.use_temporal_pe;
    j["post_norm"] = cfg.post_norm;
    j["temporal_chain_union"] = cfg.temporal_chain_union;
    j["skeleton"] = nlohmann::json::parse(skeleton_to_json(cfg.skeleton));
    return j.dump(2);
}

namespace {

void push_norm(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d) {
    out.push_back({prefix + ".gamma", {d}, ParamInit::ones, true, false});
    out.push_back({prefix + ".beta", {d}, ParamInit::zeros, true, false});
}

void push_linear(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t in, std::size_t n) {
    out.push_back({prefix + ".weight", {in, n}, ParamInit::xavier_uniform, true, true});
    out.push_back({prefix + ".bias", {n}, ParamInit::zeros, true, true});
}

void push_mlp(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d, std::size_t ratio) {
    push_linear(out, prefix + ".fc1", d, d * ratio);
    push_linear(out, prefix + ".fc2", d * ratio, d);
}

void push_attention_metaformer(std::vector<ParamSpec>& out, const std::string& prefix, const ModelConfig& cfg) {
    const std::size_t d = cfg.dim, dk = cfg.head_dim();
    push_norm(out, prefix + ".norm1", d);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        const std::string hs = std::to_string(h);
        push_linear(out, prefix + ".attn.q" + hs, d, dk);
        push_linear(out, prefix + ".attn.k" + hs, d, dk);
        push_linear(out, prefix + ".attn.v" + hs, d, dk);
    }
    push_linear(out, prefix + ".attn.out", d, d);
    push_norm(out, prefix + ".norm2", d);
    push_mlp(out, prefix + ".mlp", d, cfg.mlp_ratio);
}

void push_gcn_metaformer(std::vector<ParamSpec>& out, const std::string& prefix, const ModelConfig& cfg) {
    const std::size_t d = cfg.dim;
    push_norm(out, prefix + ".norm1", d);
    // no biases on w1/w2: the batch norm that follows absorbs any shift
    out.push_back({prefix + ".gcn.w1", {d, d}, ParamInit::xavier_uniform, true, true});
    out.push_back({prefix + ".gcn.w2", {d, d}, ParamInit::xavier_uniform, true, true});
    push_norm(out, prefix + ".gcn.bn", d);
    out.push_back({prefix + ".gcn.bn.running_mean", {d}, ParamInit::zeros, false, false});
    out.push_back({prefix + ".gcn.bn.running_var", {d}, ParamInit::ones, false, false});
    push_norm(out, prefix + ".norm2", d);
    push_mlp(out, prefix + ".mlp", d, cfg.mlp_ratio);
}

}  // namespace

std::vector<ParamSpec> enumerate_parameters(const ModelConfig& cfg) {
    cfg.validate();
    std::vector<ParamSpec> out;
    push_linear(out, "embed", 3, cfg.dim);
    if (cfg.use_spatial_pe)
        out.push_back({"pe.spatial", {1, cfg.joints, cfg.dim}, ParamInit::pos_embed_normal, true, false});
    if (cfg.use_temporal_pe)
        out.push_back({"pe.temporal", {cfg.frames, 1, cfg.dim}, ParamInit::pos_embed_normal, true, false});

    const bool has_attn = cfg.composition != CompositionMode::gcn_only;
    const bool has_gcn = cfg.composition != CompositionMode::attn_only;
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        const std::string p = "block" + std::to_string(b);
        if (has_attn) {
            push_attention_metaformer(out, p + ".tf_s", cfg);
            push_attention_metaformer(out, p + ".tf_t", cfg);
        }
        if (has_gcn) {
            push_gcn_metaformer(out, p + ".gf_s", cfg);
            push_gcn_metaformer(out, p + ".gf_t", cfg);
        }
        if (cfg.composition == CompositionMode::parallel) push_linear(out, p + ".fuse", 2 * cfg.dim, 2);
    }
    push_linear(out, "head.motion", cfg.dim, cfg.motion_dim);
    push_linear(out, "head.out", cfg.motion_dim, 3);
    return out;
}

}  // namespace agf
