#include "agf/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace agf {

void SkeletonSpec::validate() const {
    if (joint_count == 0) throw std::runtime_error("skeleton: joint_count must be positive");
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const auto& [a, b] : edges) {
        if (a >= joint_count || b >= joint_count)
            throw std::runtime_error("skeleton: edge (" + std::to_string(a) + ", " + std::to_string(b) +
                                     ") references joint outside [0, " + std::to_string(joint_count) + ")");
        if (a == b) throw std::runtime_error("skeleton: self-edge at joint " + std::to_string(a));
        auto key = std::minmax(a, b);
        if (!seen.insert(key).second)
            throw std::runtime_error("skeleton: duplicate edge (" + std::to_string(a) + ", " + std::to_string(b) + ")");
    }
    if (mirror_map.size() != joint_count)
        throw std::runtime_error("skeleton: mirror map has " + std::to_string(mirror_map.size()) +
                                 " entries for " + std::to_string(joint_count) + " joints");
    for (std::size_t j = 0; j < joint_count; ++j) {
        if (mirror_map[j] >= joint_count)
            throw std::runtime_error("skeleton: mirror of joint " + std::to_string(j) + " out of range");
        if (mirror_map[mirror_map[j]] != j)
            throw std::runtime_error("skeleton: mirror map is not an involution at joint " + std::to_string(j));
    }
    if (root_index >= joint_count) throw std::runtime_error("skeleton: root index out of range");
    if (mirror_map[root_index] != root_index)
        throw std::runtime_error("skeleton: root joint must map to itself under mirroring");
    if (!joint_names.empty() && joint_names.size() != joint_count)
        throw std::runtime_error("skeleton: joint name count mismatch");
}

SkeletonSpec default_h36m_skeleton() {
    SkeletonSpec s;
    s.joint_count = 17;
    s.joint_names = {"pelvis", "r_hip",      "r_knee",  "r_ankle", "l_hip",      "l_knee",
                     "l_ankle", "spine",      "thorax",  "neck",    "head",       "l_shoulder",
                     "l_elbow", "l_wrist",    "r_shoulder", "r_elbow", "r_wrist"};
    s.edges = {{0, 1}, {1, 2}, {2, 3}, {0, 4}, {4, 5},  {5, 6},   {0, 7},   {7, 8},
               {8, 9}, {9, 10}, {8, 11}, {11, 12}, {12, 13}, {8, 14}, {14, 15}, {15, 16}};
    s.mirror_map = {0, 4, 5, 6, 1, 2, 3, 7, 8, 9, 10, 14, 15, 16, 11, 12, 13};
    s.root_index = 0;
    return s;
}

SkeletonSpec parse_skeleton_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("skeleton: invalid JSON: ") + e.what());
    }
    SkeletonSpec s;
    if (!j.contains("joints") || !j["joints"].is_array())
        throw std::runtime_error("skeleton: missing 'joints' array");
    for (const auto& name : j["joints"]) s.joint_names.push_back(name.get<std::string>());
    s.joint_count = s.joint_names.size();
    if (!j.contains("edges") || !j["edges"].is_array())
        throw std::runtime_error("skeleton: missing 'edges' array");
    for (const auto& e : j["edges"]) {
        if (!e.is_array() || e.size() != 2) throw std::runtime_error("skeleton: each edge must be a pair");
        s.edges.emplace_back(e[0].get<std::size_t>(), e[1].get<std::size_t>());
    }
    if (!j.contains("mirror") || !j["mirror"].is_array())
        throw std::runtime_error("skeleton: missing 'mirror' array");
    for (const auto& m : j["mirror"]) s.mirror_map.push_back(m.get<std::size_t>());
    if (!j.contains("root")) throw std::runtime_error("skeleton: missing 'root' index");
    s.root_index = j["root"].get<std::size_t>();
    s.validate();
    return s;
}

SkeletonSpec load_skeleton(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("skeleton: cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_skeleton_json(buf.str());
}

std::string skeleton_to_json(const SkeletonSpec& spec) {
    nlohmann::json j;
    j["joints"] = spec.joint_names.empty() ? nlohmann::json::array() : nlohmann::json(spec.joint_names);
    if (spec.joint_names.empty())
        for (std::size_t i = 0; i < spec.joint_count; ++i) j["joints"].push_back("j" + std::to_string(i));
    j["edges"] = nlohmann::json::array();
    for (const auto& [a, b] : spec.edges) j["edges"].push_back({a, b});
    j["mirror"] = spec.mirror_map;
    j["root"] = spec.root_index;
    return j.dump(2);
}

NormalizedAdjacency normalize_adjacency(std::size_t n,
                                        const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
    std::vector<double> a(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) a[i * n + i] = 1.0;  // self-connections
    for (const auto& [u, v] : edges) {
        if (u >= n || v >= n)
            throw std::runtime_error("adjacency: edge (" + std::to_string(u) + ", " + std::to_string(v) +
                                     ") outside graph of size " + std::to_string(n));
        a[u * n + v] = 1.0;
        a[v * n + u] = 1.0;
    }
    std::vector<double> deg(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) deg[i] += a[i * n + j];
    NormalizedAdjacency out;
    out.size = n;
    out.values.resize(n * n);
    // entry = a_ij / sqrt(d_i d_j); the fused form keeps integer-degree cases
    // like 1/sqrt(4) exact
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out.values[i * n + j] = a[i * n + j] == 0.0 ? 0.0 : a[i * n + j] / std::sqrt(deg[i] * deg[j]);
    return out;
}

NormalizedAdjacency build_skeleton_adjacency(const SkeletonSpec& spec) {
    spec.validate();
    return normalize_adjacency(spec.joint_count, spec.edges);
}

std::vector<std::size_t> top_k_indices(const std::vector<double>& row, std::size_t k, std::size_t self_index) {
    if (k >= row.size())
        throw std::runtime_error("top_k_indices: k = " + std::to_string(k) + " must be < " +
                                 std::to_string(row.size()));
    std::vector<std::size_t> order;
    order.reserve(row.size());
    for (std::size_t i = 0; i < row.size(); ++i)
        if (i != self_index) order.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (row[a] != row[b]) return row[a] > row[b];
        return a < b;  // ties toward the lower index
    });
    order.resize(std::min(k, order.size()));
    return order;
}

std::vector<std::vector<std::size_t>> knn_directed_neighbors(const std::vector<double>& features, std::size_t frames,
                                                             std::size_t dim, std::size_t k) {
    if (frames == 0) throw std::runtime_error("knn: need at least one frame");
    if (features.size() != frames * dim) throw std::runtime_error("knn: feature matrix size mismatch");
    const std::size_t eff_k = frames == 1 ? 0 : std::min(k, frames - 1);
    std::vector<std::vector<std::size_t>> neighbors(frames);
    std::vector<double> sims(frames);
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t u = 0; u < frames; ++u) {
            double dot = 0.0;
            for (std::size_t c = 0; c < dim; ++c) dot += features[t * dim + c] * features[u * dim + c];
            sims[u] = dot;
        }
        neighbors[t] = eff_k == 0 ? std::vector<std::size_t>{} : top_k_indices(sims, eff_k, t);
    }
    return neighbors;
}

NormalizedAdjacency build_temporal_knn_adjacency(const std::vector<double>& features, std::size_t frames,
                                                 std::size_t dim, std::size_t k, bool extra_chain) {
    auto neighbors = knn_directed_neighbors(features, frames, dim, k);
    std::set<std::pair<std::size_t, std::size_t>> undirected;
    for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t u : neighbors[t]) undirected.insert(std::minmax(t, u));
    if (extra_chain)
        for (std::size_t t = 0; t + 1 < frames; ++t) undirected.insert({t, t + 1});
    std::vector<std::pair<std::size_t, std::size_t>> edges(undirected.begin(), undirected.end());
    return normalize_adjacency(frames, edges);
}

}  // namespace agf
