#pragma once

// Spatial (skeleton) and temporal (K-NN similarity) graph construction with
// symmetric normalization D^{-1/2} (A + I) D^{-1/2}. All functions here are
// pure and safe to call concurrently.

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace agf {

struct SkeletonSpec {
    std::size_t joint_count = 0;
    std::vector<std::pair<std::size_t, std::size_t>> edges;  // unordered joint pairs
    std::vector<std::size_t> mirror_map;                     // left/right permutation, involution
    std::size_t root_index = 0;
    std::vector<std::string> joint_names;  // optional, same length as joint_count when present

    // Throws std::runtime_error describing the first violated constraint.
    void validate() const;
};

// Dense symmetric-normalized adjacency over n nodes.
struct NormalizedAdjacency {
    std::size_t size = 0;
    std::vector<double> values;  // row-major n*n

    double at(std::size_t i, std::size_t j) const { return values[i * size + j]; }
};

// The 17-joint Human3.6M convention (root = pelvis).
SkeletonSpec default_h36m_skeleton();

// Load/save the skeleton JSON format:
//   {"joints": [names], "edges": [[a,b],...], "mirror": [...], "root": r}
SkeletonSpec load_skeleton(const std::string& path);
SkeletonSpec parse_skeleton_json(const std::string& text);
std::string skeleton_to_json(const SkeletonSpec& spec);

// Symmetric normalization of an arbitrary undirected 0/1 adjacency given as
// an edge list; self-loops are added before normalizing.
NormalizedAdjacency normalize_adjacency(std::size_t n,
                                        const std::vector<std::pair<std::size_t, std::size_t>>& edges);

NormalizedAdjacency build_skeleton_adjacency(const SkeletonSpec& spec);

// Indices of the K largest entries of `row`, excluding `self_index`.
// Ties break toward the lower index. Requires k < row.size().
std::vector<std::size_t> top_k_indices(const std::vector<double>& row, std::size_t k, std::size_t self_index);

// Directed K-NN edge set over frames: frame t connects to the min(K, T-1)
// frames with the largest dot-product similarity. features is row-major T x d.
std::vector<std::vector<std::size_t>> knn_directed_neighbors(const std::vector<double>& features, std::size_t frames,
                                                             std::size_t dim, std::size_t k);

// Union-symmetrized K-NN graph, self-loops added, symmetric-normalized.
// Recompute from the current features on every forward pass; the graph is
// dynamic. K >= T is clamped to T-1 (identity adjacency when T == 1).
// `extra_chain` additionally unions edges (t, t+1).
NormalizedAdjacency build_temporal_knn_adjacency(const std::vector<double>& features, std::size_t frames,
                                                 std::size_t dim, std::size_t k, bool extra_chain = false);

}  // namespace agf
