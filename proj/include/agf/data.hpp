#pragma once

// Pose sequence containers, their JSON file format, the synthetic
// forward-kinematics generator used as ground-truth oracle, horizontal flip
// augmentation, and deterministic batch iteration.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "agf/graph.hpp"
#include "agf/rng.hpp"

namespace agf {

// T x J x 3 pose sequence. 2D sequences hold (x, y, confidence) with x, y in
// normalized image units in [-1, 1]; 3D sequences hold (x, y, z) millimeters.
// Values are stored at f32 so file round-trips are lossless.
struct PoseSequence {
    std::size_t frames = 0;
    std::size_t joints = 0;
    std::string kind;  // "2d" or "3d"
    double fps = 50.0;
    std::string action;  // optional label, empty when absent
    std::vector<float> values;  // row-major T*J*3

    float& at(std::size_t t, std::size_t j, std::size_t c) { return values[(t * joints + j) * 3 + c]; }
    float at(std::size_t t, std::size_t j, std::size_t c) const { return values[(t * joints + j) * 3 + c]; }

    void validate() const;
};

PoseSequence load_sequence(const std::string& path, std::size_t expected_joints = 0);
PoseSequence parse_sequence_json(const std::string& text, std::size_t expected_joints = 0);
void save_sequence(const PoseSequence& seq, const std::string& path);
std::string sequence_to_json(const PoseSequence& seq);

struct Camera {
    double focal_px = 1000.0;
    double cx = 500.0;
    double cy = 500.0;
    double image_w = 1000.0;
    double image_h = 1000.0;
};

// Pinhole projection of a 3D sequence (camera frame, mm) into normalized
// image coordinates. Throws when any joint has z <= 0.
PoseSequence pinhole_project(const PoseSequence& p3d, const Camera& cam);

// Per-joint sinusoidal angle sweep around a rest direction.
struct JointMotion {
    double frequency_hz = 0.0;
    double amplitude_rad = 0.0;
    double phase_rad = 0.0;
};

struct SyntheticSceneConfig {
    SkeletonSpec skeleton;
    std::vector<double> bone_lengths_mm;  // per joint, ignored for the root
    std::vector<JointMotion> motions;     // per joint
    double root_z_mm = 4000.0;            // camera-frame depth of the root
    double root_sway_mm = 100.0;
    double root_sway_hz = 0.3;
    Camera camera;
    double fps = 50.0;
    double noise_sigma_px = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

// Returns a config with the default 17-joint skeleton, plausible bone
// lengths, and per-joint motions derived deterministically from the seed.
SyntheticSceneConfig default_scene(std::uint64_t seed);

struct SequencePair {
    PoseSequence input2d;
    PoseSequence target3d;
};

// Kinematic-chain 3D motion plus its noisy pinhole projection. Fully
// deterministic for a given config. The stored 3D is f32-rounded before
// projection so that re-projecting the saved 3D reproduces the saved 2D
// exactly when noise_sigma_px == 0.
SequencePair generate_synthetic_sequence(const SyntheticSceneConfig& cfg, std::size_t frames,
                                         const std::string& action = "");

// Negate x, permute joints by the skeleton mirror map. Confidence moves with
// its joint and is otherwise unchanged. An involution.
PoseSequence horizontal_flip(const PoseSequence& seq, const SkeletonSpec& spec);

// Dataset manifest: JSON list of [input-2d path, target-3d path, action].
struct ManifestEntry {
    std::string input_path;
    std::string target_path;
    std::string action;
};

std::vector<ManifestEntry> load_manifest(const std::string& path);
void save_manifest(const std::vector<ManifestEntry>& entries, const std::string& path);

// Loaded dataset with sequences resolved relative to the manifest location.
struct Dataset {
    std::vector<SequencePair> pairs;
    std::vector<std::string> actions;
};

Dataset load_dataset(const std::string& manifest_path, std::size_t expected_joints = 0);

struct BatchSample {
    std::size_t pair_index = 0;
    std::size_t start_frame = 0;
    bool flipped = false;
};

// Deterministic length-T window sampler. Training mode shuffles windows and
// applies horizontal flip with probability flip_prob (consistently to the 2D
// input and 3D target when materialized); eval mode uses non-overlapping
// windows in order with no flip. Throws naming any sequence shorter than
// `window`.
std::vector<std::vector<BatchSample>> make_batches(const Dataset& data, std::size_t batch_size, std::size_t window,
                                                   bool train, Rng& rng, double flip_prob = 0.5);

// Materialize one sample as a window pair, applying the flip when requested.
SequencePair materialize_sample(const Dataset& data, const BatchSample& sample, std::size_t window,
                                const SkeletonSpec& spec);

}  // namespace agf
