#include "agf/data.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace agf {

namespace fs = std::filesystem;

void PoseSequence::validate() const {
    if (frames == 0) throw std::runtime_error("sequence: needs at least one frame");
    if (joints == 0) throw std::runtime_error("sequence: needs at least one joint");
    if (kind != "2d" && kind != "3d") throw std::runtime_error("sequence: kind must be '2d' or '3d'");
    if (values.size() != frames * joints * 3)
        throw std::runtime_error("sequence: value count " + std::to_string(values.size()) + " does not match " +
                                 std::to_string(frames) + "x" + std::to_string(joints) + "x3");
    if (fps <= 0.0) throw std::runtime_error("sequence: fps must be positive");
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) throw std::runtime_error("sequence: non-finite value at index " + std::to_string(i));
    }
    if (kind == "2d") {
        for (std::size_t t = 0; t < frames; ++t)
            for (std::size_t j = 0; j < joints; ++j) {
                const float c = at(t, j, 2);
                if (c < 0.0f || c > 1.0f)
                    throw std::runtime_error("sequence: confidence " + std::to_string(c) + " outside [0, 1] at frame " +
                                             std::to_string(t) + " joint " + std::to_string(j));
            }
    }
}

PoseSequence parse_sequence_json(const std::string& text, std::size_t expected_joints) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("sequence: invalid JSON: ") + e.what());
    }
    PoseSequence seq;
    try {
        if (!j.contains("kind")) throw std::runtime_error("sequence: missing field 'kind'");
        seq.kind = j["kind"].get<std::string>();
        if (!j.contains("joints")) throw std::runtime_error("sequence: missing field 'joints'");
        seq.joints = j["joints"].get<std::size_t>();
        if (j.value("channels", 3) != 3) throw std::runtime_error("sequence: 'channels' must be 3");
        seq.fps = j.value("fps", 50.0);
        seq.action = j.value("action", std::string());
        if (!j.contains("frames") || !j["frames"].is_array())
            throw std::runtime_error("sequence: missing 'frames' array");
        const auto& frames = j["frames"];
        if (frames.empty()) throw std::runtime_error("sequence: 'frames' must not be empty");
        seq.frames = frames.size();
        seq.values.reserve(seq.frames * seq.joints * 3);
        for (std::size_t t = 0; t < frames.size(); ++t) {
            const auto& frame = frames[t];
            if (!frame.is_array() || frame.size() != seq.joints)
                throw std::runtime_error("sequence: frame " + std::to_string(t) + " has " +
                                         std::to_string(frame.size()) + " joints, declared " +
                                         std::to_string(seq.joints));
            for (std::size_t jj = 0; jj < frame.size(); ++jj) {
                const auto& joint = frame[jj];
                if (!joint.is_array() || joint.size() != 3)
                    throw std::runtime_error("sequence: frame " + std::to_string(t) + " joint " + std::to_string(jj) +
                                             " has " + std::to_string(joint.size()) + " values, expected 3");
                for (const auto& v : joint) seq.values.push_back(v.get<float>());
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("sequence: malformed field: ") + e.what());
    }
    seq.validate();
    if (expected_joints != 0 && seq.joints != expected_joints)
        throw std::runtime_error("sequence: has " + std::to_string(seq.joints) + " joints, skeleton declares " +
                                 std::to_string(expected_joints));
    return seq;
}

PoseSequence load_sequence(const std::string& path, std::size_t expected_joints) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("sequence: cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    try {
        return parse_sequence_json(buf.str(), expected_joints);
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(std::string(e.what()) + " (" + path + ")");
    }
}

std::string sequence_to_json(const PoseSequence& seq) {
    nlohmann::json j;
    j["fps"] = seq.fps;
    j["joints"] = seq.joints;
    j["channels"] = 3;
    j["kind"] = seq.kind;
    if (!seq.action.empty()) j["action"] = seq.action;
    nlohmann::json frames = nlohmann::json::array();
    for (std::size_t t = 0; t < seq.frames; ++t) {
        nlohmann::json frame = nlohmann::json::array();
        for (std::size_t jj = 0; jj < seq.joints; ++jj)
            frame.push_back({seq.at(t, jj, 0), seq.at(t, jj, 1), seq.at(t, jj, 2)});
        frames.push_back(std::move(frame));
    }
    j["frames"] = std::move(frames);
    return j.dump();
}

void save_sequence(const PoseSequence& seq, const std::string& path) {
    seq.validate();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("sequence: cannot write " + path);
    out << sequence_to_json(seq) << "\n";
}

PoseSequence pinhole_project(const PoseSequence& p3d, const Camera& cam) {
    if (p3d.kind != "3d") throw std::runtime_error("pinhole_project: input must be a 3d sequence");
    PoseSequence out;
    out.frames = p3d.frames;
    out.joints = p3d.joints;
    out.kind = "2d";
    out.fps = p3d.fps;
    out.action = p3d.action;
    out.values.resize(p3d.values.size());
    for (std::size_t t = 0; t < p3d.frames; ++t)
        for (std::size_t j = 0; j < p3d.joints; ++j) {
            const double x = p3d.at(t, j, 0), y = p3d.at(t, j, 1), z = p3d.at(t, j, 2);
            if (z <= 0.0)
                throw std::runtime_error("pinhole_project: joint " + std::to_string(j) + " at frame " +
                                         std::to_string(t) + " is behind the camera (z = " + std::to_string(z) + ")");
            const double u = cam.focal_px * x / z + cam.cx;
            const double v = cam.focal_px * y / z + cam.cy;
            out.at(t, j, 0) = static_cast<float>((u - cam.image_w / 2.0) / (cam.image_w / 2.0));
            out.at(t, j, 1) = static_cast<float>((v - cam.image_h / 2.0) / (cam.image_h / 2.0));
            out.at(t, j, 2) = 1.0f;
        }
    return out;
}

void SyntheticSceneConfig::validate() const {
    skeleton.validate();
    if (bone_lengths_mm.size() != skeleton.joint_count)
        throw std::runtime_error("scene: bone length count mismatch");
    for (std::size_t j = 0; j < skeleton.joint_count; ++j)
        if (j != skeleton.root_index && bone_lengths_mm[j] <= 0.0)
            throw std::runtime_error("scene: bone length for joint " + std::to_string(j) + " must be positive");
    if (motions.size() != skeleton.joint_count) throw std::runtime_error("scene: motion count mismatch");
    if (camera.focal_px <= 0.0) throw std::runtime_error("scene: focal length must be positive");
    if (fps <= 0.0) throw std::runtime_error("scene: fps must be positive");
    if (noise_sigma_px < 0.0) throw std::runtime_error("scene: noise sigma must be nonnegative");
}

SyntheticSceneConfig default_scene(std::uint64_t seed) {
    SyntheticSceneConfig cfg;
    cfg.skeleton = default_h36m_skeleton();
    cfg.seed = seed;
    const std::size_t n = cfg.skeleton.joint_count;
    cfg.bone_lengths_mm.assign(n, 250.0);
    // rough adult proportions, mm
    const double lengths[17] = {0,   130, 450, 450, 130, 450, 450, 230, 250,
                                110, 120, 150, 280, 250, 150, 280, 250};
    for (std::size_t j = 0; j < n && j < 17; ++j) cfg.bone_lengths_mm[j] = lengths[j] > 0 ? lengths[j] : 250.0;
    cfg.bone_lengths_mm[cfg.skeleton.root_index] = 1.0;
    cfg.motions.resize(n);
    Rng rng(seed * 7919 + 17);
    for (std::size_t j = 0; j < n; ++j) {
        cfg.motions[j].frequency_hz = rng.uniform(0.2, 1.2);
        cfg.motions[j].amplitude_rad = rng.uniform(0.1, 0.45);
        cfg.motions[j].phase_rad = rng.uniform(0.0, 6.28318530717958648);
    }
    return cfg;
}

namespace {

struct KinematicTree {
    std::vector<std::size_t> parent;
    std::vector<std::size_t> bfs_order;  // parents always precede children
};

KinematicTree build_tree(const SkeletonSpec& spec) {
    std::vector<std::vector<std::size_t>> adj(spec.joint_count);
    for (auto [a, b] : spec.edges) {
        adj[a].push_back(b);
        adj[b].push_back(a);
    }
    KinematicTree tree;
    tree.parent.assign(spec.joint_count, spec.joint_count);
    tree.bfs_order.push_back(spec.root_index);
    tree.parent[spec.root_index] = spec.root_index;
    for (std::size_t qi = 0; qi < tree.bfs_order.size(); ++qi) {
        const std::size_t u = tree.bfs_order[qi];
        for (std::size_t v : adj[u])
            if (tree.parent[v] == spec.joint_count) {
                tree.parent[v] = u;
                tree.bfs_order.push_back(v);
            }
    }
    for (std::size_t j = 0; j < spec.joint_count; ++j)
        if (tree.parent[j] == spec.joint_count)
            throw std::runtime_error("scene: joint " + std::to_string(j) + " is not connected to the root");
    return tree;
}

struct Vec3 {
    double x = 0, y = 0, z = 0;
};

// Deterministic unit rest direction per joint: spread children around the
// parent using the joint index so limbs don't collapse onto one line; the
// depth component is damped to keep the figure roughly frontal.
Vec3 rest_direction(std::size_t joint) {
    const double a = 2.39996322972865332 * static_cast<double>(joint);  // golden angle
    const double ele = 0.7 * std::sin(static_cast<double>(joint) * 1.3 + 0.4);
    Vec3 d{std::cos(a) * std::cos(ele), std::sin(a) * std::cos(ele), std::sin(ele) * 0.4};
    const double norm = std::sqrt(d.x * d.x + d.y * d.y + d.z * d.z);
    return {d.x / norm, d.y / norm, d.z / norm};
}

}  // namespace

SequencePair generate_synthetic_sequence(const SyntheticSceneConfig& cfg, std::size_t frames,
                                         const std::string& action) {
    cfg.validate();
    if (frames == 0) throw std::runtime_error("scene: frames must be positive");
    const auto tree = build_tree(cfg.skeleton);
    const std::size_t n = cfg.skeleton.joint_count;

    PoseSequence p3d;
    p3d.frames = frames;
    p3d.joints = n;
    p3d.kind = "3d";
    p3d.fps = cfg.fps;
    p3d.action = action;
    p3d.values.resize(frames * n * 3);

    for (std::size_t t = 0; t < frames; ++t) {
        const double time = static_cast<double>(t) / cfg.fps;
        std::vector<Vec3> pos(n);
        const double sway = cfg.root_sway_mm * std::sin(2.0 * 3.14159265358979323846 * cfg.root_sway_hz * time);
        pos[cfg.skeleton.root_index] = {sway, 0.0, cfg.root_z_mm};

        // BFS order guarantees the parent position is already computed
        for (std::size_t j : tree.bfs_order) {
            if (j == cfg.skeleton.root_index) continue;
            const Vec3 base = rest_direction(j);
            const JointMotion& m = cfg.motions[j];
            const double swing =
                m.amplitude_rad * std::sin(2.0 * 3.14159265358979323846 * m.frequency_hz * time + m.phase_rad);
            // rotate the rest direction around the y axis by the swing angle
            const double c = std::cos(swing), s = std::sin(swing);
            Vec3 dir{base.x * c + base.z * s, base.y, -base.x * s + base.z * c};
            const double len = cfg.bone_lengths_mm[j];
            const Vec3& pp = pos[tree.parent[j]];
            pos[j] = {pp.x + dir.x * len, pp.y + dir.y * len, pp.z + dir.z * len};
        }
        for (std::size_t j = 0; j < n; ++j) {
            p3d.at(t, j, 0) = static_cast<float>(pos[j].x);
            p3d.at(t, j, 1) = static_cast<float>(pos[j].y);
            p3d.at(t, j, 2) = static_cast<float>(pos[j].z);
        }
    }

    // Project the f32-rounded 3D so saved 3D re-projects to saved 2D exactly.
    PoseSequence p2d = pinhole_project(p3d, cfg.camera);

    if (cfg.noise_sigma_px > 0.0) {
        Rng noise(cfg.seed * 1000003 + 7);
        const double sx = cfg.camera.image_w / 2.0, sy = cfg.camera.image_h / 2.0;
        for (std::size_t t = 0; t < frames; ++t)
            for (std::size_t j = 0; j < n; ++j) {
                const double nx = noise.normal(0.0, cfg.noise_sigma_px);
                const double ny = noise.normal(0.0, cfg.noise_sigma_px);
                p2d.at(t, j, 0) = static_cast<float>(p2d.at(t, j, 0) + nx / sx);
                p2d.at(t, j, 1) = static_cast<float>(p2d.at(t, j, 1) + ny / sy);
                const double mag = std::sqrt(nx * nx + ny * ny);
                const double conf = 1.0 - mag / (3.0 * cfg.noise_sigma_px);
                p2d.at(t, j, 2) = static_cast<float>(std::min(1.0, std::max(0.0, conf)));
            }
    }

    return {std::move(p2d), std::move(p3d)};
}

PoseSequence horizontal_flip(const PoseSequence& seq, const SkeletonSpec& spec) {
    if (seq.joints != spec.joint_count)
        throw std::runtime_error("flip: sequence has " + std::to_string(seq.joints) + " joints, skeleton " +
                                 std::to_string(spec.joint_count));
    PoseSequence out = seq;
    for (std::size_t t = 0; t < seq.frames; ++t)
        for (std::size_t j = 0; j < seq.joints; ++j) {
            const std::size_t m = spec.mirror_map[j];
            out.at(t, m, 0) = -seq.at(t, j, 0);
            out.at(t, m, 1) = seq.at(t, j, 1);
            out.at(t, m, 2) = seq.at(t, j, 2);
        }
    return out;
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("manifest: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("manifest: invalid JSON: ") + e.what());
    }
    if (!j.is_array()) throw std::runtime_error("manifest: top level must be an array");
    std::vector<ManifestEntry> entries;
    for (const auto& row : j) {
        if (!row.is_array() || row.size() < 2)
            throw std::runtime_error("manifest: each entry must be [input-2d, target-3d, action]");
        ManifestEntry e;
        e.input_path = row[0].get<std::string>();
        e.target_path = row[1].get<std::string>();
        if (row.size() > 2) e.action = row[2].get<std::string>();
        entries.push_back(std::move(e));
    }
    return entries;
}

void save_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : entries) j.push_back({e.input_path, e.target_path, e.action});
    std::ofstream out(path);
    if (!out) throw std::runtime_error("manifest: cannot write " + path);
    out << j.dump(2) << "\n";
}

Dataset load_dataset(const std::string& manifest_path, std::size_t expected_joints) {
    const auto entries = load_manifest(manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();
    Dataset data;
    for (const auto& e : entries) {
        auto resolve = [&](const std::string& p) {
            fs::path fp(p);
            return fp.is_absolute() ? fp.string() : (base / fp).string();
        };
        SequencePair pair;
        pair.input2d = load_sequence(resolve(e.input_path), expected_joints);
        pair.target3d = load_sequence(resolve(e.target_path), expected_joints);
        if (pair.input2d.kind != "2d")
            throw std::runtime_error("manifest: " + e.input_path + " is not a 2d sequence");
        if (pair.target3d.kind != "3d")
            throw std::runtime_error("manifest: " + e.target_path + " is not a 3d sequence");
        if (pair.input2d.frames != pair.target3d.frames || pair.input2d.joints != pair.target3d.joints)
            throw std::runtime_error("manifest: shape mismatch between " + e.input_path + " and " + e.target_path);
        if (!e.action.empty()) {
            pair.input2d.action = e.action;
            pair.target3d.action = e.action;
        }
        data.actions.push_back(e.action);
        data.pairs.push_back(std::move(pair));
    }
    return data;
}

std::vector<std::vector<BatchSample>> make_batches(const Dataset& data, std::size_t batch_size, std::size_t window,
                                                   bool train, Rng& rng, double flip_prob) {
    if (batch_size == 0) throw std::runtime_error("batches: batch size must be positive");
    if (window == 0) throw std::runtime_error("batches: window must be positive");
    std::vector<BatchSample> samples;
    for (std::size_t i = 0; i < data.pairs.size(); ++i) {
        const std::size_t frames = data.pairs[i].target3d.frames;
        if (frames < window)
            throw std::runtime_error("batches: sequence " + std::to_string(i) + " has " + std::to_string(frames) +
                                     " frames, window needs " + std::to_string(window));
        if (train) {
            // one random-start window per full window the sequence can hold
            const std::size_t count = frames / window;
            for (std::size_t w = 0; w < count; ++w) {
                BatchSample s;
                s.pair_index = i;
                s.start_frame = static_cast<std::size_t>(rng.below(frames - window + 1));
                s.flipped = flip_prob > 0.0 && rng.uniform() < flip_prob;
                samples.push_back(s);
            }
        } else {
            for (std::size_t start = 0; start + window <= frames; start += window)
                samples.push_back({i, start, false});
        }
    }
    if (train) rng.shuffle(samples);
    std::vector<std::vector<BatchSample>> batches;
    for (std::size_t i = 0; i < samples.size(); i += batch_size) {
        const std::size_t end = std::min(samples.size(), i + batch_size);
        batches.emplace_back(samples.begin() + i, samples.begin() + end);
    }
    return batches;
}

SequencePair materialize_sample(const Dataset& data, const BatchSample& sample, std::size_t window,
                                const SkeletonSpec& spec) {
    const SequencePair& src = data.pairs[sample.pair_index];
    auto slice = [&](const PoseSequence& s) {
        PoseSequence out = s;
        out.frames = window;
        out.values.assign(s.values.begin() + sample.start_frame * s.joints * 3,
                          s.values.begin() + (sample.start_frame + window) * s.joints * 3);
        return out;
    };
    SequencePair out{slice(src.input2d), slice(src.target3d)};
    if (sample.flipped) {
        out.input2d = horizontal_flip(out.input2d, spec);
        out.target3d = horizontal_flip(out.target3d, spec);
    }
    return out;
}

}  // namespace agf
