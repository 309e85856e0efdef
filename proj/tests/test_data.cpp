#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "agf/data.hpp"
#include "agf/metrics.hpp"

using namespace agf;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("zero amplitudes give a static pose") {
    auto cfg = default_scene(1);
    for (auto& m : cfg.motions) m.amplitude_rad = 0.0;
    cfg.root_sway_mm = 0.0;
    auto pair = generate_synthetic_sequence(cfg, 5);
    for (std::size_t t = 1; t < 5; ++t)
        for (std::size_t j = 0; j < pair.target3d.joints; ++j)
            for (int c = 0; c < 3; ++c) CHECK(pair.target3d.at(t, j, c) == pair.target3d.at(0, j, c));
}

TEST_CASE("noiseless generator is self-consistent under reprojection") {
    auto cfg = default_scene(2);
    cfg.noise_sigma_px = 0.0;
    auto pair = generate_synthetic_sequence(cfg, 4);
    auto reproj = pinhole_project(pair.target3d, cfg.camera);
    CHECK(reproj.values == pair.input2d.values);
    for (std::size_t i = 2; i < pair.input2d.values.size(); i += 3) CHECK(pair.input2d.values[i] == 1.0f);
}

TEST_CASE("generator is deterministic under the seed") {
    auto cfg = default_scene(3);
    cfg.noise_sigma_px = 2.0;
    auto a = generate_synthetic_sequence(cfg, 6);
    auto b = generate_synthetic_sequence(cfg, 6);
    CHECK(a.input2d.values == b.input2d.values);
    CHECK(a.target3d.values == b.target3d.values);
}

TEST_CASE("noisy confidences stay within [0,1] and sequences validate") {
    auto cfg = default_scene(4);
    cfg.noise_sigma_px = 3.0;
    auto pair = generate_synthetic_sequence(cfg, 8);
    CHECK_NOTHROW(pair.input2d.validate());
    CHECK_NOTHROW(pair.target3d.validate());
}

TEST_CASE("kinematics respect bone lengths even when children precede parents") {
    // chain rooted at the highest index: 2 -> 1 -> 0
    SkeletonSpec spec;
    spec.joint_count = 3;
    spec.edges = {{2, 1}, {1, 0}};
    spec.mirror_map = {0, 1, 2};
    spec.root_index = 2;

    SyntheticSceneConfig cfg;
    cfg.skeleton = spec;
    cfg.bone_lengths_mm = {300.0, 400.0, 1.0};
    cfg.motions.resize(3);
    cfg.motions[0].amplitude_rad = 0.3;
    cfg.motions[0].frequency_hz = 1.0;
    auto pair = generate_synthetic_sequence(cfg, 3);
    for (std::size_t t = 0; t < 3; ++t) {
        auto dist = [&](std::size_t a, std::size_t b) {
            double s = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double d = pair.target3d.at(t, a, c) - pair.target3d.at(t, b, c);
                s += d * d;
            }
            return std::sqrt(s);
        };
        CHECK(dist(1, 2) == doctest::Approx(400.0).epsilon(1e-5));
        CHECK(dist(0, 1) == doctest::Approx(300.0).epsilon(1e-5));
    }
}

TEST_CASE("joint behind the camera is an error") {
    auto cfg = default_scene(5);
    cfg.root_z_mm = -100.0;
    CHECK_THROWS_AS(generate_synthetic_sequence(cfg, 2), std::runtime_error);
}

TEST_CASE("pinhole projection basics") {
    PoseSequence p3d;
    p3d.frames = 1;
    p3d.joints = 2;
    p3d.kind = "3d";
    p3d.values = {0, 0, 2000, 100, -50, 2000};
    Camera cam;  // f=1000, c=(500,500), image 1000x1000

    auto p2d = pinhole_project(p3d, cam);
    // optical axis point lands on the principal point -> normalized (0,0)
    CHECK(p2d.at(0, 0, 0) == 0.0f);
    CHECK(p2d.at(0, 0, 1) == 0.0f);
    // direct formula for the second joint, f32-rounded like the storage
    const double u = 1000.0 * 100.0 / 2000.0 + 500.0;
    const double v = 1000.0 * -50.0 / 2000.0 + 500.0;
    CHECK(p2d.at(0, 1, 0) == static_cast<float>((u - 500.0) / 500.0));
    CHECK(p2d.at(0, 1, 1) == static_cast<float>((v - 500.0) / 500.0));

    // doubling z halves the centered image coordinates
    PoseSequence far = p3d;
    far.at(0, 1, 2) = 4000;
    auto p2 = pinhole_project(far, cam);
    CHECK(p2.at(0, 1, 0) == doctest::Approx(p2d.at(0, 1, 0) / 2.0).epsilon(1e-6));
}

TEST_CASE("horizontal flip is a bit-exact involution") {
    auto cfg = default_scene(6);
    auto pair = generate_synthetic_sequence(cfg, 3);
    auto flipped = horizontal_flip(pair.target3d, cfg.skeleton);
    auto back = horizontal_flip(flipped, cfg.skeleton);
    CHECK(back.values == pair.target3d.values);

    auto f2 = horizontal_flip(horizontal_flip(pair.input2d, cfg.skeleton), cfg.skeleton);
    CHECK(f2.values == pair.input2d.values);
}

TEST_CASE("symmetric pose is a fixed point of the flip") {
    SkeletonSpec spec;
    spec.joint_count = 3;
    spec.edges = {{0, 1}, {0, 2}};
    spec.mirror_map = {0, 2, 1};
    spec.root_index = 0;
    PoseSequence s;
    s.frames = 1;
    s.joints = 3;
    s.kind = "3d";
    s.values = {0, 5, 1, 2, 3, 4, -2, 3, 4};  // joints 1 and 2 mirror each other
    auto f = horizontal_flip(s, spec);
    CHECK(f.values == s.values);
}

TEST_CASE("flip preserves mpjpe") {
    auto cfg = default_scene(7);
    auto a = generate_synthetic_sequence(cfg, 4);
    auto cfg2 = default_scene(8);
    auto b = generate_synthetic_sequence(cfg2, 4);
    const double base = mpjpe(a.target3d, b.target3d, cfg.skeleton.root_index);
    const double flipped = mpjpe(horizontal_flip(a.target3d, cfg.skeleton), horizontal_flip(b.target3d, cfg.skeleton),
                                 cfg.skeleton.root_index);
    CHECK(flipped == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("sequence file round trip is lossless") {
    auto cfg = default_scene(9);
    cfg.noise_sigma_px = 1.5;
    auto pair = generate_synthetic_sequence(cfg, 5, "walk");
    const auto path = temp_path("agf_seq_roundtrip.json");
    save_sequence(pair.input2d, path);
    auto loaded = load_sequence(path);
    CHECK(loaded.values == pair.input2d.values);
    CHECK(loaded.frames == pair.input2d.frames);
    CHECK(loaded.action == "walk");
    CHECK(loaded.fps == pair.input2d.fps);
    std::remove(path.c_str());
}

TEST_CASE("malformed sequence files are rejected with diagnostics") {
    CHECK_THROWS_WITH_AS(parse_sequence_json("{\"kind\":\"2d\",\"joints\":1,\"frames\":[[[0.1,0.2]]]}"),
                         doctest::Contains("expected 3"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_sequence_json("{\"kind\":\"2d\",\"joints\":1,\"frames\":[]}"),
                         doctest::Contains("must not be empty"), std::runtime_error);
    CHECK_THROWS_AS(parse_sequence_json("not json"), std::runtime_error);
    // joint count disagreeing with the declared skeleton
    CHECK_THROWS_WITH_AS(parse_sequence_json("{\"kind\":\"2d\",\"joints\":1,\"frames\":[[[0.1,0.2,0.5]]]}", 17),
                         doctest::Contains("skeleton declares 17"), std::runtime_error);
}

TEST_CASE("manifest round trip and dataset loading") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "agf_dataset_test";
    fs::create_directories(dir);
    auto cfg = default_scene(10);
    auto pair = generate_synthetic_sequence(cfg, 6, "jump");
    save_sequence(pair.input2d, (dir / "a_2d.json").string());
    save_sequence(pair.target3d, (dir / "a_3d.json").string());
    save_manifest({{"a_2d.json", "a_3d.json", "jump"}}, (dir / "manifest.json").string());

    auto data = load_dataset((dir / "manifest.json").string(), cfg.skeleton.joint_count);
    REQUIRE(data.pairs.size() == 1);
    CHECK(data.pairs[0].input2d.values == pair.input2d.values);
    CHECK(data.actions[0] == "jump");
    fs::remove_all(dir);
}

TEST_CASE("batching is deterministic and covers eval windows exactly") {
    auto cfg = default_scene(11);
    Dataset data;
    data.pairs.push_back(generate_synthetic_sequence(cfg, 9));
    data.actions.push_back("");

    Rng rng1(5), rng2(5);
    auto b1 = make_batches(data, 2, 3, /*train=*/true, rng1);
    auto b2 = make_batches(data, 2, 3, /*train=*/true, rng2);
    REQUIRE(b1.size() == b2.size());
    for (std::size_t i = 0; i < b1.size(); ++i) {
        REQUIRE(b1[i].size() == b2[i].size());
        for (std::size_t k = 0; k < b1[i].size(); ++k) {
            CHECK(b1[i][k].pair_index == b2[i][k].pair_index);
            CHECK(b1[i][k].start_frame == b2[i][k].start_frame);
            CHECK(b1[i][k].flipped == b2[i][k].flipped);
        }
    }

    Rng rng3(5);
    auto eval = make_batches(data, 4, 3, /*train=*/false, rng3);
    std::size_t samples = 0;
    for (const auto& batch : eval) samples += batch.size();
    CHECK(samples == 3);  // 9 frames / window 3

    // single window, batch 1
    Dataset one;
    one.pairs.push_back(generate_synthetic_sequence(cfg, 3));
    one.actions.push_back("");
    Rng rng4(5);
    auto single = make_batches(one, 1, 3, /*train=*/false, rng4);
    REQUIRE(single.size() == 1);
    CHECK(single[0].size() == 1);
}

TEST_CASE("sequences shorter than the window are named in the error") {
    auto cfg = default_scene(12);
    Dataset data;
    data.pairs.push_back(generate_synthetic_sequence(cfg, 2));
    data.actions.push_back("");
    Rng rng(1);
    CHECK_THROWS_WITH_AS(make_batches(data, 1, 5, false, rng), doctest::Contains("sequence 0"), std::runtime_error);
}

TEST_CASE("flipped samples keep 2d/3d correspondence") {
    auto cfg = default_scene(13);
    Dataset data;
    data.pairs.push_back(generate_synthetic_sequence(cfg, 4));
    data.actions.push_back("");
    BatchSample s{0, 0, true};
    auto pair = materialize_sample(data, s, 4, cfg.skeleton);
    // the flipped pair must equal flipping both sides of the original window
    auto want2d = horizontal_flip(data.pairs[0].input2d, cfg.skeleton);
    auto want3d = horizontal_flip(data.pairs[0].target3d, cfg.skeleton);
    CHECK(pair.input2d.values == want2d.values);
    CHECK(pair.target3d.values == want3d.values);
}

TEST_CASE("perfect lifter scores zero through the whole pipeline") {
    auto cfg = default_scene(14);
    cfg.noise_sigma_px = 0.0;
    auto pair = generate_synthetic_sequence(cfg, 6);
    CHECK(mpjpe(pair.target3d, pair.target3d, cfg.skeleton.root_index) == 0.0);
}
