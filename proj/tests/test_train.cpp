#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "agf/train.hpp"

using namespace agf;

namespace {

SkeletonSpec chain_skeleton(std::size_t joints) {
    SkeletonSpec s;
    s.joint_count = joints;
    for (std::size_t j = 1; j < joints; ++j) s.edges.push_back({j - 1, j});
    s.mirror_map.resize(joints);
    std::iota(s.mirror_map.begin(), s.mirror_map.end(), 0);
    s.root_index = 0;
    return s;
}

ModelConfig toy_model_config() {
    ModelConfig cfg;
    cfg.blocks = 1;
    cfg.dim = 8;
    cfg.motion_dim = 16;
    cfg.frames = 4;
    cfg.joints = 17;
    cfg.heads = 2;
    return cfg;
}

Dataset toy_dataset(std::uint64_t seed, std::size_t sequences, std::size_t frames) {
    Dataset data;
    for (std::size_t i = 0; i < sequences; ++i) {
        auto scene = default_scene(seed + i);
        data.pairs.push_back(generate_synthetic_sequence(scene, frames, "toy"));
        data.actions.push_back("toy");
    }
    return data;
}

ParameterStore<double> scalar_store(std::vector<double> values) {
    const std::size_t n = values.size();
    ParameterStore<double> store;
    store.add("p", Tensor<double>({n}, std::move(values)));
    return store;
}

}  // namespace

TEST_CASE("lr schedule") {
    TrainConfig cfg;
    CHECK(lr_at_epoch(0, cfg) == 5e-4);
    CHECK(lr_at_epoch(1, cfg) == doctest::Approx(4.95e-4));
    CHECK(lr_at_epoch(90, cfg) == doctest::Approx(5e-4 * std::pow(0.99, 90)));
    CHECK(lr_at_epoch(90, cfg) / cfg.lr_init == doctest::Approx(0.405).epsilon(0.01));
}

TEST_CASE("adamw: zero grad and zero decay is a fixed point") {
    auto store = scalar_store({1.0, -2.0, 3.0});
    OptimizerState<double> state;
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    adamw_step(store, state, 0.1, cfg);
    CHECK(store.at("p").data() == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("adamw: first step moves by about lr in the gradient direction") {
    auto store = scalar_store({1.0});
    store.at("p").mutable_grad()[0] = 1.0;
    OptimizerState<double> state;
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    adamw_step(store, state, 0.1, cfg);
    // bias-corrected mhat = vhat = 1 at t = 1, so the update is lr/(1 + eps)
    CHECK(store.at("p").data()[0] == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("adamw: pure decay shrink when gradient is zero") {
    auto store = scalar_store({2.0});
    OptimizerState<double> state;
    TrainConfig cfg;
    cfg.weight_decay = 0.5;
    adamw_step(store, state, 0.1, cfg);
    CHECK(store.at("p").data()[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 0.5)).epsilon(1e-12));
}

TEST_CASE("adamw: decay skips entries flagged no-decay") {
    ParameterStore<double> store;
    store.add("norm.gamma", Tensor<double>({1}, {2.0}), true, /*decay=*/false);
    OptimizerState<double> state;
    TrainConfig cfg;
    cfg.weight_decay = 0.5;
    adamw_step(store, state, 0.1, cfg);
    CHECK(store.at("norm.gamma").data()[0] == 2.0);
}

TEST_CASE("adamw: non-finite gradient names the parameter") {
    auto store = scalar_store({1.0});
    store.at("p").mutable_grad()[0] = std::numeric_limits<double>::quiet_NaN();
    OptimizerState<double> state;
    TrainConfig cfg;
    CHECK_THROWS_WITH_AS(adamw_step(store, state, 0.1, cfg), doctest::Contains("'p'"), std::runtime_error);
}

TEST_CASE("adamw strictly decreases a quadratic objective") {
    auto store = scalar_store({0.7, -1.3, 0.2});
    OptimizerState<double> state;
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    auto objective = [&]() {
        double s = 0.0;
        for (double v : store.at("p").data()) s += v * v;
        return s;
    };
    for (int step = 0; step < 5; ++step) {
        const double before = objective();
        auto& grad = store.at("p").mutable_grad();
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = 2.0 * store.at("p").data()[i];
        adamw_step(store, state, 1e-3, cfg);
        CHECK(objective() < before);
    }
}

TEST_CASE("gradient clipping equals pre-scaling the gradients") {
    TrainConfig clipped_cfg;
    clipped_cfg.weight_decay = 0.0;
    clipped_cfg.clip_norm = 5.0;
    auto clipped = scalar_store({1.0, -2.0});
    clipped.at("p").mutable_grad() = {30.0, 40.0};  // norm 50, clip scale 0.1
    OptimizerState<double> s1;
    adamw_step(clipped, s1, 0.1, clipped_cfg);

    TrainConfig plain_cfg = clipped_cfg;
    plain_cfg.clip_norm = 0.0;
    auto plain = scalar_store({1.0, -2.0});
    plain.at("p").mutable_grad() = {3.0, 4.0};
    OptimizerState<double> s2;
    adamw_step(plain, s2, 0.1, plain_cfg);

    CHECK(clipped.at("p").data()[0] == doctest::Approx(plain.at("p").data()[0]).epsilon(1e-12));
    CHECK(clipped.at("p").data()[1] == doctest::Approx(plain.at("p").data()[1]).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip is bit-exact and evaluation reproduces") {
    namespace fs = std::filesystem;
    auto mcfg = toy_model_config();
    TrainConfig tcfg;
    Model<float> model(mcfg, 42);
    const auto path = (fs::temp_directory_path() / "agf_test.ckpt").string();
    save_checkpoint(path, model, tcfg);
    auto loaded = load_checkpoint(path);

    REQUIRE(loaded.model.params().entries().size() == model.params().entries().size());
    for (std::size_t i = 0; i < model.params().entries().size(); ++i) {
        const auto& a = model.params().entries()[i];
        const auto& b = loaded.model.params().entries()[i];
        CHECK(a.path == b.path);
        CHECK(a.tensor.data() == b.tensor.data());
        CHECK(a.decay == b.decay);
    }
    for (const auto& [prefix, bn] : model.params().bn_layers()) {
        const auto& other = loaded.model.params().bn_stats(prefix);
        CHECK(bn.mean == other.mean);
        CHECK(bn.var == other.var);
    }

    auto data = toy_dataset(7, 2, 8);
    auto r1 = evaluate(model, data, tcfg.target_scale_mm, false);
    auto r2 = evaluate(loaded.model, data, tcfg.target_scale_mm, false);
    CHECK(r1.mpjpe_mm == r2.mpjpe_mm);
    CHECK(r1.p_mpjpe_mm == r2.p_mpjpe_mm);
    CHECK(r1.accel_err_mm == r2.accel_err_mm);
    fs::remove(path);
}

TEST_CASE("checkpoint dimension mismatch with the data is an error") {
    auto mcfg = toy_model_config();
    Model<float> model(mcfg, 1);
    Dataset data;
    auto scene = default_scene(3);
    data.pairs.push_back(generate_synthetic_sequence(scene, 2));  // shorter than cfg.frames
    data.actions.push_back("");
    CHECK_THROWS_AS(evaluate(model, data, 1000.0, false), std::runtime_error);
}

TEST_CASE("tta flip equals the hand-built average of two passes") {
    auto mcfg = toy_model_config();
    Model<float> model(mcfg, 5);
    auto data = toy_dataset(11, 1, 4);
    const auto& seq = data.pairs[0].input2d;

    auto pred_tta = predict_sequence(model, seq, 1000.0, /*tta_flip=*/true);

    auto plain = predict_sequence(model, seq, 1000.0, false);
    auto flipped_in = horizontal_flip(seq, mcfg.skeleton);
    auto pred_flipped = predict_sequence(model, flipped_in, 1000.0, false);
    // un-flip by mirroring back
    PoseSequence as_seq;
    as_seq.frames = seq.frames;
    as_seq.joints = seq.joints;
    as_seq.kind = "3d";
    as_seq.values.assign(pred_flipped.values.begin(), pred_flipped.values.end());
    auto unflipped = horizontal_flip(as_seq, mcfg.skeleton);

    for (std::size_t i = 0; i < pred_tta.values.size(); ++i) {
        const double want = 0.5 * (plain.values[i] + static_cast<double>(unflipped.values[i]));
        CHECK(pred_tta.values[i] == doctest::Approx(want).epsilon(1e-5));
    }
}

TEST_CASE("prediction covers sequences whose length is not a multiple of T") {
    auto mcfg = toy_model_config();  // frames = 4
    Model<float> model(mcfg, 8);
    auto data = toy_dataset(61, 1, 10);
    auto pred = predict_sequence(model, data.pairs[0].input2d, 1000.0, false);
    CHECK(pred.frames == 10);
    // the tail comes from the final overlapping window [6, 10)
    auto head = predict_sequence(model, data.pairs[0].input2d, 1000.0, false);
    bool any_nonzero = false;
    for (std::size_t i = 9 * 17 * 3; i < 10 * 17 * 3; ++i) any_nonzero |= head.values[i] != 0.0;
    CHECK(any_nonzero);
}

TEST_CASE("frozen batch-norm makes batch gradients additive across splits") {
    auto mcfg = toy_model_config();
    mcfg.joints = 5;
    mcfg.skeleton = chain_skeleton(5);
    TrainConfig tcfg;

    Dataset data;
    for (int i = 0; i < 2; ++i) {
        auto scene = default_scene(20 + i);
        scene.skeleton = mcfg.skeleton;
        scene.bone_lengths_mm.resize(5, 200.0);
        scene.bone_lengths_mm[0] = 1.0;
        scene.motions.resize(5);
        data.pairs.push_back(generate_synthetic_sequence(scene, mcfg.frames, ""));
        data.actions.push_back("");
    }

    auto grads_for = [&](const std::vector<std::size_t>& idx) {
        Model<float> model(mcfg, 77);
        std::vector<SequencePair> windows;
        for (auto i : idx) windows.push_back(data.pairs[i]);
        auto x = batch_input(windows);
        auto gt = batch_target(windows, 0, tcfg.target_scale_mm);
        Tape<float> tape;
        TapeGuard<float> guard(tape);
        auto pred = model.forward(x, windows.size(), RunMode::eval);  // frozen batch-norm
        auto loss = total_loss(pred, gt, windows.size(), mcfg.frames, tcfg.loss);
        backward(loss);
        std::vector<std::vector<float>> grads;
        for (const auto& e : model.params().entries()) grads.push_back(e.tensor.grad());
        return grads;
    };

    auto joint = grads_for({0, 1});
    auto first = grads_for({0});
    auto second = grads_for({1});
    for (std::size_t p = 0; p < joint.size(); ++p)
        for (std::size_t k = 0; k < joint[p].size(); ++k) {
            const double want = 0.5 * (first[p][k] + second[p][k]);
            CHECK(std::abs(joint[p][k] - want) < 1e-4);
        }
}

TEST_CASE("train_run: vanishing lr leaves parameters bit-identical") {
    namespace fs = std::filesystem;
    auto mcfg = toy_model_config();
    TrainConfig tcfg;
    tcfg.lr_init = std::numeric_limits<double>::denorm_min();  // config requires positive
    tcfg.weight_decay = 0.0;
    tcfg.epochs = 1;
    tcfg.batch_size = 2;
    tcfg.seed = 3;
    auto data = toy_dataset(31, 2, 4);

    const auto dir = fs::temp_directory_path() / "agf_lr0_out";
    fs::remove_all(dir);
    auto result = train_run(mcfg, tcfg, data, data, dir.string());
    REQUIRE(result.log.size() == 2);

    Model<float> reference(mcfg, tcfg.seed);
    auto trained = load_checkpoint((dir / "last.ckpt").string());
    for (std::size_t i = 0; i < reference.params().entries().size(); ++i)
        CHECK(reference.params().entries()[i].tensor.data() == trained.model.params().entries()[i].tensor.data());
    fs::remove_all(dir);
}

TEST_CASE("train_run is deterministic under the seed") {
    auto mcfg = toy_model_config();
    TrainConfig tcfg;
    tcfg.epochs = 2;
    tcfg.batch_size = 2;
    tcfg.lr_init = 1e-3;
    tcfg.seed = 9;
    auto data = toy_dataset(41, 2, 4);

    auto a = train_run(mcfg, tcfg, data, data, "");
    auto b = train_run(mcfg, tcfg, data, data, "");
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].train_loss == b.log[i].train_loss);
        CHECK(a.log[i].eval_p1 == b.log[i].eval_p1);
    }
    CHECK(epoch_log_to_csv(a.log) == epoch_log_to_csv(b.log));
}

TEST_CASE("train_run writes checkpoints and the csv log") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "agf_train_out";
    fs::remove_all(dir);
    auto mcfg = toy_model_config();
    TrainConfig tcfg;
    tcfg.epochs = 1;
    tcfg.batch_size = 2;
    tcfg.seed = 1;
    auto data = toy_dataset(51, 2, 4);
    train_run(mcfg, tcfg, data, data, dir.string());
    CHECK(fs::exists(dir / "best.ckpt"));
    CHECK(fs::exists(dir / "last.ckpt"));
    CHECK(fs::exists(dir / "epochs.csv"));
    fs::remove_all(dir);
}
