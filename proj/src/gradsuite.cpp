#include "agf/gradsuite.hpp"

#include <functional>
#include <numeric>
#include <thread>

#include "agf/gradcheck.hpp"
#include "agf/loss.hpp"
#include "agf/model.hpp"
#include "agf/rng.hpp"

namespace agf {

namespace {

Tensor<double> rand_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(numel_of(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor<double>(std::move(shape), std::move(v));
}

constexpr double kPrimitiveTol = 1e-5;
constexpr int kTrials = 20;

// sum(y * y) turns any primitive output into a scalar with nontrivial grads
Tensor<double> sq_sum(const Tensor<double>& y) { return sum_all(mul(y, y)); }

struct LeafSet {
    std::vector<Tensor<double>> tensors;
    std::vector<std::pair<std::string, Tensor<double>*>> refs() {
        std::vector<std::pair<std::string, Tensor<double>*>> out;
        for (std::size_t i = 0; i < tensors.size(); ++i) out.push_back({"leaf" + std::to_string(i), &tensors[i]});
        return out;
    }
};

GradCheckResult check_primitive(const std::string& name, Rng& rng,
                                const std::function<LeafSet(Rng&)>& make_leaves,
                                const std::function<Tensor<double>(LeafSet&)>& fn) {
    GradCheckResult result{name, 0.0, kPrimitiveTol, false};
    for (int t = 0; t < kTrials; ++t) {
        LeafSet leaves = make_leaves(rng);
        for (auto& l : leaves.tensors) l.set_requires_grad(true);
        auto wrapped = [&]() { return fn(leaves); };
        auto report = finite_diff_check(wrapped, leaves.refs());
        result.max_rel_err = std::max(result.max_rel_err, report.max_rel_err);
    }
    result.pass = result.max_rel_err < result.tolerance;
    return result;
}

SkeletonSpec chain_skeleton(std::size_t joints) {
    SkeletonSpec s;
    s.joint_count = joints;
    for (std::size_t j = 1; j < joints; ++j) s.edges.push_back({j - 1, j});
    s.mirror_map.resize(joints);
    std::iota(s.mirror_map.begin(), s.mirror_map.end(), 0);
    s.root_index = 0;
    return s;
}

}  // namespace

std::vector<GradCheckResult> run_primitive_gradchecks(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<GradCheckResult> out;
    auto one = [](Shape shape, double lo = -1.0, double hi = 1.0) {
        return [shape, lo, hi](Rng& r) {
            LeafSet s;
            s.tensors.push_back(rand_tensor(r, shape, lo, hi));
            return s;
        };
    };

    out.push_back(check_primitive("matmul", rng,
                                  [](Rng& r) {
                                      LeafSet s;
                                      s.tensors.push_back(rand_tensor(r, {3, 4}));
                                      s.tensors.push_back(rand_tensor(r, {4, 2}));
                                      return s;
                                  },
                                  [](LeafSet& s) { return sq_sum(matmul(s.tensors[0], s.tensors[1])); }));
    out.push_back(check_primitive("bmm", rng,
                                  [](Rng& r) {
                                      LeafSet s;
                                      s.tensors.push_back(rand_tensor(r, {2, 3, 4}));
                                      s.tensors.push_back(rand_tensor(r, {2, 4, 3}));
                                      return s;
                                  },
                                  [](LeafSet& s) { return sq_sum(bmm(s.tensors[0], s.tensors[1])); }));
    out.push_back(check_primitive("transpose_last2", rng, one({2, 3, 4}),
                                  [](LeafSet& s) { return sq_sum(transpose_last2(s.tensors[0])); }));
    for (Op op : {Op::add, Op::sub, Op::mul})
        out.push_back(check_primitive(op_name(op), rng,
                                      [](Rng& r) {
                                          LeafSet s;
                                          s.tensors.push_back(rand_tensor(r, {3, 4}));
                                          s.tensors.push_back(rand_tensor(r, {3, 4}));
                                          return s;
                                      },
                                      [op](LeafSet& s) {
                                          return sq_sum(apply_primitive(
                                              op, std::vector<Tensor<double>>{s.tensors[0], s.tensors[1]}));
                                      }));
    out.push_back(check_primitive("add_scalar", rng, one({3, 4}),
                                  [](LeafSet& s) { return sq_sum(add_scalar(s.tensors[0], 0.37)); }));
    out.push_back(check_primitive("mul_scalar", rng, one({3, 4}),
                                  [](LeafSet& s) { return sq_sum(mul_scalar(s.tensors[0], -1.7)); }));
    out.push_back(check_primitive("scale_channels", rng,
                                  [](Rng& r) {
                                      LeafSet s;
                                      s.tensors.push_back(rand_tensor(r, {2, 3, 4}));
                                      s.tensors.push_back(rand_tensor(r, {2, 3, 1}));
                                      return s;
                                  },
                                  [](LeafSet& s) { return sq_sum(scale_channels(s.tensors[0], s.tensors[1])); }));
    out.push_back(check_primitive("sqrt", rng, one({3, 4}, 0.2, 1.5),
                                  [](LeafSet& s) { return sum_all(agf::sqrt(s.tensors[0])); }));
    out.push_back(check_primitive("relu", rng, one({3, 4}, 0.1, 1.0),
                                  [](LeafSet& s) { return sq_sum(relu(s.tensors[0])); }));
    out.push_back(
        check_primitive("gelu", rng, one({3, 4}), [](LeafSet& s) { return sq_sum(gelu(s.tensors[0])); }));
    out.push_back(
        check_primitive("tanh", rng, one({3, 4}), [](LeafSet& s) { return sq_sum(agf::tanh(s.tensors[0])); }));
    out.push_back(check_primitive("softmax_last", rng, one({3, 5}, -2.0, 2.0),
                                  [](LeafSet& s) { return sq_sum(softmax_last(s.tensors[0])); }));
    out.push_back(check_primitive("layer_norm", rng,
                                  [](Rng& r) {
                                      LeafSet s;
                                      s.tensors.push_back(rand_tensor(r, {4, 6}));
                                      s.tensors.push_back(rand_tensor(r, {6}, 0.5, 1.5));
                                      s.tensors.push_back(rand_tensor(r, {6}));
                                      return s;
                                  },
                                  [](LeafSet& s) {
                                      return sq_sum(layer_norm(s.tensors[0], s.tensors[1], s.tensors[2]));
                                  }));
    {
        // batch_norm keeps its running buffers outside the leaf set
        GradCheckResult r{"batch_norm", 0.0, kPrimitiveTol, false};
        for (int t = 0; t < kTrials; ++t) {
            LeafSet s;
            s.tensors.push_back(rand_tensor(rng, {6, 4}));
            s.tensors.push_back(rand_tensor(rng, {4}, 0.5, 1.5));
            s.tensors.push_back(rand_tensor(rng, {4}));
            for (auto& l : s.tensors) l.set_requires_grad(true);
            BatchNormStats<double> stats{std::vector<double>(4, 0.0), std::vector<double>(4, 1.0)};
            auto fn = [&]() {
                return sq_sum(batch_norm(s.tensors[0], s.tensors[1], s.tensors[2], stats, true, false));
            };
            r.max_rel_err = std::max(r.max_rel_err, finite_diff_check(fn, s.refs()).max_rel_err);
        }
        r.pass = r.max_rel_err < r.tolerance;
        out.push_back(r);
    }
    out.push_back(check_primitive("reshape", rng, one({2, 6}),
                                  [](LeafSet& s) { return sq_sum(reshape(s.tensors[0], {3, 4})); }));
    out.push_back(check_primitive("permute_0213", rng, one({2, 3, 2, 2}),
                                  [](LeafSet& s) { return sq_sum(permute_0213(s.tensors[0])); }));
    out.push_back(check_primitive("concat_last", rng,
                                  [](Rng& r) {
                                      LeafSet s;
                                      s.tensors.push_back(rand_tensor(r, {3, 2}));
                                      s.tensors.push_back(rand_tensor(r, {3, 4}));
                                      return s;
                                  },
                                  [](LeafSet& s) {
                                      return sq_sum(
                                          concat_last(std::vector<Tensor<double>>{s.tensors[0], s.tensors[1]}));
                                  }));
    out.push_back(check_primitive("slice_last", rng, one({2, 3, 5}),
                                  [](LeafSet& s) { return sq_sum(slice_last(s.tensors[0], 1, 3)); }));
    out.push_back(check_primitive("slice_axis0", rng, one({5, 3}),
                                  [](LeafSet& s) { return sq_sum(slice_axis0(s.tensors[0], 1, 3)); }));
    out.push_back(check_primitive("slice_axis1", rng, one({2, 5, 3}),
                                  [](LeafSet& s) { return sq_sum(slice_axis1(s.tensors[0], 2, 2)); }));
    out.push_back(check_primitive("repeat_axis0", rng, one({2, 3}),
                                  [](LeafSet& s) { return sq_sum(repeat_axis0(s.tensors[0], 3)); }));
    out.push_back(check_primitive("add_bias_row", rng,
                                  [](Rng& r) {
                                      LeafSet s;
                                      s.tensors.push_back(rand_tensor(r, {4, 3}));
                                      s.tensors.push_back(rand_tensor(r, {3}));
                                      return s;
                                  },
                                  [](LeafSet& s) { return sq_sum(add_bias_row(s.tensors[0], s.tensors[1])); }));
    out.push_back(check_primitive("bcast_add_axis0", rng,
                                  [](Rng& r) {
                                      LeafSet s;
                                      s.tensors.push_back(rand_tensor(r, {3, 2, 4}));
                                      s.tensors.push_back(rand_tensor(r, {1, 2, 4}));
                                      return s;
                                  },
                                  [](LeafSet& s) { return sq_sum(bcast_add_axis0(s.tensors[0], s.tensors[1])); }));
    out.push_back(check_primitive("bcast_add_axis1", rng,
                                  [](Rng& r) {
                                      LeafSet s;
                                      s.tensors.push_back(rand_tensor(r, {3, 2, 4}));
                                      s.tensors.push_back(rand_tensor(r, {3, 1, 4}));
                                      return s;
                                  },
                                  [](LeafSet& s) { return sq_sum(bcast_add_axis1(s.tensors[0], s.tensors[1])); }));
    out.push_back(check_primitive("sum_last", rng, one({3, 4}),
                                  [](LeafSet& s) { return sq_sum(sum_last(s.tensors[0])); }));
    out.push_back(
        check_primitive("sum_all", rng, one({3, 4}), [](LeafSet& s) { return sq_sum(sum_all(s.tensors[0])); }));
    out.push_back(
        check_primitive("mean_all", rng, one({3, 4}), [](LeafSet& s) { return sq_sum(mean_all(s.tensors[0])); }));
    return out;
}

std::vector<GradCheckResult> run_module_gradchecks(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<GradCheckResult> out;

    {
        // graph-convolution layer on a 2-node graph
        ModelConfig cfg;
        cfg.blocks = 1;
        cfg.dim = 6;
        cfg.motion_dim = 8;
        cfg.frames = 2;
        cfg.joints = 2;
        cfg.heads = 2;
        cfg.skeleton = chain_skeleton(2);
        Model<double> model(cfg, seed + 1);
        auto tokens = rand_tensor(rng, {1, 2, 6});
        tokens.set_requires_grad(true);
        auto adj_src = build_skeleton_adjacency(cfg.skeleton);
        auto adj = Tensor<double>({1, 2, 2}, std::vector<double>(adj_src.values));
        auto fn = [&]() {
            auto y = model.gcn_mixer("block0.gf_s.gcn", tokens, adj, RunMode::train_frozen_stats);
            return sum_all(mul(y, y));
        };
        auto rep = finite_diff_check(fn, {{"tokens", &tokens}});
        out.push_back({"gcn_layer_2node", rep.max_rel_err, 1e-5, rep.max_rel_err < 1e-5});
    }
    {
        // softmax conservation: gradient of sum(softmax) is identically zero
        auto x = rand_tensor(rng, {6}, -2.0, 2.0);
        x.set_requires_grad(true);
        auto fn = [&]() { return sum_all(softmax_last(x)); };
        auto rep = finite_diff_check(fn, {{"x", &x}});
        out.push_back({"softmax_conservation", rep.max_rel_err, 1e-6, rep.max_rel_err < 1e-6});
    }
    {
        // one full block, two frames, three joints, driven through the loss
        ModelConfig cfg;
        cfg.blocks = 1;
        cfg.dim = 8;
        cfg.motion_dim = 8;
        cfg.frames = 2;
        cfg.joints = 3;
        cfg.heads = 2;
        cfg.skeleton = chain_skeleton(3);
        Model<double> model(cfg, seed + 2);
        auto x = rand_tensor(rng, {2, 3, 3}, -0.8, 0.8);
        x.set_requires_grad(true);
        auto gt = rand_tensor(rng, {2, 3, 3});
        auto fn = [&]() {
            auto pred = model.forward(x, 1, RunMode::train_frozen_stats);
            LossConfig lc;
            return total_loss(pred, gt, 1, cfg.frames, lc);
        };
        auto rep = finite_diff_check(fn, {{"x", &x}});
        out.push_back({"agformer_block_toy", rep.max_rel_err, 1e-5, rep.max_rel_err < 1e-5});
    }
    {
        // stacked spatial+temporal attention metaformers
        ModelConfig cfg;
        cfg.blocks = 1;
        cfg.dim = 8;
        cfg.motion_dim = 8;
        cfg.frames = 2;
        cfg.joints = 3;
        cfg.heads = 2;
        cfg.composition = CompositionMode::attn_only;
        cfg.skeleton = chain_skeleton(3);
        Model<double> model(cfg, seed + 3);
        auto x = rand_tensor(rng, {2, 3, 3}, -0.8, 0.8);
        x.set_requires_grad(true);
        auto fn = [&]() {
            auto h = model.embed_inputs(x, 1);
            h = model.transformer_stream(h, "block0", 1);
            return sum_all(mul(h, h));
        };
        auto rep = finite_diff_check(fn, {{"x", &x}});
        out.push_back({"metaformer_stack", rep.max_rel_err, 1e-5, rep.max_rel_err < 1e-5});
    }
    return out;
}

GradCheckResult run_full_model_gradcheck(std::uint64_t seed, unsigned threads) {
    ModelConfig cfg;
    cfg.blocks = 2;
    cfg.dim = 16;
    cfg.motion_dim = 16;
    cfg.frames = 4;
    cfg.joints = 5;
    cfg.heads = 2;
    cfg.skeleton = chain_skeleton(5);

    const std::uint64_t model_seed = seed + 101;
    Rng rng(seed);
    std::vector<double> xv(cfg.frames * cfg.joints * 3), gv(xv.size());
    for (auto& v : xv) v = rng.uniform(-0.8, 0.8);
    for (auto& v : gv) v = rng.uniform(-1.0, 1.0);

    struct Instance {
        Model<double> model;
        Tensor<double> x;
        Tensor<double> gt;
        Instance(const ModelConfig& cfg, std::uint64_t seed, const std::vector<double>& xv,
                 const std::vector<double>& gv)
            : model(cfg, seed),
              x({cfg.frames, cfg.joints, 3}, xv),
              gt({cfg.frames, cfg.joints, 3}, gv) {}
        double eval() {
            auto pred = model.forward(x, 1, RunMode::train_frozen_stats);
            LossConfig lc;
            return total_loss(pred, gt, 1, model.config().frames, lc).item();
        }
        // leaf 0 is the input; the rest follow parameter-store order
        std::vector<Tensor<double>*> leaves() {
            std::vector<Tensor<double>*> out{&x};
            for (auto& e : model.params().entries()) out.push_back(&e.tensor);
            return out;
        }
    };

    // analytic gradients from one taped pass
    Instance main_instance(cfg, model_seed, xv, gv);
    main_instance.x.set_requires_grad(true);
    std::vector<std::vector<double>> analytic;
    {
        Tape<double> tape;
        TapeGuard<double> guard(tape);
        auto pred = main_instance.model.forward(main_instance.x, 1, RunMode::train_frozen_stats);
        LossConfig lc;
        auto loss = total_loss(pred, main_instance.gt, 1, cfg.frames, lc);
        backward(loss);
        for (auto* leaf : main_instance.leaves()) analytic.push_back(leaf->grad());
    }

    // flat coordinate list over all leaves
    std::vector<std::pair<std::size_t, std::size_t>> coords;
    {
        auto leaves = main_instance.leaves();
        for (std::size_t li = 0; li < leaves.size(); ++li)
            for (std::size_t k = 0; k < leaves[li]->numel(); ++k) coords.push_back({li, k});
    }

    if (threads == 0) threads = 1;
    const std::size_t shard = (coords.size() + threads - 1) / threads;
    std::vector<double> shard_max(threads, 0.0);
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&, t]() {
            const std::size_t lo = t * shard;
            const std::size_t hi = std::min(coords.size(), lo + shard);
            if (lo >= hi) return;
            Instance inst(cfg, model_seed, xv, gv);
            auto leaves = inst.leaves();
            const double eps = 1e-5;
            double worst = 0.0;
            for (std::size_t c = lo; c < hi; ++c) {
                auto [li, k] = coords[c];
                auto& data = leaves[li]->mutable_data();
                const double keep = data[k];
                data[k] = keep + eps;
                const double fp = inst.eval();
                data[k] = keep - eps;
                const double fm = inst.eval();
                data[k] = keep;
                const double numeric = (fp - fm) / (2.0 * eps);
                worst = std::max(worst, fd_rel_err(analytic[li][k], numeric));
            }
            shard_max[t] = worst;
        });
    }
    for (auto& th : pool) th.join();

    GradCheckResult result{"full_model_N2_d16_h2_T4_J5", 0.0, 1e-4, false};
    for (double v : shard_max) result.max_rel_err = std::max(result.max_rel_err, v);
    result.pass = result.max_rel_err < result.tolerance;
    return result;
}

}  // namespace agf
