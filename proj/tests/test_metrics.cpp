#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "agf/data.hpp"
#include "agf/gradcheck.hpp"
#include "agf/loss.hpp"
#include "agf/metrics.hpp"
#include "agf/rng.hpp"

using namespace agf;

namespace {

PoseArray make_seq(std::size_t frames, std::size_t joints, const std::vector<double>& values) {
    PoseArray s(frames, joints);
    s.values = values;
    return s;
}

PoseArray random_seq(Rng& rng, std::size_t frames, std::size_t joints, double scale = 100.0) {
    PoseArray s(frames, joints);
    for (auto& v : s.values) v = rng.uniform(-scale, scale);
    return s;
}

// independent scalar recomputation of the position loss
double loop_position_loss(const PoseArray& pred, const PoseArray& gt) {
    double total = 0.0;
    for (std::size_t t = 0; t < pred.frames; ++t)
        for (std::size_t j = 0; j < pred.joints; ++j) {
            double s = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double d = pred.at(t, j, c) - gt.at(t, j, c);
                s += d * d;
            }
            total += std::sqrt(s);
        }
    return total;
}

Tensor<double> to_tensor(const PoseArray& s) {
    std::vector<double> v = s.values;
    return Tensor<double>({s.frames, s.joints, 3}, std::move(v));
}

// rotate+translate a sequence by a rotation about axis (unit) by angle
PoseArray rigid_transform(const PoseArray& s, double yaw, double pitch, double roll, double tx, double ty,
                          double tz, double scale = 1.0) {
    const double cy = std::cos(yaw), sy = std::sin(yaw);
    const double cp = std::cos(pitch), sp = std::sin(pitch);
    const double cr = std::cos(roll), sr = std::sin(roll);
    // R = Rz(yaw) * Ry(pitch) * Rx(roll)
    double R[3][3] = {
        {cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr},
        {sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr},
        {-sp, cp * sr, cp * cr},
    };
    PoseArray out = s;
    for (std::size_t t = 0; t < s.frames; ++t)
        for (std::size_t j = 0; j < s.joints; ++j) {
            const double x = s.at(t, j, 0), y = s.at(t, j, 1), z = s.at(t, j, 2);
            out.at(t, j, 0) = scale * (R[0][0] * x + R[0][1] * y + R[0][2] * z) + tx;
            out.at(t, j, 1) = scale * (R[1][0] * x + R[1][1] * y + R[1][2] * z) + ty;
            out.at(t, j, 2) = scale * (R[2][0] * x + R[2][1] * y + R[2][2] * z) + tz;
        }
    return out;
}

}  // namespace

TEST_CASE("position loss basics") {
    auto gt = make_seq(1, 1, {0, 0, 0});
    auto pred = make_seq(1, 1, {3, 4, 0});
    CHECK(position_loss(to_tensor(pred), to_tensor(gt), 1).item() == doctest::Approx(5.0));
    CHECK(position_loss(to_tensor(gt), to_tensor(gt), 1).item() == 0.0);
}

TEST_CASE("position loss matches the loop oracle on random input") {
    Rng rng(1);
    auto gt = random_seq(rng, 2, 3);
    auto pred = random_seq(rng, 2, 3);
    const double want = loop_position_loss(pred, gt);
    CHECK(position_loss(to_tensor(pred), to_tensor(gt), 1).item() == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("velocity loss ignores constant offsets and single frames") {
    Rng rng(2);
    auto gt = random_seq(rng, 3, 2);
    auto pred = gt;
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t j = 0; j < 2; ++j)
            for (int c = 0; c < 3; ++c) pred.at(t, j, c) += 17.0;  // same shift per frame
    CHECK(velocity_loss(to_tensor(pred), to_tensor(gt), 1, 3).item() == doctest::Approx(0.0).epsilon(1e-9));

    auto one = random_seq(rng, 1, 2);
    CHECK(velocity_loss(to_tensor(one), to_tensor(one), 1, 1).item() == 0.0);
}

TEST_CASE("velocity loss matches the loop oracle") {
    Rng rng(3);
    auto gt = random_seq(rng, 4, 2);
    auto pred = random_seq(rng, 4, 2);
    double want = 0.0;
    for (std::size_t t = 1; t < 4; ++t)
        for (std::size_t j = 0; j < 2; ++j) {
            double s = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double dp = pred.at(t, j, c) - pred.at(t - 1, j, c);
                const double dg = gt.at(t, j, c) - gt.at(t - 1, j, c);
                s += (dp - dg) * (dp - dg);
            }
            want += std::sqrt(s);
        }
    CHECK(velocity_loss(to_tensor(pred), to_tensor(gt), 1, 4).item() == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("total loss arithmetic") {
    auto gt = make_seq(2, 1, {0, 0, 0, 0, 0, 0});
    auto pred = make_seq(2, 1, {3, 4, 0, 3, 4, 0});
    LossConfig cfg;
    cfg.lambda_velocity = 0.0;
    CHECK(total_loss(to_tensor(pred), to_tensor(gt), 1, 2, cfg).item() ==
          position_loss(to_tensor(pred), to_tensor(gt), 1).item());
    cfg.lambda_velocity = 1.0;
    // position 10 (5 per frame), velocity 0 (constant offset)
    CHECK(total_loss(to_tensor(pred), to_tensor(gt), 1, 2, cfg).item() == doctest::Approx(10.0));
    CHECK(total_loss(to_tensor(gt), to_tensor(gt), 1, 2, cfg).item() == 0.0);
}

TEST_CASE("total loss gradient passes finite differences away from pred==gt") {
    Rng rng(4);
    auto gts = random_seq(rng, 3, 2, 1.0);
    auto preds = random_seq(rng, 3, 2, 1.0);
    auto gt = to_tensor(gts);
    auto pred = to_tensor(preds);
    pred.set_requires_grad(true);
    LossConfig cfg;
    auto fn = [&]() { return total_loss(pred, gt, 1, 3, cfg); };
    CHECK(finite_diff_check(fn, {{"pred", &pred}}).max_rel_err < 1e-6);
}

TEST_CASE("mpjpe basics") {
    // global translation cancels via root centering
    Rng rng(5);
    auto gt = random_seq(rng, 3, 4);
    auto pred = gt;
    for (auto& v : pred.values) v += 250.0;
    CHECK(mpjpe(pred, gt, 0) == doctest::Approx(0.0).epsilon(1e-9));

    // J=2, root 0, joint 1 offset by (3,4,0): mean of 0 and 5
    auto g2 = make_seq(1, 2, {0, 0, 0, 10, 10, 10});
    auto p2 = make_seq(1, 2, {0, 0, 0, 13, 14, 10});
    CHECK(mpjpe(p2, g2, 0) == doctest::Approx(2.5));
}

TEST_CASE("mpjpe matches the loop oracle") {
    Rng rng(6);
    auto gt = random_seq(rng, 2, 3);
    auto pred = random_seq(rng, 2, 3);
    double want = 0.0;
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double d = (pred.at(t, j, c) - pred.at(t, 0, c)) - (gt.at(t, j, c) - gt.at(t, 0, c));
                s += d * d;
            }
            want += std::sqrt(s);
        }
    want /= 6.0;
    CHECK(mpjpe(pred, gt, 0) == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("p_mpjpe recovers rigid and similarity transforms") {
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        auto gt = random_seq(rng, 2, 5);
        auto pred = rigid_transform(gt, rng.uniform(-3, 3), rng.uniform(-1.5, 1.5), rng.uniform(-3, 3),
                                    rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(-100, 100));
        CHECK(p_mpjpe(pred, gt) < 1e-6);
        CHECK(p_mpjpe(pred, gt, /*rigid_only=*/true) < 1e-6);

        auto scaled = rigid_transform(gt, 0.3, 0.2, -0.4, 5, -3, 2, 1.7);
        CHECK(p_mpjpe(scaled, gt) < 1e-6);  // scale absorbed by the similarity fit
    }
}

TEST_CASE("p_mpjpe is bounded by mpjpe on random cases") {
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        auto gt = random_seq(rng, 2, 6);
        auto pred = random_seq(rng, 2, 6);
        CHECK(p_mpjpe(pred, gt) <= mpjpe(pred, gt, 0) + 1e-9);
    }
}

TEST_CASE("degenerate frame falls back to translation-only alignment") {
    auto gt = make_seq(1, 3, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto pred = make_seq(1, 3, {5, 5, 5, 5, 5, 5, 5, 5, 5});  // coincident joints
    CHECK(std::isfinite(p_mpjpe(pred, gt)));
}

TEST_CASE("planar Procrustes agrees with grid search over the rotation angle") {
    // 2-joint planar toy; oracle sweeps z-rotations in 0.001 rad steps with
    // centroid translation, rigid alignment (no scale).
    auto gt = make_seq(1, 2, {0, 0, 0, 100, 40, 0});
    auto pred = make_seq(1, 2, {10, -30, 0, -80, 60, 0});

    double best = 1e300;
    for (double theta = -3.1415; theta <= 3.1415; theta += 0.001) {
        const double c = std::cos(theta), s = std::sin(theta);
        // centroids
        double pcx = 0, pcy = 0, gcx = 0, gcy = 0;
        for (int j = 0; j < 2; ++j) {
            pcx += pred.at(0, j, 0) / 2.0;
            pcy += pred.at(0, j, 1) / 2.0;
            gcx += gt.at(0, j, 0) / 2.0;
            gcy += gt.at(0, j, 1) / 2.0;
        }
        double err = 0.0;
        for (int j = 0; j < 2; ++j) {
            const double px = pred.at(0, j, 0) - pcx, py = pred.at(0, j, 1) - pcy;
            const double rx = c * px - s * py + gcx, ry = s * px + c * py + gcy;
            const double dx = rx - gt.at(0, j, 0), dy = ry - gt.at(0, j, 1);
            err += std::sqrt(dx * dx + dy * dy);
        }
        best = std::min(best, err / 2.0);
    }
    CHECK(p_mpjpe(pred, gt, /*rigid_only=*/true) == doctest::Approx(best).epsilon(0).scale(1).epsilon(1e-4));
    CHECK(std::abs(p_mpjpe(pred, gt, true) - best) < 0.01);
}

TEST_CASE("pck and auc") {
    // joint errors 100 and 200 mm -> PCK 50
    auto gt = make_seq(1, 3, {0, 0, 0, 0, 0, 0, 0, 0, 0});
    auto pred = make_seq(1, 3, {0, 0, 0, 100, 0, 0, 200, 0, 0});
    auto [pck, auc] = pck_auc(pred, gt, 0);
    // root error 0 counts as a hit; joints are {0, 100, 200}
    CHECK(pck == doctest::Approx(100.0 * 2.0 / 3.0));
    CHECK(auc <= pck);

    // all-zero error: strict < scores 0 at the 0 mm threshold
    auto [pck0, auc0] = pck_auc(gt, gt, 0);
    CHECK(pck0 == 100.0);
    CHECK(auc0 == doctest::Approx(100.0 * 30.0 / 31.0));
}

TEST_CASE("pck/auc match a brute-force oracle on random cases") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t T = 1 + rng.below(8), J = 2 + rng.below(16);
        auto gt = random_seq(rng, T, J);
        auto pred = random_seq(rng, T, J);
        auto [pck, auc] = pck_auc(pred, gt, 0);

        const auto errors = per_joint_errors(pred, gt, 0);
        auto oracle_pck = [&](double thr) {
            std::size_t hits = 0;
            for (double e : errors)
                if (e < thr) ++hits;
            return 100.0 * hits / static_cast<double>(errors.size());
        };
        CHECK(std::abs(pck - oracle_pck(150.0)) < 1e-6);
        double oa = 0.0;
        for (int i = 0; i <= 30; ++i) oa += oracle_pck(5.0 * i);
        CHECK(std::abs(auc - oa / 31.0) < 1e-6);
        CHECK(auc <= pck + 1e-12);
    }
}

TEST_CASE("acceleration error on constant velocity is zero") {
    PoseArray gt = make_seq(4, 1, {0, 0, 0, 1, 2, 3, 2, 4, 6, 3, 6, 9});
    PoseArray pred = make_seq(4, 1, {5, 5, 5, 7, 6, 5, 9, 7, 5, 11, 8, 5});
    CHECK(acceleration_error(pred, gt) == doctest::Approx(0.0));
    CHECK(acceleration_error(gt, gt) == 0.0);
    auto two = make_seq(2, 1, {0, 0, 0, 1, 1, 1});
    CHECK(acceleration_error(two, two) == 0.0);
}

TEST_CASE("acceleration error matches the loop oracle") {
    Rng rng(10);
    auto gt = random_seq(rng, 4, 3);
    auto pred = random_seq(rng, 4, 3);
    double want = 0.0;
    for (std::size_t t = 1; t <= 2; ++t)
        for (std::size_t j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double lg = gt.at(t - 1, j, c) - 2 * gt.at(t, j, c) + gt.at(t + 1, j, c);
                const double lp = pred.at(t - 1, j, c) - 2 * pred.at(t, j, c) + pred.at(t + 1, j, c);
                s += (lg - lp) * (lg - lp);
            }
            want += std::sqrt(s);
        }
    want /= 6.0;
    CHECK(acceleration_error(pred, gt) == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("metrics are invariant under a shared rigid motion") {
    Rng rng(11);
    auto gt = random_seq(rng, 3, 5);
    auto pred = random_seq(rng, 3, 5);
    auto moved_gt = rigid_transform(gt, 0.5, -0.2, 0.9, 40, -20, 60);
    auto moved_pred = rigid_transform(pred, 0.5, -0.2, 0.9, 40, -20, 60);
    CHECK(mpjpe(moved_pred, moved_gt, 0) == doctest::Approx(mpjpe(pred, gt, 0)).epsilon(1e-6));
    CHECK(p_mpjpe(moved_pred, moved_gt) == doctest::Approx(p_mpjpe(pred, gt)).epsilon(1e-6));
}

TEST_CASE("metrics scale linearly with the data") {
    Rng rng(12);
    auto gt = random_seq(rng, 3, 5);
    auto pred = random_seq(rng, 3, 5);
    auto scale = [](PoseArray s, double c) {
        for (auto& v : s.values) v *= c;
        return s;
    };
    const double c = 2.5;
    CHECK(mpjpe(scale(pred, c), scale(gt, c), 0) == doctest::Approx(c * mpjpe(pred, gt, 0)).epsilon(1e-5));
    CHECK(p_mpjpe(scale(pred, c), scale(gt, c)) == doctest::Approx(c * p_mpjpe(pred, gt)).epsilon(1e-5));
    CHECK(acceleration_error(scale(pred, c), scale(gt, c)) ==
          doctest::Approx(c * acceleration_error(pred, gt)).epsilon(1e-5));
}

TEST_CASE("aggregate report") {
    Rng rng(13);
    auto gt1 = random_seq(rng, 3, 4);
    auto pred1 = random_seq(rng, 3, 4);

    // single pair: per_action equals the overall numbers
    auto single = aggregate_report({{pred1, gt1, "walk"}}, 0);
    REQUIRE(single.per_action.count("walk") == 1);
    CHECK(single.per_action["walk"].p1_mm == doctest::Approx(single.mpjpe_mm).epsilon(1e-9));
    CHECK(single.per_action["walk"].p2_mm == doctest::Approx(single.p_mpjpe_mm).epsilon(1e-9));

    // per-joint means average back to the overall mpjpe
    double pj = 0.0;
    for (double v : single.per_joint_mm) pj += v;
    pj /= static_cast<double>(single.per_joint_mm.size());
    CHECK(std::abs(pj - single.mpjpe_mm) < 1e-9);

    // two actions with equal frame counts average their P1
    auto gt2 = random_seq(rng, 3, 4);
    auto pred2 = random_seq(rng, 3, 4);
    auto both = aggregate_report({{pred1, gt1, "a"}, {pred2, gt2, "b"}}, 0);
    const double wa = both.per_action["a"].p1_mm, wb = both.per_action["b"].p1_mm;
    CHECK(both.mpjpe_mm == doctest::Approx((wa + wb) / 2.0).epsilon(1e-9));

    CHECK(both.p_mpjpe_mm <= both.mpjpe_mm + 1e-9);
    CHECK(both.auc_pct <= both.pck_pct + 1e-12);

    CHECK_THROWS_AS(aggregate_report({}, 0), std::runtime_error);
}

TEST_CASE("report serialization round trips") {
    Rng rng(14);
    auto gt = random_seq(rng, 3, 4);
    auto pred = random_seq(rng, 3, 4);
    auto report = aggregate_report({{pred, gt, "walk"}}, 0);
    const auto json_text = report_to_json(report, "2026-01-01T00:00:00Z");
    CHECK(json_text.find("mpjpe_mm") != std::string::npos);
    CHECK(json_text.find("generated_at") != std::string::npos);
    const auto csv = report_to_csv(report);
    CHECK(csv.find("action,walk") != std::string::npos);
}
