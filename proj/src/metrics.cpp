#include "agf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <json.hpp>

namespace agf {

namespace {

void check_match(const PoseArray& pred, const PoseArray& gt) {
    if (pred.frames != gt.frames || pred.joints != gt.joints)
        throw std::runtime_error("metrics: shape mismatch, pred " + std::to_string(pred.frames) + "x" +
                                 std::to_string(pred.joints) + " vs gt " + std::to_string(gt.frames) + "x" +
                                 std::to_string(gt.joints));
}

}  // namespace

std::vector<double> per_joint_errors(const PoseArray& pred, const PoseArray& gt, std::size_t root) {
    check_match(pred, gt);
    if (root >= pred.joints) throw std::runtime_error("metrics: root index out of range");
    std::vector<double> errors(pred.frames * pred.joints);
    for (std::size_t t = 0; t < pred.frames; ++t) {
        double pr[3], gr[3];
        for (int c = 0; c < 3; ++c) {
            pr[c] = pred.at(t, root, c);
            gr[c] = gt.at(t, root, c);
        }
        for (std::size_t j = 0; j < pred.joints; ++j) {
            double s = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double d = (pred.at(t, j, c) - pr[c]) - (gt.at(t, j, c) - gr[c]);
                s += d * d;
            }
            errors[t * pred.joints + j] = std::sqrt(s);
        }
    }
    return errors;
}

double mpjpe(const PoseArray& pred, const PoseArray& gt, std::size_t root) {
    const auto errors = per_joint_errors(pred, gt, root);
    double sum = 0.0;
    for (double e : errors) sum += e;
    return sum / static_cast<double>(errors.size());
}

double p_mpjpe(const PoseArray& pred, const PoseArray& gt, bool rigid_only) {
    check_match(pred, gt);
    const std::size_t J = pred.joints;
    double total = 0.0;
    for (std::size_t t = 0; t < pred.frames; ++t) {
        Eigen::MatrixXd X(3, J), Y(3, J);  // pred, gt columns
        for (std::size_t j = 0; j < J; ++j)
            for (int c = 0; c < 3; ++c) {
                X(c, j) = pred.at(t, j, c);
                Y(c, j) = gt.at(t, j, c);
            }
        const Eigen::Vector3d mx = X.rowwise().mean();
        const Eigen::Vector3d my = Y.rowwise().mean();
        const Eigen::MatrixXd Xc = X.colwise() - mx;
        const Eigen::MatrixXd Yc = Y.colwise() - my;
        const double var_x = Xc.squaredNorm() / static_cast<double>(J);

        Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
        double scale = 1.0;
        if (var_x > 1e-12) {
            const Eigen::Matrix3d cov = Yc * Xc.transpose() / static_cast<double>(J);
            Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
            Eigen::Vector3d s = Eigen::Vector3d::Ones();
            if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s(2) = -1.0;
            R = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
            if (!rigid_only) scale = svd.singularValues().dot(s) / var_x;
        }
        const Eigen::Vector3d tvec = my - scale * R * mx;

        double frame_sum = 0.0;
        for (std::size_t j = 0; j < J; ++j) {
            const Eigen::Vector3d aligned = scale * R * X.col(j) + tvec;
            frame_sum += (aligned - Y.col(j)).norm();
        }
        total += frame_sum / static_cast<double>(J);
    }
    return total / static_cast<double>(pred.frames);
}

std::pair<double, double> pck_auc(const PoseArray& pred, const PoseArray& gt, std::size_t root,
                                  double threshold_mm) {
    const auto errors = per_joint_errors(pred, gt, root);
    auto pck_at = [&](double thr) {
        std::size_t hits = 0;
        for (double e : errors)
            if (e < thr) ++hits;
        return 100.0 * static_cast<double>(hits) / static_cast<double>(errors.size());
    };
    const double pck = pck_at(threshold_mm);
    double auc = 0.0;
    const int steps = 31;  // thresholds 0, 5, ..., 150
    for (int i = 0; i < steps; ++i) auc += pck_at(threshold_mm * static_cast<double>(i) / (steps - 1));
    auc /= static_cast<double>(steps);
    return {pck, auc};
}

double acceleration_error(const PoseArray& pred, const PoseArray& gt) {
    check_match(pred, gt);
    if (pred.frames < 3) return 0.0;
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t t = 1; t + 1 < pred.frames; ++t)
        for (std::size_t j = 0; j < pred.joints; ++j) {
            double s = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double lp = pred.at(t - 1, j, c) - 2.0 * pred.at(t, j, c) + pred.at(t + 1, j, c);
                const double lg = gt.at(t - 1, j, c) - 2.0 * gt.at(t, j, c) + gt.at(t + 1, j, c);
                const double d = lg - lp;
                s += d * d;
            }
            sum += std::sqrt(s);
            ++count;
        }
    return sum / static_cast<double>(count);
}

MetricsReport aggregate_report(const std::vector<EvalPair>& pairs, std::size_t root, bool rigid_only) {
    if (pairs.empty()) throw std::runtime_error("metrics: cannot aggregate an empty pair list");
    MetricsReport report;
    const std::size_t J = pairs[0].gt.joints;
    report.per_joint_mm.assign(J, 0.0);

    double p1_sum = 0.0, p2_sum = 0.0, accel_sum = 0.0;
    std::size_t frame_total = 0, accel_total = 0;
    std::vector<double> all_errors;

    for (const auto& pair : pairs) {
        check_match(pair.pred, pair.gt);
        if (pair.gt.joints != J) throw std::runtime_error("metrics: joint count differs across pairs");
        const std::size_t T = pair.gt.frames;
        const auto errors = per_joint_errors(pair.pred, pair.gt, root);
        all_errors.insert(all_errors.end(), errors.begin(), errors.end());
        double seq_p1 = 0.0;
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < J; ++j) {
                seq_p1 += errors[t * J + j];
                report.per_joint_mm[j] += errors[t * J + j];
            }
        const double seq_p2 = p_mpjpe(pair.pred, pair.gt, rigid_only);
        p1_sum += seq_p1;  // summed per-frame-per-joint, frame weighting falls out
        p2_sum += seq_p2 * static_cast<double>(T);
        if (T >= 3) {
            accel_sum += acceleration_error(pair.pred, pair.gt) * static_cast<double>((T - 2) * J);
            accel_total += (T - 2) * J;
        }
        frame_total += T;

        auto& act = report.per_action[pair.action.empty() ? "all" : pair.action];
        act.p1_mm += seq_p1 / static_cast<double>(J);  // frame-summed, normalized at the end
        act.p2_mm += seq_p2 * static_cast<double>(T);
        act.frames += T;
    }

    report.mpjpe_mm = p1_sum / static_cast<double>(frame_total * J);
    report.p_mpjpe_mm = p2_sum / static_cast<double>(frame_total);
    for (auto& v : report.per_joint_mm) v /= static_cast<double>(frame_total);
    report.accel_err_mm = accel_total == 0 ? 0.0 : accel_sum / static_cast<double>(accel_total);
    for (auto& [label, act] : report.per_action) {
        act.p1_mm /= static_cast<double>(act.frames);
        act.p2_mm /= static_cast<double>(act.frames);
    }

    double pck_hits = 0.0, auc_acc = 0.0;
    for (int i = 0; i < 31; ++i) {
        const double thr = 150.0 * static_cast<double>(i) / 30.0;
        std::size_t hits = 0;
        for (double e : all_errors)
            if (e < thr) ++hits;
        const double pct = 100.0 * static_cast<double>(hits) / static_cast<double>(all_errors.size());
        auc_acc += pct;
        if (i == 30) pck_hits = pct;
    }
    report.pck_pct = pck_hits;
    report.auc_pct = auc_acc / 31.0;
    return report;
}

std::string report_to_json(const MetricsReport& report, const std::string& timestamp) {
    nlohmann::json j;
    j["mpjpe_mm"] = report.mpjpe_mm;
    j["p_mpjpe_mm"] = report.p_mpjpe_mm;
    j["pck_pct"] = report.pck_pct;
    j["auc_pct"] = report.auc_pct;
    j["accel_err_mm"] = report.accel_err_mm;
    j["per_joint_mm"] = report.per_joint_mm;
    nlohmann::json actions = nlohmann::json::object();
    for (const auto& [label, act] : report.per_action)
        actions[label] = {{"p1_mm", act.p1_mm}, {"p2_mm", act.p2_mm}, {"frames", act.frames}};
    j["per_action"] = std::move(actions);
    if (!timestamp.empty()) j["meta"] = {{"generated_at", timestamp}};
    return j.dump(2);
}

std::string report_to_csv(const MetricsReport& report) {
    std::ostringstream out;
    out << "section,label,p1_mm,p2_mm,frames\n";
    for (const auto& [label, act] : report.per_action)
        out << "action," << label << "," << act.p1_mm << "," << act.p2_mm << "," << act.frames << "\n";
    for (std::size_t j = 0; j < report.per_joint_mm.size(); ++j)
        out << "joint," << j << "," << report.per_joint_mm[j] << ",,\n";
    out << "overall,all," << report.mpjpe_mm << "," << report.p_mpjpe_mm << "," << "\n";
    return out.str();
}

}  // namespace agf
