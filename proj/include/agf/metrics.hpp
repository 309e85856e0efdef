#pragma once

// Evaluation protocols: MPJPE (P1), Procrustes-MPJPE (P2), PCK at 150 mm,
// AUC over 0..150 mm thresholds, acceleration error, and report aggregation.
// All functions are pure; sequences are compared frame by frame in
// millimeters.

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "agf/data.hpp"

namespace agf {

// f64 pose buffer the metrics operate on. Stored sequences (f32) convert
// implicitly; model predictions and oracle constructions stay at full
// precision.
struct PoseArray {
    std::size_t frames = 0;
    std::size_t joints = 0;
    std::vector<double> values;  // row-major T*J*3

    PoseArray() = default;
    PoseArray(std::size_t t, std::size_t j) : frames(t), joints(j), values(t * j * 3, 0.0) {}
    PoseArray(const PoseSequence& s)
        : frames(s.frames), joints(s.joints), values(s.values.begin(), s.values.end()) {}

    double& at(std::size_t t, std::size_t j, std::size_t c) { return values[(t * joints + j) * 3 + c]; }
    double at(std::size_t t, std::size_t j, std::size_t c) const { return values[(t * joints + j) * 3 + c]; }
};

struct ActionMetrics {
    double p1_mm = 0.0;
    double p2_mm = 0.0;
    std::size_t frames = 0;
};

struct MetricsReport {
    double mpjpe_mm = 0.0;
    double p_mpjpe_mm = 0.0;
    double pck_pct = 0.0;
    double auc_pct = 0.0;
    double accel_err_mm = 0.0;
    std::vector<double> per_joint_mm;
    std::map<std::string, ActionMetrics> per_action;
};

// Mean per-joint position error after per-frame root centering.
double mpjpe(const PoseArray& pred, const PoseArray& gt, std::size_t root);

// Per-frame per-joint errors after root centering, row-major T x J.
std::vector<double> per_joint_errors(const PoseArray& pred, const PoseArray& gt, std::size_t root);

// MPJPE after the per-frame similarity transform (rotation + translation,
// plus scale unless rigid_only) minimizing squared error from pred to gt.
// Frames with no spread fall back to translation-only alignment.
double p_mpjpe(const PoseArray& pred, const PoseArray& gt, bool rigid_only = false);

// (PCK at 150 mm with strict <, AUC as the mean PCK over thresholds
// 0, 5, ..., 150)
std::pair<double, double> pck_auc(const PoseArray& pred, const PoseArray& gt, std::size_t root,
                                  double threshold_mm = 150.0);

// Mean norm of the difference of second temporal differences over interior
// frames; 0 when T < 3.
double acceleration_error(const PoseArray& pred, const PoseArray& gt);

struct EvalPair {
    PoseArray pred;
    PoseArray gt;
    std::string action;
};

// Frame-weighted aggregation over sequences; throws on empty input.
MetricsReport aggregate_report(const std::vector<EvalPair>& pairs, std::size_t root, bool rigid_only = false);

std::string report_to_json(const MetricsReport& report, const std::string& timestamp = "");
std::string report_to_csv(const MetricsReport& report);

}  // namespace agf
