#pragma once

// Central finite-difference verification of reverse-mode gradients.
// The check is the independent route: it never consults the tape other than
// to obtain the analytic gradient it is auditing.

#include <functional>
#include <string>
#include <vector>

#include "agf/tensor.hpp"

namespace agf {

struct FdLeafReport {
    std::string name;
    double max_rel_err = 0.0;
};

struct FdReport {
    double max_rel_err = 0.0;
    std::vector<FdLeafReport> per_leaf;
};

// Relative error with a unit floor, so that near-zero gradients are compared
// absolutely (a finite-difference residual of 1e-11 against an analytic 0
// must not count as a 100% error).
inline double fd_rel_err(double analytic, double numeric) {
    const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    return std::abs(analytic - numeric) / denom;
}

// fn evaluates a scalar from the current contents of `leaves` (captured by
// the caller by reference). Every leaf must be f64 and requires_grad.
// Throws if fn is non-deterministic (two evaluations disagree bitwise).
inline FdReport finite_diff_check(const std::function<Tensor<double>()>& fn,
                                  std::vector<std::pair<std::string, Tensor<double>*>> leaves,
                                  double eps = 1e-5) {
    for (auto& [name, leaf] : leaves) {
        if (!leaf->requires_grad())
            throw std::runtime_error("finite_diff_check: leaf '" + name + "' does not require grad");
    }

    auto eval = [&]() -> double {
        Tensor<double> v = fn();
        if (v.numel() != 1) throw std::runtime_error("finite_diff_check: fn must be scalar-valued");
        return v.item();
    };

    const double probe1 = eval();
    const double probe2 = eval();
    if (probe1 != probe2)
        throw std::runtime_error("finite_diff_check: fn is non-deterministic (" + std::to_string(probe1) +
                                 " vs " + std::to_string(probe2) + ")");

    // Analytic gradients.
    std::vector<std::vector<double>> analytic;
    {
        Tape<double> tape;
        TapeGuard<double> guard(tape);
        Tensor<double> loss = fn();
        backward(loss);
        for (auto& [name, leaf] : leaves) analytic.push_back(leaf->grad());
    }

    FdReport report;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& data = leaves[li].second->mutable_data();
        FdLeafReport lr;
        lr.name = leaves[li].first;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double keep = data[i];
            data[i] = keep + eps;
            const double fp = eval();
            data[i] = keep - eps;
            const double fm = eval();
            data[i] = keep;
            const double numeric = (fp - fm) / (2.0 * eps);
            lr.max_rel_err = std::max(lr.max_rel_err, fd_rel_err(analytic[li][i], numeric));
        }
        report.max_rel_err = std::max(report.max_rel_err, lr.max_rel_err);
        report.per_leaf.push_back(std::move(lr));
    }
    return report;
}

// Convenience overload for a single unnamed point.
inline FdReport finite_diff_check(const std::function<Tensor<double>()>& fn, Tensor<double>& point,
                                  double eps = 1e-5) {
    return finite_diff_check(fn, {{"point", &point}}, eps);
}

}  // namespace agf
