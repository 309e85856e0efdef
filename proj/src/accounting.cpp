#include "agf/accounting.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

namespace agf {

std::uint64_t count_params(const ModelConfig& cfg) {
    std::uint64_t n = 0;
    for (const auto& spec : enumerate_parameters(cfg))
        if (spec.trainable) n += numel_of(spec.shape);
    return n;
}

namespace {

std::uint64_t spec_params(const std::vector<ParamSpec>& specs, const std::string& prefix) {
    std::uint64_t n = 0;
    for (const auto& s : specs)
        if (s.trainable && s.path.rfind(prefix, 0) == 0) n += numel_of(s.shape);
    return n;
}

}  // namespace

CostReport count_macs(const ModelConfig& cfg) {
    cfg.validate();
    const std::uint64_t T = cfg.frames, J = cfg.joints, d = cfg.dim;
    const std::uint64_t tokens = T * J;
    const std::uint64_t alpha = cfg.mlp_ratio;
    const auto specs = enumerate_parameters(cfg);

    CostReport report;
    auto push = [&](const std::string& module, std::uint64_t params, std::uint64_t macs) {
        report.rows.push_back({module, params, macs});
        report.param_count += params;
        report.total_macs += macs;
    };

    push("embed", spec_params(specs, "embed") + spec_params(specs, "pe"), tokens * 3 * d);

    const std::uint64_t attn_mf = 3 * tokens * d * d    // per-head q/k/v projections
                                  + tokens * d * d      // output projection
                                  + 2 * alpha * tokens * d * d;  // mlp
    const std::uint64_t gcn_mf = 2 * tokens * d * d + 2 * alpha * tokens * d * d;
    const bool has_attn = cfg.composition != CompositionMode::gcn_only;
    const bool has_gcn = cfg.composition != CompositionMode::attn_only;
    const bool has_fuse = cfg.composition == CompositionMode::parallel;

    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        const std::string p = "block" + std::to_string(b);
        std::uint64_t macs = 0;
        if (has_attn) macs += 2 * attn_mf;  // spatial + temporal
        if (has_gcn) macs += 2 * gcn_mf;
        if (has_fuse) macs += tokens * 2 * d * 2;
        push(p, spec_params(specs, p + "."), macs);

        if (has_attn) report.aux_matmul_macs += 2 * T * J * J * d + 2 * J * T * T * d;
        if (has_gcn) report.aux_matmul_macs += T * J * J * d + 2 * J * T * T * d;  // adjacency + similarity
    }

    push("head", spec_params(specs, "head"), tokens * d * cfg.motion_dim + tokens * cfg.motion_dim * 3);

    report.macs_per_frame = report.total_macs / T;
    if (report.macs_per_frame * T != report.total_macs)
        throw std::runtime_error("accounting: total MACs not divisible by the frame count");
    return report;
}

std::string format_count(std::uint64_t value) {
    std::ostringstream out;
    auto emit = [&](double scaled, const char* unit) {
        const double rounded = std::round(scaled * 10.0) / 10.0;
        out << rounded << " " << unit;
    };
    if (value >= 1000000000ull)
        emit(static_cast<double>(value) / 1e9, "G");
    else if (value >= 1000000ull)
        emit(static_cast<double>(value) / 1e6, "M");
    else if (value >= 1000ull)
        emit(static_cast<double>(value) / 1e3, "K");
    else
        out << value;
    return out.str();
}

std::string cost_report_to_json(const CostReport& report, const ModelConfig& cfg) {
    nlohmann::json j;
    j["param_count"] = report.param_count;
    j["total_macs"] = report.total_macs;
    j["macs_per_frame"] = report.macs_per_frame;
    j["aux_matmul_macs"] = report.aux_matmul_macs;
    j["frames"] = cfg.frames;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows) rows.push_back({{"module", r.module}, {"params", r.params}, {"macs", r.macs}});
    j["breakdown"] = std::move(rows);
    return j.dump(2);
}

std::string cost_report_table(const CostReport& report, const ModelConfig& cfg) {
    std::ostringstream out;
    out << "module                    params          macs\n";
    for (const auto& r : report.rows) {
        out << r.module;
        for (std::size_t i = r.module.size(); i < 24; ++i) out << ' ';
        std::ostringstream p;
        p << r.params;
        out << p.str();
        for (std::size_t i = p.str().size(); i < 16; ++i) out << ' ';
        out << r.macs << "\n";
    }
    out << "\n";
    out << "params:         " << report.param_count << " (" << format_count(report.param_count) << ")\n";
    out << "macs:           " << report.total_macs << " (" << format_count(report.total_macs) << ") at T = "
        << cfg.frames << "\n";
    out << "macs per frame: " << report.macs_per_frame << " (" << format_count(report.macs_per_frame) << ")\n";
    out << "aux matmuls:    " << report.aux_matmul_macs << " (" << format_count(report.aux_matmul_macs)
        << ", attention and graph products, not in the headline count)\n";
    return out.str();
}

}  // namespace agf
