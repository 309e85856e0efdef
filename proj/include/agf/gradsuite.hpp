#pragma once

// The full finite-difference verification suite: every primitive in the
// closed op set against central differences, module-level toys, and the
// whole toy model with every leaf perturbed. All checks run at f64.

#include <cstdint>
#include <string>
#include <vector>

namespace agf {

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

// One entry per primitive, 20 random inputs each, tolerance 1e-5.
std::vector<GradCheckResult> run_primitive_gradchecks(std::uint64_t seed);

// Graph-convolution layer, attention/metaformer stacks, block toys.
std::vector<GradCheckResult> run_module_gradchecks(std::uint64_t seed);

// Full model on blocks=2, dim=16, heads=2, frames=4, joints=5: every
// trainable parameter and the input, tolerance 1e-4. Coordinates are sharded
// across threads against per-thread model replicas.
GradCheckResult run_full_model_gradcheck(std::uint64_t seed, unsigned threads);

}  // namespace agf
