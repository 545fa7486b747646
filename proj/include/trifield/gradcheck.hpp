#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace trifield::gradcheck {

struct ModuleResult {
    std::string name;
    double max_rel_err = 0.0;
    int instances = 0;
};

/// Adjoint checks available to run: hash2d, hash3d, triplane, mlp, attention,
/// head_mlp, torso, pose, compositor.
std::vector<std::string> module_names();

/// Compares every analytic gradient against central finite differences over
/// `instances` random instances per module. Instances are resampled when they
/// land near a derivative kink (relu zero, interpolation lattice plane,
/// density clamp, deformation window), so the differences measure smooth
/// segments only. module == "all" runs everything.
std::vector<ModuleResult> run(const std::string& module, std::uint64_t seed, int instances = 100);

}  // namespace trifield::gradcheck
