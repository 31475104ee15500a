#pragma once

#include <string>
#include <vector>

#include "ldmlab/coefficient.hpp"
#include "ldmlab/grid.hpp"

namespace ldmlab {

struct Trajectory {
    TimeGrid grid;
    std::vector<Vec> states; // n_steps + 1 entries, states[0] == x0 exactly

    int dim() const { return states.empty() ? 0 : static_cast<int>(states.front().size()); }
    const Vec& at(int n) const { return states[static_cast<size_t>(n)]; }
    const Vec& back() const { return states.back(); }
};

// CSV: header "t,x_0,...,x_{d-1}", one row per grid point, 17 significant digits.
// Optional preamble lines are written first, each prefixed with "# ".
void write_trajectory_csv(const Trajectory& traj, const std::string& path,
                          const std::vector<std::string>& preamble = {});

} // namespace ldmlab
