#pragma once

#include <cstdint>
#include <vector>

#include "ldmlab/grid.hpp"

namespace ldmlab {

// Discretized driving noise: n_steps x m increments, column k drawn from an
// independent seed stream, each increment ~ N(0, dt).
struct BrownianBundle {
    TimeGrid grid;
    int m = 0;
    uint64_t seed = 0;
    std::vector<double> increments; // row-major [n][k]

    double db(int n, int k) const { return increments[static_cast<size_t>(n) * m + k]; }

    // Sum of a component's increments = B_T for that component.
    double total(int k) const;

    // Merge adjacent increment pairs onto a grid with half the steps.
    BrownianBundle coarsen() const;
};

BrownianBundle generate_brownian_bundle(const TimeGrid& grid, int m, uint64_t seed);

// Bundle for ensemble member `path` under a master seed; pure in its arguments.
BrownianBundle bundle_for_path(const TimeGrid& grid, int m, uint64_t master_seed, uint64_t path);

} // namespace ldmlab
