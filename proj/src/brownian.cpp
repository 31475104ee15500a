#include "ldmlab/brownian.hpp"

#include <cmath>
#include <stdexcept>

#include "ldmlab/rng.hpp"

namespace ldmlab {

double BrownianBundle::total(int k) const {
    double s = 0.0;
    for (int n = 0; n < grid.n_steps; ++n) s += db(n, k);
    return s;
}

BrownianBundle BrownianBundle::coarsen() const {
    if (grid.n_steps % 2 != 0)
        throw std::invalid_argument("BrownianBundle::coarsen: n_steps must be even");
    BrownianBundle out;
    out.grid = TimeGrid(grid.t_end, grid.n_steps / 2);
    out.m = m;
    out.seed = seed;
    out.increments.resize(static_cast<size_t>(out.grid.n_steps) * m);
    for (int n = 0; n < out.grid.n_steps; ++n)
        for (int k = 0; k < m; ++k)
            out.increments[static_cast<size_t>(n) * m + k] = db(2 * n, k) + db(2 * n + 1, k);
    return out;
}

BrownianBundle generate_brownian_bundle(const TimeGrid& grid, int m, uint64_t seed) {
    if (m < 1) throw std::invalid_argument("generate_brownian_bundle: m must be >= 1");
    BrownianBundle b;
    b.grid = grid; // TimeGrid ctor has already rejected n_steps = 0 / non-finite T
    b.m = m;
    b.seed = seed;
    b.increments.resize(static_cast<size_t>(grid.n_steps) * m);
    const double sd = std::sqrt(grid.dt());
    for (int k = 0; k < m; ++k) {
        Rng rng(derive_seed(seed, static_cast<uint64_t>(k)));
        for (int n = 0; n < grid.n_steps; ++n)
            b.increments[static_cast<size_t>(n) * m + k] = sd * rng.normal();
    }
    return b;
}

BrownianBundle bundle_for_path(const TimeGrid& grid, int m, uint64_t master_seed, uint64_t path) {
    return generate_brownian_bundle(grid, m, derive_seed(master_seed, path));
}

} // namespace ldmlab
