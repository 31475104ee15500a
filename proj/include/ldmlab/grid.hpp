#pragma once

#include <cmath>
#include <stdexcept>

namespace ldmlab {

// Uniform grid on [0, T]. grid point n is t(n) = n * dt, t(n_steps) = T.
struct TimeGrid {
    double t_end = 1.0;
    int n_steps = 1;

    TimeGrid() = default;
    TimeGrid(double T, int steps) : t_end(T), n_steps(steps) {
        if (!(std::isfinite(T) && T > 0.0))
            throw std::invalid_argument("TimeGrid: t_end must be finite and positive");
        if (steps < 1)
            throw std::invalid_argument("TimeGrid: n_steps must be >= 1");
    }

    double dt() const { return t_end / n_steps; }
    double t(int n) const { return n == n_steps ? t_end : n * dt(); }
    int n_points() const { return n_steps + 1; }

    bool operator==(const TimeGrid& o) const {
        return t_end == o.t_end && n_steps == o.n_steps;
    }
};

} // namespace ldmlab
