#pragma once

#include <string>
#include <vector>

#include "ldmlab/coefficient.hpp"
#include "ldmlab/rng.hpp"

namespace ldmlab::toy {

using ldmlab::Vec;

// Observation-side perturbations; the internal state is never touched.
struct ObsPerturbation {
    double noise_mean = 0.0, noise_std = 0.0; // full-vector Gaussian
    double rotation = 0.0;                    // rotate obs coords (0,1)
    double mask_frac = 0.0;                   // fraction of coords hit by masked noise
    double mask_noise_mean = 0.0, mask_noise_std = 0.0;
};

// Deterministic low-dimensional control environments. `pendulum` is an
// inverted pendulum stabilized near the top; `point_mass` is a linear
// spring-damper cart (exactly linear in state and action).
struct ToyEnv {
    enum class Kind { pendulum, point_mass };
    Kind kind = Kind::pendulum;
    double gravity = 9.8;
    int horizon = 100;
    double dt = 0.05;

    int state_dim() const;
    int obs_dim() const;
    std::vector<double> action_set() const;

    Vec reset(Rng& rng) const;
    Vec step(const Vec& state, double action) const;
    Vec observe_clean(const Vec& state) const;
    Vec observe(const Vec& state, const ObsPerturbation& pert, Rng& rng) const;

    double reward(const Vec& state, double action) const;
    // Same functional form on an observation vector; used as the planning
    // score on decoded states.
    double reward_from_obs(const Vec& obs, double action) const;

    static Kind kind_from_string(const std::string& s);
};

} // namespace ldmlab::toy
