#include "ldmlab/toy/env.hpp"

#include <cmath>
#include <stdexcept>

namespace ldmlab::toy {

int ToyEnv::state_dim() const { return 2; }

int ToyEnv::obs_dim() const { return kind == Kind::pendulum ? 3 : 2; }

std::vector<double> ToyEnv::action_set() const {
    if (kind == Kind::pendulum) return {-8.0, -4.0, 0.0, 4.0, 8.0};
    return {-2.0, -1.0, 0.0, 1.0, 2.0};
}

Vec ToyEnv::reset(Rng& rng) const {
    Vec s(2);
    if (kind == Kind::pendulum) {
        s[0] = rng.uniform(-0.25, 0.25); // angle from upright
        s[1] = rng.uniform(-0.3, 0.3);
    } else {
        s[0] = rng.uniform(-1.0, 1.0);
        s[1] = rng.uniform(-1.0, 1.0);
    }
    return s;
}

Vec ToyEnv::step(const Vec& state, double action) const {
    Vec s = state;
    if (kind == Kind::pendulum) {
        // inverted pendulum: theta measured from the upright equilibrium
        const double theta = s[0], omega = s[1];
        const double domega = gravity * std::sin(theta) + action - 0.5 * omega;
        s[1] = omega + dt * domega;
        s[0] = theta + dt * s[1];
    } else {
        // spring-damper with gravity-scaled stiffness; exactly linear
        const double x = s[0], v = s[1];
        s[1] = v + dt * (action - 0.1 * gravity * x - 0.2 * v);
        s[0] = x + dt * s[1];
    }
    return s;
}

Vec ToyEnv::observe_clean(const Vec& state) const {
    if (kind == Kind::pendulum) {
        Vec o(3);
        o[0] = std::cos(state[0]);
        o[1] = std::sin(state[0]);
        o[2] = 0.5 * state[1];
        return o;
    }
    return state;
}

Vec ToyEnv::observe(const Vec& state, const ObsPerturbation& pert, Rng& rng) const {
    Vec o = observe_clean(state);
    if (pert.rotation != 0.0 && o.size() >= 2) {
        const double c = std::cos(pert.rotation), s = std::sin(pert.rotation);
        const double o0 = o[0], o1 = o[1];
        o[0] = c * o0 - s * o1;
        o[1] = s * o0 + c * o1;
    }
    if (pert.noise_std > 0.0 || pert.noise_mean != 0.0)
        for (int i = 0; i < o.size(); ++i) o[i] += pert.noise_mean + pert.noise_std * rng.normal();
    if (pert.mask_frac > 0.0) {
        const int n_hit = static_cast<int>(std::ceil(pert.mask_frac * o.size()));
        std::vector<int> idx(static_cast<size_t>(o.size()));
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
        for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_int(static_cast<int>(i))]);
        for (int j = 0; j < n_hit; ++j)
            o[idx[static_cast<size_t>(j)]] += pert.mask_noise_mean + pert.mask_noise_std * rng.normal();
    }
    return o;
}

double ToyEnv::reward(const Vec& state, double action) const {
    return reward_from_obs(observe_clean(state), action);
}

double ToyEnv::reward_from_obs(const Vec& obs, double action) const {
    if (kind == Kind::pendulum) {
        // composite error sin(theta) + omega/2 targets the approach manifold
        // omega = -2 sin(theta), which one-step lookahead can steer
        const double c = obs[1] + obs[2];
        return obs[0] - c * c - 0.0001 * action * action;
    }
    return 1.0 - obs[0] * obs[0] - 0.1 * obs[1] * obs[1] - 0.0001 * action * action;
}

ToyEnv::Kind ToyEnv::kind_from_string(const std::string& s) {
    if (s == "pendulum") return Kind::pendulum;
    if (s == "point_mass") return Kind::point_mass;
    throw std::invalid_argument("ToyEnv: unknown kind '" + s + "'");
}

} // namespace ldmlab::toy
