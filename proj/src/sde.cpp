#include "ldmlab/sde.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ldmlab {

SystemPerturbation SystemPerturbation::none(int dim, int m) {
    SystemPerturbation p;
    p.sigma = zero_field(dim, dim);
    p.sigma_bar.assign(static_cast<size_t>(m), zero_field(dim, dim));
    return p;
}

namespace {

CoefficientField add_scaled(const CoefficientField& a, const CoefficientField& b, double eps) {
    if (a.dim_in != b.dim_in || a.dim_out != b.dim_out)
        throw std::invalid_argument("apply_perturbation: field dimension mismatch");
    CoefficientField f;
    f.dim_in = a.dim_in;
    f.dim_out = a.dim_out;
    f.eval = [a, b, eps](const Vec& x, double t) -> Vec { return a.eval(x, t) + eps * b.eval(x, t); };
    f.jacobian = [a, b, eps](const Vec& x, double t) -> Mat {
        return a.jacobian(x, t) + eps * b.jacobian(x, t);
    };
    f.hessian = [a, b, eps](const Vec& x, double t) {
        auto ha = a.hessian(x, t);
        const auto hb = b.hessian(x, t);
        for (size_t r = 0; r < ha.size(); ++r) ha[r] += eps * hb[r];
        return ha;
    };
    return f;
}

} // namespace

SdeSystem apply_perturbation(const SdeSystem& sys, const SystemPerturbation& pert, double eps) {
    if (pert.sigma_bar.size() != sys.diffusions.size())
        throw std::invalid_argument("apply_perturbation: sigma_bar count mismatch");
    SdeSystem out;
    out.drift = add_scaled(sys.drift, pert.sigma, eps);
    out.diffusions.reserve(sys.diffusions.size());
    for (size_t k = 0; k < sys.diffusions.size(); ++k)
        out.diffusions.push_back(add_scaled(sys.diffusions[k], pert.sigma_bar[k], eps));
    return out;
}

Trajectory euler_maruyama(const CoefficientField& drift,
                          const std::vector<CoefficientField>& diffusions,
                          const Vec& x0, const BrownianBundle& bundle) {
    const int d = static_cast<int>(x0.size());
    if (drift.dim_in != d || drift.dim_out != d)
        throw std::invalid_argument("euler_maruyama: drift dimension mismatch");
    if (static_cast<int>(diffusions.size()) != bundle.m)
        throw std::invalid_argument("euler_maruyama: diffusion count != bundle components");
    for (const auto& g : diffusions)
        if (g.dim_in != d || g.dim_out != d)
            throw std::invalid_argument("euler_maruyama: diffusion dimension mismatch");

    Trajectory traj;
    traj.grid = bundle.grid;
    traj.states.reserve(static_cast<size_t>(bundle.grid.n_points()));
    traj.states.push_back(x0);

    const double dt = bundle.grid.dt();
    Vec x = x0;
    for (int n = 0; n < bundle.grid.n_steps; ++n) {
        const double t = bundle.grid.t(n);
        Vec next = x + dt * drift.eval(x, t);
        for (int k = 0; k < bundle.m; ++k)
            next += bundle.db(n, k) * diffusions[static_cast<size_t>(k)].eval(x, t);
        if (!next.allFinite())
            throw std::runtime_error("euler_maruyama: non-finite state at step " +
                                     std::to_string(n + 1));
        x = next;
        traj.states.push_back(x);
    }
    return traj;
}

Trajectory euler_maruyama(const SdeSystem& sys, const Vec& x0, const BrownianBundle& bundle) {
    return euler_maruyama(sys.drift, sys.diffusions, x0, bundle);
}

} // namespace ldmlab
