#pragma once

#include <vector>

#include "ldmlab/brownian.hpp"
#include "ldmlab/coefficient.hpp"
#include "ldmlab/trajectory.hpp"

namespace ldmlab {

// dx = drift dt + sum_k diffusions[k] dB^k, Ito sense.
struct SdeSystem {
    CoefficientField drift;
    std::vector<CoefficientField> diffusions;

    int dim() const { return drift.dim_in; }
    int n_noise() const { return static_cast<int>(diffusions.size()); }
};

// Perturbation fields paired with an SdeSystem: drift error sigma and one
// diffusion error per noise component (zero fields where absent).
struct SystemPerturbation {
    CoefficientField sigma;                  // eta_0
    std::vector<CoefficientField> sigma_bar; // eta_k, k = 1..m

    static SystemPerturbation none(int dim, int m);
};

// System with drift g + eps*sigma and diffusions g_k + eps*sigma_bar_k.
SdeSystem apply_perturbation(const SdeSystem& sys, const SystemPerturbation& pert, double eps);

// Euler-Maruyama over the bundle's grid:
// x_{n+1} = x_n + drift(x_n,t_n) dt + sum_k diff_k(x_n,t_n) dB^k_n.
// Throws on dimension mismatch or non-finite state (message carries step index).
Trajectory euler_maruyama(const CoefficientField& drift,
                          const std::vector<CoefficientField>& diffusions,
                          const Vec& x0, const BrownianBundle& bundle);

Trajectory euler_maruyama(const SdeSystem& sys, const Vec& x0, const BrownianBundle& bundle);

} // namespace ldmlab
