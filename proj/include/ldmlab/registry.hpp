#pragma once

#include <map>
#include <string>

#include "ldmlab/reg_analysis.hpp"
#include "ldmlab/rollout.hpp"
#include "ldmlab/sde.hpp"

namespace ldmlab {

// Built-in test systems addressable by name; user extension is by adding
// registry entries. Parameters override the per-system defaults.
struct NamedSystem {
    SdeSystem sys;
    SystemPerturbation pert;
    Vec x0;
};

using Params = std::map<std::string, double>;

// Names: scalar_linear (OU: dx = a x dt + b dB, constant sigma/sigma_bar),
// scalar_drift (deterministic base dx = a x dt, constant sigma/sigma_bar),
// scalar_nonlinear (tanh drift, state-dependent diffusion and perturbation),
// gbm (dx = mu x dt + s x dB).
NamedSystem make_sde_system(const std::string& name, const Params& params = {});

// Losses: quartic, quadratic (identity W), linear (all-ones w).
LossField make_loss(const std::string& name, int dim);

struct NamedRollout {
    RolloutSystem sys;
    Vec h0, z0;
};

// Names: lq_rollout (linear dynamics, quadratic value, contraction),
// nl_rollout (tanh dynamics, nonquadratic value with analytic thirds).
NamedRollout make_rollout_system(const std::string& name, const Params& params = {});

bool registry_has_system(const std::string& name);

} // namespace ldmlab
