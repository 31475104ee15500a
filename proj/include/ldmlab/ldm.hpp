#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "ldmlab/sde.hpp"

namespace ldmlab {

// Encoder perturbation: drift error sigma and diffusion error sigma_bar, both
// over the encoder inputs (h, s). Expands to (sigma, 0, 0, 0) on the stacked state.
struct PerturbationSpec {
    CoefficientField sigma_drift; // (h,s) -> dim_z
    CoefficientField sigma_diff;  // (h,s) -> dim_z
    double epsilon = 0.0;
};

// Four-component latent dynamics system. Block coefficient fields are given
// over their natural inputs; the sequence fields take (h, z) with the policy
// already composed in (their derivatives must include the policy chain rule
// when the policy depends on state).
struct LdmSystem {
    CoefficientField enc_drift, enc_diff;   // (h, s) -> dim_z
    CoefficientField seq_drift, seq_diff;   // (h, z) -> dim_h
    CoefficientField pred_drift, pred_diff; // (h)    -> dim_zt
    CoefficientField dec_drift, dec_diff;   // (h, zt) -> dim_st

    std::function<Vec(const Vec&, const Vec&)> policy; // (h, z) -> action, reference only
    std::function<Vec(double)> obs_path;               // t -> s_t, exogenous adapted input

    int dim_z = 0, dim_h = 0, dim_zt = 0, dim_st = 0, dim_s = 0;

    int dim() const { return dim_z + dim_h + dim_zt + dim_st; }
    int off_z() const { return 0; }
    int off_h() const { return dim_z; }
    int off_zt() const { return dim_z + dim_h; }
    int off_st() const { return dim_z + dim_h + dim_zt; }

    // Stacked system with noise components ordered (enc, seq, pred, dec).
    SdeSystem assemble() const;
    SystemPerturbation assemble_perturbation(const PerturbationSpec& pert) const;
};

// Embed a block field into the stacked state space: the block input is the
// concatenation of state slices (offset, length) plus an optional exogenous
// tail exo(t); the output scatters at out_offset. Derivatives chain through
// the (linear) gather, so exogenous inputs contribute none.
CoefficientField embed_block(const CoefficientField& f, int dim_state, int out_offset,
                             std::vector<std::pair<int, int>> in_slices,
                             std::function<Vec(double)> exo = nullptr, int exo_len = 0);

Trajectory integrate_ldm(const LdmSystem& system, const PerturbationSpec& pert,
                         const Vec& x0, const BrownianBundle& bundle);

// Prop.-style conditional moments for the encoder block along frozen inputs:
// mean_t = int q_enc(h_s, s_s) ds, var_t = int q_enc_bar(h_s, s_s)^2 ds
// (elementwise), by trapezoidal quadrature on the grid.
struct MomentPaths {
    TimeGrid grid;
    std::vector<Vec> mean;
    std::vector<Vec> variance;
};

MomentPaths conditional_gaussian_moments(const CoefficientField& q_enc,
                                         const CoefficientField& q_enc_bar,
                                         const std::vector<Vec>& h_path,
                                         const std::vector<Vec>& s_path,
                                         const TimeGrid& grid);

} // namespace ldmlab
