#pragma once

#include <string>
#include <vector>

#include "ldmlab/sde.hpp"

namespace ldmlab {

// Fundamental matrix of the linearized system around a base trajectory:
//   dPhi = (dg/dx) Phi dt + sum_k (dg_k/dx) Phi dB^k,  Phi(0) = I.
// The inverse is co-propagated from its own Ito SDE
//   dPhi^-1 = Phi^-1 (-(dg/dx) + sum_k (dg_k/dx)^2) dt - sum_k Phi^-1 (dg_k/dx) dB^k,
// realized discretely through the one-step factor inverse so the product
// identity Phi^-1 Phi = I holds to roundoff; Phi itself is never inverted.
struct FundamentalMatrixPath {
    TimeGrid grid;
    std::vector<Mat> phi;
    std::vector<Mat> phi_inv;
};

FundamentalMatrixPath integrate_fundamental_matrix(const SdeSystem& sys,
                                                   const Trajectory& base,
                                                   const BrownianBundle& bundle);

// xi_t^k = int_0^t Phi_s^-1 sigma_bar_k(x_s^0, s) dB^k_s   (left-endpoint sums)
// xi_tilde_t = int_0^t Phi_s^-1 sigma(x_s^0, s) ds
struct XiProcessPath {
    TimeGrid grid;
    std::vector<std::vector<Vec>> xi; // [m][n+1]
    std::vector<Vec> xi_tilde;        // [n+1]
};

XiProcessPath integrate_xi(const SdeSystem& sys, const SystemPerturbation& pert,
                           const Trajectory& base, const FundamentalMatrixPath& phi,
                           const BrownianBundle& bundle);

enum class SensitivityKind { epsilon_perturbation, initial_value_perturbation };

// first[n] is [d x p]: column j = the j-th first-order sensitivity at grid point n
// (p = 1 for the epsilon kind, p = d for the initial-value kind).
// second[n] is [d x q]: column l = the l-th requested second-order process.
struct SensitivityBundle {
    Trajectory base;
    std::vector<Mat> first;
    std::vector<Mat> second;
    std::vector<std::pair<int, int>> second_pairs; // (i,j) per second column
    SensitivityKind kind = SensitivityKind::epsilon_perturbation;
};

// Variational SDEs for the error-scale perturbation (eta_0 = sigma, eta_k = sigma_bar_k):
//   d(d_eps x) = ((dg_k/dx) d_eps x + eta_k) dB^k,                      d_eps x(0) = 0
//   d(d2_eps x) = (Psi_k(d_eps x, x) + 2 (deta_k/dx) d_eps x
//                  + (dg_k/dx) d2_eps x) dB^k,                          d2_eps x(0) = 0
// with Psi_k(v, x) = v^i (d2 g_k/dx^i dx^j) v^j.
SensitivityBundle integrate_epsilon_sensitivities(const SdeSystem& sys,
                                                  const SystemPerturbation& pert,
                                                  const Trajectory& base,
                                                  const BrownianBundle& bundle);

// Initial-value sensitivities: d(d_i x) = (dg_k/dx) d_i x dB^k, d_i x(0) = e_i;
// second order d(d2_ij x) = ((dg_k/dx) d2_ij x + (d2 g_k/dx^2)(d_i x, d_j x)) dB^k.
// Default initial value for the second order is 0; `second_init_ej` selects the
// literal e_j convention instead.
SensitivityBundle integrate_initial_value_sensitivities(
    const SdeSystem& sys, const Trajectory& base, const BrownianBundle& bundle,
    const std::vector<std::pair<int, int>>& second_pairs = {}, bool second_init_ej = false);

// Evaluates the closed-form first-order solution
//   d_eps x_t = Phi_t [ int Phi_s^-1 (eta_0 - sum_k (dg_k/dx) eta_k) ds
//               + sum_k int Phi_s^-1 eta_k dB^k_s ]
// on the same grid and returns the max deviation from the directly
// integrated first-order sensitivity.
double solution_formula_check(const SdeSystem& sys, const SystemPerturbation& pert,
                              const Trajectory& base, const FundamentalMatrixPath& phi,
                              const XiProcessPath& xi, const BrownianBundle& bundle,
                              const SensitivityBundle& direct);

// CSV with base columns plus ".d1"/".d2" suffixed sensitivity columns.
void write_sensitivity_csv(const SensitivityBundle& bundle, const std::string& path,
                           const std::vector<std::string>& preamble = {});

} // namespace ldmlab
