#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "ldmlab/sde.hpp"

namespace ldmlab {

// Action-value function over stacked input (h, z, a). Derivatives are over the
// stacked coordinate vector; third derivatives are only needed when
// second-order policy derivatives or Hessian catalog terms are requested.
struct QValue {
    int dim_h = 0, dim_z = 0, dim_a = 0;
    std::function<double(const Vec&)> eval;            // (h,z,a) stacked
    std::function<Vec(const Vec&)> gradient;           // d/d(h,z,a)
    std::function<Mat(const Vec&)> hessian;            // full stacked Hessian
    std::function<std::vector<Mat>(const Vec&)> third; // third[i](j,k) = d3 Q / dxi dxj dxk

    int dim() const { return dim_h + dim_z + dim_a; }
    int off_h() const { return 0; }
    int off_z() const { return dim_h; }
    int off_a() const { return dim_h + dim_z; }
    Vec stack(const Vec& h, const Vec& z, const Vec& a) const;
};

// Inference-phase system per the rollout SDEs: dh = f(h, z, a) dt with
// a = rho(h, z) the local maximizer of q, dz = p(h) dt + p_bar(h) dB.
struct RolloutSystem {
    CoefficientField f;     // (h,z,a) stacked -> dim_h
    CoefficientField p;     // (h) -> dim_z
    CoefficientField p_bar; // (h) -> dim_z
    QValue q;

    int dim_h() const { return q.dim_h; }
    int dim_z() const { return q.dim_z; }
    int dim_a() const { return q.dim_a; }
    int dim() const { return dim_h() + dim_z(); }
};

struct PolicySolveOptions {
    double tol = 1e-10; // on |dQ/da|
    int max_iter = 50;
};

// Damped Newton ascent on a. Throws if d2Q/da2 fails to be negative definite
// at the solution or the iteration does not converge.
Vec solve_policy(const QValue& q, const Vec& h, const Vec& z, const Vec& warm_start,
                 const PolicySolveOptions& opts = {});

struct PolicyDerivatives {
    Vec rho;        // action
    Mat d_h;        // [dim_a x dim_h]
    Mat d_z;        // [dim_a x dim_z]
    // dd_xy[alpha](p, q) = d2 rho_alpha / d x_p d y_q; present iff q.third given.
    std::vector<Mat> dd_hh, dd_hz, dd_zh, dd_zz;
    bool has_second = false;
};

// Implicit-function-theorem derivatives of the argmax policy:
// d_h rho = -(d2Q/da2)^-1 (d2Q/da dh), and second order by differentiating
// the first-order condition dQ/da(h, z, rho(h,z)) = 0 once more.
PolicyDerivatives policy_derivatives(const QValue& q, const Vec& h, const Vec& z,
                                     bool with_second = false,
                                     const PolicySolveOptions& opts = {});

// Euler-Maruyama rollout over the stacked (h, z) state; eps is added to z0.
// The bundle carries one component (the predictor noise).
Trajectory rollout(const RolloutSystem& sys, const Vec& h0, const Vec& z0, const Vec& eps,
                   const BrownianBundle& bundle, const PolicySolveOptions& opts = {});

// Closed-loop stacked SdeSystem with the policy folded into the drift; its
// Jacobian/Hessian carry the policy chain-rule terms (second-order terms need
// q.third). Used by the sensitivity machinery for Corollary-2 checks.
SdeSystem closed_loop_system(const RolloutSystem& sys, const PolicySolveOptions& opts = {});

} // namespace ldmlab
