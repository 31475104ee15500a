#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ldmlab/sensitivity.hpp"

namespace ldmlab {

struct LossField {
    std::function<double(const Vec&)> eval;
    std::function<Vec(const Vec&)> gradient;
    std::function<Mat(const Vec&)> hessian;
};

LossField quadratic_loss(const Mat& W);       // L(x) = x^T W x
LossField quartic_loss();                     // L(x) = sum_i x_i^4
LossField linear_loss(const Vec& w);          // L(x) = w . x

struct EstimatorOptions {
    bool half_s_tilde = false; // apply 1/2 to S~ (Theorem-1-symmetric variant)
    int workers = 1;
};

// Monte Carlo estimates of the Theorem-1 regularization terms and the
// Corollary-1 bias terms at horizon time t (a grid point).
struct RegularizationReport {
    double P = 0, Q = 0, S = 0;
    double P_tilde = 0, Q_tilde = 0, S_tilde = 0;
    double se_P = 0, se_Q = 0, se_S = 0;
    double se_P_tilde = 0, se_Q_tilde = 0, se_S_tilde = 0;
    double R = 0, R_tilde = 0;
    double epsilon = 0;
    long n_paths = 0;
    uint64_t seed = 0;
    bool half_s_tilde = false;

    // R = eps P + eps^2 (Q + S/2); R~ = eps P~ + eps^2 (Q~ + c S~), c = 1 or 1/2.
    void assemble();
    std::string to_json() const;
};

RegularizationReport estimate_regularizer(const SdeSystem& sys, const SystemPerturbation& pert,
                                          const LossField& loss, const TimeGrid& grid,
                                          const Vec& x0, double epsilon, long n_paths,
                                          uint64_t seed, const EstimatorOptions& opts = {});

struct ResidualRow {
    double epsilon = 0;
    double residual = 0;
    double stderr_ = 0;
};

struct ResidualScan {
    std::vector<ResidualRow> rows;
    double slope = 0;          // log-log fit over positive-epsilon rows
    bool include_bias = false;
    bool half_s_tilde = false;
};

// Coupled-ensemble Taylor residual:
// residual(eps) = |E L(x^eps_T) - E L(x^0_T) - R(eps) [- R~(eps)]| with the
// same Brownian bundle driving x^eps and x^0 on every path (common random
// numbers; the O(eps) and O(eps^2) parts cancel pathwise).
ResidualScan taylor_residual_scan(const SdeSystem& sys, const SystemPerturbation& pert,
                                  const LossField& loss, const TimeGrid& grid, const Vec& x0,
                                  const std::vector<double>& epsilon_grid, long n_paths,
                                  uint64_t seed, bool include_bias,
                                  const EstimatorOptions& opts = {});

void write_residual_csv(const ResidualScan& scan, const std::string& path,
                        const std::vector<std::string>& preamble = {});

// Eq.-13-style fundamental matrix bound:
//   E sup_t |Phi_t|_F^2 <= sum_k C exp(C E sup_t |dg_k/dx(x_t^0,t)|_F^2).
// `calibrate` solves for C at equality; `check` evaluates both sides for a
// supplied C.
struct BoundCheckResult {
    double lhs = 0;                 // empirical E sup |Phi|_F^2
    double lhs_se = 0;
    double rhs = 0;                 // bound at the supplied/calibrated C
    double C = 0;
    bool holds = false;
    std::vector<double> jac_sup;    // E sup |dg_k/dx|_F^2, k = 0..m
};

BoundCheckResult fundamental_matrix_bound_check(const SdeSystem& sys, const TimeGrid& grid,
                                                const Vec& x0, long n_paths, uint64_t seed,
                                                double C = -1.0 /* <0: calibrate */,
                                                int workers = 1);

double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

} // namespace ldmlab
