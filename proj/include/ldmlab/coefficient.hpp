#pragma once

#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace ldmlab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// A drift or diffusion coefficient with exact Jacobian and Hessian evaluators.
// hessian(x,t)[r] is the [dim_in x dim_in] Hessian of output component r.
struct CoefficientField {
    int dim_in = 0;
    int dim_out = 0;
    std::function<Vec(const Vec&, double)> eval;
    std::function<Mat(const Vec&, double)> jacobian;
    std::function<std::vector<Mat>(const Vec&, double)> hessian;

    bool valid() const { return static_cast<bool>(eval); }
};

// x-independent field (possibly time-varying).
CoefficientField constant_field(int dim_in, const Vec& value);
CoefficientField time_field(int dim_in, int dim_out, std::function<Vec(double)> fn);
CoefficientField zero_field(int dim_in, int dim_out);

// f(x,t) = A x + b
CoefficientField linear_field(const Mat& A, const Vec& b);
inline CoefficientField linear_field(const Mat& A) { return linear_field(A, Vec::Zero(A.rows())); }

// Scalar field from value/derivative callables f, f', f'' (each (x,t) -> double).
CoefficientField scalar_field(std::function<double(double, double)> f,
                              std::function<double(double, double)> fx,
                              std::function<double(double, double)> fxx);

// Central finite differences of eval; used to validate analytic derivatives.
Mat fd_jacobian(const CoefficientField& f, const Vec& x, double t, double step = 1e-5);
std::vector<Mat> fd_hessian(const CoefficientField& f, const Vec& x, double t, double step = 1e-4);

// Hessian contraction: out[r] = u^T hess[r] v.
Vec hessian_apply(const std::vector<Mat>& hess, const Vec& u, const Vec& v);

} // namespace ldmlab
