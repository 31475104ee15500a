#include "ldmlab/coefficient.hpp"

namespace ldmlab {

CoefficientField constant_field(int dim_in, const Vec& value) {
    CoefficientField f;
    f.dim_in = dim_in;
    f.dim_out = static_cast<int>(value.size());
    const int d_out = f.dim_out;
    f.eval = [value](const Vec&, double) { return value; };
    f.jacobian = [dim_in, d_out](const Vec&, double) { return Mat::Zero(d_out, dim_in); };
    f.hessian = [dim_in, d_out](const Vec&, double) {
        return std::vector<Mat>(d_out, Mat::Zero(dim_in, dim_in));
    };
    return f;
}

CoefficientField time_field(int dim_in, int dim_out, std::function<Vec(double)> fn) {
    CoefficientField f;
    f.dim_in = dim_in;
    f.dim_out = dim_out;
    f.eval = [fn](const Vec&, double t) { return fn(t); };
    f.jacobian = [dim_in, dim_out](const Vec&, double) { return Mat::Zero(dim_out, dim_in); };
    f.hessian = [dim_in, dim_out](const Vec&, double) {
        return std::vector<Mat>(dim_out, Mat::Zero(dim_in, dim_in));
    };
    return f;
}

CoefficientField zero_field(int dim_in, int dim_out) {
    return constant_field(dim_in, Vec::Zero(dim_out));
}

CoefficientField linear_field(const Mat& A, const Vec& b) {
    CoefficientField f;
    f.dim_in = static_cast<int>(A.cols());
    f.dim_out = static_cast<int>(A.rows());
    f.eval = [A, b](const Vec& x, double) -> Vec { return A * x + b; };
    f.jacobian = [A](const Vec&, double) { return A; };
    const int di = f.dim_in, d_out = f.dim_out;
    f.hessian = [di, d_out](const Vec&, double) {
        return std::vector<Mat>(d_out, Mat::Zero(di, di));
    };
    return f;
}

CoefficientField scalar_field(std::function<double(double, double)> f,
                              std::function<double(double, double)> fx,
                              std::function<double(double, double)> fxx) {
    CoefficientField c;
    c.dim_in = 1;
    c.dim_out = 1;
    c.eval = [f](const Vec& x, double t) { return Vec::Constant(1, f(x[0], t)); };
    c.jacobian = [fx](const Vec& x, double t) { return Mat::Constant(1, 1, fx(x[0], t)); };
    c.hessian = [fxx](const Vec& x, double t) {
        return std::vector<Mat>{Mat::Constant(1, 1, fxx(x[0], t))};
    };
    return c;
}

Mat fd_jacobian(const CoefficientField& f, const Vec& x, double t, double step) {
    Mat J(f.dim_out, f.dim_in);
    Vec xp = x, xm = x;
    for (int j = 0; j < f.dim_in; ++j) {
        xp[j] = x[j] + step;
        xm[j] = x[j] - step;
        J.col(j) = (f.eval(xp, t) - f.eval(xm, t)) / (2.0 * step);
        xp[j] = x[j];
        xm[j] = x[j];
    }
    return J;
}

std::vector<Mat> fd_hessian(const CoefficientField& f, const Vec& x, double t, double step) {
    std::vector<Mat> H(f.dim_out, Mat::Zero(f.dim_in, f.dim_in));
    const Vec f0 = f.eval(x, t);
    Vec xa = x;
    for (int i = 0; i < f.dim_in; ++i) {
        for (int j = i; j < f.dim_in; ++j) {
            Vec fpp, fpm, fmp, fmm;
            if (i == j) {
                xa[i] = x[i] + step;
                const Vec fp = f.eval(xa, t);
                xa[i] = x[i] - step;
                const Vec fm = f.eval(xa, t);
                xa[i] = x[i];
                const Vec d2 = (fp - 2.0 * f0 + fm) / (step * step);
                for (int r = 0; r < f.dim_out; ++r) H[r](i, i) = d2[r];
            } else {
                xa[i] = x[i] + step; xa[j] = x[j] + step; fpp = f.eval(xa, t);
                xa[j] = x[j] - step; fpm = f.eval(xa, t);
                xa[i] = x[i] - step; fmm = f.eval(xa, t);
                xa[j] = x[j] + step; fmp = f.eval(xa, t);
                xa[i] = x[i]; xa[j] = x[j];
                const Vec d2 = (fpp - fpm - fmp + fmm) / (4.0 * step * step);
                for (int r = 0; r < f.dim_out; ++r) {
                    H[r](i, j) = d2[r];
                    H[r](j, i) = d2[r];
                }
            }
        }
    }
    return H;
}

Vec hessian_apply(const std::vector<Mat>& hess, const Vec& u, const Vec& v) {
    Vec out(static_cast<int>(hess.size()));
    for (size_t r = 0; r < hess.size(); ++r) out[static_cast<int>(r)] = u.dot(hess[r] * v);
    return out;
}

} // namespace ldmlab
