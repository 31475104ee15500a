#include "ldmlab/registry.hpp"

#include <cmath>
#include <stdexcept>

namespace ldmlab {

namespace {

double param(const Params& p, const std::string& key, double def) {
    const auto it = p.find(key);
    return it == p.end() ? def : it->second;
}

CoefficientField scalar_const(double c) {
    return scalar_field([c](double, double) { return c; }, [](double, double) { return 0.0; },
                        [](double, double) { return 0.0; });
}

NamedSystem scalar_linear(const Params& p) {
    const double a = param(p, "a", -0.5);
    const double b = param(p, "b", 0.4);
    const double sigma = param(p, "sigma", 0.0);
    const double sigma_bar = param(p, "sigma_bar", 0.6);
    NamedSystem out;
    out.sys.drift = scalar_field([a](double x, double) { return a * x; },
                                 [a](double, double) { return a; },
                                 [](double, double) { return 0.0; });
    out.sys.diffusions = {scalar_const(b)};
    out.pert.sigma = scalar_const(sigma);
    out.pert.sigma_bar = {scalar_const(sigma_bar)};
    out.x0 = Vec::Constant(1, param(p, "x0", 0.8));
    return out;
}

NamedSystem scalar_drift(const Params& p) {
    const double a = param(p, "a", -0.3);
    NamedSystem out;
    out.sys.drift = scalar_field([a](double x, double) { return a * x; },
                                 [a](double, double) { return a; },
                                 [](double, double) { return 0.0; });
    out.sys.diffusions = {zero_field(1, 1)};
    out.pert.sigma = scalar_const(param(p, "sigma", 0.8));
    out.pert.sigma_bar = {scalar_const(param(p, "sigma_bar", 0.5))};
    out.x0 = Vec::Constant(1, param(p, "x0", 1.0));
    return out;
}

NamedSystem scalar_nonlinear(const Params& p) {
    const double a = param(p, "a", 0.8);
    const double b0 = param(p, "b0", 0.3);
    const double b1 = param(p, "b1", 0.15);
    const double s0 = param(p, "s0", 0.5);
    const double s1 = param(p, "s1", 0.4);
    NamedSystem out;
    out.sys.drift = scalar_field(
        [a](double x, double) { return a * std::tanh(x); },
        [a](double x, double) { const double T = std::tanh(x); return a * (1 - T * T); },
        [a](double x, double) { const double T = std::tanh(x); return -2 * a * T * (1 - T * T); });
    out.sys.diffusions = {scalar_field(
        [b0, b1](double x, double) { return b0 + b1 * std::tanh(x); },
        [b1](double x, double) { const double T = std::tanh(x); return b1 * (1 - T * T); },
        [b1](double x, double) { const double T = std::tanh(x); return -2 * b1 * T * (1 - T * T); })};
    out.pert.sigma = scalar_field([s0](double x, double) { return s0 * std::cos(x); },
                                  [s0](double x, double) { return -s0 * std::sin(x); },
                                  [s0](double x, double) { return -s0 * std::cos(x); });
    out.pert.sigma_bar = {scalar_field(
        [s1](double x, double) { return s1 / (1 + x * x); },
        [s1](double x, double) { const double u = 1 / (1 + x * x); return -2 * s1 * x * u * u; },
        [s1](double x, double) {
            const double u = 1 / (1 + x * x);
            return s1 * (6 * x * x - 2) * u * u * u;
        })};
    out.x0 = Vec::Constant(1, param(p, "x0", 0.5));
    return out;
}

NamedSystem gbm(const Params& p) {
    const double mu = param(p, "mu", 0.05);
    const double s = param(p, "s", 0.2);
    NamedSystem out;
    out.sys.drift = scalar_field([mu](double x, double) { return mu * x; },
                                 [mu](double, double) { return mu; },
                                 [](double, double) { return 0.0; });
    out.sys.diffusions = {scalar_field([s](double x, double) { return s * x; },
                                       [s](double, double) { return s; },
                                       [](double, double) { return 0.0; })};
    out.pert = SystemPerturbation::none(1, 1);
    out.x0 = Vec::Constant(1, param(p, "x0", 1.0));
    return out;
}

} // namespace

NamedSystem make_sde_system(const std::string& name, const Params& params) {
    if (name == "scalar_linear") return scalar_linear(params);
    if (name == "scalar_drift") return scalar_drift(params);
    if (name == "scalar_nonlinear") return scalar_nonlinear(params);
    if (name == "gbm") return gbm(params);
    throw std::invalid_argument("registry: unknown system '" + name + "'");
}

bool registry_has_system(const std::string& name) {
    return name == "scalar_linear" || name == "scalar_drift" || name == "scalar_nonlinear" ||
           name == "gbm";
}

LossField make_loss(const std::string& name, int dim) {
    if (name == "quartic") return quartic_loss();
    if (name == "quadratic") return quadratic_loss(Mat::Identity(dim, dim));
    if (name == "linear") return linear_loss(Vec::Ones(dim));
    throw std::invalid_argument("registry: unknown loss '" + name + "'");
}

namespace {

NamedRollout lq_rollout(const Params& p) {
    const double a_h = param(p, "a_h", -0.7);
    const double a_z = param(p, "a_z", -0.3);
    const double b = param(p, "b", 0.4);
    const double p_h = param(p, "p_h", 0.25);
    const double pbar = param(p, "pbar", 0.12);
    const double w_h = param(p, "w_h", 0.3);
    const double w_z = param(p, "w_z", -0.2);

    NamedRollout out;
    // f(h,z,a) = a_h h + a_z z + b a over the stacked (h,z,a) input
    Mat F(1, 3);
    F << a_h, a_z, b;
    out.sys.f = linear_field(F);
    out.sys.p = linear_field(Mat::Constant(1, 1, p_h));
    out.sys.p_bar = constant_field(1, Vec::Constant(1, pbar));

    QValue q;
    q.dim_h = q.dim_z = q.dim_a = 1;
    // Q = -1/2 (a - w_h h - w_z z)^2 - 1/2 h^2 - 1/2 z^2
    q.eval = [w_h, w_z](const Vec& u) {
        const double r = u[2] - w_h * u[0] - w_z * u[1];
        return -0.5 * r * r - 0.5 * u[0] * u[0] - 0.5 * u[1] * u[1];
    };
    q.gradient = [w_h, w_z](const Vec& u) -> Vec {
        const double r = u[2] - w_h * u[0] - w_z * u[1];
        Vec g(3);
        g[0] = r * w_h - u[0];
        g[1] = r * w_z - u[1];
        g[2] = -r;
        return g;
    };
    q.hessian = [w_h, w_z](const Vec&) -> Mat {
        Mat H(3, 3);
        H << -w_h * w_h - 1, -w_h * w_z, w_h,
             -w_h * w_z, -w_z * w_z - 1, w_z,
             w_h, w_z, -1;
        return H;
    };
    q.third = [](const Vec&) { return std::vector<Mat>(3, Mat::Zero(3, 3)); };
    out.sys.q = q;
    out.h0 = Vec::Constant(1, param(p, "h0", 0.5));
    out.z0 = Vec::Constant(1, param(p, "z0", 0.4));
    return out;
}

NamedRollout nl_rollout(const Params& p) {
    const double c_h = 0.5, c_z = -0.4, c_a = 0.7;
    const double f_lin = -0.5, f_amp = 0.8;
    NamedRollout out;

    CoefficientField f;
    f.dim_in = 3;
    f.dim_out = 1;
    f.eval = [=](const Vec& u, double) {
        return Vec::Constant(1, f_lin * u[0] + f_amp * std::tanh(c_h * u[0] + c_z * u[1] + c_a * u[2]));
    };
    f.jacobian = [=](const Vec& u, double) -> Mat {
        const double T = std::tanh(c_h * u[0] + c_z * u[1] + c_a * u[2]);
        const double d = f_amp * (1 - T * T);
        Mat J(1, 3);
        J << f_lin + d * c_h, d * c_z, d * c_a;
        return J;
    };
    f.hessian = [=](const Vec& u, double) {
        const double T = std::tanh(c_h * u[0] + c_z * u[1] + c_a * u[2]);
        const double d2 = -2.0 * f_amp * T * (1 - T * T);
        Vec c(3);
        c << c_h, c_z, c_a;
        return std::vector<Mat>{d2 * (c * c.transpose())};
    };
    out.sys.f = f;

    out.sys.p = scalar_field(
        [](double h, double) { return 0.3 * std::tanh(h); },
        [](double h, double) { const double T = std::tanh(h); return 0.3 * (1 - T * T); },
        [](double h, double) { const double T = std::tanh(h); return -0.6 * T * (1 - T * T); });
    out.sys.p_bar = scalar_field(
        [](double h, double) { return 0.15 + 0.1 * std::tanh(h); },
        [](double h, double) { const double T = std::tanh(h); return 0.1 * (1 - T * T); },
        [](double h, double) { const double T = std::tanh(h); return -0.2 * T * (1 - T * T); });

    // Q = -1/2 a^2 (1 + 0.3 tanh h) + a (0.4 h + 0.5 z) - 1/2 h^2 - 1/2 z^2
    QValue q;
    q.dim_h = q.dim_z = q.dim_a = 1;
    q.eval = [](const Vec& u) {
        const double T = std::tanh(u[0]);
        return -0.5 * u[2] * u[2] * (1 + 0.3 * T) + u[2] * (0.4 * u[0] + 0.5 * u[1]) -
               0.5 * u[0] * u[0] - 0.5 * u[1] * u[1];
    };
    q.gradient = [](const Vec& u) -> Vec {
        const double T = std::tanh(u[0]);
        const double dT = 1 - T * T;
        Vec g(3);
        g[0] = -0.15 * u[2] * u[2] * dT + 0.4 * u[2] - u[0];
        g[1] = 0.5 * u[2] - u[1];
        g[2] = -u[2] * (1 + 0.3 * T) + 0.4 * u[0] + 0.5 * u[1];
        return g;
    };
    q.hessian = [](const Vec& u) -> Mat {
        const double T = std::tanh(u[0]);
        const double dT = 1 - T * T;
        const double ddT = -2 * T * dT;
        Mat H(3, 3);
        H(0, 0) = -0.15 * u[2] * u[2] * ddT - 1;
        H(0, 1) = 0; H(1, 0) = 0;
        H(0, 2) = -0.3 * u[2] * dT + 0.4; H(2, 0) = H(0, 2);
        H(1, 1) = -1;
        H(1, 2) = 0.5; H(2, 1) = 0.5;
        H(2, 2) = -(1 + 0.3 * T);
        return H;
    };
    q.third = [](const Vec& u) {
        const double T = std::tanh(u[0]);
        const double dT = 1 - T * T;
        const double ddT = -2 * T * dT;           // (tanh)''
        const double dddT = (6 * T * T - 2) * dT; // (tanh)'''
        std::vector<Mat> t(3, Mat::Zero(3, 3));
        // Q_hhh, Q_hha(=Q_ahh), Q_haa(=Q_aah)
        const double q_hhh = -0.15 * u[2] * u[2] * dddT;
        const double q_ahh = -0.3 * u[2] * ddT;
        const double q_aah = -0.3 * dT;
        t[0](0, 0) = q_hhh;
        t[0](0, 2) = q_ahh; t[0](2, 0) = q_ahh;
        t[0](2, 2) = q_aah;
        t[2](0, 0) = q_ahh;
        t[2](0, 2) = q_aah; t[2](2, 0) = q_aah;
        return t;
    };
    out.sys.q = q;
    out.h0 = Vec::Constant(1, param(p, "h0", 0.3));
    out.z0 = Vec::Constant(1, param(p, "z0", 0.2));
    return out;
}

} // namespace

NamedRollout make_rollout_system(const std::string& name, const Params& params) {
    if (name == "lq_rollout") return lq_rollout(params);
    if (name == "nl_rollout") return nl_rollout(params);
    throw std::invalid_argument("registry: unknown rollout system '" + name + "'");
}

} // namespace ldmlab
