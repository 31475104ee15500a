#include "ldmlab/sensitivity.hpp"

#include <cstdio>
#include <stdexcept>
#include <string>

namespace ldmlab {

namespace {

void check_alignment(const SdeSystem& sys, const Trajectory& base, const BrownianBundle& bundle) {
    if (!(base.grid == bundle.grid))
        throw std::invalid_argument("sensitivity: base trajectory and bundle grids differ");
    if (sys.n_noise() != bundle.m)
        throw std::invalid_argument("sensitivity: system noise count != bundle components");
    if (sys.dim() != base.dim())
        throw std::invalid_argument("sensitivity: system/state dimension mismatch");
}

} // namespace

FundamentalMatrixPath integrate_fundamental_matrix(const SdeSystem& sys,
                                                   const Trajectory& base,
                                                   const BrownianBundle& bundle) {
    check_alignment(sys, base, bundle);
    const int d = sys.dim();
    const int m = sys.n_noise();
    const double dt = bundle.grid.dt();

    FundamentalMatrixPath out;
    out.grid = bundle.grid;
    out.phi.reserve(static_cast<size_t>(bundle.grid.n_points()));
    out.phi_inv.reserve(static_cast<size_t>(bundle.grid.n_points()));
    Mat phi = Mat::Identity(d, d);
    Mat phi_inv = Mat::Identity(d, d);
    out.phi.push_back(phi);
    out.phi_inv.push_back(phi_inv);

    for (int n = 0; n < bundle.grid.n_steps; ++n) {
        const double t = bundle.grid.t(n);
        const Vec& x = base.at(n);
        const Mat A0 = sys.drift.jacobian(x, t);

        // One-step factor M = I + A0 dt + sum_k A_k dB^k. Phi^-1 advances by
        // the factor inverse, the discrete realization of
        // dPhi^-1 = Phi^-1(-A0 + sum_k A_k^2) dt - sum_k Phi^-1 A_k dB^k
        // (M^-1 = I - A0 dt - sum A_k dB + (sum A_k dB)^2 + h.o.t.), which
        // keeps Phi^-1 Phi = I to roundoff instead of O(dt), with only the
        // well-conditioned near-identity factor ever inverted.
        Mat M = Mat::Identity(d, d) + A0 * dt;
        for (int k = 0; k < m; ++k)
            M += bundle.db(n, k) * sys.diffusions[static_cast<size_t>(k)].jacobian(x, t);
        phi = M * phi;
        phi_inv = phi_inv * M.partialPivLu().inverse();
        if (!phi.allFinite() || !phi_inv.allFinite())
            throw std::runtime_error("integrate_fundamental_matrix: non-finite at step " +
                                     std::to_string(n + 1));
        // Frobenius-product proxy for the condition number.
        const double cond = phi.norm() * phi_inv.norm();
        if (cond > 1e12)
            throw std::runtime_error("integrate_fundamental_matrix: singular Phi at step " +
                                     std::to_string(n + 1));
        out.phi.push_back(phi);
        out.phi_inv.push_back(phi_inv);
    }
    return out;
}

XiProcessPath integrate_xi(const SdeSystem& sys, const SystemPerturbation& pert,
                           const Trajectory& base, const FundamentalMatrixPath& phi,
                           const BrownianBundle& bundle) {
    check_alignment(sys, base, bundle);
    if (!(phi.grid == bundle.grid))
        throw std::invalid_argument("integrate_xi: phi/bundle grid mismatch");
    const int d = sys.dim();
    const int m = sys.n_noise();
    if (static_cast<int>(pert.sigma_bar.size()) != m)
        throw std::invalid_argument("integrate_xi: perturbation diffusion count mismatch");
    const double dt = bundle.grid.dt();

    XiProcessPath out;
    out.grid = bundle.grid;
    out.xi.assign(static_cast<size_t>(m), std::vector<Vec>{});
    for (auto& col : out.xi) {
        col.reserve(static_cast<size_t>(bundle.grid.n_points()));
        col.push_back(Vec::Zero(d));
    }
    out.xi_tilde.reserve(static_cast<size_t>(bundle.grid.n_points()));
    out.xi_tilde.push_back(Vec::Zero(d));

    std::vector<Vec> acc(static_cast<size_t>(m), Vec::Zero(d));
    Vec acc_tilde = Vec::Zero(d);
    for (int n = 0; n < bundle.grid.n_steps; ++n) {
        const double t = bundle.grid.t(n);
        const Vec& x = base.at(n);
        const Mat& inv = phi.phi_inv[static_cast<size_t>(n)];
        for (int k = 0; k < m; ++k) {
            acc[static_cast<size_t>(k)] +=
                bundle.db(n, k) * (inv * pert.sigma_bar[static_cast<size_t>(k)].eval(x, t));
            out.xi[static_cast<size_t>(k)].push_back(acc[static_cast<size_t>(k)]);
        }
        acc_tilde += dt * (inv * pert.sigma.eval(x, t));
        out.xi_tilde.push_back(acc_tilde);
    }
    return out;
}

SensitivityBundle integrate_epsilon_sensitivities(const SdeSystem& sys,
                                                  const SystemPerturbation& pert,
                                                  const Trajectory& base,
                                                  const BrownianBundle& bundle) {
    check_alignment(sys, base, bundle);
    const int d = sys.dim();
    const int m = sys.n_noise();
    const double dt = bundle.grid.dt();

    SensitivityBundle out;
    out.base = base;
    out.kind = SensitivityKind::epsilon_perturbation;
    out.second_pairs = {{0, 0}};
    out.first.reserve(static_cast<size_t>(bundle.grid.n_points()));
    out.second.reserve(static_cast<size_t>(bundle.grid.n_points()));

    Vec v1 = Vec::Zero(d); // d_eps x
    Vec v2 = Vec::Zero(d); // d2_eps x
    out.first.push_back(v1);
    out.second.push_back(v2);

    for (int n = 0; n < bundle.grid.n_steps; ++n) {
        const double t = bundle.grid.t(n);
        const Vec& x = base.at(n);

        // k = 0 slot (dB^0 = dt): g_0 = drift, eta_0 = sigma.
        const Mat A0 = sys.drift.jacobian(x, t);
        const auto H0 = sys.drift.hessian(x, t);
        const Mat E0 = pert.sigma.jacobian(x, t);
        Vec d1 = dt * (A0 * v1 + pert.sigma.eval(x, t));
        Vec d2 = dt * (hessian_apply(H0, v1, v1) + 2.0 * (E0 * v1) + A0 * v2);

        for (int k = 0; k < m; ++k) {
            const auto& gk = sys.diffusions[static_cast<size_t>(k)];
            const auto& ek = pert.sigma_bar[static_cast<size_t>(k)];
            const double db = bundle.db(n, k);
            const Mat Ak = gk.jacobian(x, t);
            const auto Hk = gk.hessian(x, t);
            const Mat Ek = ek.jacobian(x, t);
            d1 += db * (Ak * v1 + ek.eval(x, t));
            d2 += db * (hessian_apply(Hk, v1, v1) + 2.0 * (Ek * v1) + Ak * v2);
        }
        v1 += d1;
        v2 += d2;
        if (!v1.allFinite() || !v2.allFinite())
            throw std::runtime_error("integrate_epsilon_sensitivities: non-finite at step " +
                                     std::to_string(n + 1));
        out.first.push_back(v1);
        out.second.push_back(v2);
    }
    return out;
}

SensitivityBundle integrate_initial_value_sensitivities(
    const SdeSystem& sys, const Trajectory& base, const BrownianBundle& bundle,
    const std::vector<std::pair<int, int>>& second_pairs, bool second_init_ej) {
    check_alignment(sys, base, bundle);
    const int d = sys.dim();
    const int m = sys.n_noise();
    const double dt = bundle.grid.dt();
    const int q = static_cast<int>(second_pairs.size());

    SensitivityBundle out;
    out.base = base;
    out.kind = SensitivityKind::initial_value_perturbation;
    out.second_pairs = second_pairs;

    Mat V1 = Mat::Identity(d, d); // column i = d_i x
    Mat V2 = Mat::Zero(d, q);     // column l = d2_{ij} x for second_pairs[l]
    if (second_init_ej)
        for (int l = 0; l < q; ++l) V2.col(l) = Vec::Unit(d, second_pairs[static_cast<size_t>(l)].second);

    out.first.push_back(V1);
    out.second.push_back(V2);

    for (int n = 0; n < bundle.grid.n_steps; ++n) {
        const double t = bundle.grid.t(n);
        const Vec& x = base.at(n);
        const Mat A0 = sys.drift.jacobian(x, t);
        const auto H0 = sys.drift.hessian(x, t);

        Mat D1 = dt * (A0 * V1);
        Mat D2 = Mat::Zero(d, q);
        if (q > 0) {
            D2 = dt * (A0 * V2);
            for (int l = 0; l < q; ++l)
                D2.col(l) += dt * hessian_apply(H0, V1.col(second_pairs[static_cast<size_t>(l)].first),
                                                V1.col(second_pairs[static_cast<size_t>(l)].second));
        }
        for (int k = 0; k < m; ++k) {
            const auto& gk = sys.diffusions[static_cast<size_t>(k)];
            const double db = bundle.db(n, k);
            const Mat Ak = gk.jacobian(x, t);
            D1 += db * (Ak * V1);
            if (q > 0) {
                const auto Hk = gk.hessian(x, t);
                D2 += db * (Ak * V2);
                for (int l = 0; l < q; ++l)
                    D2.col(l) += db * hessian_apply(Hk, V1.col(second_pairs[static_cast<size_t>(l)].first),
                                                    V1.col(second_pairs[static_cast<size_t>(l)].second));
            }
        }
        V1 += D1;
        V2 += D2;
        if (!V1.allFinite() || (q > 0 && !V2.allFinite()))
            throw std::runtime_error("integrate_initial_value_sensitivities: non-finite at step " +
                                     std::to_string(n + 1));
        out.first.push_back(V1);
        out.second.push_back(V2);
    }
    return out;
}

double solution_formula_check(const SdeSystem& sys, const SystemPerturbation& pert,
                              const Trajectory& base, const FundamentalMatrixPath& phi,
                              const XiProcessPath& xi, const BrownianBundle& bundle,
                              const SensitivityBundle& direct) {
    check_alignment(sys, base, bundle);
    if (direct.kind != SensitivityKind::epsilon_perturbation)
        throw std::invalid_argument("solution_formula_check: needs epsilon-kind sensitivities");
    const int d = sys.dim();
    const int m = sys.n_noise();
    const double dt = bundle.grid.dt();

    // Lebesgue part of (sol-a): int Phi^-1 (eta_0 - sum_k (dg_k/dx) eta_k) ds,
    // accumulated left-endpoint. The dB parts are exactly the xi^k processes.
    Vec acc = Vec::Zero(d);
    double max_dev = 0.0;
    for (int n = 0; n <= bundle.grid.n_steps; ++n) {
        if (n > 0) {
            const int p = n - 1;
            const double t = bundle.grid.t(p);
            const Vec& x = base.at(p);
            Vec integrand = pert.sigma.eval(x, t);
            for (int k = 0; k < m; ++k)
                integrand -= sys.diffusions[static_cast<size_t>(k)].jacobian(x, t) *
                             pert.sigma_bar[static_cast<size_t>(k)].eval(x, t);
            acc += dt * (phi.phi_inv[static_cast<size_t>(p)] * integrand);
        }
        Vec inner = acc;
        for (int k = 0; k < m; ++k) inner += xi.xi[static_cast<size_t>(k)][static_cast<size_t>(n)];
        const Vec formula = phi.phi[static_cast<size_t>(n)] * inner;
        const double dev = (formula - direct.first[static_cast<size_t>(n)].col(0)).lpNorm<Eigen::Infinity>();
        if (dev > max_dev) max_dev = dev;
    }
    return max_dev;
}

void write_sensitivity_csv(const SensitivityBundle& bundle, const std::string& path,
                           const std::vector<std::string>& preamble) {
    std::FILE* fp = std::fopen(path.c_str(), "w");
    if (!fp) throw std::runtime_error("write_sensitivity_csv: cannot open " + path);
    for (const auto& line : preamble) std::fprintf(fp, "# %s\n", line.c_str());
    const int d = bundle.base.dim();
    const int p = static_cast<int>(bundle.first.front().cols());
    const int q = static_cast<int>(bundle.second.front().cols());
    std::fprintf(fp, "t");
    for (int j = 0; j < d; ++j) std::fprintf(fp, ",x_%d", j);
    for (int c = 0; c < p; ++c)
        for (int j = 0; j < d; ++j) std::fprintf(fp, ",x_%d.d1_%d", j, c);
    for (int c = 0; c < q; ++c)
        for (int j = 0; j < d; ++j) std::fprintf(fp, ",x_%d.d2_%d", j, c);
    std::fprintf(fp, "\n");
    for (int n = 0; n < bundle.base.grid.n_points(); ++n) {
        std::fprintf(fp, "%.17g", bundle.base.grid.t(n));
        for (int j = 0; j < d; ++j) std::fprintf(fp, ",%.17g", bundle.base.states[n][j]);
        for (int c = 0; c < p; ++c)
            for (int j = 0; j < d; ++j)
                std::fprintf(fp, ",%.17g", bundle.first[static_cast<size_t>(n)](j, c));
        for (int c = 0; c < q; ++c)
            for (int j = 0; j < d; ++j)
                std::fprintf(fp, ",%.17g", bundle.second[static_cast<size_t>(n)](j, c));
        std::fprintf(fp, "\n");
    }
    std::fclose(fp);
}

} // namespace ldmlab
