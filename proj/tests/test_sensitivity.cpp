#include <cmath>

#include "doctest.h"
#include "ldmlab/parallel.hpp"
#include "ldmlab/reg_analysis.hpp"
#include "ldmlab/registry.hpp"
#include "ldmlab/sensitivity.hpp"

using namespace ldmlab;

namespace {

// Test-only oracle: matrix exponential by scaled Taylor series + squaring.
Mat matexp(const Mat& A) {
    const int d = static_cast<int>(A.rows());
    int squarings = 0;
    Mat As = A;
    while (As.norm() > 0.5) {
        As *= 0.5;
        ++squarings;
    }
    Mat term = Mat::Identity(d, d);
    Mat sum = term;
    for (int k = 1; k <= 20; ++k) {
        term = (term * As) / static_cast<double>(k);
        sum += term;
    }
    for (int i = 0; i < squarings; ++i) sum = sum * sum;
    return sum;
}

SdeSystem constant_matrix_system(const Mat& A0, const std::vector<Mat>& Aks) {
    SdeSystem sys;
    sys.drift = linear_field(A0);
    for (const auto& Ak : Aks) sys.diffusions.push_back(linear_field(Ak));
    return sys;
}

} // namespace

TEST_CASE("fundamental matrix basics") {
    SUBCASE("zero Jacobians give the identity at every grid point") {
        SdeSystem sys;
        sys.drift = constant_field(2, Vec::Constant(2, 0.4));
        sys.diffusions = {constant_field(2, Vec::Constant(2, 0.3))};
        const auto bundle = generate_brownian_bundle(TimeGrid(1.0, 50), 1, 3);
        const auto base = euler_maruyama(sys, Vec::Zero(2), bundle);
        const auto phi = integrate_fundamental_matrix(sys, base, bundle);
        for (const auto& p : phi.phi) CHECK((p - Mat::Identity(2, 2)).norm() == 0.0);
        for (const auto& p : phi.phi_inv) CHECK((p - Mat::Identity(2, 2)).norm() == 0.0);
    }

    SUBCASE("inverse identity holds within 1e-6 on stochastic systems") {
        for (const auto* name : {"gbm", "scalar_nonlinear", "scalar_linear"}) {
            const auto named = make_sde_system(name);
            const auto bundle = generate_brownian_bundle(TimeGrid(1.0, 512), 1, 9);
            const auto base = euler_maruyama(named.sys, named.x0, bundle);
            const auto phi = integrate_fundamental_matrix(named.sys, base, bundle);
            for (int n = 0; n <= bundle.grid.n_steps; ++n) {
                const Mat id = phi.phi_inv[static_cast<size_t>(n)] * phi.phi[static_cast<size_t>(n)];
                CHECK((id - Mat::Identity(1, 1)).norm() < 1e-6);
            }
        }
    }

    SUBCASE("scalar explicit exponential agreement at O(dt^1/2)") {
        // dPhi = mu Phi dt + s Phi dB; the explicit solution on the same bundle
        // is exp(mu t + s B_t - s^2 t / 2) with B_t from the increment sums.
        const auto named = make_sde_system("gbm");
        const double mu = 0.05, s = 0.2;
        std::vector<double> dts, errs;
        const int fine_steps = 1 << 11;
        for (int lv = 0; lv < 4; ++lv) {
            MeanAccumulator acc;
            for (long i = 0; i < 300; ++i) {
                BrownianBundle b = bundle_for_path(TimeGrid(1.0, fine_steps), 1, 41,
                                                   static_cast<uint64_t>(i));
                for (int c = 0; c < lv; ++c) b = b.coarsen();
                const auto base = euler_maruyama(named.sys, named.x0, b);
                const auto phi = integrate_fundamental_matrix(named.sys, base, b);
                double bsum = 0.0, max_err = 0.0;
                for (int n = 1; n <= b.grid.n_steps; ++n) {
                    bsum += b.db(n - 1, 0);
                    const double t = b.grid.t(n);
                    const double exact = std::exp(mu * t + s * bsum - 0.5 * s * s * t);
                    max_err = std::max(max_err,
                                       std::abs(phi.phi[static_cast<size_t>(n)](0, 0) - exact));
                }
                acc.add(max_err);
            }
            dts.push_back(std::pow(2.0, lv) / fine_steps);
            errs.push_back(acc.mean());
        }
        const double slope = fit_loglog_slope(dts, errs);
        CHECK(slope > 0.35);
        CHECK(slope < 0.75);
    }

    SUBCASE("drift-only system matches the matrix exponential at O(dt)") {
        Mat A(2, 2);
        A << -0.4, 0.9, -0.3, 0.2;
        const auto sys = constant_matrix_system(A, {Mat::Zero(2, 2)});
        std::vector<double> dts, errs;
        for (int lv = 0; lv < 4; ++lv) {
            const int steps = 64 << lv;
            const auto bundle = generate_brownian_bundle(TimeGrid(1.0, steps), 1, 13);
            const auto base = euler_maruyama(sys, Vec::Ones(2), bundle);
            const auto phi = integrate_fundamental_matrix(sys, base, bundle);
            dts.push_back(1.0 / steps);
            errs.push_back((phi.phi.back() - matexp(A)).norm());
        }
        const double slope = fit_loglog_slope(dts, errs);
        CHECK(slope > 0.8);
        CHECK(slope < 1.2);
        CHECK(errs.back() < 1e-2);
    }

    SUBCASE("singular fundamental matrix aborts with a step index") {
        Mat A(2, 2);
        A << 30.0, 0.0, 0.0, -30.0;
        const auto sys = constant_matrix_system(A, {Mat::Zero(2, 2)});
        const auto bundle = generate_brownian_bundle(TimeGrid(1.0, 200), 1, 1);
        const auto base = euler_maruyama(sys, Vec::Constant(2, 0.01), bundle);
        try {
            integrate_fundamental_matrix(sys, base, bundle);
            CHECK(false);
        } catch (const std::runtime_error& e) {
            const std::string msg = e.what();
            CHECK(msg.find("singular") != std::string::npos);
            CHECK(msg.find("step") != std::string::npos);
        }
    }
}

TEST_CASE("xi processes") {
    SUBCASE("zero integrands give identically zero processes") {
        const auto named = make_sde_system("scalar_nonlinear");
        SystemPerturbation pert = SystemPerturbation::none(1, 1);
        const auto bundle = generate_brownian_bundle(TimeGrid(1.0, 128), 1, 5);
        const auto base = euler_maruyama(named.sys, named.x0, bundle);
        const auto phi = integrate_fundamental_matrix(named.sys, base, bundle);
        const auto xi = integrate_xi(named.sys, pert, base, phi, bundle);
        for (const auto& v : xi.xi[0]) CHECK(v.norm() == 0.0);
        for (const auto& v : xi.xi_tilde) CHECK(v.norm() == 0.0);
    }

    SUBCASE("constant sigma with identity Phi accumulates c * t exactly") {
        SdeSystem sys;
        sys.drift = constant_field(1, Vec::Constant(1, 0.2));
        sys.diffusions = {constant_field(1, Vec::Constant(1, 0.1))};
        SystemPerturbation pert;
        pert.sigma = constant_field(1, Vec::Constant(1, 0.7));
        pert.sigma_bar = {zero_field(1, 1)};
        const TimeGrid grid(2.0, 400);
        const auto bundle = generate_brownian_bundle(grid, 1, 8);
        const auto base = euler_maruyama(sys, Vec::Zero(1), bundle);
        const auto phi = integrate_fundamental_matrix(sys, base, bundle);
        const auto xi = integrate_xi(sys, pert, base, phi, bundle);
        CHECK(xi.xi_tilde.back()[0] == doctest::Approx(0.7 * 2.0).epsilon(1e-12));
    }

    SUBCASE("Ito isometry: Var(xi_T) = c^2 T for constant sigma_bar") {
        SdeSystem sys;
        sys.drift = constant_field(1, Vec::Constant(1, 0.0));
        sys.diffusions = {constant_field(1, Vec::Constant(1, 0.3))};
        SystemPerturbation pert;
        pert.sigma = zero_field(1, 1);
        const double c = 0.8;
        pert.sigma_bar = {constant_field(1, Vec::Constant(1, c))};
        const TimeGrid grid(1.5, 64);
        MeanAccumulator sq;
        const long n = 100000;
        for (long i = 0; i < n; ++i) {
            const auto b = bundle_for_path(grid, 1, 77, static_cast<uint64_t>(i));
            const auto base = euler_maruyama(sys, Vec::Zero(1), b);
            const auto phi = integrate_fundamental_matrix(sys, base, b);
            const auto xi = integrate_xi(sys, pert, base, phi, b);
            sq.add(xi.xi[0].back()[0] * xi.xi[0].back()[0]);
        }
        CHECK(std::abs(sq.mean() - c * c * 1.5) < 5.0 * sq.stderr_());
    }
}

TEST_CASE("epsilon sensitivities") {
    SUBCASE("no forcing means both orders vanish identically") {
        const auto named = make_sde_system("scalar_nonlinear");
        const auto pert = SystemPerturbation::none(1, 1);
        const auto bundle = generate_brownian_bundle(TimeGrid(1.0, 100), 1, 3);
        const auto base = euler_maruyama(named.sys, named.x0, bundle);
        const auto sens = integrate_epsilon_sensitivities(named.sys, pert, base, bundle);
        for (const auto& m : sens.first) CHECK(m.norm() == 0.0);
        for (const auto& m : sens.second) CHECK(m.norm() == 0.0);
    }

    SUBCASE("initial values are zero") {
        const auto named = make_sde_system("scalar_nonlinear");
        const auto bundle = generate_brownian_bundle(TimeGrid(1.0, 16), 1, 3);
        const auto base = euler_maruyama(named.sys, named.x0, bundle);
        const auto sens = integrate_epsilon_sensitivities(named.sys, named.pert, base, bundle);
        CHECK(sens.first.front().norm() == 0.0);
        CHECK(sens.second.front().norm() == 0.0);
    }

    SUBCASE("common-noise finite difference slope >= 0.9 on the nonlinear system") {
        const auto named = make_sde_system("scalar_nonlinear");
        const TimeGrid grid(1.0, 256);
        const std::vector<double> eps_grid{1e-1, 1e-2, 1e-3, 1e-4};
        std::vector<double> errs(eps_grid.size(), 0.0);
        const long n_paths = 40;
        for (long i = 0; i < n_paths; ++i) {
            const auto b = bundle_for_path(grid, 1, 99, static_cast<uint64_t>(i));
            const auto base = euler_maruyama(named.sys, named.x0, b);
            const auto sens = integrate_epsilon_sensitivities(named.sys, named.pert, base, b);
            for (size_t k = 0; k < eps_grid.size(); ++k) {
                const double eps = eps_grid[k];
                const auto pert_traj =
                    euler_maruyama(apply_perturbation(named.sys, named.pert, eps), named.x0, b);
                const double fd = (pert_traj.back()[0] - base.back()[0]) / eps;
                errs[k] += std::abs(fd - sens.first.back()(0, 0)) / n_paths;
            }
        }
        const double slope = fit_loglog_slope(eps_grid, errs);
        CHECK(slope >= 0.9);
    }

    SUBCASE("linear system with constant forcing has zero second order") {
        const auto named = make_sde_system("scalar_linear"); // constant sigma/sigma_bar
        const auto bundle = generate_brownian_bundle(TimeGrid(1.0, 64), 1, 21);
        const auto base = euler_maruyama(named.sys, named.x0, bundle);
        const auto sens = integrate_epsilon_sensitivities(named.sys, named.pert, base, bundle);
        for (const auto& m : sens.second) CHECK(m.norm() == 0.0);
    }
}

TEST_CASE("initial-value sensitivities") {
    SUBCASE("first-order initial condition is the unit basis") {
        const auto named = make_sde_system("scalar_nonlinear");
        const auto bundle = generate_brownian_bundle(TimeGrid(1.0, 8), 1, 3);
        const auto base = euler_maruyama(named.sys, named.x0, bundle);
        const auto sens = integrate_initial_value_sensitivities(named.sys, base, bundle, {{0, 0}});
        CHECK(sens.first.front()(0, 0) == 1.0);
        CHECK(sens.second.front()(0, 0) == 0.0);
    }

    SUBCASE("e_j initialization flag is honored") {
        const auto named = make_sde_system("scalar_nonlinear");
        const auto bundle = generate_brownian_bundle(TimeGrid(1.0, 8), 1, 3);
        const auto base = euler_maruyama(named.sys, named.x0, bundle);
        const auto sens =
            integrate_initial_value_sensitivities(named.sys, base, bundle, {{0, 0}}, true);
        CHECK(sens.second.front()(0, 0) == 1.0);
    }

    SUBCASE("drift-only linear system reproduces the matrix exponential") {
        Mat A(2, 2);
        A << -0.5, 0.7, 0.2, -0.8;
        const auto sys = constant_matrix_system(A, {Mat::Zero(2, 2)});
        const auto bundle = generate_brownian_bundle(TimeGrid(1.0, 4096), 1, 6);
        const auto base = euler_maruyama(sys, Vec::Ones(2), bundle);
        const auto sens = integrate_initial_value_sensitivities(sys, base, bundle);
        CHECK((sens.first.back() - matexp(A)).norm() < 2e-3);
    }

    SUBCASE("coupled-path finite difference over x0 has slope >= 0.9") {
        const auto named = make_sde_system("scalar_nonlinear");
        const TimeGrid grid(1.0, 256);
        const std::vector<double> d_grid{1e-1, 1e-2, 1e-3, 1e-4};
        std::vector<double> errs(d_grid.size(), 0.0);
        const long n_paths = 40;
        for (long i = 0; i < n_paths; ++i) {
            const auto b = bundle_for_path(grid, 1, 123, static_cast<uint64_t>(i));
            const auto base = euler_maruyama(named.sys, named.x0, b);
            const auto sens = integrate_initial_value_sensitivities(named.sys, base, b);
            for (size_t k = 0; k < d_grid.size(); ++k) {
                const double d = d_grid[k];
                const auto shifted =
                    euler_maruyama(named.sys, named.x0 + Vec::Constant(1, d), b);
                const double fd = (shifted.back()[0] - base.back()[0]) / d;
                errs[k] += std::abs(fd - sens.first.back()(0, 0)) / n_paths;
            }
        }
        const double slope = fit_loglog_slope(d_grid, errs);
        CHECK(slope >= 0.9);
    }
}

TEST_CASE("solution formula check") {
    SUBCASE("zero Jacobians, drift perturbation only: both sides are the same sum") {
        SdeSystem sys;
        sys.drift = constant_field(1, Vec::Constant(1, 0.3));
        sys.diffusions = {constant_field(1, Vec::Constant(1, 0.2))};
        SystemPerturbation pert;
        pert.sigma = constant_field(1, Vec::Constant(1, 0.9));
        pert.sigma_bar = {zero_field(1, 1)};
        const auto bundle = generate_brownian_bundle(TimeGrid(1.0, 200), 1, 4);
        const auto base = euler_maruyama(sys, Vec::Zero(1), bundle);
        const auto phi = integrate_fundamental_matrix(sys, base, bundle);
        const auto xi = integrate_xi(sys, pert, base, phi, bundle);
        const auto sens = integrate_epsilon_sensitivities(sys, pert, base, bundle);
        CHECK(solution_formula_check(sys, pert, base, phi, xi, bundle, sens) < 1e-10);
    }

    SUBCASE("no diffusion at all: deviation is exactly zero") {
        SdeSystem sys;
        sys.drift = time_field(1, 1, [](double t) { return Vec::Constant(1, std::cos(t)); });
        sys.diffusions = {};
        SystemPerturbation pert;
        pert.sigma = time_field(1, 1, [](double t) { return Vec::Constant(1, 0.5 + 0.1 * t); });
        BrownianBundle empty = generate_brownian_bundle(TimeGrid(1.0, 100), 1, 4);
        empty.m = 0;
        empty.increments.clear();
        const auto base = euler_maruyama(sys, Vec::Zero(1), empty);
        const auto phi = integrate_fundamental_matrix(sys, base, empty);
        const auto xi = integrate_xi(sys, pert, base, phi, empty);
        const auto sens = integrate_epsilon_sensitivities(sys, pert, base, empty);
        CHECK(solution_formula_check(sys, pert, base, phi, xi, empty, sens) == 0.0);
    }

    SUBCASE("scalar linear constant coefficients: deviation shrinks like dt^1/2") {
        const auto named = make_sde_system("gbm");
        SystemPerturbation pert;
        pert.sigma = constant_field(1, Vec::Constant(1, 0.4));
        pert.sigma_bar = {constant_field(1, Vec::Constant(1, 0.6))};
        std::vector<double> dts, devs;
        const int fine_steps = 1 << 11;
        for (int lv = 0; lv < 4; ++lv) {
            MeanAccumulator acc;
            for (long i = 0; i < 200; ++i) {
                BrownianBundle b = bundle_for_path(TimeGrid(1.0, fine_steps), 1, 55,
                                                   static_cast<uint64_t>(i));
                for (int c = 0; c < lv; ++c) b = b.coarsen();
                const auto base = euler_maruyama(named.sys, named.x0, b);
                const auto phi = integrate_fundamental_matrix(named.sys, base, b);
                const auto xi = integrate_xi(named.sys, pert, base, phi, b);
                const auto sens = integrate_epsilon_sensitivities(named.sys, pert, base, b);
                acc.add(solution_formula_check(named.sys, pert, base, phi, xi, b, sens));
            }
            dts.push_back(std::pow(2.0, lv) / fine_steps);
            devs.push_back(acc.mean());
        }
        const double slope = fit_loglog_slope(dts, devs);
        CHECK(slope > 0.3);
        CHECK(slope < 0.8);
    }
}

TEST_CASE("boundedness of sensitivities stays stable as dt halves") {
    const auto named = make_sde_system("scalar_nonlinear");
    double prev_max = 0.0;
    for (int lv = 0; lv < 2; ++lv) {
        const TimeGrid grid(1.0, 256 << lv);
        double max1 = 0.0, max2 = 0.0;
        for (long i = 0; i < 1000; ++i) {
            const auto b = bundle_for_path(grid, 1, 1234, static_cast<uint64_t>(i));
            const auto base = euler_maruyama(named.sys, named.x0, b);
            const auto sens = integrate_epsilon_sensitivities(named.sys, named.pert, base, b);
            for (const auto& m : sens.first) max1 = std::max(max1, m.norm());
            for (const auto& m : sens.second) max2 = std::max(max2, m.norm());
        }
        CHECK(max1 < 1e6);
        CHECK(max2 < 1e6);
        if (lv > 0) CHECK(max1 < 4.0 * prev_max + 1.0);
        prev_max = max1;
    }
}

TEST_CASE("sensitivity csv carries .d1/.d2 columns") {
    const auto named = make_sde_system("scalar_linear");
    const auto bundle = generate_brownian_bundle(TimeGrid(1.0, 4), 1, 2);
    const auto base = euler_maruyama(named.sys, named.x0, bundle);
    const auto sens = integrate_epsilon_sensitivities(named.sys, named.pert, base, bundle);
    write_sensitivity_csv(sens, "sens_test.csv");
    std::FILE* fp = std::fopen("sens_test.csv", "r");
    REQUIRE(fp != nullptr);
    char line[512];
    REQUIRE(std::fgets(line, sizeof line, fp) != nullptr);
    const std::string header(line);
    CHECK(header.find(".d1") != std::string::npos);
    CHECK(header.find(".d2") != std::string::npos);
    std::fclose(fp);
    std::remove("sens_test.csv");
}
