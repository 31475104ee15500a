#include <cmath>

#include "doctest.h"
#include "ldmlab/ldm.hpp"
#include "ldmlab/parallel.hpp"
#include "ldmlab/reg_analysis.hpp"
#include "ldmlab/registry.hpp"

using namespace ldmlab;

namespace {

// Tiny four-block LDM with a constant hidden state (f = 0), so the encoder
// sees frozen (h, s) inputs and its conditional law is exactly Gaussian.
LdmSystem frozen_input_ldm() {
    LdmSystem sys;
    sys.dim_z = sys.dim_h = sys.dim_zt = sys.dim_st = 1;
    sys.dim_s = 1;
    Mat enc_a(1, 2);
    enc_a << 0.4, 0.8; // q_enc(h, s) = 0.4 h + 0.8 s
    sys.enc_drift = linear_field(enc_a);
    Mat encd_a(1, 2);
    encd_a << 0.1, 0.25; // q_enc_bar(h, s) = 0.1 h + 0.25 s
    sys.enc_diff = linear_field(encd_a);
    sys.seq_drift = zero_field(2, 1);
    sys.seq_diff = zero_field(2, 1);
    sys.pred_drift = linear_field(Mat::Constant(1, 1, 0.3));
    sys.pred_diff = constant_field(1, Vec::Constant(1, 0.05));
    Mat dec_a(1, 2);
    dec_a << 0.2, 0.1;
    sys.dec_drift = linear_field(dec_a);
    sys.dec_diff = constant_field(2, Vec::Constant(1, 0.05));
    sys.obs_path = [](double t) { return Vec::Constant(1, 1.0 + 0.5 * std::sin(t)); };
    return sys;
}

PerturbationSpec zero_pert() {
    PerturbationSpec p;
    p.sigma_drift = zero_field(2, 1);
    p.sigma_diff = zero_field(2, 1);
    p.epsilon = 0.0;
    return p;
}

} // namespace

TEST_CASE("brownian bundle determinism and moments") {
    const TimeGrid grid(1.0, 1000);

    SUBCASE("same arguments give bit-identical bundles") {
        const auto a = generate_brownian_bundle(grid, 2, 42);
        const auto b = generate_brownian_bundle(grid, 2, 42);
        CHECK(a.increments == b.increments);
        const auto c = generate_brownian_bundle(grid, 2, 43);
        CHECK(a.increments != c.increments);
    }

    SUBCASE("variance of B_T is T") {
        const long n = 100000;
        MeanAccumulator acc;
        for (long i = 0; i < n; ++i) {
            const auto b = bundle_for_path(TimeGrid(1.0, 4), 1, 7, static_cast<uint64_t>(i));
            const double bt = b.total(0);
            acc.add(bt * bt);
        }
        const double se = std::sqrt(2.0 / static_cast<double>(n)); // Var(B_T^2) = 2 T^2
        CHECK(std::abs(acc.mean() - 1.0) < 5.0 * se);
    }

    SUBCASE("coarsened bundle has per-step variance 2 dt") {
        const TimeGrid fine(1.0, 64);
        MeanAccumulator acc;
        for (long i = 0; i < 20000; ++i) {
            const auto b = bundle_for_path(fine, 1, 11, static_cast<uint64_t>(i)).coarsen();
            for (int n = 0; n < b.grid.n_steps; ++n) acc.add(b.db(n, 0) * b.db(n, 0));
        }
        const double expect = 2.0 * fine.dt();
        CHECK(std::abs(acc.mean() - expect) < 6.0 * acc.stderr_());
    }

    SUBCASE("rejects invalid construction") {
        CHECK_THROWS(TimeGrid(0.0, 10));
        CHECK_THROWS(TimeGrid(std::nan(""), 10));
        CHECK_THROWS(TimeGrid(1.0, 0));
        CHECK_THROWS(generate_brownian_bundle(grid, 0, 1));
    }
}

TEST_CASE("euler_maruyama") {
    SUBCASE("linear ODE reaches e with O(dt) error") {
        auto drift = scalar_field([](double x, double) { return x; },
                                  [](double, double) { return 1.0; },
                                  [](double, double) { return 0.0; });
        double prev_err = 1.0;
        for (int level = 0; level < 3; ++level) {
            const int steps = 200 << level;
            const auto bundle = generate_brownian_bundle(TimeGrid(1.0, steps), 1, 1);
            const auto traj = euler_maruyama(drift, {zero_field(1, 1)}, Vec::Ones(1), bundle);
            const double err = std::abs(traj.back()[0] - std::exp(1.0));
            if (level > 0) CHECK(err < 0.7 * prev_err);
            prev_err = err;
        }
        CHECK(prev_err < 5e-3);
    }

    SUBCASE("zero drift and zero diffusion keeps the state constant") {
        const auto bundle = generate_brownian_bundle(TimeGrid(2.0, 50), 1, 3);
        const Vec x0 = Vec::Constant(2, 1.25);
        const auto traj = euler_maruyama(zero_field(2, 2), {zero_field(2, 2)}, x0, bundle);
        for (const auto& s : traj.states) CHECK(s == x0);
    }

    SUBCASE("GBM ensemble mean matches exp(mu T)") {
        const auto named = make_sde_system("gbm");
        const TimeGrid grid(1.0, 64);
        const long n = 100000;
        MeanAccumulator acc;
        for (long i = 0; i < n; ++i) {
            const auto b = bundle_for_path(grid, 1, 19, static_cast<uint64_t>(i));
            acc.add(euler_maruyama(named.sys, named.x0, b).back()[0]);
        }
        CHECK(std::abs(acc.mean() - std::exp(0.05)) < 5.0 * acc.stderr_());
    }

    SUBCASE("deterministic reduction matches a plain Euler loop bit for bit") {
        const auto named = make_sde_system("scalar_nonlinear");
        const TimeGrid grid(1.0, 128);
        SdeSystem ode = named.sys;
        ode.diffusions = {zero_field(1, 1)};
        const auto bundle = generate_brownian_bundle(grid, 1, 5);
        const auto traj = euler_maruyama(ode, named.x0, bundle);
        Vec x = named.x0;
        for (int n = 0; n < grid.n_steps; ++n) {
            x = x + grid.dt() * ode.drift.eval(x, grid.t(n)) +
                bundle.db(n, 0) * Vec::Zero(1);
            CHECK(traj.at(n + 1)[0] == x[0]);
        }
    }

    SUBCASE("dimension mismatch throws") {
        const auto bundle = generate_brownian_bundle(TimeGrid(1.0, 4), 1, 0);
        CHECK_THROWS(euler_maruyama(zero_field(2, 2), {zero_field(2, 2)}, Vec::Ones(3), bundle));
        CHECK_THROWS(euler_maruyama(zero_field(2, 2), {}, Vec::Ones(2), bundle));
    }

    SUBCASE("non-finite state reports the step index") {
        auto blowup = scalar_field([](double x, double) { return x * x * x; },
                                   [](double x, double) { return 3 * x * x; },
                                   [](double x, double) { return 6 * x; });
        const auto bundle = generate_brownian_bundle(TimeGrid(10.0, 10), 1, 0);
        try {
            euler_maruyama(blowup, {zero_field(1, 1)}, Vec::Constant(1, 50.0), bundle);
            CHECK(false);
        } catch (const std::runtime_error& e) {
            CHECK(std::string(e.what()).find("step") != std::string::npos);
        }
    }
}

TEST_CASE("GBM strong convergence order ~ 1/2") {
    const auto named = make_sde_system("gbm");
    const double mu = 0.05, s = 0.2;
    const int levels = 5; // dt = 2^-6 .. 2^-10 here (acceptance runs the full spread)
    std::vector<double> dts, errs;
    for (int lv = 0; lv < levels; ++lv) {
        const int steps = 1 << (6 + lv);
        MeanAccumulator acc;
        for (long i = 0; i < 2000; ++i) {
            const auto b = bundle_for_path(TimeGrid(1.0, steps), 1, 23, static_cast<uint64_t>(i));
            const auto traj = euler_maruyama(named.sys, named.x0, b);
            const double exact = std::exp((mu - 0.5 * s * s) * 1.0 + s * b.total(0));
            acc.add(std::abs(traj.back()[0] - exact));
        }
        dts.push_back(1.0 / steps);
        errs.push_back(acc.mean());
    }
    const double slope = fit_loglog_slope(dts, errs);
    CHECK(slope > 0.35);
    CHECK(slope < 0.65);
}

TEST_CASE("integrate_ldm") {
    LdmSystem sys = frozen_input_ldm();
    const Vec x0 = Vec::Zero(4);
    const TimeGrid grid(1.0, 128);
    const auto bundle = generate_brownian_bundle(grid, 4, 77);

    SUBCASE("epsilon = 0 removes the perturbation coupling exactly") {
        PerturbationSpec with_fields;
        with_fields.sigma_drift = constant_field(2, Vec::Constant(1, 0.9));
        with_fields.sigma_diff = constant_field(2, Vec::Constant(1, 0.7));
        with_fields.epsilon = 0.0;
        const auto a = integrate_ldm(sys, with_fields, x0, bundle);
        const auto b = integrate_ldm(sys, zero_pert(), x0, bundle);
        for (int n = 0; n <= grid.n_steps; ++n) CHECK(a.at(n) == b.at(n));
    }

    SUBCASE("zero perturbation fields make output independent of epsilon") {
        PerturbationSpec p = zero_pert();
        p.epsilon = 0.0;
        const auto a = integrate_ldm(sys, p, x0, bundle);
        p.epsilon = 1.7;
        const auto b = integrate_ldm(sys, p, x0, bundle);
        for (int n = 0; n <= grid.n_steps; ++n) CHECK(a.at(n) == b.at(n));
    }

    SUBCASE("initial state is stored exactly") {
        Vec x1(4);
        x1 << 0.1, -0.2, 0.3, -0.4;
        const auto t = integrate_ldm(sys, zero_pert(), x1, bundle);
        CHECK(t.states[0] == x1);
    }

    SUBCASE("frozen-input encoder matches the Gaussian quadrature oracle") {
        const TimeGrid g2(1.0, 256);
        const long n_paths = 20000;
        // h stays at its initial value (f = 0); build the frozen paths.
        std::vector<Vec> h_path(static_cast<size_t>(g2.n_points()), Vec::Zero(1));
        std::vector<Vec> s_path;
        for (int n = 0; n < g2.n_points(); ++n) s_path.push_back(sys.obs_path(g2.t(n)));
        const auto moments =
            conditional_gaussian_moments(sys.enc_drift, sys.enc_diff, h_path, s_path, g2);

        MeanAccumulator mean_acc, sq_acc, cube_acc;
        for (long i = 0; i < n_paths; ++i) {
            const auto b = bundle_for_path(g2, 4, 31, static_cast<uint64_t>(i));
            const auto traj = integrate_ldm(sys, zero_pert(), Vec::Zero(4), b);
            const double z = traj.back()[0];
            mean_acc.add(z);
            sq_acc.add(z * z);
            cube_acc.add(z * z * z);
        }
        const double mu = moments.mean.back()[0];
        const double var = moments.variance.back()[0];
        CHECK(std::abs(mean_acc.mean() - mu) < 5.0 * mean_acc.stderr_());
        const double emp_var = sq_acc.mean() - mean_acc.mean() * mean_acc.mean();
        const double se_var = sq_acc.stderr_() + 2.0 * std::abs(mean_acc.mean()) * mean_acc.stderr_();
        CHECK(std::abs(emp_var - var) < 5.0 * se_var);
        // skewness of a Gaussian is 0; se ~ sqrt(6/n)
        const double m = mean_acc.mean();
        const double m3 = cube_acc.mean() - 3 * m * sq_acc.mean() + 2 * m * m * m;
        const double skew = m3 / std::pow(emp_var, 1.5);
        CHECK(std::abs(skew) < 5.0 * std::sqrt(6.0 / static_cast<double>(n_paths)));
    }
}

TEST_CASE("conditional_gaussian_moments") {
    SUBCASE("constant encoder gives exact linear-in-t moments") {
        const TimeGrid grid(2.0, 100);
        const double c = 0.7, d = 0.4;
        std::vector<Vec> h_path(static_cast<size_t>(grid.n_points()), Vec::Zero(1));
        std::vector<Vec> s_path(static_cast<size_t>(grid.n_points()), Vec::Zero(1));
        const auto m = conditional_gaussian_moments(constant_field(2, Vec::Constant(1, c)),
                                                    constant_field(2, Vec::Constant(1, d)),
                                                    h_path, s_path, grid);
        for (int n = 0; n < grid.n_points(); ++n) {
            CHECK(m.mean[static_cast<size_t>(n)][0] == doctest::Approx(c * grid.t(n)).epsilon(1e-12));
            CHECK(m.variance[static_cast<size_t>(n)][0] ==
                  doctest::Approx(d * d * grid.t(n)).epsilon(1e-12));
        }
    }

    SUBCASE("zero diffusion gives zero variance everywhere") {
        const TimeGrid grid(1.0, 32);
        std::vector<Vec> h_path(static_cast<size_t>(grid.n_points()), Vec::Zero(1));
        std::vector<Vec> s_path(static_cast<size_t>(grid.n_points()), Vec::Zero(1));
        const auto m = conditional_gaussian_moments(constant_field(2, Vec::Constant(1, 1.0)),
                                                    zero_field(2, 1), h_path, s_path, grid);
        for (const auto& v : m.variance) CHECK(v[0] == 0.0);
    }

    SUBCASE("time-varying sin integrand: integral over [0, pi] is 2") {
        const TimeGrid grid(M_PI, 10000);
        const auto q = time_field(2, 1, [](double t) { return Vec::Constant(1, std::sin(t)); });
        std::vector<Vec> h_path(static_cast<size_t>(grid.n_points()), Vec::Zero(1));
        std::vector<Vec> s_path(static_cast<size_t>(grid.n_points()), Vec::Zero(1));
        const auto m = conditional_gaussian_moments(q, zero_field(2, 1), h_path, s_path, grid);
        CHECK(std::abs(m.mean.back()[0] - 2.0) < 1e-4);
    }
}

TEST_CASE("registered coefficient fields agree with finite differences") {
    for (const auto* name : {"scalar_linear", "scalar_nonlinear", "scalar_drift", "gbm"}) {
        const auto named = make_sde_system(name);
        const Vec x = Vec::Constant(1, 0.37);
        std::vector<const CoefficientField*> fields{&named.sys.drift, &named.pert.sigma};
        for (const auto& f : named.sys.diffusions) fields.push_back(&f);
        for (const auto& f : named.pert.sigma_bar) fields.push_back(&f);
        for (const auto* f : fields) {
            const Mat J = f->jacobian(x, 0.3);
            const Mat Jfd = fd_jacobian(*f, x, 0.3);
            CHECK((J - Jfd).norm() < 1e-6);
            const auto H = f->hessian(x, 0.3);
            const auto Hfd = fd_hessian(*f, x, 0.3);
            for (size_t r = 0; r < H.size(); ++r) CHECK((H[r] - Hfd[r]).norm() < 1e-5);
        }
    }
}

TEST_CASE("trajectory csv export format") {
    const auto named = make_sde_system("scalar_linear");
    const auto bundle = generate_brownian_bundle(TimeGrid(1.0, 8), 1, 2);
    const auto traj = euler_maruyama(named.sys, named.x0, bundle);
    const std::string path = "traj_test.csv";
    write_trajectory_csv(traj, path, {"config_hash=deadbeef seed=2"});
    std::FILE* fp = std::fopen(path.c_str(), "r");
    REQUIRE(fp != nullptr);
    char line[512];
    REQUIRE(std::fgets(line, sizeof line, fp) != nullptr);
    CHECK(std::string(line).rfind("# config_hash", 0) == 0);
    REQUIRE(std::fgets(line, sizeof line, fp) != nullptr);
    CHECK(std::string(line) == "t,x_0\n");
    int rows = 0;
    double t, x;
    while (std::fgets(line, sizeof line, fp)) {
        CHECK(std::sscanf(line, "%lf,%lf", &t, &x) == 2);
        ++rows;
    }
    std::fclose(fp);
    CHECK(rows == 9);
    std::remove(path.c_str());
}
