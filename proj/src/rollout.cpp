#include "ldmlab/rollout.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "ldmlab/ldm.hpp"

namespace ldmlab {

Vec QValue::stack(const Vec& h, const Vec& z, const Vec& a) const {
    Vec u(dim());
    u << h, z, a;
    return u;
}

namespace {

struct Blocks {
    Mat H_aa, H_ah, H_az;
};

Blocks hess_blocks(const QValue& q, const Vec& u) {
    const Mat H = q.hessian(u);
    Blocks b;
    b.H_aa = H.block(q.off_a(), q.off_a(), q.dim_a, q.dim_a);
    b.H_ah = H.block(q.off_a(), q.off_h(), q.dim_a, q.dim_h);
    b.H_az = H.block(q.off_a(), q.off_z(), q.dim_a, q.dim_z);
    return b;
}

// Negative-definiteness via LLT of -H_aa.
bool neg_definite(const Mat& H_aa) {
    Eigen::LLT<Mat> llt(Mat(-H_aa));
    return llt.info() == Eigen::Success;
}

} // namespace

Vec solve_policy(const QValue& q, const Vec& h, const Vec& z, const Vec& warm_start,
                 const PolicySolveOptions& opts) {
    Vec a = warm_start.size() == q.dim_a ? warm_start : Vec::Zero(q.dim_a);
    for (int it = 0; it < opts.max_iter; ++it) {
        const Vec u = q.stack(h, z, a);
        const Vec g = q.gradient(u).segment(q.off_a(), q.dim_a);
        if (g.norm() <= opts.tol) {
            const Mat H_aa = hess_blocks(q, u).H_aa;
            if (!neg_definite(H_aa))
                throw std::runtime_error("solve_policy: d2Q/da2 not negative definite");
            return a;
        }
        const Mat H_aa = hess_blocks(q, u).H_aa;
        if (!neg_definite(H_aa))
            throw std::runtime_error("solve_policy: d2Q/da2 not negative definite");
        const Vec step = -H_aa.ldlt().solve(g);
        double lambda = 1.0;
        const double q0 = q.eval(u);
        for (int bt = 0; bt < 30; ++bt) {
            const Vec cand = a + lambda * step;
            if (q.eval(q.stack(h, z, cand)) >= q0) {
                a = cand;
                break;
            }
            lambda *= 0.5;
            if (bt == 29) a += lambda * step;
        }
    }
    const Vec g = q.gradient(q.stack(h, z, a)).segment(q.off_a(), q.dim_a);
    if (g.norm() <= opts.tol) return a;
    throw std::runtime_error("solve_policy: no convergence after " +
                             std::to_string(opts.max_iter) + " iterations");
}

PolicyDerivatives policy_derivatives(const QValue& q, const Vec& h, const Vec& z,
                                     bool with_second, const PolicySolveOptions& opts) {
    PolicyDerivatives out;
    out.rho = solve_policy(q, h, z, Vec::Zero(q.dim_a), opts);
    const Vec u = q.stack(h, z, out.rho);
    const Blocks b = hess_blocks(q, u);
    const auto ldlt = b.H_aa.ldlt();
    out.d_h = -ldlt.solve(b.H_ah);
    out.d_z = -ldlt.solve(b.H_az);

    if (!with_second) return out;
    if (!q.third)
        throw std::invalid_argument("policy_derivatives: q.third required for second order");
    const std::vector<Mat> T = q.third(u);
    const int da = q.dim_a;

    // rho_{.,pq} = -H_aa^-1 [ T(a,u_p,v_q) + T(a,u_p,a) dv_rho(.,q)
    //                         + T(a,a,v_q) du_rho(.,p) + T(a,a,a)(du_rho, dv_rho) ]
    auto second_block = [&](int offU, int dU, const Mat& dur, int offV, int dV,
                            const Mat& dvr) {
        std::vector<Mat> dd(static_cast<size_t>(da), Mat::Zero(dU, dV));
        for (int p = 0; p < dU; ++p) {
            for (int qq = 0; qq < dV; ++qq) {
                Vec rhs(da);
                for (int al = 0; al < da; ++al) {
                    const Mat& Ta = T[static_cast<size_t>(q.off_a() + al)];
                    double v = Ta(offU + p, offV + qq);
                    for (int g1 = 0; g1 < da; ++g1) {
                        v += Ta(offU + p, q.off_a() + g1) * dvr(g1, qq);
                        v += Ta(q.off_a() + g1, offV + qq) * dur(g1, p);
                        for (int g2 = 0; g2 < da; ++g2)
                            v += Ta(q.off_a() + g1, q.off_a() + g2) * dur(g1, p) * dvr(g2, qq);
                    }
                    rhs[al] = v;
                }
                const Vec sol = -ldlt.solve(rhs);
                for (int al = 0; al < da; ++al) dd[static_cast<size_t>(al)](p, qq) = sol[al];
            }
        }
        return dd;
    };

    out.dd_hh = second_block(q.off_h(), q.dim_h, out.d_h, q.off_h(), q.dim_h, out.d_h);
    out.dd_hz = second_block(q.off_h(), q.dim_h, out.d_h, q.off_z(), q.dim_z, out.d_z);
    out.dd_zh = second_block(q.off_z(), q.dim_z, out.d_z, q.off_h(), q.dim_h, out.d_h);
    out.dd_zz = second_block(q.off_z(), q.dim_z, out.d_z, q.off_z(), q.dim_z, out.d_z);
    out.has_second = true;
    return out;
}

Trajectory rollout(const RolloutSystem& sys, const Vec& h0, const Vec& z0, const Vec& eps,
                   const BrownianBundle& bundle, const PolicySolveOptions& opts) {
    if (bundle.m != 1)
        throw std::invalid_argument("rollout: bundle carries exactly the predictor component");
    const int dh = sys.dim_h();
    const int dz = sys.dim_z();
    const double dt = bundle.grid.dt();

    Trajectory traj;
    traj.grid = bundle.grid;
    Vec x(dh + dz);
    x << h0, z0 + eps;
    traj.states.push_back(x);

    Vec a = Vec::Zero(sys.dim_a());
    for (int n = 0; n < bundle.grid.n_steps; ++n) {
        const double t = bundle.grid.t(n);
        const Vec h = x.head(dh);
        const Vec z = x.tail(dz);
        try {
            a = solve_policy(sys.q, h, z, a, opts);
        } catch (const std::runtime_error& e) {
            throw std::runtime_error(std::string(e.what()) + " at step " + std::to_string(n));
        }
        Vec next = x;
        next.head(dh) += dt * sys.f.eval(sys.q.stack(h, z, a), t);
        next.tail(dz) += dt * sys.p.eval(h, t) + bundle.db(n, 0) * sys.p_bar.eval(h, t);
        if (!next.allFinite())
            throw std::runtime_error("rollout: non-finite state at step " + std::to_string(n + 1));
        x = next;
        traj.states.push_back(x);
    }
    return traj;
}

SdeSystem closed_loop_system(const RolloutSystem& sys, const PolicySolveOptions& opts) {
    const int dh = sys.dim_h();
    const int dz = sys.dim_z();
    const int d = dh + dz;
    const QValue q = sys.q;
    const CoefficientField f = sys.f;
    const bool have_third = static_cast<bool>(q.third);

    CoefficientField drift;
    drift.dim_in = d;
    drift.dim_out = d;
    drift.eval = [sys, q, f, dh, dz, opts](const Vec& x, double t) -> Vec {
        const Vec h = x.head(dh);
        const Vec z = x.tail(dz);
        const Vec a = solve_policy(q, h, z, Vec::Zero(q.dim_a), opts);
        Vec y(dh + dz);
        y.head(dh) = f.eval(q.stack(h, z, a), t);
        y.tail(dz) = sys.p.eval(h, t);
        return y;
    };
    drift.jacobian = [sys, q, f, dh, dz, opts](const Vec& x, double t) -> Mat {
        const Vec h = x.head(dh);
        const Vec z = x.tail(dz);
        const PolicyDerivatives pd = policy_derivatives(q, h, z, false, opts);
        const Mat Jf = f.jacobian(q.stack(h, z, pd.rho), t); // [dh x (dh+dz+da)]
        const Mat Fh = Jf.middleCols(q.off_h(), dh);
        const Mat Fz = Jf.middleCols(q.off_z(), dz);
        const Mat Fa = Jf.middleCols(q.off_a(), q.dim_a);
        Mat J = Mat::Zero(dh + dz, dh + dz);
        J.block(0, 0, dh, dh) = Fh + Fa * pd.d_h;
        J.block(0, dh, dh, dz) = Fz + Fa * pd.d_z;
        J.block(dh, 0, dz, dh) = sys.p.jacobian(h, t);
        return J;
    };
    drift.hessian = [sys, q, f, dh, dz, d, have_third, opts](const Vec& x, double t) {
        const Vec h = x.head(dh);
        const Vec z = x.tail(dz);
        const PolicyDerivatives pd = policy_derivatives(q, h, z, have_third, opts);
        const Vec u = q.stack(h, z, pd.rho);
        const Mat Jf = f.jacobian(u, t);
        const auto G = f.hessian(u, t);
        const int da = q.dim_a;

        Mat Drho(da, d); // stacked first-order policy derivative
        Drho << pd.d_h, pd.d_z;
        std::vector<Mat> ddrho(static_cast<size_t>(da), Mat::Zero(d, d));
        if (pd.has_second) {
            for (int al = 0; al < da; ++al) {
                Mat& m = ddrho[static_cast<size_t>(al)];
                m.block(0, 0, dh, dh) = pd.dd_hh[static_cast<size_t>(al)];
                m.block(0, dh, dh, dz) = pd.dd_hz[static_cast<size_t>(al)];
                m.block(dh, 0, dz, dh) = pd.dd_zh[static_cast<size_t>(al)];
                m.block(dh, dh, dz, dz) = pd.dd_zz[static_cast<size_t>(al)];
            }
        }

        std::vector<Mat> H(static_cast<size_t>(d), Mat::Zero(d, d));
        // h rows: full chain rule through rho. Stacked f-input coords 0..d-1
        // coincide with the (h,z) state coords.
        for (int l = 0; l < dh; ++l) {
            Mat& Hl = H[static_cast<size_t>(l)];
            const Mat& Gl = G[static_cast<size_t>(l)];
            Hl = Gl.topLeftCorner(d, d);
            Hl += Gl.block(0, q.off_a(), d, da) * Drho;
            Hl += Drho.transpose() * Gl.block(q.off_a(), 0, da, d);
            Hl += Drho.transpose() * Gl.block(q.off_a(), q.off_a(), da, da) * Drho;
            for (int al = 0; al < da; ++al)
                Hl += Jf(l, q.off_a() + al) * ddrho[static_cast<size_t>(al)];
        }
        // z rows: p depends on h only.
        const auto Hp = sys.p.hessian(h, t);
        for (int l = 0; l < dz; ++l)
            H[static_cast<size_t>(dh + l)].topLeftCorner(dh, dh) = Hp[static_cast<size_t>(l)];
        return H;
    };

    SdeSystem out;
    out.drift = drift;
    out.diffusions = {embed_block(sys.p_bar, d, dh, {{0, dh}})};
    return out;
}

} // namespace ldmlab
