#include "ldmlab/ldm.hpp"

#include <stdexcept>

namespace ldmlab {

CoefficientField embed_block(const CoefficientField& f, int dim_state, int out_offset,
                             std::vector<std::pair<int, int>> in_slices,
                             std::function<Vec(double)> exo, int exo_len) {
    int gathered = exo_len;
    for (const auto& s : in_slices) gathered += s.second;
    if (gathered != f.dim_in)
        throw std::invalid_argument("embed_block: slice lengths do not match field dim_in");

    auto gather = [in_slices, exo, exo_len, dim_in = f.dim_in](const Vec& x, double t) -> Vec {
        Vec u(dim_in);
        int at = 0;
        for (const auto& s : in_slices) {
            u.segment(at, s.second) = x.segment(s.first, s.second);
            at += s.second;
        }
        if (exo_len > 0) u.segment(at, exo_len) = exo(t);
        return u;
    };

    CoefficientField out;
    out.dim_in = dim_state;
    out.dim_out = dim_state;
    out.eval = [f, gather, dim_state, out_offset](const Vec& x, double t) -> Vec {
        Vec y = Vec::Zero(dim_state);
        y.segment(out_offset, f.dim_out) = f.eval(gather(x, t), t);
        return y;
    };
    out.jacobian = [f, gather, in_slices, dim_state, out_offset](const Vec& x, double t) -> Mat {
        const Mat Jl = f.jacobian(gather(x, t), t);
        Mat J = Mat::Zero(dim_state, dim_state);
        int at = 0;
        for (const auto& s : in_slices) {
            J.block(out_offset, s.first, f.dim_out, s.second) = Jl.middleCols(at, s.second);
            at += s.second;
        }
        return J;
    };
    out.hessian = [f, gather, in_slices, dim_state, out_offset](const Vec& x, double t) {
        const auto Hl = f.hessian(gather(x, t), t);
        std::vector<Mat> H(static_cast<size_t>(dim_state), Mat::Zero(dim_state, dim_state));
        for (int r = 0; r < f.dim_out; ++r) {
            Mat& Hr = H[static_cast<size_t>(out_offset + r)];
            int ai = 0;
            for (const auto& si : in_slices) {
                int aj = 0;
                for (const auto& sj : in_slices) {
                    Hr.block(si.first, sj.first, si.second, sj.second) =
                        Hl[static_cast<size_t>(r)].block(ai, aj, si.second, sj.second);
                    aj += sj.second;
                }
                ai += si.second;
            }
        }
        return H;
    };
    return out;
}

namespace {

CoefficientField sum_fields(int dim, const std::vector<CoefficientField>& parts) {
    CoefficientField f;
    f.dim_in = dim;
    f.dim_out = dim;
    f.eval = [parts, dim](const Vec& x, double t) -> Vec {
        Vec y = Vec::Zero(dim);
        for (const auto& p : parts) y += p.eval(x, t);
        return y;
    };
    f.jacobian = [parts, dim](const Vec& x, double t) -> Mat {
        Mat J = Mat::Zero(dim, dim);
        for (const auto& p : parts) J += p.jacobian(x, t);
        return J;
    };
    f.hessian = [parts, dim](const Vec& x, double t) {
        std::vector<Mat> H(static_cast<size_t>(dim), Mat::Zero(dim, dim));
        for (const auto& p : parts) {
            const auto Hp = p.hessian(x, t);
            for (size_t r = 0; r < H.size(); ++r) H[r] += Hp[r];
        }
        return H;
    };
    return f;
}

} // namespace

SdeSystem LdmSystem::assemble() const {
    if (!obs_path) throw std::invalid_argument("LdmSystem: obs_path is required");
    const int d = dim();
    const std::vector<std::pair<int, int>> enc_in{{off_h(), dim_h}};
    const std::vector<std::pair<int, int>> seq_in{{off_h(), dim_h}, {off_z(), dim_z}};
    const std::vector<std::pair<int, int>> pred_in{{off_h(), dim_h}};
    const std::vector<std::pair<int, int>> dec_in{{off_h(), dim_h}, {off_zt(), dim_zt}};

    SdeSystem sys;
    sys.drift = sum_fields(
        d, {embed_block(enc_drift, d, off_z(), enc_in, obs_path, dim_s),
            embed_block(seq_drift, d, off_h(), seq_in),
            embed_block(pred_drift, d, off_zt(), pred_in),
            embed_block(dec_drift, d, off_st(), dec_in)});
    sys.diffusions = {embed_block(enc_diff, d, off_z(), enc_in, obs_path, dim_s),
                      embed_block(seq_diff, d, off_h(), seq_in),
                      embed_block(pred_diff, d, off_zt(), pred_in),
                      embed_block(dec_diff, d, off_st(), dec_in)};
    return sys;
}

SystemPerturbation LdmSystem::assemble_perturbation(const PerturbationSpec& pert) const {
    if (pert.sigma_drift.dim_out != dim_z || pert.sigma_diff.dim_out != dim_z)
        throw std::invalid_argument(
            "PerturbationSpec: sigma fields must map onto the latent block only");
    const int d = dim();
    const std::vector<std::pair<int, int>> enc_in{{off_h(), dim_h}};
    SystemPerturbation p;
    p.sigma = embed_block(pert.sigma_drift, d, off_z(), enc_in, obs_path, dim_s);
    p.sigma_bar = {embed_block(pert.sigma_diff, d, off_z(), enc_in, obs_path, dim_s),
                   zero_field(d, d), zero_field(d, d), zero_field(d, d)};
    return p;
}

Trajectory integrate_ldm(const LdmSystem& system, const PerturbationSpec& pert,
                         const Vec& x0, const BrownianBundle& bundle) {
    if (bundle.m != 4)
        throw std::invalid_argument("integrate_ldm: bundle needs one component per sub-model");
    const SdeSystem base = system.assemble();
    const SystemPerturbation p = system.assemble_perturbation(pert);
    return euler_maruyama(apply_perturbation(base, p, pert.epsilon), x0, bundle);
}

MomentPaths conditional_gaussian_moments(const CoefficientField& q_enc,
                                         const CoefficientField& q_enc_bar,
                                         const std::vector<Vec>& h_path,
                                         const std::vector<Vec>& s_path,
                                         const TimeGrid& grid) {
    const size_t n_pts = static_cast<size_t>(grid.n_points());
    if (h_path.size() != n_pts || s_path.size() != n_pts)
        throw std::invalid_argument("conditional_gaussian_moments: paths must live on the grid");

    const int dz = q_enc.dim_out;
    if (q_enc_bar.dim_out != dz)
        throw std::invalid_argument("conditional_gaussian_moments: encoder output dims differ");

    auto input = [&](size_t n) {
        Vec u(h_path[n].size() + s_path[n].size());
        u << h_path[n], s_path[n];
        return u;
    };

    MomentPaths out;
    out.grid = grid;
    out.mean.assign(n_pts, Vec::Zero(dz));
    out.variance.assign(n_pts, Vec::Zero(dz));

    const double dt = grid.dt();
    Vec drift_prev = q_enc.eval(input(0), grid.t(0));
    Vec diff_prev = q_enc_bar.eval(input(0), grid.t(0));
    Vec mean_acc = Vec::Zero(dz);
    Vec var_acc = Vec::Zero(dz);
    for (size_t n = 1; n < n_pts; ++n) {
        const Vec drift_cur = q_enc.eval(input(n), grid.t(static_cast<int>(n)));
        const Vec diff_cur = q_enc_bar.eval(input(n), grid.t(static_cast<int>(n)));
        mean_acc += 0.5 * dt * (drift_prev + drift_cur);
        var_acc += 0.5 * dt * (diff_prev.cwiseProduct(diff_prev) + diff_cur.cwiseProduct(diff_cur));
        out.mean[n] = mean_acc;
        out.variance[n] = var_acc;
        drift_prev = drift_cur;
        diff_prev = diff_cur;
    }
    return out;
}

} // namespace ldmlab
