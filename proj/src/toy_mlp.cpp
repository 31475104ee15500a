#include "ldmlab/toy/mlp.hpp"

#include <cmath>
#include <stdexcept>

namespace ldmlab::toy {

Mlp Mlp::create(const std::vector<int>& dims, Rng& rng, double scale) {
    if (dims.size() < 2) throw std::invalid_argument("Mlp: need at least in/out dims");
    Mlp m;
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
        Mat w(dims[l + 1], dims[l]);
        const double s = scale / std::sqrt(static_cast<double>(dims[l]));
        for (int i = 0; i < w.rows(); ++i)
            for (int j = 0; j < w.cols(); ++j) w(i, j) = s * rng.normal();
        m.W.push_back(w);
        m.b.push_back(Vec::Zero(dims[l + 1]));
    }
    return m;
}

Mlp Mlp::zeros_like(const Mlp& other) {
    Mlp m;
    for (size_t l = 0; l < other.W.size(); ++l) {
        m.W.push_back(Mat::Zero(other.W[l].rows(), other.W[l].cols()));
        m.b.push_back(Vec::Zero(other.b[l].size()));
    }
    return m;
}

long Mlp::n_params() const {
    long n = 0;
    for (size_t l = 0; l < W.size(); ++l) n += W[l].size() + b[l].size();
    return n;
}

Vec Mlp::forward(const Vec& x) const {
    Trace t;
    return forward(x, t);
}

Vec Mlp::forward(const Vec& x, Trace& trace) const {
    trace.xs.clear();
    trace.xs.push_back(x);
    Vec cur = x;
    const int L = n_layers();
    for (int l = 0; l < L; ++l) {
        cur = W[static_cast<size_t>(l)] * cur + b[static_cast<size_t>(l)];
        if (l + 1 < L) cur = cur.array().tanh().matrix();
        trace.xs.push_back(cur);
    }
    return cur;
}

Vec Mlp::backward(const Trace& trace, const Vec& gout, Mlp& grads) const {
    const int L = n_layers();
    Vec g = gout;
    for (int l = L - 1; l >= 0; --l) {
        const Vec& out = trace.xs[static_cast<size_t>(l + 1)];
        Vec gpre = g;
        if (l + 1 < L) // tanh'(pre) = 1 - out^2
            gpre = g.cwiseProduct(Vec(Vec::Ones(out.size()) - out.cwiseProduct(out)));
        grads.W[static_cast<size_t>(l)].noalias() += gpre * trace.xs[static_cast<size_t>(l)].transpose();
        grads.b[static_cast<size_t>(l)] += gpre;
        g = W[static_cast<size_t>(l)].transpose() * gpre;
    }
    return g;
}

Vec Mlp::jvp(const Trace& trace, const Vec& v) const {
    const int L = n_layers();
    Vec u = v;
    for (int l = 0; l < L; ++l) {
        u = W[static_cast<size_t>(l)] * u;
        if (l + 1 < L) {
            const Vec& out = trace.xs[static_cast<size_t>(l + 1)];
            u = u.cwiseProduct(Vec(Vec::Ones(out.size()) - out.cwiseProduct(out)));
        }
    }
    return u;
}

Mat Mlp::jacobian(const Vec& x) const {
    Trace t;
    forward(x, t);
    Mat J(out_dim(), in_dim());
    for (int j = 0; j < in_dim(); ++j) J.col(j) = jvp(t, Vec::Unit(in_dim(), j));
    return J;
}

double Mlp::jvp_sqnorm_grad(const Trace& trace, const Vec& v, double weight, Mlp& grads) const {
    const int L = n_layers();
    // forward tangents: u_{l+1} = phi'(pre_l) . (W_l u_l), tpre_l = W_l u_l
    std::vector<Vec> us(static_cast<size_t>(L) + 1);
    std::vector<Vec> tpres(static_cast<size_t>(L));
    us[0] = v;
    for (int l = 0; l < L; ++l) {
        tpres[static_cast<size_t>(l)] = W[static_cast<size_t>(l)] * us[static_cast<size_t>(l)];
        if (l + 1 < L) {
            const Vec& out = trace.xs[static_cast<size_t>(l + 1)];
            us[static_cast<size_t>(l + 1)] = tpres[static_cast<size_t>(l)].cwiseProduct(
                Vec(Vec::Ones(out.size()) - out.cwiseProduct(out)));
        } else {
            us[static_cast<size_t>(l + 1)] = tpres[static_cast<size_t>(l)];
        }
    }
    const double sq = us[static_cast<size_t>(L)].squaredNorm();

    // reverse pass through the (x, u) joint computation
    Vec ubar = 2.0 * weight * us[static_cast<size_t>(L)];
    Vec xbar = Vec::Zero(trace.xs.back().size());
    for (int l = L - 1; l >= 0; --l) {
        const Vec& out = trace.xs[static_cast<size_t>(l + 1)];
        Vec tpre_bar, pre_bar;
        if (l + 1 < L) {
            const Vec phi1 = Vec(Vec::Ones(out.size()) - out.cwiseProduct(out)); // tanh'
            const Vec phi2 = Vec(-2.0 * out.cwiseProduct(phi1));                 // tanh''
            tpre_bar = ubar.cwiseProduct(phi1);
            pre_bar = xbar.cwiseProduct(phi1) +
                      ubar.cwiseProduct(phi2).cwiseProduct(tpres[static_cast<size_t>(l)]);
        } else {
            tpre_bar = ubar;
            pre_bar = xbar;
        }
        grads.W[static_cast<size_t>(l)].noalias() +=
            pre_bar * trace.xs[static_cast<size_t>(l)].transpose() +
            tpre_bar * us[static_cast<size_t>(l)].transpose();
        grads.b[static_cast<size_t>(l)] += pre_bar;
        xbar = W[static_cast<size_t>(l)].transpose() * pre_bar;
        ubar = W[static_cast<size_t>(l)].transpose() * tpre_bar;
    }
    return sq;
}

void Mlp::fill_zero() {
    for (size_t l = 0; l < W.size(); ++l) {
        W[l].setZero();
        b[l].setZero();
    }
}

void Mlp::add_scaled(const Mlp& other, double s) {
    for (size_t l = 0; l < W.size(); ++l) {
        W[l] += s * other.W[l];
        b[l] += s * other.b[l];
    }
}

void Mlp::scale(double s) {
    for (size_t l = 0; l < W.size(); ++l) {
        W[l] *= s;
        b[l] *= s;
    }
}

long Mlp::flatten_into(std::vector<double>& out, long at) const {
    for (size_t l = 0; l < W.size(); ++l) {
        for (int j = 0; j < W[l].cols(); ++j)
            for (int i = 0; i < W[l].rows(); ++i) out[static_cast<size_t>(at++)] = W[l](i, j);
        for (int i = 0; i < b[l].size(); ++i) out[static_cast<size_t>(at++)] = b[l][i];
    }
    return at;
}

long Mlp::unflatten_from(const std::vector<double>& in, long at) {
    for (size_t l = 0; l < W.size(); ++l) {
        for (int j = 0; j < W[l].cols(); ++j)
            for (int i = 0; i < W[l].rows(); ++i) W[l](i, j) = in[static_cast<size_t>(at++)];
        for (int i = 0; i < b[l].size(); ++i) b[l][i] = in[static_cast<size_t>(at++)];
    }
    return at;
}

} // namespace ldmlab::toy
