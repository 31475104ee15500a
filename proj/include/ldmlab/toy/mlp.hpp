#pragma once

#include <vector>

#include "ldmlab/coefficient.hpp"
#include "ldmlab/rng.hpp"

namespace ldmlab::toy {

using ldmlab::Mat;
using ldmlab::Vec;

// Dense net with tanh hidden layers and a linear output layer. An empty
// hidden list gives a plain affine map.
struct Mlp {
    std::vector<Mat> W;
    std::vector<Vec> b;

    static Mlp create(const std::vector<int>& dims, Rng& rng, double scale = 0.4);
    static Mlp zeros_like(const Mlp& other);

    int in_dim() const { return static_cast<int>(W.front().cols()); }
    int out_dim() const { return static_cast<int>(W.back().rows()); }
    int n_layers() const { return static_cast<int>(W.size()); }
    long n_params() const;

    struct Trace {
        std::vector<Vec> xs; // xs[0] = input, xs[i+1] = layer i output
    };

    Vec forward(const Vec& x) const;
    Vec forward(const Vec& x, Trace& trace) const;

    // Accumulates dL/dW, dL/db given dL/dout; returns dL/dinput.
    Vec backward(const Trace& trace, const Vec& gout, Mlp& grads) const;

    // Jacobian-vector product at a traced point.
    Vec jvp(const Trace& trace, const Vec& v) const;

    // Exact input-output Jacobian at x (column-by-column JVP).
    Mat jacobian(const Vec& x) const;

    // Adds weight * d||J(x) v||^2 / dparams into grads; returns ||J v||^2.
    double jvp_sqnorm_grad(const Trace& trace, const Vec& v, double weight, Mlp& grads) const;

    void fill_zero();
    void add_scaled(const Mlp& other, double s);
    void scale(double s);

    long flatten_into(std::vector<double>& out, long at) const;
    long unflatten_from(const std::vector<double>& in, long at);
};

} // namespace ldmlab::toy
