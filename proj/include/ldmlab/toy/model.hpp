#pragma once

#include <string>

#include "ldmlab/toy/mlp.hpp"

namespace ldmlab::toy {

// Discrete-time latent dynamics model: encoder (h,s) -> Gaussian z,
// recurrent cell (h,z,a) -> h', predictor h -> Gaussian z~, decoder (h,z) -> s^.
// Log-variances are clamped to [-10, 4].
struct LdmModel {
    int dim_s = 0, dim_z = 0, dim_h = 0;
    Mlp encoder;   // in dim_h + dim_s, out 2*dim_z (mean, logvar)
    Mlp cell;      // in dim_h + dim_z + 1, out dim_h
    Mlp predictor; // in dim_h, out 2*dim_z
    Mlp decoder;   // in dim_h + dim_z, out dim_s

    static constexpr double kLogVarMin = -10.0;
    static constexpr double kLogVarMax = 4.0;

    static LdmModel create(int dim_s, int dim_z, int dim_h, int width, int depth, Rng& rng);

    long n_params() const;
    std::vector<double> flatten() const;
    void unflatten(const std::vector<double>& params);

    Vec encode_mean(const Vec& h, const Vec& s) const;
    Vec predict_mean(const Vec& h) const;
    Vec step_h(const Vec& h, const Vec& z, double a) const;
    Vec decode(const Vec& h, const Vec& z) const;

    // flat binary: magic "LDM1", u32 parameter count, little-endian f64 values;
    // architecture dims are supplied externally on load.
    void save(const std::string& path) const;
    static LdmModel load(const std::string& path, int dim_s, int dim_z, int dim_h, int width,
                         int depth);
};

double clamp_logvar(double lv);

} // namespace ldmlab::toy
