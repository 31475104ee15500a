#include "ldmlab/toy/model.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <stdexcept>

namespace ldmlab::toy {

double clamp_logvar(double lv) {
    if (lv < LdmModel::kLogVarMin) return LdmModel::kLogVarMin;
    if (lv > LdmModel::kLogVarMax) return LdmModel::kLogVarMax;
    return lv;
}

namespace {

std::vector<int> arch(int in, int out, int width, int depth) {
    std::vector<int> dims{in};
    for (int i = 0; i < depth; ++i) dims.push_back(width);
    dims.push_back(out);
    return dims;
}

} // namespace

LdmModel LdmModel::create(int dim_s, int dim_z, int dim_h, int width, int depth, Rng& rng) {
    LdmModel m;
    m.dim_s = dim_s;
    m.dim_z = dim_z;
    m.dim_h = dim_h;
    m.encoder = Mlp::create(arch(dim_h + dim_s, 2 * dim_z, width, depth), rng);
    m.cell = Mlp::create(arch(dim_h + dim_z + 1, dim_h, width, depth), rng);
    m.predictor = Mlp::create(arch(dim_h, 2 * dim_z, width, depth), rng);
    m.decoder = Mlp::create(arch(dim_h + dim_z, dim_s, width, depth), rng);
    // start the Gaussian heads at small variance so the reparameterized
    // sample carries the mean signal instead of drowning it
    m.encoder.b.back().tail(dim_z).setConstant(-4.0);
    m.predictor.b.back().tail(dim_z).setConstant(-4.0);
    return m;
}

long LdmModel::n_params() const {
    return encoder.n_params() + cell.n_params() + predictor.n_params() + decoder.n_params();
}

std::vector<double> LdmModel::flatten() const {
    std::vector<double> out(static_cast<size_t>(n_params()));
    long at = 0;
    at = encoder.flatten_into(out, at);
    at = cell.flatten_into(out, at);
    at = predictor.flatten_into(out, at);
    decoder.flatten_into(out, at);
    return out;
}

void LdmModel::unflatten(const std::vector<double>& params) {
    long at = 0;
    at = encoder.unflatten_from(params, at);
    at = cell.unflatten_from(params, at);
    at = predictor.unflatten_from(params, at);
    decoder.unflatten_from(params, at);
}

Vec LdmModel::encode_mean(const Vec& h, const Vec& s) const {
    Vec in(dim_h + dim_s);
    in << h, s;
    return encoder.forward(in).head(dim_z);
}

Vec LdmModel::predict_mean(const Vec& h) const { return predictor.forward(h).head(dim_z); }

Vec LdmModel::step_h(const Vec& h, const Vec& z, double a) const {
    Vec in(dim_h + dim_z + 1);
    in << h, z, a;
    return cell.forward(in);
}

Vec LdmModel::decode(const Vec& h, const Vec& z) const {
    Vec in(dim_h + dim_z);
    in << h, z;
    return decoder.forward(in);
}

void LdmModel::save(const std::string& path) const {
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("LdmModel::save: cannot open " + path);
    const std::vector<double> params = flatten();
    const uint32_t n = static_cast<uint32_t>(params.size());
    std::fwrite("LDM1", 1, 4, fp);
    std::fwrite(&n, sizeof(n), 1, fp);
    std::fwrite(params.data(), sizeof(double), params.size(), fp);
    std::fclose(fp);
}

LdmModel LdmModel::load(const std::string& path, int dim_s, int dim_z, int dim_h, int width,
                        int depth) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("LdmModel::load: cannot open " + path);
    char magic[4];
    uint32_t n = 0;
    if (std::fread(magic, 1, 4, fp) != 4 || std::memcmp(magic, "LDM1", 4) != 0) {
        std::fclose(fp);
        throw std::runtime_error("LdmModel::load: bad magic in " + path);
    }
    if (std::fread(&n, sizeof(n), 1, fp) != 1) {
        std::fclose(fp);
        throw std::runtime_error("LdmModel::load: truncated header in " + path);
    }
    std::vector<double> params(n);
    const size_t got = std::fread(params.data(), sizeof(double), n, fp);
    std::fclose(fp);
    if (got != n) throw std::runtime_error("LdmModel::load: truncated payload in " + path);

    Rng rng(0);
    LdmModel m = create(dim_s, dim_z, dim_h, width, depth, rng);
    if (m.n_params() != static_cast<long>(n))
        throw std::runtime_error("LdmModel::load: parameter count mismatch for given dims");
    m.unflatten(params);
    return m;
}

} // namespace ldmlab::toy
