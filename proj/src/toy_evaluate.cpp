#include "ldmlab/toy/evaluate.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "ldmlab/parallel.hpp"

namespace ldmlab::toy {

namespace {

Vec inject_z(const Vec& z, const ErrorInjection& inj, Rng& rng) {
    if (inj.kind == ErrorInjection::Kind::none) return z;
    Vec out = z;
    if (inj.kind == ErrorInjection::Kind::zero_drift) {
        const double sd = std::sqrt(inj.var);
        for (int j = 0; j < out.size(); ++j) out[j] += sd * rng.normal();
    } else {
        const double mu = rng.uniform(0.0, inj.mu_max);
        const double sd = std::sqrt(rng.uniform(0.0, inj.var_max));
        for (int j = 0; j < out.size(); ++j) out[j] += mu + sd * rng.normal();
    }
    return out;
}

double greedy_action(const LdmModel& m, const ToyEnv& env, const Vec& h, const Vec& z) {
    double best_a = 0.0;
    double best_score = -1e300;
    for (const double a : env.action_set()) {
        const Vec h_next = m.step_h(h, z, a);
        const Vec z_next = m.predict_mean(h_next);
        const Vec s_hat = m.decode(h_next, z_next);
        const double score = env.reward_from_obs(s_hat, a);
        if (score > best_score) {
            best_score = score;
            best_a = a;
        }
    }
    return best_a;
}

} // namespace

double run_episode(const LdmModel& model, const ToyEnv& env, const SuiteSetting& setting,
                   uint64_t seed) {
    ToyEnv e = env;
    if (setting.gravity > 0.0) e.gravity = setting.gravity;
    Rng rng(seed);
    Vec state = e.reset(rng);
    // stateless lookahead: every step encodes from a fresh hidden state, the
    // same pattern the training windows start from
    const Vec h0 = Vec::Zero(model.dim_h);
    double ret = 0.0;
    for (int t = 0; t < e.horizon; ++t) {
        const Vec obs = e.observe(state, setting.obs, rng);
        Vec z = model.encode_mean(h0, obs);
        z = inject_z(z, setting.inject, rng);
        const double a = greedy_action(model, e, h0, z);
        ret += e.reward(state, a);
        state = e.step(state, a);
    }
    return ret;
}

OpenLoopResult rollout_openloop(const LdmModel& model, const ToyEnv& env, int horizon,
                                uint64_t seed) {
    if (horizon < 1) throw std::invalid_argument("rollout_openloop: horizon must be >= 1");
    Rng rng(seed);
    const auto actions = env.action_set();
    Vec state = env.reset(rng);
    const Vec obs0 = env.observe_clean(state);

    Vec h = Vec::Zero(model.dim_h);
    Vec z = model.encode_mean(h, obs0);

    OpenLoopResult out;
    for (int t = 0; t < horizon; ++t) {
        const double a = actions[static_cast<size_t>(rng.uniform_int(static_cast<int>(actions.size())))];
        state = env.step(state, a);
        const Vec truth = env.observe_clean(state);

        h = model.step_h(h, z, a);
        z = model.predict_mean(h);
        const Vec pred = model.decode(h, z);

        out.predicted.push_back(pred);
        out.ground_truth.push_back(truth);
        out.divergence.push_back((pred - truth).squaredNorm());
    }
    return out;
}

RobustnessReport evaluate_robustness(const LdmModel& model, const ToyEnv& env,
                                     const std::vector<SuiteSetting>& suite, int episodes,
                                     uint64_t seed) {
    std::vector<SuiteSetting> all;
    all.push_back(SuiteSetting{"clean", {}, -1.0, {}});
    for (const auto& s : suite) all.push_back(s);

    RobustnessReport rep;
    for (size_t si = 0; si < all.size(); ++si) {
        const auto& setting = all[si];
        MeanAccumulator acc;
        for (int e = 0; e < episodes; ++e)
            acc.add(run_episode(model, env, setting,
                                derive_seed(derive_seed(seed, si), static_cast<uint64_t>(e))));
        // open-loop prediction error under the same dynamics setting
        ToyEnv e2 = env;
        if (setting.gravity > 0.0) e2.gravity = setting.gravity;
        double mse = 0.0;
        const int n_roll = 8;
        for (int r = 0; r < n_roll; ++r) {
            const OpenLoopResult ol = rollout_openloop(
                model, e2, env.horizon, derive_seed(derive_seed(seed, 7777 + si), static_cast<uint64_t>(r)));
            double m = 0.0;
            for (const double d : ol.divergence) m += d;
            mse += m / static_cast<double>(ol.divergence.size());
        }
        SettingResult res;
        res.return_mean = acc.mean();
        res.return_stderr = acc.stderr_();
        res.openloop_mse = mse / n_roll;
        res.episodes = episodes;
        rep.rows.emplace_back(setting.name, res);
    }
    return rep;
}

std::string RobustnessReport::to_json() const {
    std::ostringstream os;
    os.precision(17);
    os << "{";
    for (size_t i = 0; i < rows.size(); ++i) {
        if (i) os << ",";
        os << "\"" << rows[i].first << "\":{\"return_mean\":" << rows[i].second.return_mean
           << ",\"return_stderr\":" << rows[i].second.return_stderr
           << ",\"openloop_mse\":" << rows[i].second.openloop_mse
           << ",\"episodes\":" << rows[i].second.episodes << "}";
    }
    os << "}";
    return os.str();
}

void write_openloop_csv(const OpenLoopResult& res, const std::string& path,
                        const std::vector<std::string>& preamble) {
    std::FILE* fp = std::fopen(path.c_str(), "w");
    if (!fp) throw std::runtime_error("write_openloop_csv: cannot open " + path);
    for (const auto& line : preamble) std::fprintf(fp, "# %s\n", line.c_str());
    const int d = static_cast<int>(res.predicted.front().size());
    std::fprintf(fp, "step");
    for (int j = 0; j < d; ++j) std::fprintf(fp, ",pred_%d", j);
    for (int j = 0; j < d; ++j) std::fprintf(fp, ",true_%d", j);
    std::fprintf(fp, ",divergence\n");
    for (size_t t = 0; t < res.predicted.size(); ++t) {
        std::fprintf(fp, "%zu", t + 1);
        for (int j = 0; j < d; ++j) std::fprintf(fp, ",%.17g", res.predicted[t][j]);
        for (int j = 0; j < d; ++j) std::fprintf(fp, ",%.17g", res.ground_truth[t][j]);
        std::fprintf(fp, ",%.17g\n", res.divergence[t]);
    }
    std::fclose(fp);
}

} // namespace ldmlab::toy
