// Configuration-driven experiment runner. Subcommands dispatch to the library
// modules and emit the CSV/JSON artifacts; every artifact embeds the resolved
// config hash and master seed. Exit codes: 0 ok, 1 runtime error, 2 usage or
// validation error.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "ldmlab/divergence.hpp"
#include "ldmlab/ldm.hpp"
#include "ldmlab/reg_analysis.hpp"
#include "ldmlab/registry.hpp"
#include "ldmlab/sensitivity.hpp"
#include "ldmlab/toy/evaluate.hpp"

using json = nlohmann::json;
using namespace ldmlab;

namespace {

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (const unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hash_hex(const json& resolved) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a(resolved.dump())));
    return buf;
}

// Fail-fast on unknown keys, naming the first offender.
void require_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw ValidationError(where + ": expected an object");
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw ValidationError(where + ": unknown key '" + it.key() + "'");
}

template <typename T>
T get_or(const json& obj, const std::string& key, T def) {
    return obj.contains(key) ? obj.at(key).get<T>() : def;
}

TimeGrid parse_grid(const json& cfg) {
    const json g = cfg.at("grid");
    require_keys(g, "grid", {"t_end", "n_steps"});
    return TimeGrid(g.at("t_end").get<double>(), g.at("n_steps").get<int>());
}

Params parse_params(const json& sys) {
    Params p;
    if (sys.contains("params"))
        for (auto it = sys.at("params").begin(); it != sys.at("params").end(); ++it)
            p[it.key()] = it.value().get<double>();
    return p;
}

NamedSystem parse_system(const json& cfg) {
    const json s = cfg.at("system");
    require_keys(s, "system", {"name", "params"});
    const std::string name = s.at("name").get<std::string>();
    if (!registry_has_system(name)) throw ValidationError("system: unknown name '" + name + "'");
    return make_sde_system(name, parse_params(s));
}

toy::ToyEnv parse_env(const json& cfg) {
    const json e = cfg.at("env");
    require_keys(e, "env", {"kind", "gravity", "horizon", "dt"});
    toy::ToyEnv env;
    env.kind = toy::ToyEnv::kind_from_string(e.at("kind").get<std::string>());
    env.gravity = get_or(e, "gravity", 9.8);
    env.horizon = get_or(e, "horizon", 100);
    env.dt = get_or(e, "dt", 0.05);
    return env;
}

toy::ErrorInjection parse_injection(const json& j, const std::string& where) {
    require_keys(j, where, {"kind", "var", "mu_max", "var_max"});
    toy::ErrorInjection inj;
    const std::string kind = get_or<std::string>(j, "kind", "none");
    if (kind == "none")
        inj.kind = toy::ErrorInjection::Kind::none;
    else if (kind == "zero_drift")
        inj.kind = toy::ErrorInjection::Kind::zero_drift;
    else if (kind == "nonzero_drift")
        inj.kind = toy::ErrorInjection::Kind::nonzero_drift;
    else
        throw ValidationError(where + ": unknown injection kind '" + kind + "'");
    inj.var = get_or(j, "var", 0.0);
    inj.mu_max = get_or(j, "mu_max", 0.0);
    inj.var_max = get_or(j, "var_max", 0.0);
    return inj;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << content << "\n";
}

std::string out_path(const std::string& dir, const std::string& file) {
    if (dir.empty()) return file;
    return dir + "/" + file;
}

struct Ctx {
    json cfg;
    std::string hash;
    uint64_t seed = 0;
    std::string out_dir;
    int workers = 1;

    std::string preamble() const { return "config_hash=" + hash + " seed=" + std::to_string(seed); }
    json stamp(json j) const {
        j["config_hash"] = hash;
        j["seed"] = seed;
        return j;
    }
};

int cmd_simulate(const Ctx& ctx) {
    require_keys(ctx.cfg, "config",
                 {"system", "grid", "epsilon", "seed", "out", "workers"});
    const auto named = parse_system(ctx.cfg);
    const TimeGrid grid = parse_grid(ctx.cfg);
    const double eps = get_or(ctx.cfg, "epsilon", 0.0);
    const auto bundle = generate_brownian_bundle(grid, named.sys.n_noise(), ctx.seed);
    const auto traj =
        euler_maruyama(apply_perturbation(named.sys, named.pert, eps), named.x0, bundle);
    write_trajectory_csv(traj, out_path(ctx.out_dir, get_or<std::string>(ctx.cfg, "out", "trajectory.csv")),
                         {ctx.preamble()});
    return 0;
}

int cmd_sensitivity(const Ctx& ctx) {
    require_keys(ctx.cfg, "config", {"system", "grid", "kind", "seed", "out", "workers"});
    const auto named = parse_system(ctx.cfg);
    const TimeGrid grid = parse_grid(ctx.cfg);
    const std::string kind = get_or<std::string>(ctx.cfg, "kind", "epsilon");
    const auto bundle = generate_brownian_bundle(grid, named.sys.n_noise(), ctx.seed);
    const auto base = euler_maruyama(named.sys, named.x0, bundle);
    SensitivityBundle sens;
    if (kind == "epsilon") {
        sens = integrate_epsilon_sensitivities(named.sys, named.pert, base, bundle);
    } else if (kind == "initial_value") {
        std::vector<std::pair<int, int>> pairs;
        for (int i = 0; i < named.sys.dim(); ++i)
            for (int j = 0; j < named.sys.dim(); ++j) pairs.emplace_back(i, j);
        sens = integrate_initial_value_sensitivities(named.sys, base, bundle, pairs);
    } else {
        throw ValidationError("kind: must be 'epsilon' or 'initial_value'");
    }
    write_sensitivity_csv(sens, out_path(ctx.out_dir, get_or<std::string>(ctx.cfg, "out", "sensitivity.csv")),
                          {ctx.preamble()});
    return 0;
}

int cmd_regcheck(const Ctx& ctx) {
    require_keys(ctx.cfg, "config",
                 {"system", "grid", "loss", "epsilon", "epsilon_grid", "n_paths", "seed",
                  "include_bias", "half_s_tilde", "out_csv", "out_json", "workers"});
    const auto named = parse_system(ctx.cfg);
    const TimeGrid grid = parse_grid(ctx.cfg);
    const LossField loss = make_loss(get_or<std::string>(ctx.cfg, "loss", "quartic"), named.sys.dim());
    const long n_paths = get_or<long>(ctx.cfg, "n_paths", 20000);
    const double eps = get_or(ctx.cfg, "epsilon", 0.1);
    std::vector<double> eps_grid = get_or(ctx.cfg, "epsilon_grid",
                                          std::vector<double>{0.02, 0.04, 0.08, 0.16});
    EstimatorOptions opts;
    opts.half_s_tilde = get_or(ctx.cfg, "half_s_tilde", false);
    opts.workers = ctx.workers;
    const bool include_bias = get_or(ctx.cfg, "include_bias", false);

    const auto report =
        estimate_regularizer(named.sys, named.pert, loss, grid, named.x0, eps, n_paths, ctx.seed, opts);
    const auto scan = taylor_residual_scan(named.sys, named.pert, loss, grid, named.x0, eps_grid,
                                           n_paths, ctx.seed, include_bias, opts);
    write_residual_csv(scan, out_path(ctx.out_dir, get_or<std::string>(ctx.cfg, "out_csv", "residuals.csv")),
                       {ctx.preamble()});
    json j = json::parse(report.to_json());
    j["fitted_slope"] = scan.slope;
    j["include_bias"] = include_bias;
    write_text(out_path(ctx.out_dir, get_or<std::string>(ctx.cfg, "out_json", "regcheck.json")),
               ctx.stamp(j).dump(2));
    return 0;
}

int cmd_divergence(const Ctx& ctx) {
    require_keys(ctx.cfg, "config",
                 {"rollout_system", "grid", "delta_grid", "eps_dist", "n_paths", "seed",
                  "with_second", "out_csv", "out_json", "workers", "q_expansion"});
    const json rs = ctx.cfg.at("rollout_system");
    require_keys(rs, "rollout_system", {"name", "params"});
    const auto named = make_rollout_system(rs.at("name").get<std::string>(), parse_params(rs));
    const TimeGrid grid = parse_grid(ctx.cfg);
    const long n_paths = get_or<long>(ctx.cfg, "n_paths", 2000);
    const bool with_second = get_or(ctx.cfg, "with_second", true);
    std::vector<double> deltas =
        get_or(ctx.cfg, "delta_grid", std::vector<double>{0.0, 0.001, 0.01, 0.1});

    EpsDistribution dist;
    dist.direction = Vec::Ones(named.sys.dim_z()).normalized();
    if (ctx.cfg.contains("eps_dist")) {
        const json d = ctx.cfg.at("eps_dist");
        require_keys(d, "eps_dist", {"kind", "magnitude", "direction"});
        const std::string kind = get_or<std::string>(d, "kind", "deterministic");
        if (kind == "deterministic")
            dist.kind = EpsDistribution::Kind::deterministic;
        else if (kind == "gaussian")
            dist.kind = EpsDistribution::Kind::gaussian;
        else if (kind == "spike")
            dist.kind = EpsDistribution::Kind::spike;
        else
            throw ValidationError("eps_dist: unknown kind '" + kind + "'");
        dist.magnitude = get_or(d, "magnitude", 0.1);
        if (d.contains("direction")) {
            const auto dir = d.at("direction").get<std::vector<double>>();
            if (static_cast<int>(dir.size()) != named.sys.dim_z())
                throw ValidationError("eps_dist: direction length != dim_z");
            dist.direction = Eigen::Map<const Vec>(dir.data(), static_cast<long>(dir.size()));
        }
    }

    const auto rep = empirical_divergence(named.sys, grid, named.h0, named.z0, dist, deltas,
                                          n_paths, ctx.seed, with_second, ctx.workers);
    write_divergence_csv(rep, out_path(ctx.out_dir, get_or<std::string>(ctx.cfg, "out_csv", "divergence.csv")),
                         {ctx.preamble()});
    json j = json::parse(rep.to_json());
    if (ctx.cfg.contains("q_expansion")) {
        const json qe = ctx.cfg.at("q_expansion");
        require_keys(qe, "q_expansion", {"delta_grid", "action"});
        const auto qdeltas = qe.at("delta_grid").get<std::vector<double>>();
        Vec action = Vec::Zero(named.sys.dim_a());
        if (qe.contains("action")) {
            const auto av = qe.at("action").get<std::vector<double>>();
            action = Eigen::Map<const Vec>(av.data(), static_cast<long>(av.size()));
        }
        const auto q = q_expansion_check(named.sys, grid, named.h0, named.z0, dist.direction,
                                         action, qdeltas, n_paths, ctx.seed, ctx.workers);
        json rows = json::array();
        for (const auto& r : q.rows)
            rows.push_back({{"delta", r.delta},
                            {"mean_abs_residual", r.mean_abs_residual},
                            {"stderr", r.stderr_}});
        j["q_expansion"] = {{"rows", rows}, {"slope", q.slope}};
    }
    write_text(out_path(ctx.out_dir, get_or<std::string>(ctx.cfg, "out_json", "divergence.json")),
               ctx.stamp(j).dump(2));
    return 0;
}

toy::TrainConfig parse_train(const json& t) {
    require_keys(t, "train",
                 {"lambda", "n_projections", "lr", "momentum", "batch", "steps", "window",
                  "episodes", "seed", "dim_z", "dim_h", "width", "depth", "injection",
                  "penalize_encoder"});
    toy::TrainConfig cfg;
    cfg.lambda = get_or(t, "lambda", 0.01);
    cfg.n_projections = get_or(t, "n_projections", 1);
    cfg.lr = get_or(t, "lr", 0.05);
    cfg.momentum = get_or(t, "momentum", 0.9);
    cfg.batch = get_or(t, "batch", 16);
    cfg.steps = get_or(t, "steps", 1500);
    cfg.window = get_or(t, "window", 8);
    cfg.episodes = get_or(t, "episodes", 64);
    cfg.seed = get_or<uint64_t>(t, "seed", 0);
    cfg.dim_z = get_or(t, "dim_z", 4);
    cfg.dim_h = get_or(t, "dim_h", 8);
    cfg.width = get_or(t, "width", 16);
    cfg.depth = get_or(t, "depth", 1);
    cfg.penalize_encoder = get_or(t, "penalize_encoder", false);
    if (t.contains("injection")) cfg.injection = parse_injection(t.at("injection"), "injection");
    cfg.validate();
    return cfg;
}

int cmd_train(const Ctx& ctx) {
    require_keys(ctx.cfg, "config", {"env", "train", "seed", "out_model", "out_log", "workers"});
    const auto env = parse_env(ctx.cfg);
    toy::TrainConfig cfg = parse_train(ctx.cfg.at("train"));
    if (ctx.cfg.contains("seed")) cfg.seed = ctx.seed;
    const auto res = toy::train(env, cfg);
    res.model.save(out_path(ctx.out_dir, get_or<std::string>(ctx.cfg, "out_model", "model.bin")));
    toy::write_train_log_csv(res.log,
                             out_path(ctx.out_dir, get_or<std::string>(ctx.cfg, "out_log", "train_log.csv")),
                             {ctx.preamble()});
    return 0;
}

toy::LdmModel load_model(const Ctx& ctx, const toy::ToyEnv& env) {
    const json md = ctx.cfg.at("model_dims");
    require_keys(md, "model_dims", {"dim_z", "dim_h", "width", "depth"});
    return toy::LdmModel::load(out_path(ctx.out_dir, ctx.cfg.at("model").get<std::string>()),
                               env.obs_dim(), md.at("dim_z").get<int>(), md.at("dim_h").get<int>(),
                               md.at("width").get<int>(), md.at("depth").get<int>());
}

int cmd_evaluate(const Ctx& ctx) {
    require_keys(ctx.cfg, "config",
                 {"env", "model", "model_dims", "suite", "episodes", "seed", "out", "workers"});
    const auto env = parse_env(ctx.cfg);
    const auto model = load_model(ctx, env);
    std::vector<toy::SuiteSetting> suite;
    if (ctx.cfg.contains("suite")) {
        for (const auto& s : ctx.cfg.at("suite")) {
            require_keys(s, "suite entry",
                         {"name", "obs_noise_mean", "obs_noise_std", "rotation_deg", "mask_frac",
                          "mask_noise_mean", "mask_noise_std", "gravity", "inject"});
            toy::SuiteSetting set;
            set.name = s.at("name").get<std::string>();
            set.obs.noise_mean = get_or(s, "obs_noise_mean", 0.0);
            set.obs.noise_std = get_or(s, "obs_noise_std", 0.0);
            set.obs.rotation = get_or(s, "rotation_deg", 0.0) * M_PI / 180.0;
            set.obs.mask_frac = get_or(s, "mask_frac", 0.0);
            set.obs.mask_noise_mean = get_or(s, "mask_noise_mean", 0.0);
            set.obs.mask_noise_std = get_or(s, "mask_noise_std", 0.0);
            set.gravity = get_or(s, "gravity", -1.0);
            if (s.contains("inject")) set.inject = parse_injection(s.at("inject"), "inject");
            suite.push_back(set);
        }
    }
    const auto rep = toy::evaluate_robustness(model, env, suite, get_or(ctx.cfg, "episodes", 20), ctx.seed);
    write_text(out_path(ctx.out_dir, get_or<std::string>(ctx.cfg, "out", "robustness.json")),
               ctx.stamp(json::parse(rep.to_json())).dump(2));
    return 0;
}

int cmd_rollout(const Ctx& ctx) {
    require_keys(ctx.cfg, "config",
                 {"env", "model", "model_dims", "horizon", "seed", "out", "workers"});
    const auto env = parse_env(ctx.cfg);
    const auto model = load_model(ctx, env);
    const auto res = toy::rollout_openloop(model, env, get_or(ctx.cfg, "horizon", env.horizon), ctx.seed);
    toy::write_openloop_csv(res, out_path(ctx.out_dir, get_or<std::string>(ctx.cfg, "out", "openloop.csv")),
                            {ctx.preamble()});
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ldmlab: SDE-based latent dynamics analysis runner"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    uint64_t seed_override = 0;
    bool seed_given = false;

    const std::vector<std::string> names{"simulate", "sensitivity", "regcheck", "divergence",
                                         "train", "evaluate", "rollout"};
    for (const auto& n : names) {
        auto* sub = app.add_subcommand(n);
        sub->add_option("--config", config_path, "JSON config file")->required();
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed_override, "master seed override")
            ->each([&](const std::string&) { seed_given = true; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    const std::string sub = app.get_subcommands().front()->get_name();

    Ctx ctx;
    {
        std::ifstream in(config_path);
        if (!in) {
            std::cerr << "error: cannot open config '" << config_path << "'\n";
            return 2;
        }
        try {
            in >> ctx.cfg;
        } catch (const json::exception& e) {
            std::cerr << "error: config parse failure: " << e.what() << "\n";
            return 2;
        }
    }

    try {
        ctx.seed = get_or<uint64_t>(ctx.cfg, "seed", 0);
        if (seed_given) {
            ctx.seed = seed_override;
            ctx.cfg["seed"] = seed_override;
        }
        ctx.workers = get_or(ctx.cfg, "workers", 1);
        ctx.out_dir = out_dir;
        ctx.hash = hash_hex(ctx.cfg);

        if (sub == "simulate") return cmd_simulate(ctx);
        if (sub == "sensitivity") return cmd_sensitivity(ctx);
        if (sub == "regcheck") return cmd_regcheck(ctx);
        if (sub == "divergence") return cmd_divergence(ctx);
        if (sub == "train") return cmd_train(ctx);
        if (sub == "evaluate") return cmd_evaluate(ctx);
        if (sub == "rollout") return cmd_rollout(ctx);
        std::cerr << "error: unknown subcommand\n";
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const json::exception& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 1;
    }
}
