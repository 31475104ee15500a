#include "ldmlab/toy/train.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace ldmlab::toy {

void TrainConfig::validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw std::invalid_argument("TrainConfig: lambda must lie in [0, 1]");
    if (n_projections < 1) throw std::invalid_argument("TrainConfig: n_projections >= 1");
    if (batch < 1 || steps < 1 || window < 1 || episodes < 1)
        throw std::invalid_argument("TrainConfig: batch/steps/window/episodes must be positive");
}

std::vector<Episode> collect_episodes(const ToyEnv& env, int n_episodes, uint64_t seed,
                                      double explore_eps) {
    const auto actions = env.action_set();
    std::vector<Episode> out;
    out.reserve(static_cast<size_t>(n_episodes));
    for (int e = 0; e < n_episodes; ++e) {
        Rng rng(derive_seed(seed, static_cast<uint64_t>(e)));
        // alternate greedy-with-exploration and fully random episodes so the
        // data covers both the operating region and the wider state space
        const double eps = explore_eps;
        Episode ep;
        Vec s = env.reset(rng);
        ep.obs.push_back(env.observe_clean(s));
        for (int t = 0; t < env.horizon; ++t) {
            double a;
            if (rng.uniform() < eps) {
                a = actions[static_cast<size_t>(rng.uniform_int(static_cast<int>(actions.size())))];
            } else {
                a = actions.front();
                double best = -1e300;
                for (const double cand : actions) {
                    const double r = env.reward(env.step(s, cand), cand);
                    if (r > best) {
                        best = r;
                        a = cand;
                    }
                }
            }
            ep.action.push_back(a);
            s = env.step(s, a);
            ep.obs.push_back(env.observe_clean(s));
        }
        out.push_back(std::move(ep));
    }
    return out;
}

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

struct StepTrace {
    Mlp::Trace enc, pred, dec, dec_prior, cell;
    Vec mu_e, lv_e, noise_term, z; // noise_term = exp(lv/2) * xi
    Vec mu_p, lv_p;
    std::vector<bool> enc_clamped, pred_clamped;
    Vec cell_in;
    bool has_cell = false;
};

// One window's forward pass; returns summed (nll + rec) over steps.
double window_forward(const LdmModel& m, const Episode& ep, int start, int window,
                      const TrainConfig& cfg, Rng& rng, std::vector<StepTrace>& traces,
                      std::vector<Vec>& hs) {
    const int dz = m.dim_z;
    double loss = 0.0;
    hs.assign(static_cast<size_t>(window) + 2, Vec::Zero(m.dim_h));
    traces.assign(static_cast<size_t>(window) + 1, StepTrace{});
    for (int t = 0; t <= window; ++t) {
        StepTrace& tr = traces[static_cast<size_t>(t)];
        const Vec& s = ep.obs[static_cast<size_t>(start + t)];
        const Vec& h = hs[static_cast<size_t>(t)];

        Vec enc_in(m.dim_h + m.dim_s);
        enc_in << h, s;
        const Vec enc_out = m.encoder.forward(enc_in, tr.enc);
        tr.mu_e = enc_out.head(dz);
        tr.lv_e = Vec(dz);
        tr.enc_clamped.assign(static_cast<size_t>(dz), false);
        for (int j = 0; j < dz; ++j) {
            const double raw = enc_out[dz + j];
            tr.lv_e[j] = clamp_logvar(raw);
            tr.enc_clamped[static_cast<size_t>(j)] = (tr.lv_e[j] != raw);
        }
        tr.noise_term = Vec(dz);
        for (int j = 0; j < dz; ++j) tr.noise_term[j] = std::exp(0.5 * tr.lv_e[j]) * rng.normal();
        tr.z = tr.mu_e + tr.noise_term;
        if (cfg.injection.kind == ErrorInjection::Kind::zero_drift) {
            const double sd = std::sqrt(cfg.injection.var);
            for (int j = 0; j < dz; ++j) tr.z[j] += sd * rng.normal();
        } else if (cfg.injection.kind == ErrorInjection::Kind::nonzero_drift) {
            const double mu = rng.uniform(0.0, cfg.injection.mu_max);
            const double sd = std::sqrt(rng.uniform(0.0, cfg.injection.var_max));
            for (int j = 0; j < dz; ++j) tr.z[j] += mu + sd * rng.normal();
        }

        const Vec pred_out = m.predictor.forward(h, tr.pred);
        tr.mu_p = pred_out.head(dz);
        tr.lv_p = Vec(dz);
        tr.pred_clamped.assign(static_cast<size_t>(dz), false);
        for (int j = 0; j < dz; ++j) {
            const double raw = pred_out[dz + j];
            tr.lv_p[j] = clamp_logvar(raw);
            tr.pred_clamped[static_cast<size_t>(j)] = (tr.lv_p[j] != raw);
        }
        for (int j = 0; j < dz; ++j) {
            const double diff = tr.z[j] - tr.mu_p[j];
            loss += cfg.nll_weight * 0.5 * (tr.lv_p[j] + kLog2Pi + diff * diff * std::exp(-tr.lv_p[j]));
        }

        Vec dec_in(m.dim_h + dz);
        dec_in << h, tr.z;
        const Vec dec_out = m.decoder.forward(dec_in, tr.dec);
        loss += (dec_out - s).squaredNorm();

        // reconstruction through the prior mean: the open-loop path the
        // planner uses must also be trained
        Vec dec_prior_in(m.dim_h + dz);
        dec_prior_in << h, tr.mu_p;
        const Vec dec_prior_out = m.decoder.forward(dec_prior_in, tr.dec_prior);
        loss += (dec_prior_out - s).squaredNorm();

        if (t < window) {
            tr.cell_in = Vec(m.dim_h + dz + 1);
            tr.cell_in << h, tr.z, ep.action[static_cast<size_t>(start + t)];
            hs[static_cast<size_t>(t) + 1] = m.cell.forward(tr.cell_in, tr.cell);
            tr.has_cell = true;
        }
    }
    return loss;
}

void window_backward(const LdmModel& m, const Episode& ep, int start, int window,
                     const std::vector<StepTrace>& traces, const std::vector<Vec>& hs,
                     double scale, double nll_weight, LdmModel& g) {
    const int dz = m.dim_z;
    Vec gh_next = Vec::Zero(m.dim_h); // dL/dh_{t+1}
    for (int t = window; t >= 0; --t) {
        const StepTrace& tr = traces[static_cast<size_t>(t)];
        const Vec& s = ep.obs[static_cast<size_t>(start + t)];
        Vec gh = Vec::Zero(m.dim_h);
        Vec gz = Vec::Zero(dz);

        if (tr.has_cell) {
            const Vec gin = m.cell.backward(tr.cell, gh_next, g.cell);
            gh += gin.head(m.dim_h);
            gz += gin.segment(m.dim_h, dz);
        }

        // reconstruction
        {
            const Vec dec_out = tr.dec.xs.back();
            const Vec gout = 2.0 * scale * (dec_out - s);
            const Vec gin = m.decoder.backward(tr.dec, gout, g.decoder);
            gh += gin.head(m.dim_h);
            gz += gin.tail(dz);
        }

        // prior-mean reconstruction (gradient reaches mu_p and h)
        Vec g_mu_p = Vec::Zero(dz);
        {
            const Vec dec_out = tr.dec_prior.xs.back();
            const Vec gout = 2.0 * scale * (dec_out - s);
            const Vec gin = m.decoder.backward(tr.dec_prior, gout, g.decoder);
            gh += gin.head(m.dim_h);
            g_mu_p += gin.tail(dz);
        }

        // predictor NLL
        {
            Vec gout(2 * dz);
            for (int j = 0; j < dz; ++j) {
                const double diff = tr.z[j] - tr.mu_p[j];
                const double inv_var = std::exp(-tr.lv_p[j]);
                gout[j] = nll_weight * scale * (-diff * inv_var) + g_mu_p[j];
                gout[dz + j] = tr.pred_clamped[static_cast<size_t>(j)]
                                   ? 0.0
                                   : nll_weight * scale * 0.5 * (1.0 - diff * diff * inv_var);
                gz[j] += nll_weight * scale * diff * inv_var;
            }
            gh += m.predictor.backward(tr.pred, gout, g.predictor);
        }

        // encoder via reparameterization: z = mu + exp(lv/2) xi (+ injected const)
        {
            Vec gout(2 * dz);
            for (int j = 0; j < dz; ++j) {
                gout[j] = gz[j];
                gout[dz + j] = tr.enc_clamped[static_cast<size_t>(j)]
                                   ? 0.0
                                   : 0.5 * gz[j] * tr.noise_term[j];
            }
            const Vec gin = m.encoder.backward(tr.enc, gout, g.encoder);
            gh += gin.head(m.dim_h);
        }

        gh_next = gh;
        (void)hs;
    }
}

Vec sphere_projection(int dim, Rng& rng) {
    Vec v(dim);
    double n2 = 0.0;
    do {
        for (int i = 0; i < dim; ++i) v[i] = rng.normal();
        n2 = v.squaredNorm();
    } while (n2 == 0.0);
    return std::sqrt(static_cast<double>(dim) / n2) * v;
}

} // namespace

double batch_loss(const LdmModel& model, const std::vector<Episode>& data, const BatchSpec& batch,
                  const TrainConfig& config, uint64_t noise_seed, LdmModel* grads,
                  double* penalty_out) {
    const int B = static_cast<int>(batch.windows.size());
    // L_dyn averages over the batch and sums over window steps
    const double scale = 1.0 / static_cast<double>(B);

    double loss = 0.0;
    std::vector<std::vector<StepTrace>> all_traces(static_cast<size_t>(B));
    std::vector<std::vector<Vec>> all_hs(static_cast<size_t>(B));
    for (int i = 0; i < B; ++i) {
        Rng rng(derive_seed(noise_seed, static_cast<uint64_t>(i)));
        const auto [e, start] = batch.windows[static_cast<size_t>(i)];
        loss += window_forward(model, data[static_cast<size_t>(e)], start, config.window, config,
                               rng, all_traces[static_cast<size_t>(i)],
                               all_hs[static_cast<size_t>(i)]);
    }
    loss *= scale;

    if (grads) {
        for (int i = 0; i < B; ++i) {
            const auto [e, start] = batch.windows[static_cast<size_t>(i)];
            window_backward(model, data[static_cast<size_t>(e)], start, config.window,
                            all_traces[static_cast<size_t>(i)], all_hs[static_cast<size_t>(i)],
                            scale, config.nll_weight, *grads);
        }
    }

    double penalty = 0.0;
    if (config.lambda > 0.0) {
        // Penalty evaluation points are the cell inputs of the batch, treated
        // as fixed data (no gradient through the rollout that produced them).
        Rng prj(derive_seed(noise_seed, 0x9a11ULL));
        struct Item {
            const Mlp::Trace* tr;
            Vec v;
        };
        std::vector<Item> items;
        for (int i = 0; i < B; ++i) {
            const auto& traces = all_traces[static_cast<size_t>(i)];
            for (int p = 0; p < config.n_projections; ++p) {
                const int t = prj.uniform_int(config.window);
                items.push_back({&traces[static_cast<size_t>(t)].cell,
                                 sphere_projection(model.cell.in_dim(), prj)});
            }
        }
        double sq_sum = 0.0;
        std::vector<double> sq(items.size());
        for (size_t k = 0; k < items.size(); ++k) {
            const Vec ju = model.cell.jvp(*items[k].tr, items[k].v);
            sq[k] = ju.squaredNorm();
            sq_sum += sq[k];
        }
        const double mean_sq = sq_sum / static_cast<double>(items.size());
        penalty = std::sqrt(mean_sq);
        if (grads && penalty > 1e-12) {
            const double w = config.lambda / (2.0 * penalty * static_cast<double>(items.size()));
            for (const auto& item : items)
                model.cell.jvp_sqnorm_grad(*item.tr, item.v, w, grads->cell);
        }
    }
    if (penalty_out) *penalty_out = penalty;
    return loss;
}

TrainResult train(const ToyEnv& env, const TrainConfig& config) {
    config.validate();
    const auto data = collect_episodes(env, config.episodes, derive_seed(config.seed, 1));

    Rng init_rng(derive_seed(config.seed, 2));
    TrainResult res;
    res.model = LdmModel::create(env.obs_dim(), config.dim_z, config.dim_h, config.width,
                                 config.depth, init_rng);

    LdmModel vel = res.model;
    vel.encoder.fill_zero();
    vel.cell.fill_zero();
    vel.predictor.fill_zero();
    vel.decoder.fill_zero();

    Rng batch_rng(derive_seed(config.seed, 3));
    const int max_start = env.horizon - config.window;
    for (long step = 0; step < config.steps; ++step) {
        BatchSpec batch;
        for (int i = 0; i < config.batch; ++i)
            batch.windows.emplace_back(batch_rng.uniform_int(config.episodes),
                                       batch_rng.uniform_int(max_start + 1));
        LdmModel grads = res.model;
        grads.encoder.fill_zero();
        grads.cell.fill_zero();
        grads.predictor.fill_zero();
        grads.decoder.fill_zero();

        double penalty = 0.0;
        const uint64_t noise_seed = derive_seed(derive_seed(config.seed, 4), static_cast<uint64_t>(step));
        const double loss = batch_loss(res.model, data, batch, config, noise_seed, &grads, &penalty);
        const double total = loss + config.lambda * penalty;
        if (!(total < 1e8))
            throw std::runtime_error("train: divergent loss at step " + std::to_string(step));
        res.log.push_back({step, loss, config.lambda > 0.0 ? penalty : 0.0, total});

        if (config.grad_clip > 0.0) {
            const std::vector<double> flat = grads.flatten();
            double sq = 0.0;
            for (const double g : flat) sq += g * g;
            const double norm = std::sqrt(sq);
            if (norm > config.grad_clip) {
                const double s = config.grad_clip / norm;
                grads.encoder.scale(s);
                grads.cell.scale(s);
                grads.predictor.scale(s);
                grads.decoder.scale(s);
            }
        }

        auto update = [&](Mlp& p, Mlp& v, const Mlp& gm) {
            v.scale(config.momentum);
            v.add_scaled(gm, -config.lr);
            p.add_scaled(v, 1.0);
        };
        update(res.model.encoder, vel.encoder, grads.encoder);
        update(res.model.cell, vel.cell, grads.cell);
        update(res.model.predictor, vel.predictor, grads.predictor);
        update(res.model.decoder, vel.decoder, grads.decoder);
    }
    return res;
}

double jacobian_penalty(const LdmModel& model, const std::vector<Vec>& cell_inputs,
                        int n_projections, uint64_t seed) {
    if (n_projections < 1) throw std::invalid_argument("jacobian_penalty: n_projections >= 1");
    if (cell_inputs.empty()) throw std::invalid_argument("jacobian_penalty: empty batch");
    Rng rng(seed);
    double sq_sum = 0.0;
    long count = 0;
    for (const auto& in : cell_inputs) {
        Mlp::Trace tr;
        model.cell.forward(in, tr);
        for (int p = 0; p < n_projections; ++p) {
            const Vec v = sphere_projection(model.cell.in_dim(), rng);
            sq_sum += model.cell.jvp(tr, v).squaredNorm();
            ++count;
        }
    }
    return std::sqrt(sq_sum / static_cast<double>(count));
}

double exact_cell_jacobian_norm(const LdmModel& model, const std::vector<Vec>& cell_inputs) {
    double acc = 0.0;
    for (const auto& in : cell_inputs) acc += model.cell.jacobian(in).norm();
    return acc / static_cast<double>(cell_inputs.size());
}

std::vector<Vec> probe_cell_inputs(const LdmModel& model, const std::vector<Episode>& data,
                                   int count, uint64_t seed) {
    Rng rng(seed);
    std::vector<Vec> out;
    out.reserve(static_cast<size_t>(count));
    while (static_cast<int>(out.size()) < count) {
        const auto& ep = data[static_cast<size_t>(rng.uniform_int(static_cast<int>(data.size())))];
        const int t0 = rng.uniform_int(static_cast<int>(ep.action.size()) - 1);
        Vec h = Vec::Zero(model.dim_h);
        for (int t = 0; t <= t0; ++t) {
            const Vec z = model.encode_mean(h, ep.obs[static_cast<size_t>(t)]);
            Vec cin(model.dim_h + model.dim_z + 1);
            cin << h, z, ep.action[static_cast<size_t>(t)];
            if (t == t0) {
                out.push_back(cin);
                break;
            }
            h = model.cell.forward(cin);
        }
    }
    return out;
}

void write_train_log_csv(const std::vector<TrainLogRow>& log, const std::string& path,
                         const std::vector<std::string>& preamble) {
    std::FILE* fp = std::fopen(path.c_str(), "w");
    if (!fp) throw std::runtime_error("write_train_log_csv: cannot open " + path);
    for (const auto& line : preamble) std::fprintf(fp, "# %s\n", line.c_str());
    std::fprintf(fp, "step,loss,penalty,total\n");
    for (const auto& r : log)
        std::fprintf(fp, "%ld,%.17g,%.17g,%.17g\n", r.step, r.loss, r.penalty, r.total);
    std::fclose(fp);
}

} // namespace ldmlab::toy
