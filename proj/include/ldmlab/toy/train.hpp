#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ldmlab/toy/env.hpp"
#include "ldmlab/toy/model.hpp"

namespace ldmlab::toy {

// Exogenous encoder-error signal injected into z at every encode:
// zero_drift adds N(0, var); nonzero_drift adds N(mu_t, var_t) with
// mu_t ~ U[0, mu_max], var_t ~ U[0, var_max] sampled per step.
struct ErrorInjection {
    enum class Kind { none, zero_drift, nonzero_drift };
    Kind kind = Kind::none;
    double var = 0.0;
    double mu_max = 0.0;
    double var_max = 0.0;
};

struct TrainConfig {
    double lambda = 0.01; // Jacobian penalty weight, in [0, 1]
    int n_projections = 1;
    double lr = 0.01;
    double momentum = 0.9;
    double grad_clip = 5.0;   // global-norm clip applied before the update
    double nll_weight = 0.1;  // latent prediction NLL weight within L_dyn
    int batch = 16;
    int steps = 1500;
    int window = 8;
    int episodes = 64; // dataset size
    uint64_t seed = 0;
    int dim_z = 4, dim_h = 8, width = 16, depth = 1;
    ErrorInjection injection;
    bool penalize_encoder = false; // also penalize the encoder Jacobian

    void validate() const;
};

struct TrainLogRow {
    long step = 0;
    double loss = 0;
    double penalty = 0;
    double total = 0;
};

struct TrainResult {
    LdmModel model;
    std::vector<TrainLogRow> log;
};

// Dataset of observation/action episodes. The behavior policy is one-step
// greedy on the true dynamics with epsilon-random exploration, so the data
// covers the operating region the learned controller will visit.
struct Episode {
    std::vector<Vec> obs;       // horizon + 1
    std::vector<double> action; // horizon
};

std::vector<Episode> collect_episodes(const ToyEnv& env, int n_episodes, uint64_t seed,
                                      double explore_eps = 0.3);

// L_dyn = predictor Gaussian NLL of the sampled posterior latent + decoder
// squared reconstruction error, averaged over batch windows; total adds
// lambda * penalty when lambda > 0. Plain momentum gradient descent with
// exact analytic backpropagation through time.
TrainResult train(const ToyEnv& env, const TrainConfig& config);

// Random-projection estimate of |J|_F for the sequence cell's input-output
// Jacobian at the given input points: sqrt of the mean over points and
// projections of |J v|^2 with v uniform on the sphere scaled so that
// E |J v|^2 = |J|_F^2.
double jacobian_penalty(const LdmModel& model, const std::vector<Vec>& cell_inputs,
                        int n_projections, uint64_t seed);

// Loss of one fixed batch (same windows, same reparameterization noise and
// projection draws for a given seed); used by the finite-difference gradient
// check and internally by train(). When grads != nullptr the analytic
// parameter gradient is accumulated there.
struct BatchSpec {
    std::vector<std::pair<int, int>> windows; // (episode, start)
};

double batch_loss(const LdmModel& model, const std::vector<Episode>& data, const BatchSpec& batch,
                  const TrainConfig& config, uint64_t noise_seed, LdmModel* grads,
                  double* penalty_out);

void write_train_log_csv(const std::vector<TrainLogRow>& log, const std::string& path,
                         const std::vector<std::string>& preamble = {});

// Exact sequence-cell Jacobian Frobenius norm averaged over a probe set.
double exact_cell_jacobian_norm(const LdmModel& model, const std::vector<Vec>& cell_inputs);

// Cell input points harvested from model rollouts over dataset windows.
std::vector<Vec> probe_cell_inputs(const LdmModel& model, const std::vector<Episode>& data,
                                   int count, uint64_t seed);

} // namespace ldmlab::toy
