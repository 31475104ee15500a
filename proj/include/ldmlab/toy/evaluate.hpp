#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ldmlab/toy/train.hpp"

namespace ldmlab::toy {

struct SuiteSetting {
    std::string name;
    ObsPerturbation obs;
    double gravity = -1.0; // <= 0 keeps the env default
    ErrorInjection inject; // applied to z at every encode during evaluation
};

struct SettingResult {
    double return_mean = 0;
    double return_stderr = 0;
    double openloop_mse = 0;
    int episodes = 0;
};

struct RobustnessReport {
    std::vector<std::pair<std::string, SettingResult>> rows; // "clean" always first
    std::string to_json() const;
};

// Closed-loop evaluation: at every step the action is chosen greedily over the
// environment's discretized action set by the predicted one-step
// decoder-reconstruction score. Evaluation uses encoder/predictor means.
double run_episode(const LdmModel& model, const ToyEnv& env, const SuiteSetting& setting,
                   uint64_t seed);

RobustnessReport evaluate_robustness(const LdmModel& model, const ToyEnv& env,
                                     const std::vector<SuiteSetting>& suite, int episodes,
                                     uint64_t seed);

struct OpenLoopResult {
    std::vector<Vec> predicted;     // decoded predictions, horizon entries
    std::vector<Vec> ground_truth;  // clean observations, horizon entries
    std::vector<double> divergence; // per-step squared error
};

// Encode the initial observation once, then roll sequence+predictor forward
// with a seeded random action sequence applied to both model and environment.
OpenLoopResult rollout_openloop(const LdmModel& model, const ToyEnv& env, int horizon,
                                uint64_t seed);

void write_openloop_csv(const OpenLoopResult& res, const std::string& path,
                        const std::vector<std::string>& preamble = {});

} // namespace ldmlab::toy
