#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lsr/clustering.hpp"
#include "lsr/common.hpp"
#include "lsr/pairing.hpp"
#include "lsr/rotation.hpp"
#include "lsr/synth.hpp"

namespace lsr {

struct BaselineConfig {
    bool combat = true;
    bool coral = true;
    double combat_fit_fraction = 0.2;
    std::size_t combat_chunk = 50000;
    double coral_eps = 1e-5;
};

struct ClusteringConfig {
    int k_min = 5;
    int k_max = 50;
    int k_step = 5;
    int fit_k = 20;  // cluster stage export
    double variance_target = 0.95;
    MetricPolicy policy = MetricPolicy::automatic;
    int restarts = 5;
    int max_iter = 300;

    std::vector<int> k_values() const;
};

struct SurvivalFitConfig {
    double ridge = 1e-4;
    std::vector<int> ks = {10, 20, 30, 40, 50};
};

struct ClassifyConfig {
    double lambda = 1e-2;
    double test_fraction = 0.5;
};

struct ExperimentConfig {
    std::uint64_t seed = 42;
    std::string out_dir = "out";
    bool export_csv = false;  // additionally write embeddings as CSV

    SynthConfig synth;
    std::size_t n_pairs = 12000;
    PairingOptions pairing;
    int rotation_r = 10;
    RotationOptions rotation;
    ClusteringConfig clustering;
    SurvivalFitConfig survival_fit;
    BaselineConfig baselines;
    ClassifyConfig classify;

    void validate() const;
};

/// Parses the JSON config file. Unknown keys are rejected; missing keys take
/// the documented defaults.
ExperimentConfig load_config(const std::string& path);

/// One line per parameter: name, value, and whether the default follows the
/// published disentanglement protocol or is an implementation choice.
std::string explain_config(const ExperimentConfig& cfg);

}  // namespace lsr
