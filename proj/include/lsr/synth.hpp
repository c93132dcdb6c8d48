#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "lsr/common.hpp"
#include "lsr/dataio.hpp"

namespace lsr {

/// Survival section of the generator config. effect_cluster indexes the
/// biological mode of the patient code that drives the hazard.
struct SurvivalParams {
    double base_hazard = 0.01;
    int effect_cluster = 0;
    double effect_size = 0.0;       // beta_true
    double censor_quantile = 0.9;   // administrative horizon, 1.0 disables
    bool binary_covariate = false;  // median split of the patient code
};

struct SynthConfig {
    int m = 64;
    int n_anatomy = 40;
    int n_protocols = 2;
    int n_patients = 25;
    int d_bio = 10;
    int d_tech = 5;
    double noise_sigma = 0.05;
    double tech_strength = 3.0;
    /// Scale of per-patient biological offsets. 0 keeps every patient on the
    /// shared per-site code (patient codes are still drawn for survival use).
    double patient_sigma = 0.0;
    std::optional<SurvivalParams> survival;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Planted factor structure behind a generated set. Bases are orthonormal and
/// mutually orthogonal; codes are the per-category latent coordinates.
struct GroundTruth {
    Mat tech_basis;         // m x d_tech
    Mat bio_basis;          // m x d_bio
    Mat anatomy_codes;      // n_anatomy x d_bio
    Mat protocol_offsets;   // n_protocols x d_tech
    Mat patient_codes;      // n_patients x d_bio
    Vec patient_covariate;  // filled by generate_survival, else empty
};

void save_ground_truth(const GroundTruth& gt, const std::string& path);
GroundTruth load_ground_truth(const std::string& path);

/// Generates the full (anatomy x protocol x patient) grid:
///   z = B (b_a + patient_sigma u_s) + tech_strength T (t_p + eta) + eps
/// with eta ~ N(0, noise_sigma^2 I_dtech) per record and
/// eps ~ N(0, noise_sigma^2 I_m). The in-subspace jitter eta models
/// acquisition-to-acquisition technical variability; it vanishes together
/// with eps at noise_sigma = 0, where records become exact functions of
/// (anatomy, protocol) when patient_sigma = 0.
std::pair<EmbeddingSet, GroundTruth> generate(const SynthConfig& config);

/// Attaches exponential survival to every patient:
///   h_s = base_hazard * exp(effect_size * x_s)
/// where x_s is the patient's planted code component at effect_cluster
/// (optionally binarized by median split). Times beyond the censor-quantile
/// horizon are administratively censored. Returns a copy of the set with
/// survival fields filled and records the covariate in the GroundTruth.
EmbeddingSet generate_survival(const EmbeddingSet& set, GroundTruth& truth, const SynthConfig& config);

}  // namespace lsr
