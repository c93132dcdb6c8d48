#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "lsr/common.hpp"

namespace lsr {

/// Fitted ComBat parameters: per-feature grand model plus per-batch
/// empirical-Bayes shrunk location/scale.
struct CombatModel {
    std::vector<std::uint32_t> batch_vocab;    // sorted unique batch codes
    Vec alpha;                                  // per-feature grand mean
    Mat beta_cov;                               // c x d covariate coefficients
    Vec pooled_sigma;                           // per-feature residual scale
    Mat gamma_star;                             // n_batch x d shrunk locations
    Mat delta2_star;                            // n_batch x d shrunk squared scales
    std::vector<std::uint8_t> passthrough;      // per-feature: zero variance, left unchanged
};

struct CombatOptions {
    double fit_fraction = 0.2;   // parameters are fit on this share of rows
    std::size_t chunk = 50000;   // application chunk size
    int max_iter = 100;          // EB conditional updates
    double tol = 1e-6;           // relative change stop for EB updates
    std::uint64_t seed = 0;      // fit-subset sampling
};

/// Location/scale batch harmonization with empirical-Bayes shrinkage
/// (normal prior on locations, inverse-gamma on scales, moment-matched
/// hyperpriors, iterative conditional updates). A single batch passes
/// through unchanged; zero-variance features pass through with a warning on
/// stderr. Optional covariates enter the grand model and are preserved.
Mat combat_fit_apply(const Mat& x, const std::vector<std::uint32_t>& batches,
                     const std::optional<Mat>& covariates, const CombatOptions& opt,
                     CombatModel* fitted = nullptr);

/// Posterior-mean location under the normal prior: the EB shrinkage step,
/// exposed for direct probing.
/// gamma* = (n tau2 gamma_hat + delta2 gamma_bar) / (n tau2 + delta2)
double eb_shrink_location(double gamma_hat, double n, double tau2, double delta2, double gamma_bar);

/// Whitening/recoloring alignment of source features onto the target
/// distribution plus mean shift.
struct CoralTransform {
    Mat map;        // d x d, C_s^{-1/2} C_t^{1/2}
    Vec mean_source;
    Vec mean_target;
    double eps = 1e-5;
};

CoralTransform coral_fit(const Mat& source, const Mat& target, double eps = 1e-5);

/// X' = (X - mean_source) map + mean_target.
Mat coral_apply(const CoralTransform& t, const Mat& x);

}  // namespace lsr
