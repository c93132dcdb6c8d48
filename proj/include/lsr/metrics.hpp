#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "lsr/clustering.hpp"
#include "lsr/common.hpp"
#include "lsr/dataio.hpp"
#include "lsr/rotation.hpp"

namespace lsr {

/// Adjusted Rand index between two labelings. Defined as 1.0 when the
/// chance-adjustment denominator vanishes (both labelings trivial).
double ari(const std::vector<int>& a, const std::vector<int>& b);

/// Mutual information normalized by the arithmetic mean of the entropies.
/// Constant-vs-constant is 1.0, constant-vs-varying is 0.0.
double nmi(const std::vector<int>& a, const std::vector<int>& b);

/// Mean per-cluster Dice under the optimal one-to-one cluster correspondence
/// (maximum-weight assignment over per-pair Dice scores). Labels must lie in
/// [0, k). Pairs of clusters empty on both sides are vacuous and excluded;
/// clusters left unmatched because the other side has fewer nonempty clusters
/// contribute 0.
double dice_matched(const std::vector<int>& a, const std::vector<int>& b, int k);

/// Maximum-weight perfect matching on a square weight matrix (Hungarian
/// method, O(n^3)). Returns col_of_row.
std::vector<int> max_weight_assignment(const Mat& weights);

struct PatientStability {
    std::uint32_t patient_id = 0;
    double ari = 0.0;
    double nmi = 0.0;
    double dice = 0.0;
};

struct StabilityReport {
    int k = 0;
    DistanceMetric metric_used = DistanceMetric::euclidean;
    double ari = 0.0;
    double nmi = 0.0;
    double dice = 0.0;
    std::vector<PatientStability> per_patient;
};

struct StabilityOptions {
    std::vector<int> k_values;  // defaults to 5..50 step 5 when empty
    double variance_target = 0.95;
    MetricPolicy policy = MetricPolicy::automatic;
    int restarts = 5;
    int max_iter = 300;
    std::uint64_t seed = 0;
    /// Protocols to compare; unset uses the first two of the vocabulary.
    std::optional<std::pair<std::uint32_t, std::uint32_t>> protocols;
};

/// Cross-protocol cluster stability. For each k the cluster model is fitted
/// on the pooled records of the two protocols (in raw z, or in z_B when a
/// projector is given), both sides are assigned, and ARI/NMI/Dice are
/// computed over co-registered record pairs (same anatomy and patient).
std::vector<StabilityReport> stability_sweep(const EmbeddingSet& set,
                                             const Projector* projector_or_null,
                                             const StabilityOptions& opt);

/// Same protocol but with caller-supplied feature rows (used for baseline
/// harmonization methods). `features` must align with `set` row-for-row.
std::vector<StabilityReport> stability_sweep_features(const EmbeddingSet& set, const Mat& features,
                                                      const StabilityOptions& opt);

struct ClassifierEval {
    double acc_z = 0.0;
    double acc_zT = 0.0;
    double acc_zB = 0.0;
    // per-class accuracy (target protocol vs rest) in each space
    double acc_z_target = 0.0, acc_z_rest = 0.0;
    double acc_zT_target = 0.0, acc_zT_rest = 0.0;
    double acc_zB_target = 0.0, acc_zB_rest = 0.0;
};

/// L2-regularized logistic classification of the target protocol, trained on
/// `train` and evaluated on `test`, separately in raw z, z_T and z_B.
ClassifierEval subspace_classifier_eval(const EmbeddingSet& train, const EmbeddingSet& test,
                                        const Projector& projector, std::uint32_t target_protocol,
                                        double lambda = 1e-2);

/// Ridge logistic regression via iteratively reweighted least squares;
/// returns (weights, bias). Deterministic.
std::pair<Vec, double> ridge_logistic(const Mat& x, const std::vector<std::uint8_t>& y, double lambda,
                                      int max_iter = 100);

}  // namespace lsr
