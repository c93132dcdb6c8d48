#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lsr/common.hpp"
#include "lsr/dataio.hpp"

namespace lsr {

struct PcaModel {
    Vec mean;          // length d
    Mat basis;         // d x p, orthonormal columns, descending variance
    Vec eigenvalues;   // all d eigenvalues, descending
};

/// Principal directions retaining at least variance_target of total variance
/// (fewest such components). Standard centered PCA.
PcaModel pca_fit(const Mat& x, double variance_target);

Mat pca_transform(const PcaModel& pca, const Mat& x);

enum class DistanceMetric { euclidean, cosine };

struct KmeansOptions {
    int max_iter = 300;
    int restarts = 5;
    std::uint64_t seed = 0;
};

/// Lloyd k-means with k-means++ seeding, best of `restarts` runs by final
/// inertia. Cosine distance works on l2-normalized rows with centroids
/// re-normalized after every update; empty clusters are reseeded to the point
/// farthest from its assigned centroid.
struct KmeansResult {
    Mat centroids;  // k x p
    double inertia = 0.0;
    std::vector<int> labels;               // fit-data assignment
    std::vector<double> objective_history; // winning restart, one entry per Lloyd iteration
    int iterations = 0;
};
KmeansResult kmeans_fit(const Mat& x, int k, DistanceMetric metric, const KmeansOptions& opt);

/// Nearest-centroid assignment in the model feature space; ties break toward
/// the lower centroid index.
std::vector<int> assign(const Mat& centroids, DistanceMetric metric, const Mat& x);

/// PCA + k-means bundle applied to raw feature rows.
struct ClusterModel {
    PcaModel pca;
    Mat centroids;  // k x p
    DistanceMetric metric = DistanceMetric::euclidean;
    int k = 0;
    double inertia = 0.0;

    std::vector<int> assign_rows(const Mat& x) const;
};

enum class MetricPolicy { euclidean, cosine, automatic };

struct ClusterFitOptions {
    double variance_target = 0.95;
    MetricPolicy policy = MetricPolicy::automatic;
    KmeansOptions kmeans;
};

/// Fits PCA then k-means. Policy `automatic` fits both distance metrics and
/// keeps the better-balanced solution: lower normalized entropy deficit
/// 1 - H(cluster sizes)/log k, ties toward Euclidean.
ClusterModel fit_cluster_model(const Mat& x, int k, const ClusterFitOptions& opt);

/// Normalized entropy deficit of a labeling's cluster sizes.
double entropy_deficit(const std::vector<int>& labels, int k);

struct ClusterProfile {
    std::uint32_t patient_id = 0;
    Vec fractions;  // length k, sums to 1
};

/// Per-patient fraction of records per cluster. Errors if a patient in the
/// set's vocabulary has no records.
std::vector<ClusterProfile> cluster_profiles(const std::vector<int>& labels, const EmbeddingSet& set,
                                             int k);

void save_cluster_model(const ClusterModel& model, const std::string& path);
ClusterModel load_cluster_model(const std::string& path);
void save_centroids_csv(const ClusterModel& model, const std::string& path);

}  // namespace lsr
