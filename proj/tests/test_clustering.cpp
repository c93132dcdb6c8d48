#include <doctest.h>

#include <filesystem>
#include <set>

#include "lsr/clustering.hpp"
#include "lsr/metrics.hpp"
#include "lsr/rng.hpp"

using namespace lsr;

namespace {

Mat random_matrix(Eigen::Index n, Eigen::Index d, std::uint64_t seed, double scale = 1.0) {
    SeededRng rng(seed);
    Mat x(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) x(i, j) = rng.normal() * scale;
    }
    return x;
}

}  // namespace

TEST_CASE("pca: data on a line keeps one component along the line") {
    SeededRng rng(3);
    Vec dir(3);
    dir << 1, 2, 2;
    dir.normalize();
    Mat x(50, 3);
    for (Eigen::Index i = 0; i < 50; ++i) x.row(i) = (rng.normal() * dir).transpose();
    const PcaModel pca = pca_fit(x, 0.95);
    CHECK(pca.basis.cols() == 1);
    CHECK(std::abs(std::abs(pca.basis.col(0).dot(dir)) - 1.0) < 1e-8);
}

TEST_CASE("pca: isotropic data at target 1.0 keeps every dimension") {
    const Mat x = random_matrix(500, 6, 5);
    const PcaModel pca = pca_fit(x, 1.0);
    CHECK(pca.basis.cols() == 6);
}

TEST_CASE("pca: spectrum matches a dense eigendecomposition") {
    const Mat x = random_matrix(500, 20, 7, 2.0);
    const PcaModel pca = pca_fit(x, 1.0);
    const Vec mean = x.colwise().mean().transpose();
    const Mat centered = x.rowwise() - mean.transpose();
    const Mat cov = centered.transpose() * centered / 499.0;
    Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
    for (Eigen::Index i = 0; i < 20; ++i) {
        CHECK(std::abs(pca.eigenvalues[i] - eig.eigenvalues()[19 - i]) < 1e-8);
    }
    // orthonormal basis
    CHECK((pca.basis.transpose() * pca.basis - Mat::Identity(pca.basis.cols(), pca.basis.cols()))
              .cwiseAbs()
              .maxCoeff() < 1e-8);
}

TEST_CASE("pca: zero variance is an error") {
    Mat x = Mat::Ones(10, 3);
    CHECK_THROWS_WITH_AS(pca_fit(x, 0.9), doctest::Contains("zero total variance"), DataError);
}

TEST_CASE("kmeans: n equal k puts every point in its own cluster with zero inertia") {
    Mat x(4, 2);
    x << 0, 0, 5, 0, 0, 5, 5, 5;
    const KmeansResult res = kmeans_fit(x, 4, DistanceMetric::euclidean, KmeansOptions{});
    CHECK(res.inertia == doctest::Approx(0.0));
    std::set<int> labels(res.labels.begin(), res.labels.end());
    CHECK(labels.size() == 4);
}

TEST_CASE("kmeans: two well-separated blobs are recovered exactly") {
    SeededRng rng(13);
    Mat x(200, 3);
    std::vector<int> truth(200);
    for (Eigen::Index i = 0; i < 200; ++i) {
        const bool second = i >= 100;
        truth[static_cast<std::size_t>(i)] = second;
        for (Eigen::Index j = 0; j < 3; ++j) x(i, j) = rng.normal() + (second ? 20.0 : 0.0);
    }
    for (DistanceMetric metric : {DistanceMetric::euclidean, DistanceMetric::cosine}) {
        const KmeansResult res = kmeans_fit(x, 2, metric, KmeansOptions{});
        CHECK(ari(res.labels, truth) == doctest::Approx(1.0));
    }
}

TEST_CASE("kmeans: objective history is non-increasing on random data") {
    for (int trial = 0; trial < 50; ++trial) {
        const Mat x = random_matrix(120, 4, 100 + static_cast<std::uint64_t>(trial));
        const DistanceMetric metric =
            trial % 2 == 0 ? DistanceMetric::euclidean : DistanceMetric::cosine;
        KmeansOptions opt;
        opt.seed = static_cast<std::uint64_t>(trial);
        const KmeansResult res = kmeans_fit(x, 7, metric, opt);
        for (std::size_t i = 1; i < res.objective_history.size(); ++i) {
            CHECK(res.objective_history[i] <= res.objective_history[i - 1] + 1e-9);
        }
    }
}

TEST_CASE("kmeans rejects k outside [2, n]") {
    const Mat x = random_matrix(10, 2, 1);
    CHECK_THROWS_AS(kmeans_fit(x, 1, DistanceMetric::euclidean, KmeansOptions{}), DataError);
    CHECK_THROWS_AS(kmeans_fit(x, 11, DistanceMetric::euclidean, KmeansOptions{}), DataError);
}

TEST_CASE("assign: centroids map to themselves, ties break low") {
    Mat centroids(4, 2);
    centroids << 0, 0, 2, 0, 4, 0, 6, 0;
    const std::vector<int> self = assign(centroids, DistanceMetric::euclidean, centroids);
    CHECK(self == std::vector<int>{0, 1, 2, 3});
    Mat tie(1, 2);
    tie << 3, 0;  // equidistant to centroids 1 and 2
    CHECK(assign(centroids, DistanceMetric::euclidean, tie) == std::vector<int>{1});
}

TEST_CASE("assign matches an exhaustive nearest-centroid oracle") {
    const Mat centroids = random_matrix(9, 5, 21);
    const Mat x = random_matrix(300, 5, 22);
    const auto got = assign(centroids, DistanceMetric::euclidean, x);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        int best = 0;
        double best_d = (x.row(i) - centroids.row(0)).squaredNorm();
        for (Eigen::Index c = 1; c < 9; ++c) {
            const double d = (x.row(i) - centroids.row(c)).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(c);
            }
        }
        CHECK(got[static_cast<std::size_t>(i)] == best);
    }
}

TEST_CASE("assign is a pure function") {
    const Mat centroids = random_matrix(5, 3, 31);
    const Mat x = random_matrix(50, 3, 32);
    CHECK(assign(centroids, DistanceMetric::cosine, x) == assign(centroids, DistanceMetric::cosine, x));
}

namespace {

EmbeddingSet patients_set(const std::vector<std::uint32_t>& patients) {
    EmbeddingSet set;
    set.vectors.resize(static_cast<Eigen::Index>(patients.size()), 2);
    set.vectors.setZero();
    for (std::size_t i = 0; i < patients.size(); ++i) {
        set.record_ids.push_back(i);
        set.anatomy_ids.push_back(0);
        set.protocol_ids.push_back(0);
        set.patient_ids.push_back(patients[i]);
        set.has_survival.push_back(0);
        set.survival_times.push_back(0);
        set.events.push_back(0);
    }
    set.rebuild_vocabs();
    return set;
}

}  // namespace

TEST_CASE("cluster_profiles: single-cluster patient is a one-hot simplex row") {
    const EmbeddingSet set = patients_set({1, 1, 1});
    const auto profiles = cluster_profiles({2, 2, 2}, set, 5);
    REQUIRE(profiles.size() == 1);
    Vec expect = Vec::Zero(5);
    expect[2] = 1.0;
    CHECK((profiles[0].fractions - expect).norm() == 0.0);
}

TEST_CASE("cluster_profiles: two records split evenly") {
    const EmbeddingSet set = patients_set({4, 4});
    const auto profiles = cluster_profiles({0, 1}, set, 4);
    REQUIRE(profiles.size() == 1);
    CHECK(profiles[0].fractions[0] == doctest::Approx(0.5));
    CHECK(profiles[0].fractions[1] == doctest::Approx(0.5));
    CHECK(profiles[0].fractions.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("cluster_profiles: random labels match a counting oracle") {
    SeededRng rng(37);
    std::vector<std::uint32_t> patients;
    std::vector<int> labels;
    const int k = 6;
    for (int i = 0; i < 10000; ++i) {
        patients.push_back(static_cast<std::uint32_t>(rng.uniform_below(50)));
        labels.push_back(static_cast<int>(rng.uniform_below(k)));
    }
    const EmbeddingSet set = patients_set(patients);
    const auto profiles = cluster_profiles(labels, set, k);
    std::map<std::uint32_t, std::vector<double>> counts;
    std::map<std::uint32_t, double> totals;
    for (std::size_t i = 0; i < patients.size(); ++i) {
        counts.try_emplace(patients[i], std::vector<double>(k, 0.0));
        counts[patients[i]][static_cast<std::size_t>(labels[i])] += 1.0;
        totals[patients[i]] += 1.0;
    }
    for (const auto& profile : profiles) {
        CHECK(profile.fractions.sum() == doctest::Approx(1.0).epsilon(1e-12));
        for (int c = 0; c < k; ++c) {
            CHECK(profile.fractions[c] ==
                  doctest::Approx(counts[profile.patient_id][static_cast<std::size_t>(c)] /
                                  totals[profile.patient_id]));
        }
    }
}

TEST_CASE("cluster_profiles: vocab patient without records is an error") {
    EmbeddingSet set = patients_set({1, 1});
    set.patient_vocab.push_back(9);  // simulate a stale vocabulary entry
    CHECK_THROWS_WITH_AS(cluster_profiles({0, 1}, set, 2), doctest::Contains("zero records"),
                         DataError);
}

TEST_CASE("cluster model transfers unchanged across datasets of equal dimension") {
    const Mat a = random_matrix(300, 6, 41);
    ClusterFitOptions opt;
    opt.policy = MetricPolicy::euclidean;
    const ClusterModel model = fit_cluster_model(a, 4, opt);
    const Mat b = random_matrix(100, 6, 42);
    const auto l1 = model.assign_rows(b);
    const auto l2 = model.assign_rows(b);
    CHECK(l1 == l2);
    CHECK(l1.size() == 100);
}

TEST_CASE("automatic metric policy picks the better-balanced labeling") {
    // euclidean k-means on these two scaled arms produces one giant and one
    // tiny cluster; cosine sees two equal angular groups
    SeededRng rng(47);
    Mat x(200, 2);
    for (Eigen::Index i = 0; i < 200; ++i) {
        const bool arm = i % 2 == 0;
        const double radius = std::pow(10.0, rng.uniform01() * 3.0 - 1.0);
        const double angle = (arm ? 0.0 : 1.5707963267948966) + rng.normal() * 0.02;
        x(i, 0) = radius * std::cos(angle);
        x(i, 1) = radius * std::sin(angle);
    }
    ClusterFitOptions opt;
    opt.policy = MetricPolicy::automatic;
    opt.variance_target = 1.0;
    const ClusterModel model = fit_cluster_model(x, 2, opt);
    CHECK(model.metric == DistanceMetric::cosine);
}

TEST_CASE("cluster model round-trips through its file format") {
    const Mat x = random_matrix(120, 5, 51);
    ClusterFitOptions opt;
    opt.policy = MetricPolicy::cosine;
    const ClusterModel model = fit_cluster_model(x, 3, opt);
    const auto path = std::filesystem::temp_directory_path() / "lsr_cm.bin";
    save_cluster_model(model, path.string());
    const ClusterModel back = load_cluster_model(path.string());
    CHECK(back.k == model.k);
    CHECK(back.metric == model.metric);
    CHECK(back.pca.mean == model.pca.mean);
    CHECK(back.pca.basis == model.pca.basis);
    CHECK(back.centroids == model.centroids);
    const Mat probe = random_matrix(30, 5, 52);
    CHECK(back.assign_rows(probe) == model.assign_rows(probe));
}
