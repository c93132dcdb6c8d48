#include "lsr/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "lsr/binio.hpp"
#include "lsr/rng.hpp"

namespace lsr {

namespace {

constexpr char kClusterMagic[9] = "LSRCLM01";

Mat l2_normalize_rows(const Mat& x) {
    Mat out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double n = x.row(i).norm();
        out.row(i) = n > 0.0 ? (x.row(i) / n).eval() : x.row(i);
    }
    return out;
}

double point_distance(const Mat& x, Eigen::Index i, const Mat& centroids, Eigen::Index c,
                      DistanceMetric metric) {
    if (metric == DistanceMetric::euclidean) {
        return (x.row(i) - centroids.row(c)).squaredNorm();
    }
    return 1.0 - x.row(i).dot(centroids.row(c));
}

struct LloydRun {
    Mat centroids;
    std::vector<int> labels;
    double inertia = std::numeric_limits<double>::infinity();
    std::vector<double> history;
    int iterations = 0;
};

LloydRun lloyd_once(const Mat& x, int k, DistanceMetric metric, int max_iter, SeededRng& rng) {
    const Eigen::Index n = x.rows();
    LloydRun run;
    run.centroids.resize(k, x.cols());

    // k-means++ seeding
    std::vector<double> dist2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    {
        const Eigen::Index first = static_cast<Eigen::Index>(rng.uniform_below(static_cast<std::uint64_t>(n)));
        run.centroids.row(0) = x.row(first);
        for (int c = 1; c < k; ++c) {
            double total = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                const double d = std::max(0.0, point_distance(x, i, run.centroids, c - 1, metric));
                auto& best = dist2[static_cast<std::size_t>(i)];
                best = std::min(best, d);
                total += best;
            }
            Eigen::Index chosen = -1;
            if (total > 0.0) {
                const double target = rng.uniform01() * total;
                double cum = 0.0;
                for (Eigen::Index i = 0; i < n; ++i) {
                    cum += dist2[static_cast<std::size_t>(i)];
                    if (cum >= target) {
                        chosen = i;
                        break;
                    }
                }
                if (chosen < 0) chosen = n - 1;
            } else {
                chosen = static_cast<Eigen::Index>(rng.uniform_below(static_cast<std::uint64_t>(n)));
            }
            run.centroids.row(c) = x.row(chosen);
        }
    }

    run.labels.assign(static_cast<std::size_t>(n), 0);
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int iter = 0; iter < max_iter; ++iter) {
        // assignment
        bool changed = false;
        double objective = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            int best = 0;
            double best_d = point_distance(x, i, run.centroids, 0, metric);
            for (int c = 1; c < k; ++c) {
                const double d = point_distance(x, i, run.centroids, c, metric);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            objective += best_d;
            if (run.labels[static_cast<std::size_t>(i)] != best) {
                run.labels[static_cast<std::size_t>(i)] = best;
                changed = true;
            }
        }
        run.history.push_back(objective);
        run.inertia = objective;
        run.iterations = iter + 1;
        if (!changed && iter > 0) break;

        // update
        std::fill(counts.begin(), counts.end(), 0);
        Mat sums = Mat::Zero(k, x.cols());
        for (Eigen::Index i = 0; i < n; ++i) {
            const int c = run.labels[static_cast<std::size_t>(i)];
            sums.row(c) += x.row(i);
            ++counts[static_cast<std::size_t>(c)];
        }
        bool reseeded = false;
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] == 0) {
                // reseed to the point farthest from its assigned centroid
                Eigen::Index far = 0;
                double far_d = -1.0;
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double d =
                        point_distance(x, i, run.centroids, run.labels[static_cast<std::size_t>(i)], metric);
                    if (d > far_d) {
                        far_d = d;
                        far = i;
                    }
                }
                run.centroids.row(c) = x.row(far);
                reseeded = true;
                continue;
            }
            run.centroids.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
            if (metric == DistanceMetric::cosine) {
                const double norm = run.centroids.row(c).norm();
                if (norm > 0.0) run.centroids.row(c) /= norm;
            }
        }
        if (!changed && !reseeded) break;
    }
    return run;
}

}  // namespace

PcaModel pca_fit(const Mat& x, double variance_target) {
    if (x.rows() < 2) throw DataError("pca_fit: need at least 2 rows");
    if (!(variance_target > 0.0) || variance_target > 1.0) {
        throw ConfigError("pca_fit: variance_target must be in (0, 1]");
    }
    PcaModel out;
    out.mean = x.colwise().mean().transpose();
    Mat centered = x.rowwise() - out.mean.transpose();
    const Mat cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
    Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericError("pca_fit: eigensolver failed");

    const Eigen::Index d = cov.rows();
    out.eigenvalues.resize(d);
    Mat vecs(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
        out.eigenvalues[i] = std::max(0.0, eig.eigenvalues()[d - 1 - i]);
        vecs.col(i) = eig.eigenvectors().col(d - 1 - i);
    }
    const double total = out.eigenvalues.sum();
    if (!(total > 0.0)) throw DataError("pca_fit: zero total variance");

    Eigen::Index p = 0;
    double cum = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
        cum += out.eigenvalues[i];
        p = i + 1;
        if (cum >= (variance_target - 1e-12) * total) break;
    }
    out.basis = vecs.leftCols(p);
    return out;
}

Mat pca_transform(const PcaModel& pca, const Mat& x) {
    if (x.cols() != pca.mean.size()) throw DataError("pca_transform: dimension mismatch");
    return (x.rowwise() - pca.mean.transpose()) * pca.basis;
}

KmeansResult kmeans_fit(const Mat& x, int k, DistanceMetric metric, const KmeansOptions& opt) {
    if (k < 2) throw DataError("kmeans_fit: k must be >= 2");
    if (k > x.rows()) {
        throw DataError("kmeans_fit: k=" + std::to_string(k) + " exceeds n=" + std::to_string(x.rows()));
    }
    if (opt.restarts < 1 || opt.max_iter < 1) throw ConfigError("kmeans_fit: restarts and max_iter must be >= 1");

    const Mat& data = metric == DistanceMetric::cosine ? l2_normalize_rows(x) : x;
    SeededRng rng = SeededRng::derive(opt.seed, streams::clustering);

    LloydRun best;
    for (int rep = 0; rep < opt.restarts; ++rep) {
        LloydRun run = lloyd_once(data, k, metric, opt.max_iter, rng);
        if (run.inertia < best.inertia) best = std::move(run);
    }
    KmeansResult out;
    out.centroids = std::move(best.centroids);
    out.inertia = best.inertia;
    out.labels = std::move(best.labels);
    out.objective_history = std::move(best.history);
    out.iterations = best.iterations;
    return out;
}

std::vector<int> assign(const Mat& centroids, DistanceMetric metric, const Mat& x) {
    if (x.cols() != centroids.cols()) throw DataError("assign: feature dimension mismatch");
    const Mat& data = metric == DistanceMetric::cosine ? l2_normalize_rows(x) : x;
    std::vector<int> labels(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
        int best = 0;
        double best_d = point_distance(data, i, centroids, 0, metric);
        for (Eigen::Index c = 1; c < centroids.rows(); ++c) {
            const double d = point_distance(data, i, centroids, c, metric);
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(c);
            }
        }
        labels[static_cast<std::size_t>(i)] = best;
    }
    return labels;
}

std::vector<int> ClusterModel::assign_rows(const Mat& x) const {
    return assign(centroids, metric, pca_transform(pca, x));
}

double entropy_deficit(const std::vector<int>& labels, int k) {
    if (k < 2) return 0.0;
    std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
    for (int l : labels) {
        if (l >= 0 && l < k) counts[static_cast<std::size_t>(l)] += 1.0;
    }
    const double n = static_cast<double>(labels.size());
    double h = 0.0;
    for (double c : counts) {
        if (c > 0.0) {
            const double p = c / n;
            h -= p * std::log(p);
        }
    }
    return 1.0 - h / std::log(static_cast<double>(k));
}

ClusterModel fit_cluster_model(const Mat& x, int k, const ClusterFitOptions& opt) {
    ClusterModel model;
    model.pca = pca_fit(x, opt.variance_target);
    const Mat y = pca_transform(model.pca, x);
    model.k = k;

    auto run = [&](DistanceMetric metric) {
        KmeansOptions ko = opt.kmeans;
        // separate derived streams so the automatic policy's two fits do not share draws
        ko.seed = opt.kmeans.seed + (metric == DistanceMetric::cosine ? 0x9E37u : 0u);
        return kmeans_fit(y, k, metric, ko);
    };

    if (opt.policy == MetricPolicy::euclidean || opt.policy == MetricPolicy::cosine) {
        const DistanceMetric metric =
            opt.policy == MetricPolicy::euclidean ? DistanceMetric::euclidean : DistanceMetric::cosine;
        KmeansResult res = run(metric);
        model.metric = metric;
        model.centroids = std::move(res.centroids);
        model.inertia = res.inertia;
        return model;
    }

    KmeansResult eu = run(DistanceMetric::euclidean);
    KmeansResult co = run(DistanceMetric::cosine);
    const double deficit_eu = entropy_deficit(eu.labels, k);
    const double deficit_co = entropy_deficit(co.labels, k);
    if (deficit_co < deficit_eu) {
        model.metric = DistanceMetric::cosine;
        model.centroids = std::move(co.centroids);
        model.inertia = co.inertia;
    } else {
        model.metric = DistanceMetric::euclidean;
        model.centroids = std::move(eu.centroids);
        model.inertia = eu.inertia;
    }
    return model;
}

std::vector<ClusterProfile> cluster_profiles(const std::vector<int>& labels, const EmbeddingSet& set,
                                             int k) {
    if (labels.size() != set.size()) throw DataError("cluster_profiles: one label per record required");
    if (k < 1) throw ConfigError("cluster_profiles: k must be >= 1");
    std::map<std::uint32_t, Vec> acc;
    std::map<std::uint32_t, double> totals;
    for (std::uint32_t pid : set.patient_vocab) {
        acc.emplace(pid, Vec::Zero(k));
        totals.emplace(pid, 0.0);
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int l = labels[i];
        if (l < 0 || l >= k) throw DataError("cluster_profiles: label out of range at record " + std::to_string(i));
        acc.at(set.patient_ids[i])[l] += 1.0;
        totals.at(set.patient_ids[i]) += 1.0;
    }
    std::vector<ClusterProfile> out;
    out.reserve(acc.size());
    for (auto& [pid, counts] : acc) {
        const double total = totals.at(pid);
        if (total == 0.0) {
            throw DataError("cluster_profiles: patient " + std::to_string(pid) + " has zero records");
        }
        ClusterProfile p;
        p.patient_id = pid;
        p.fractions = counts / total;
        out.push_back(std::move(p));
    }
    return out;
}

void save_cluster_model(const ClusterModel& model, const std::string& path) {
    BinWriter out(path);
    out.magic(kClusterMagic);
    out.u32(static_cast<std::uint32_t>(model.pca.mean.size()));
    out.u32(static_cast<std::uint32_t>(model.pca.basis.cols()));
    out.u32(static_cast<std::uint32_t>(model.k));
    out.u8(model.metric == DistanceMetric::cosine ? 1 : 0);
    out.f64(model.inertia);
    for (Eigen::Index i = 0; i < model.pca.mean.size(); ++i) out.f64(model.pca.mean[i]);
    for (Eigen::Index j = 0; j < model.pca.basis.cols(); ++j) {
        for (Eigen::Index i = 0; i < model.pca.basis.rows(); ++i) out.f64(model.pca.basis(i, j));
    }
    for (Eigen::Index i = 0; i < model.centroids.rows(); ++i) {
        for (Eigen::Index j = 0; j < model.centroids.cols(); ++j) out.f64(model.centroids(i, j));
    }
    out.close();
}

ClusterModel load_cluster_model(const std::string& path) {
    BinReader in(path);
    in.expect_magic(kClusterMagic);
    const std::uint32_t d = in.u32();
    const std::uint32_t p = in.u32();
    const std::uint32_t k = in.u32();
    ClusterModel model;
    model.metric = in.u8() ? DistanceMetric::cosine : DistanceMetric::euclidean;
    model.k = static_cast<int>(k);
    model.inertia = in.f64();
    model.pca.mean.resize(d);
    for (std::uint32_t i = 0; i < d; ++i) model.pca.mean[i] = in.f64();
    model.pca.basis.resize(d, p);
    for (std::uint32_t j = 0; j < p; ++j) {
        for (std::uint32_t i = 0; i < d; ++i) model.pca.basis(i, j) = in.f64();
    }
    model.centroids.resize(k, p);
    for (std::uint32_t i = 0; i < k; ++i) {
        for (std::uint32_t j = 0; j < p; ++j) model.centroids(i, j) = in.f64();
    }
    return model;
}

void save_centroids_csv(const ClusterModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "cluster";
    for (Eigen::Index j = 0; j < model.centroids.cols(); ++j) out << ",c" << j;
    out << "\n";
    for (Eigen::Index i = 0; i < model.centroids.rows(); ++i) {
        out << i;
        for (Eigen::Index j = 0; j < model.centroids.cols(); ++j) {
            out << ',' << format_double(model.centroids(i, j));
        }
        out << "\n";
    }
    out.close();
    if (!out) throw DataError("write failure: " + path);
}

}  // namespace lsr
