#include "lsr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "lsr/rng.hpp"

namespace lsr {

namespace {

/// Contingency table with remapped dense indices.
struct Contingency {
    std::vector<std::vector<double>> counts;  // rows: labels of a, cols: labels of b
    std::vector<double> row_sums;
    std::vector<double> col_sums;
    double n = 0.0;
};

Contingency contingency(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) throw DataError("label vectors differ in length");
    if (a.size() < 2) throw DataError("need at least 2 points");
    std::map<int, std::size_t> ra, rb;
    for (int v : a) ra.emplace(v, 0);
    for (int v : b) rb.emplace(v, 0);
    std::size_t next = 0;
    for (auto& [k, v] : ra) v = next++;
    next = 0;
    for (auto& [k, v] : rb) v = next++;

    Contingency c;
    c.counts.assign(ra.size(), std::vector<double>(rb.size(), 0.0));
    c.row_sums.assign(ra.size(), 0.0);
    c.col_sums.assign(rb.size(), 0.0);
    c.n = static_cast<double>(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const std::size_t ia = ra.at(a[i]);
        const std::size_t ib = rb.at(b[i]);
        c.counts[ia][ib] += 1.0;
        c.row_sums[ia] += 1.0;
        c.col_sums[ib] += 1.0;
    }
    return c;
}

double comb2(double x) { return x * (x - 1.0) / 2.0; }

double entropy(const std::vector<double>& sums, double n) {
    double h = 0.0;
    for (double s : sums) {
        if (s > 0.0) {
            const double p = s / n;
            h -= p * std::log(p);
        }
    }
    return h;
}

}  // namespace

double ari(const std::vector<int>& a, const std::vector<int>& b) {
    const Contingency c = contingency(a, b);
    double sum_ij = 0.0;
    for (const auto& row : c.counts) {
        for (double v : row) sum_ij += comb2(v);
    }
    double sum_a = 0.0, sum_b = 0.0;
    for (double v : c.row_sums) sum_a += comb2(v);
    for (double v : c.col_sums) sum_b += comb2(v);
    const double total = comb2(c.n);
    const double expected = sum_a * sum_b / total;
    const double maximum = 0.5 * (sum_a + sum_b);
    if (maximum == expected) return 1.0;  // both labelings trivial
    return (sum_ij - expected) / (maximum - expected);
}

double nmi(const std::vector<int>& a, const std::vector<int>& b) {
    const Contingency c = contingency(a, b);
    const double ha = entropy(c.row_sums, c.n);
    const double hb = entropy(c.col_sums, c.n);
    if (ha == 0.0 && hb == 0.0) return 1.0;
    if (ha == 0.0 || hb == 0.0) return 0.0;
    double mi = 0.0;
    for (std::size_t i = 0; i < c.counts.size(); ++i) {
        for (std::size_t j = 0; j < c.counts[i].size(); ++j) {
            const double nij = c.counts[i][j];
            if (nij > 0.0) {
                mi += (nij / c.n) * std::log(c.n * nij / (c.row_sums[i] * c.col_sums[j]));
            }
        }
    }
    const double value = mi / (0.5 * (ha + hb));
    return std::clamp(value, 0.0, 1.0);
}

std::vector<int> max_weight_assignment(const Mat& weights) {
    if (weights.rows() != weights.cols()) throw DataError("max_weight_assignment: matrix must be square");
    const int n = static_cast<int>(weights.rows());
    if (n == 0) return {};
    // Hungarian algorithm with potentials on the minimization problem.
    const double inf = std::numeric_limits<double>::infinity();
    Mat cost = -weights;
    std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<int> p(static_cast<std::size_t>(n) + 1, 0), way(static_cast<std::size_t>(n) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
        std::vector<char> used(static_cast<std::size_t>(n) + 1, false);
        do {
            used[static_cast<std::size_t>(j0)] = true;
            const int i0 = p[static_cast<std::size_t>(j0)];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                                   v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<std::size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<std::size_t>(j0)];
            p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> col_of_row(static_cast<std::size_t>(n), -1);
    for (int j = 1; j <= n; ++j) col_of_row[static_cast<std::size_t>(p[static_cast<std::size_t>(j)]) - 1] = j - 1;
    return col_of_row;
}

double dice_matched(const std::vector<int>& a, const std::vector<int>& b, int k) {
    if (a.size() != b.size()) throw DataError("dice_matched: label vectors differ in length");
    if (k < 1) throw ConfigError("dice_matched: k must be >= 1");
    for (int v : a) {
        if (v < 0 || v >= k) throw DataError("dice_matched: label out of [0, k) in first argument");
    }
    for (int v : b) {
        if (v < 0 || v >= k) throw DataError("dice_matched: label out of [0, k) in second argument");
    }
    std::vector<double> ca(static_cast<std::size_t>(k), 0.0), cb(static_cast<std::size_t>(k), 0.0);
    Mat overlap = Mat::Zero(k, k);
    for (std::size_t i = 0; i < a.size(); ++i) {
        ca[static_cast<std::size_t>(a[i])] += 1.0;
        cb[static_cast<std::size_t>(b[i])] += 1.0;
        overlap(a[i], b[i]) += 1.0;
    }
    std::vector<int> nza, nzb;
    for (int c = 0; c < k; ++c) {
        if (ca[static_cast<std::size_t>(c)] > 0.0) nza.push_back(c);
        if (cb[static_cast<std::size_t>(c)] > 0.0) nzb.push_back(c);
    }
    const int dim = static_cast<int>(std::max(nza.size(), nzb.size()));
    if (dim == 0) return 1.0;
    Mat w = Mat::Zero(dim, dim);
    for (std::size_t i = 0; i < nza.size(); ++i) {
        for (std::size_t j = 0; j < nzb.size(); ++j) {
            const double denom = ca[static_cast<std::size_t>(nza[i])] + cb[static_cast<std::size_t>(nzb[j])];
            w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                2.0 * overlap(nza[i], nzb[j]) / denom;
        }
    }
    const auto match = max_weight_assignment(w);
    double total = 0.0;
    for (std::size_t i = 0; i < static_cast<std::size_t>(dim); ++i) {
        total += w(static_cast<Eigen::Index>(i), match[i]);
    }
    return total / static_cast<double>(dim);
}

namespace {

/// Indices of co-registered cross-protocol record pairs: same (anatomy,
/// patient), one record per side, zipped by ascending record_id.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> matched_pairs(
    const EmbeddingSet& set, std::uint32_t proto_a, std::uint32_t proto_b) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>>
        cells;
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (set.protocol_ids[i] == proto_a) {
            cells[{set.anatomy_ids[i], set.patient_ids[i]}].first.push_back(i);
        } else if (set.protocol_ids[i] == proto_b) {
            cells[{set.anatomy_ids[i], set.patient_ids[i]}].second.push_back(i);
        }
    }
    std::vector<std::size_t> lhs, rhs;
    auto by_id = [&set](std::size_t x, std::size_t y) { return set.record_ids[x] < set.record_ids[y]; };
    for (auto& [key, pair] : cells) {
        std::sort(pair.first.begin(), pair.first.end(), by_id);
        std::sort(pair.second.begin(), pair.second.end(), by_id);
        const std::size_t n = std::min(pair.first.size(), pair.second.size());
        for (std::size_t t = 0; t < n; ++t) {
            lhs.push_back(pair.first[t]);
            rhs.push_back(pair.second[t]);
        }
    }
    return {std::move(lhs), std::move(rhs)};
}

std::vector<StabilityReport> sweep_impl(const EmbeddingSet& set, const Mat& features,
                                        const StabilityOptions& opt) {
    if (features.rows() != static_cast<Eigen::Index>(set.size())) {
        throw DataError("stability: features must align with the set");
    }
    std::uint32_t proto_a, proto_b;
    if (opt.protocols) {
        proto_a = opt.protocols->first;
        proto_b = opt.protocols->second;
    } else {
        if (set.protocol_vocab.size() < 2) throw DataError("stability: need at least 2 protocols");
        proto_a = set.protocol_vocab[0];
        proto_b = set.protocol_vocab[1];
    }
    auto [lhs, rhs] = matched_pairs(set, proto_a, proto_b);
    if (lhs.empty()) throw DataError("stability: no co-registered cross-protocol pairs");

    std::vector<std::size_t> pooled;
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (set.protocol_ids[i] == proto_a || set.protocol_ids[i] == proto_b) pooled.push_back(i);
    }
    Mat pooled_feat(static_cast<Eigen::Index>(pooled.size()), features.cols());
    for (std::size_t t = 0; t < pooled.size(); ++t) {
        pooled_feat.row(static_cast<Eigen::Index>(t)) = features.row(static_cast<Eigen::Index>(pooled[t]));
    }

    std::vector<int> ks = opt.k_values;
    if (ks.empty()) {
        for (int k = 5; k <= 50; k += 5) ks.push_back(k);
    }

    std::vector<StabilityReport> reports;
    for (int k : ks) {
        if (k < 2 || k > static_cast<int>(pooled.size())) {
            throw DataError("stability: k=" + std::to_string(k) + " outside [2, n=" +
                            std::to_string(pooled.size()) + "]");
        }
        ClusterFitOptions fit_opt;
        fit_opt.variance_target = opt.variance_target;
        fit_opt.policy = opt.policy;
        fit_opt.kmeans.restarts = opt.restarts;
        fit_opt.kmeans.max_iter = opt.max_iter;
        // independent stream per k so sweep order cannot matter
        fit_opt.kmeans.seed = SeededRng::derive(opt.seed, streams::stability).next_u64() ^
                              (0x517CC1B727220A95ULL * static_cast<std::uint64_t>(k));
        const ClusterModel model = fit_cluster_model(pooled_feat, k, fit_opt);

        Mat lhs_feat(static_cast<Eigen::Index>(lhs.size()), features.cols());
        Mat rhs_feat(static_cast<Eigen::Index>(rhs.size()), features.cols());
        for (std::size_t t = 0; t < lhs.size(); ++t) {
            lhs_feat.row(static_cast<Eigen::Index>(t)) = features.row(static_cast<Eigen::Index>(lhs[t]));
            rhs_feat.row(static_cast<Eigen::Index>(t)) = features.row(static_cast<Eigen::Index>(rhs[t]));
        }
        const std::vector<int> la = model.assign_rows(lhs_feat);
        const std::vector<int> lb = model.assign_rows(rhs_feat);

        StabilityReport rep;
        rep.k = k;
        rep.metric_used = model.metric;
        rep.ari = ari(la, lb);
        rep.nmi = nmi(la, lb);
        rep.dice = dice_matched(la, lb, k);

        std::map<std::uint32_t, std::pair<std::vector<int>, std::vector<int>>> per_patient;
        for (std::size_t t = 0; t < lhs.size(); ++t) {
            auto& entry = per_patient[set.patient_ids[lhs[t]]];
            entry.first.push_back(la[t]);
            entry.second.push_back(lb[t]);
        }
        for (const auto& [pid, labels] : per_patient) {
            if (labels.first.size() < 2) continue;
            PatientStability ps;
            ps.patient_id = pid;
            ps.ari = ari(labels.first, labels.second);
            ps.nmi = nmi(labels.first, labels.second);
            ps.dice = dice_matched(labels.first, labels.second, k);
            rep.per_patient.push_back(ps);
        }
        reports.push_back(std::move(rep));
    }
    return reports;
}

}  // namespace

std::vector<StabilityReport> stability_sweep(const EmbeddingSet& set, const Projector* projector_or_null,
                                             const StabilityOptions& opt) {
    if (projector_or_null == nullptr) {
        return sweep_impl(set, set.vectors, opt);
    }
    const auto [zt, zb] = split_rows(set.vectors, *projector_or_null);
    (void)zt;
    return sweep_impl(set, zb, opt);
}

std::vector<StabilityReport> stability_sweep_features(const EmbeddingSet& set, const Mat& features,
                                                      const StabilityOptions& opt) {
    return sweep_impl(set, features, opt);
}

std::pair<Vec, double> ridge_logistic(const Mat& x, const std::vector<std::uint8_t>& y, double lambda,
                                      int max_iter) {
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    if (static_cast<std::size_t>(n) != y.size()) throw DataError("ridge_logistic: label count mismatch");
    bool any0 = false, any1 = false;
    for (auto v : y) (v ? any1 : any0) = true;
    if (!any0 || !any1) throw DataError("ridge_logistic: single-class data");

    Vec theta = Vec::Zero(d + 1);  // [w; b], bias unpenalized
    Mat xa(n, d + 1);
    xa.leftCols(d) = x;
    xa.col(d).setOnes();
    for (int it = 0; it < max_iter; ++it) {
        Vec logits = xa * theta;
        Vec p(n), wdiag(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            p[i] = 1.0 / (1.0 + std::exp(-logits[i]));
            wdiag[i] = std::max(p[i] * (1.0 - p[i]), 1e-12);
        }
        Vec err(n);
        for (Eigen::Index i = 0; i < n; ++i) err[i] = (y[static_cast<std::size_t>(i)] ? 1.0 : 0.0) - p[i];
        Vec grad = xa.transpose() * err;
        grad.head(d) -= lambda * theta.head(d);
        Mat hess = xa.transpose() * wdiag.asDiagonal() * xa;
        for (Eigen::Index j = 0; j < d; ++j) hess(j, j) += lambda;
        hess.diagonal().array() += 1e-12;
        const Vec step = hess.ldlt().solve(grad);
        theta += step;
        if (grad.norm() < 1e-10 || step.norm() < 1e-12) break;
    }
    return {theta.head(d), theta[d]};
}

namespace {

double accuracy_of(const Vec& w, double b, const Mat& x, const std::vector<std::uint8_t>& y,
                   std::optional<std::uint8_t> restrict_to) {
    std::size_t hits = 0, total = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const std::uint8_t yi = y[static_cast<std::size_t>(i)];
        if (restrict_to && yi != *restrict_to) continue;
        const double z = x.row(i).dot(w) + b;
        hits += ((z >= 0.0) == (yi != 0));
        ++total;
    }
    return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace

ClassifierEval subspace_classifier_eval(const EmbeddingSet& train, const EmbeddingSet& test,
                                        const Projector& projector, std::uint32_t target_protocol,
                                        double lambda) {
    auto labels_of = [&](const EmbeddingSet& s) {
        std::vector<std::uint8_t> y(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) y[i] = s.protocol_ids[i] == target_protocol ? 1 : 0;
        return y;
    };
    const auto y_train = labels_of(train);
    const auto y_test = labels_of(test);

    const auto [train_zt, train_zb] = split_rows(train.vectors, projector);
    const auto [test_zt, test_zb] = split_rows(test.vectors, projector);

    ClassifierEval out;
    auto eval_space = [&](const Mat& xtr, const Mat& xte, double& acc, double& acc_t, double& acc_r) {
        const auto [w, b] = ridge_logistic(xtr, y_train, lambda);
        acc = accuracy_of(w, b, xte, y_test, std::nullopt);
        acc_t = accuracy_of(w, b, xte, y_test, std::uint8_t{1});
        acc_r = accuracy_of(w, b, xte, y_test, std::uint8_t{0});
    };
    eval_space(train.vectors, test.vectors, out.acc_z, out.acc_z_target, out.acc_z_rest);
    eval_space(train_zt, test_zt, out.acc_zT, out.acc_zT_target, out.acc_zT_rest);
    eval_space(train_zb, test_zb, out.acc_zB, out.acc_zB_target, out.acc_zB_rest);
    return out;
}

}  // namespace lsr
