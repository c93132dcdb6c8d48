#include "lsr/rotation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "lsr/binio.hpp"
#include "lsr/rng.hpp"

namespace lsr {

namespace {

constexpr char kProjectorMagic[9] = "LSRPRJ01";

/// Numerically stable binary cross entropy of a logit against a 0/1 label:
/// max(z,0) - z*y + log1p(exp(-|z|)).
double bce_from_logit(double z, double y) {
    return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct SpectrumResult {
    Vec eigenvalues;  // descending
    Mat eigenvectors; // columns match eigenvalues
    int rank = 0;
};

/// Centered PCA of deltas projected onto the complement of v_base.
SpectrumResult residual_spectrum(const PairSet& pairs, const Vec& v_base, bool use_all_labels) {
    if (pairs.samples.empty()) throw DataError("residual_directions: empty pair set");
    const Mat d = use_all_labels
                      ? [&] {
                            Mat all(static_cast<Eigen::Index>(pairs.samples.size()), pairs.m);
                            for (std::size_t k = 0; k < pairs.samples.size(); ++k) {
                                all.row(static_cast<Eigen::Index>(k)) = pairs.samples[k].delta.transpose();
                            }
                            return all;
                        }()
                      : deltas_with_label(pairs, 1);
    if (d.rows() == 0) throw DataError("residual_directions: no deltas with the requested label");

    Mat resid = d - (d * v_base) * v_base.transpose();
    const Vec mean = resid.colwise().mean().transpose();
    resid.rowwise() -= mean.transpose();
    const double denom = resid.rows() > 1 ? static_cast<double>(resid.rows() - 1) : 1.0;
    const Mat cov = resid.transpose() * resid / denom;

    Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericError("residual_directions: eigensolver failed");

    const Eigen::Index m = cov.rows();
    SpectrumResult out;
    out.eigenvalues.resize(m);
    out.eigenvectors.resize(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        out.eigenvalues[i] = eig.eigenvalues()[m - 1 - i];
        out.eigenvectors.col(i) = eig.eigenvectors().col(m - 1 - i);
    }
    const double floor = std::max(out.eigenvalues[0] * 1e-10, 0.0);
    for (Eigen::Index i = 0; i < m; ++i) {
        if (out.eigenvalues[i] > floor && out.eigenvalues[i] > 0.0) ++out.rank;
    }
    return out;
}

/// Deterministic sign: flip so the entry of largest magnitude is positive.
void align_sign(Eigen::Ref<Vec> v) {
    Eigen::Index at = 0;
    v.cwiseAbs().maxCoeff(&at);
    if (v[at] < 0.0) v = -v;
}

}  // namespace

BceEval bce_loss_and_grad(const Vec& w, double b, const Mat& X, const std::vector<std::uint8_t>& y) {
    if (static_cast<std::size_t>(X.rows()) != y.size()) {
        throw DataError("bce_loss_and_grad: label count does not match rows");
    }
    const Eigen::Index n = X.rows();
    BceEval out;
    out.grad_w = Vec::Zero(X.cols());
    Vec logits = X * w;
    logits.array() += b;
    double loss = 0.0;
    Vec err(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double yi = y[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
        loss += bce_from_logit(logits[i], yi);
        err[i] = sigmoid(logits[i]) - yi;
    }
    const double inv = 1.0 / static_cast<double>(n);
    out.loss = loss * inv;
    out.grad_w = (X.transpose() * err) * inv;
    out.grad_b = err.sum() * inv;
    return out;
}

DeltaClassifier fit_delta_classifier(const PairSet& pairs, const TrainOptions& opt) {
    const std::size_t n = pairs.samples.size();
    if (n == 0) throw DataError("fit_delta_classifier: empty pair set");
    if (pairs.count_label0 == 0 || pairs.count_label1 == 0) {
        throw DataError("fit_delta_classifier: both labels must be present");
    }
    if (opt.epochs < 1 || opt.lr <= 0.0 || opt.batch < 1) {
        throw ConfigError("fit_delta_classifier: epochs, lr and batch must be positive");
    }
    if (opt.val_fraction < 0.0 || opt.val_fraction >= 1.0) {
        throw ConfigError("fit_delta_classifier: val_fraction must be in [0, 1)");
    }

    Mat X(static_cast<Eigen::Index>(n), pairs.m);
    std::vector<std::uint8_t> y(n);
    for (std::size_t k = 0; k < n; ++k) {
        X.row(static_cast<Eigen::Index>(k)) = pairs.samples[k].delta.transpose();
        y[k] = pairs.samples[k].label;
    }

    SeededRng rng = SeededRng::derive(opt.seed, streams::classifier);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    const std::size_t n_val = static_cast<std::size_t>(std::floor(opt.val_fraction * n));
    const std::size_t n_train = n - n_val;
    if (n_train == 0) throw DataError("fit_delta_classifier: empty training split");
    std::vector<std::size_t> train_idx(order.begin(), order.begin() + n_train);
    std::vector<std::size_t> val_idx(order.begin() + n_train, order.end());

    Vec w = Vec::Zero(pairs.m);
    double b = 0.0;
    Vec mw = Vec::Zero(pairs.m), vw = Vec::Zero(pairs.m);
    double mb = 0.0, vb = 0.0;
    long t = 0;

    DeltaClassifier clf;
    clf.loss_history.reserve(opt.epochs);

    Vec gw(pairs.m);
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        rng.shuffle(train_idx);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n_train; start += opt.batch) {
            const std::size_t stop = std::min(start + opt.batch, n_train);
            const std::size_t bs = stop - start;
            gw.setZero();
            double gb = 0.0;
            double batch_loss = 0.0;
            for (std::size_t k = start; k < stop; ++k) {
                const auto row = static_cast<Eigen::Index>(train_idx[k]);
                const double yi = y[train_idx[k]] ? 1.0 : 0.0;
                const double z = X.row(row).dot(w) + b;
                batch_loss += bce_from_logit(z, yi);
                const double e = sigmoid(z) - yi;
                gw += e * X.row(row).transpose();
                gb += e;
            }
            const double inv = 1.0 / static_cast<double>(bs);
            gw *= inv;
            gb *= inv;
            epoch_loss += batch_loss;

            ++t;
            if (opt.optimizer == Optimizer::adam) {
                constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
                mw = b1 * mw + (1.0 - b1) * gw;
                vw = b2 * vw + (1.0 - b2) * gw.cwiseProduct(gw);
                mb = b1 * mb + (1.0 - b1) * gb;
                vb = b2 * vb + (1.0 - b2) * gb * gb;
                const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
                const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
                w -= opt.lr * ((mw / c1).array() / ((vw / c2).array().sqrt() + eps)).matrix();
                b -= opt.lr * (mb / c1) / (std::sqrt(vb / c2) + eps);
            } else {
                w -= opt.lr * gw;
                b -= opt.lr * gb;
            }
        }
        const double mean_loss = epoch_loss / static_cast<double>(n_train);
        if (!std::isfinite(mean_loss)) {
            throw NumericError("fit_delta_classifier: non-finite loss at epoch " +
                               std::to_string(epoch + 1));
        }
        clf.loss_history.push_back(mean_loss);
    }

    auto accuracy = [&](const std::vector<std::size_t>& idx) {
        if (idx.empty()) return 0.0;
        std::size_t hits = 0;
        for (std::size_t k : idx) {
            const double z = X.row(static_cast<Eigen::Index>(k)).dot(w) + b;
            hits += ((z >= 0.0) == (y[k] != 0));
        }
        return static_cast<double>(hits) / static_cast<double>(idx.size());
    };
    clf.w = std::move(w);
    clf.b = b;
    clf.train_accuracy = accuracy(train_idx);
    clf.val_accuracy = val_idx.empty() ? clf.train_accuracy : accuracy(val_idx);
    return clf;
}

Vec dominant_axis(const DeltaClassifier& clf) {
    const double norm = clf.w.norm();
    if (!(norm > 1e-12)) {
        throw NumericError("dominant_axis: near-zero weight vector (classifier failed to learn)");
    }
    return clf.w / norm;
}

int residual_rank(const PairSet& pairs, const Vec& v_base, bool use_all_labels) {
    return residual_spectrum(pairs, v_base, use_all_labels).rank;
}

Mat residual_directions(const PairSet& pairs, const Vec& v_base, int n_dirs, bool use_all_labels) {
    if (n_dirs < 1) throw ConfigError("residual_directions: n_dirs must be >= 1");
    if (n_dirs > pairs.m - 1) {
        throw ConfigError("residual_directions: n_dirs must be <= m - 1");
    }
    const SpectrumResult spec = residual_spectrum(pairs, v_base, use_all_labels);
    if (spec.rank < n_dirs) {
        throw DataError("residual_directions: residual covariance rank " + std::to_string(spec.rank) +
                        " < requested " + std::to_string(n_dirs));
    }
    Mat out(pairs.m, n_dirs);
    for (int c = 0; c < n_dirs; ++c) {
        Vec v = spec.eigenvectors.col(c);
        // polish: exact orthogonality to v_base and to earlier columns
        v -= v_base.dot(v) * v_base;
        for (int k = 0; k < c; ++k) v -= out.col(k).dot(v) * out.col(k);
        const double norm = v.norm();
        if (norm < 1e-10) {
            throw NumericError("residual_directions: degenerate direction " + std::to_string(c));
        }
        v /= norm;
        align_sign(v);
        out.col(c) = v;
    }
    return out;
}

Vec mean_protocol_offset(const EmbeddingSet& set, const PairSet& pairs, std::uint32_t ref_protocol,
                         std::uint32_t other_protocol) {
    std::map<std::uint64_t, std::size_t> by_id;
    for (std::size_t i = 0; i < set.size(); ++i) by_id[set.record_ids[i]] = i;

    Vec sum = Vec::Zero(pairs.m);
    std::size_t count = 0;
    for (const auto& s : pairs.samples) {
        if (s.label != 1) continue;
        const auto it_i = by_id.find(s.i);
        const auto it_j = by_id.find(s.j);
        if (it_i == by_id.end() || it_j == by_id.end()) {
            throw DataError("mean_protocol_offset: pair references a record not in the set");
        }
        const std::uint32_t pi = set.protocol_ids[it_i->second];
        const std::uint32_t pj = set.protocol_ids[it_j->second];
        if (pi == ref_protocol && pj == other_protocol) {
            sum += s.delta;
            ++count;
        } else if (pi == other_protocol && pj == ref_protocol) {
            sum -= s.delta;
            ++count;
        }
    }
    if (count == 0) {
        throw DataError("mean_protocol_offset: no positive pairs between protocols " +
                        std::to_string(ref_protocol) + " and " + std::to_string(other_protocol));
    }
    return sum / static_cast<double>(count);
}

Projector build_projector(const Vec& v_base, const Mat& v_res, const Vec& v_diff, int r,
                          double drop_tol) {
    const Eigen::Index m = v_base.size();
    if (r <= 1) throw ConfigError("build_projector: r must exceed 1 (layout reserves v_base and v_diff)");
    if (r >= m) throw ConfigError("build_projector: r must be < m");
    if (v_res.rows() != m || v_diff.size() != m) {
        throw DataError("build_projector: dimension mismatch between inputs");
    }
    if (v_res.cols() < r - 2) {
        throw DataError("build_projector: V_res must supply at least r-2 columns");
    }

    struct Candidate {
        Vec v;
        bool is_vdiff;
        bool is_spare;
    };
    std::vector<Candidate> primary;
    primary.push_back({v_base, false, false});
    for (int c = 0; c < r - 2; ++c) primary.push_back({v_res.col(c), false, false});
    primary.push_back({v_diff, true, false});
    std::vector<Vec> spares;
    for (Eigen::Index c = r - 2; c < v_res.cols(); ++c) spares.push_back(v_res.col(c));

    Projector out;
    out.basis.resize(m, r);
    int accepted = 0;
    int residual_used = 0;
    std::size_t spare_at = 0;

    auto try_accept = [&](const Vec& cand) -> bool {
        const double norm0 = cand.norm();
        if (norm0 <= 0.0) return false;
        Vec v = cand;
        for (int k = 0; k < accepted; ++k) v -= out.basis.col(k).dot(v) * out.basis.col(k);
        if (v.norm() < drop_tol * norm0) return false;
        // second orthogonalization pass for 1e-10 grade orthonormality
        for (int k = 0; k < accepted; ++k) v -= out.basis.col(k).dot(v) * out.basis.col(k);
        out.basis.col(accepted++) = v / v.norm();
        return true;
    };

    for (const auto& cand : primary) {
        if (accepted == r) break;
        if (try_accept(cand.v)) {
            if (!cand.is_vdiff) residual_used += (accepted > 1);  // first accepted column is v_base
            continue;
        }
        if (cand.is_vdiff) out.provenance.v_diff_included = false;
        bool filled = false;
        while (spare_at < spares.size()) {
            const Vec& sp = spares[spare_at++];
            if (try_accept(sp)) {
                ++out.provenance.backfilled;
                ++residual_used;
                filled = true;
                break;
            }
        }
        if (!filled) {
            throw DataError("build_projector: insufficient independent directions to reach r=" +
                            std::to_string(r));
        }
    }
    if (accepted != r) {
        throw DataError("build_projector: insufficient independent directions to reach r=" +
                        std::to_string(r));
    }
    out.provenance.n_residual_used = residual_used;
    return out;
}

std::pair<Vec, Vec> split(const Vec& z, const Projector& p) {
    if (z.size() != p.m()) {
        throw DataError("split: vector length " + std::to_string(z.size()) +
                        " does not match projector m=" + std::to_string(p.m()));
    }
    Vec z_t = p.basis * (p.basis.transpose() * z);
    Vec z_b = z - z_t;
    return {std::move(z_t), std::move(z_b)};
}

std::pair<Mat, Mat> split_rows(const Mat& z, const Projector& p) {
    if (z.cols() != p.m()) {
        throw DataError("split_rows: column count does not match projector m");
    }
    Mat z_t = (z * p.basis) * p.basis.transpose();
    Mat z_b = z - z_t;
    return {std::move(z_t), std::move(z_b)};
}

Projector fit_rotation(const EmbeddingSet& set, const PairSet& pairs, int r,
                       const RotationOptions& opt) {
    if (r <= 1) throw ConfigError("fit_rotation: r must exceed 1 (layout reserves v_base and v_diff)");
    if (r >= pairs.m) throw ConfigError("fit_rotation: r must be < m");

    const DeltaClassifier clf = fit_delta_classifier(pairs, opt.train);
    const Vec v_base = dominant_axis(clf);

    // r-2 columns plus spares for the backfill path, capped by achievable rank
    const int rank = residual_rank(pairs, v_base, opt.residual_use_all_labels);
    int n_dirs = std::min({rank, r + 2, static_cast<int>(pairs.m) - 1});
    if (n_dirs < r - 2) n_dirs = r - 2;  // let residual_directions raise the standard error
    const Mat v_res = residual_directions(pairs, v_base, n_dirs, opt.residual_use_all_labels);

    std::uint32_t ref = 0, other = 0;
    Vec v_diff;
    if (opt.offset_protocols) {
        ref = opt.offset_protocols->first;
        other = opt.offset_protocols->second;
        v_diff = mean_protocol_offset(set, pairs, ref, other);
    } else {
        // the dominant offset: largest norm over protocol pairs with positives
        double best_norm = -1.0;
        for (std::size_t a = 0; a < set.protocol_vocab.size(); ++a) {
            for (std::size_t b = a + 1; b < set.protocol_vocab.size(); ++b) {
                try {
                    Vec cand = mean_protocol_offset(set, pairs, set.protocol_vocab[a],
                                                    set.protocol_vocab[b]);
                    if (cand.norm() > best_norm) {
                        best_norm = cand.norm();
                        v_diff = std::move(cand);
                        ref = set.protocol_vocab[a];
                        other = set.protocol_vocab[b];
                    }
                } catch (const DataError&) {
                    // pair without positives; skip
                }
            }
        }
        if (best_norm < 0.0) throw DataError("fit_rotation: no protocol pair with positive pairs");
    }

    Projector p = build_projector(v_base, v_res, v_diff, r, opt.vdiff_drop_tol);
    p.provenance.classifier_val_accuracy = clf.val_accuracy;
    p.provenance.ref_protocol = ref;
    p.provenance.other_protocol = other;
    return p;
}

void save_projector(const Projector& p, const std::string& path) {
    BinWriter out(path);
    out.magic(kProjectorMagic);
    out.u32(static_cast<std::uint32_t>(p.m()));
    out.u32(static_cast<std::uint32_t>(p.r()));
    for (Eigen::Index j = 0; j < p.r(); ++j) {
        for (Eigen::Index i = 0; i < p.m(); ++i) out.f64(p.basis(i, j));
    }
    out.u32(static_cast<std::uint32_t>(p.provenance.n_residual_used));
    out.u8(p.provenance.v_diff_included ? 1 : 0);
    out.u32(static_cast<std::uint32_t>(p.provenance.backfilled));
    out.f64(p.provenance.classifier_val_accuracy);
    out.u32(p.provenance.ref_protocol);
    out.u32(p.provenance.other_protocol);
    out.close();
}

Projector load_projector(const std::string& path) {
    BinReader in(path);
    in.expect_magic(kProjectorMagic);
    const std::uint32_t m = in.u32();
    const std::uint32_t r = in.u32();
    Projector p;
    p.basis.resize(m, r);
    for (std::uint32_t j = 0; j < r; ++j) {
        for (std::uint32_t i = 0; i < m; ++i) p.basis(i, j) = in.f64();
    }
    p.provenance.n_residual_used = static_cast<int>(in.u32());
    p.provenance.v_diff_included = in.u8() != 0;
    p.provenance.backfilled = static_cast<int>(in.u32());
    p.provenance.classifier_val_accuracy = in.f64();
    p.provenance.ref_protocol = in.u32();
    p.provenance.other_protocol = in.u32();
    return p;
}

void save_projector_csv(const Projector& p, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    for (Eigen::Index j = 0; j < p.r(); ++j) {
        out << (j ? ",p" : "p") << j;
    }
    out << "\n";
    for (Eigen::Index i = 0; i < p.m(); ++i) {
        for (Eigen::Index j = 0; j < p.r(); ++j) {
            if (j) out << ',';
            out << format_double(p.basis(i, j));
        }
        out << "\n";
    }
    out.close();
    if (!out) throw DataError("write failure: " + path);
}

}  // namespace lsr
