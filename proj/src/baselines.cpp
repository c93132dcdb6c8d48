#include "lsr/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <numeric>

#include "lsr/rng.hpp"

namespace lsr {

double eb_shrink_location(double gamma_hat, double n, double tau2, double delta2, double gamma_bar) {
    const double denom = n * tau2 + delta2;
    if (denom <= 0.0) return gamma_bar;
    return (n * tau2 * gamma_hat + delta2 * gamma_bar) / denom;
}

Mat combat_fit_apply(const Mat& x, const std::vector<std::uint32_t>& batches,
                     const std::optional<Mat>& covariates, const CombatOptions& opt,
                     CombatModel* fitted) {
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    if (static_cast<std::size_t>(n) != batches.size()) {
        throw DataError("combat: one batch label per row required");
    }
    if (covariates && covariates->rows() != n) {
        throw DataError("combat: covariate rows must match data rows");
    }
    if (opt.fit_fraction <= 0.0 || opt.fit_fraction > 1.0) {
        throw ConfigError("combat: fit_fraction must be in (0, 1]");
    }
    if (!x.allFinite()) throw DataError("combat: non-finite input");

    std::vector<std::uint32_t> vocab(batches);
    std::sort(vocab.begin(), vocab.end());
    vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());
    const int nb = static_cast<int>(vocab.size());
    if (nb == 1) return x;  // nothing to harmonize

    std::map<std::uint32_t, int> batch_index;
    for (int b = 0; b < nb; ++b) batch_index[vocab[static_cast<std::size_t>(b)]] = b;

    // stratified fit subset: at least 2 rows per batch
    std::vector<std::vector<Eigen::Index>> rows_by_batch(static_cast<std::size_t>(nb));
    for (Eigen::Index i = 0; i < n; ++i) {
        rows_by_batch[static_cast<std::size_t>(batch_index.at(batches[static_cast<std::size_t>(i)]))]
            .push_back(i);
    }
    SeededRng rng = SeededRng::derive(opt.seed, 0xC0'0B'A7ULL);
    std::vector<Eigen::Index> fit_rows;
    for (auto& rows : rows_by_batch) {
        if (rows.size() < 2) {
            throw DataError("combat: degenerate batch with fewer than 2 samples");
        }
        std::size_t take = static_cast<std::size_t>(
            std::llround(opt.fit_fraction * static_cast<double>(rows.size())));
        take = std::clamp<std::size_t>(take, 2, rows.size());
        std::vector<Eigen::Index> shuffled(rows);
        rng.shuffle(shuffled);
        shuffled.resize(take);
        std::sort(shuffled.begin(), shuffled.end());
        fit_rows.insert(fit_rows.end(), shuffled.begin(), shuffled.end());
    }
    std::sort(fit_rows.begin(), fit_rows.end());
    const Eigen::Index nf = static_cast<Eigen::Index>(fit_rows.size());

    const Eigen::Index c = covariates ? covariates->cols() : 0;
    Mat design(nf, nb + c);
    design.setZero();
    Mat xf(nf, d);
    std::vector<int> fit_batch(static_cast<std::size_t>(nf));
    std::vector<double> batch_n(static_cast<std::size_t>(nb), 0.0);
    for (Eigen::Index t = 0; t < nf; ++t) {
        const Eigen::Index i = fit_rows[static_cast<std::size_t>(t)];
        const int b = batch_index.at(batches[static_cast<std::size_t>(i)]);
        design(t, b) = 1.0;
        if (c > 0) design.block(t, nb, 1, c) = covariates->row(i);
        xf.row(t) = x.row(i);
        fit_batch[static_cast<std::size_t>(t)] = b;
        batch_n[static_cast<std::size_t>(b)] += 1.0;
    }

    // per-feature OLS for batch means and covariate effects
    const Mat coef = (design.transpose() * design)
                         .ldlt()
                         .solve(design.transpose() * xf);  // (nb + c) x d
    CombatModel model;
    model.batch_vocab = vocab;
    model.beta_cov = coef.bottomRows(c);
    model.alpha.resize(d);
    for (Eigen::Index g = 0; g < d; ++g) {
        double a = 0.0;
        for (int b = 0; b < nb; ++b) {
            a += batch_n[static_cast<std::size_t>(b)] / static_cast<double>(nf) * coef(b, g);
        }
        model.alpha[g] = a;
    }

    const Mat resid = xf - design * coef;
    model.pooled_sigma.resize(d);
    model.passthrough.assign(static_cast<std::size_t>(d), 0);
    for (Eigen::Index g = 0; g < d; ++g) {
        const double var = resid.col(g).squaredNorm() / static_cast<double>(nf);
        if (var <= 1e-24) {
            model.passthrough[static_cast<std::size_t>(g)] = 1;
            model.pooled_sigma[g] = 1.0;
            std::cerr << "combat: feature " << g << " has zero residual variance, passed through\n";
        } else {
            model.pooled_sigma[g] = std::sqrt(var);
        }
    }

    // standardized data: remove grand mean and covariate effects, keep batch terms
    Mat stand(nf, d);
    for (Eigen::Index t = 0; t < nf; ++t) {
        for (Eigen::Index g = 0; g < d; ++g) {
            double fitted_mean = model.alpha[g];
            if (c > 0) fitted_mean += design.block(t, nb, 1, c).row(0).dot(model.beta_cov.col(g));
            stand(t, g) = (xf(t, g) - fitted_mean) / model.pooled_sigma[g];
        }
    }

    Mat gamma_hat = Mat::Zero(nb, d);
    Mat delta2_hat = Mat::Zero(nb, d);
    for (int b = 0; b < nb; ++b) {
        std::vector<Eigen::Index> members;
        for (Eigen::Index t = 0; t < nf; ++t) {
            if (fit_batch[static_cast<std::size_t>(t)] == b) members.push_back(t);
        }
        for (Eigen::Index g = 0; g < d; ++g) {
            double mean = 0.0;
            for (auto t : members) mean += stand(t, g);
            mean /= static_cast<double>(members.size());
            double var = 0.0;
            for (auto t : members) var += (stand(t, g) - mean) * (stand(t, g) - mean);
            var /= static_cast<double>(members.size() - 1);
            gamma_hat(b, g) = mean;
            delta2_hat(b, g) = var;
        }
    }

    // empirical-Bayes shrinkage with moment-matched hyperpriors per batch
    model.gamma_star = gamma_hat;
    model.delta2_star = delta2_hat;
    for (int b = 0; b < nb; ++b) {
        const double nb_rows = batch_n[static_cast<std::size_t>(b)];
        const double gamma_bar = gamma_hat.row(b).mean();
        const double tau2 =
            (gamma_hat.row(b).array() - gamma_bar).square().sum() / std::max(1.0, static_cast<double>(d - 1));
        const double v_bar = delta2_hat.row(b).mean();
        const double s2 =
            (delta2_hat.row(b).array() - v_bar).square().sum() / std::max(1.0, static_cast<double>(d - 1));
        const bool scale_prior_degenerate = s2 <= 1e-24;
        const double lambda = scale_prior_degenerate ? 0.0 : (2.0 * s2 + v_bar * v_bar) / s2;
        const double theta = scale_prior_degenerate ? 0.0 : (v_bar * s2 + v_bar * v_bar * v_bar) / s2;

        Vec g_star = gamma_hat.row(b).transpose();
        Vec d_star = delta2_hat.row(b).transpose();
        for (int it = 0; it < opt.max_iter; ++it) {
            double change = 0.0;
            for (Eigen::Index g = 0; g < d; ++g) {
                const double g_new =
                    eb_shrink_location(gamma_hat(b, g), nb_rows, tau2, d_star[g], gamma_bar);
                double d_new = d_star[g];
                if (!scale_prior_degenerate) {
                    // sum of squared deviations of this batch's standardized fit rows
                    double ss = 0.0;
                    for (Eigen::Index t = 0; t < nf; ++t) {
                        if (fit_batch[static_cast<std::size_t>(t)] != b) continue;
                        const double dev = stand(t, g) - g_new;
                        ss += dev * dev;
                    }
                    d_new = (theta + 0.5 * ss) / (nb_rows / 2.0 + lambda - 1.0);
                }
                change = std::max(change, std::abs(g_new - g_star[g]) / std::max(1.0, std::abs(g_star[g])));
                change = std::max(change, std::abs(d_new - d_star[g]) / std::max(1.0, std::abs(d_star[g])));
                g_star[g] = g_new;
                d_star[g] = d_new;
            }
            if (change < opt.tol) break;
        }
        model.gamma_star.row(b) = g_star.transpose();
        model.delta2_star.row(b) = d_star.transpose();
    }

    // apply to every row in chunks
    Mat out(n, d);
    const std::size_t chunk = std::max<std::size_t>(1, opt.chunk);
    for (Eigen::Index start = 0; start < n; start += static_cast<Eigen::Index>(chunk)) {
        const Eigen::Index stop = std::min<Eigen::Index>(n, start + static_cast<Eigen::Index>(chunk));
        for (Eigen::Index i = start; i < stop; ++i) {
            const int b = batch_index.at(batches[static_cast<std::size_t>(i)]);
            for (Eigen::Index g = 0; g < d; ++g) {
                if (model.passthrough[static_cast<std::size_t>(g)]) {
                    out(i, g) = x(i, g);
                    continue;
                }
                double fitted_mean = model.alpha[g];
                if (c > 0) fitted_mean += covariates->row(i).dot(model.beta_cov.col(g));
                const double z = (x(i, g) - fitted_mean) / model.pooled_sigma[g];
                const double scale = std::sqrt(std::max(model.delta2_star(b, g), 1e-24));
                out(i, g) = model.pooled_sigma[g] * (z - model.gamma_star(b, g)) / scale + fitted_mean;
            }
        }
    }
    if (fitted) *fitted = std::move(model);
    return out;
}

CoralTransform coral_fit(const Mat& source, const Mat& target, double eps) {
    if (source.rows() < 2 || target.rows() < 2) {
        throw DataError("coral_fit: need at least 2 rows in source and target");
    }
    if (source.cols() != target.cols()) throw DataError("coral_fit: dimension mismatch");
    if (eps <= 0.0) throw ConfigError("coral_fit: eps must be > 0");

    CoralTransform t;
    t.eps = eps;
    t.mean_source = source.colwise().mean().transpose();
    t.mean_target = target.colwise().mean().transpose();

    auto covariance = [](const Mat& m, const Vec& mean) {
        const Mat centered = m.rowwise() - mean.transpose();
        return Mat(centered.transpose() * centered / static_cast<double>(m.rows() - 1));
    };
    Mat cs = covariance(source, t.mean_source);
    Mat ct = covariance(target, t.mean_target);
    if (!cs.allFinite() || !ct.allFinite()) throw NumericError("coral_fit: non-finite covariance");
    cs.diagonal().array() += eps;
    ct.diagonal().array() += eps;

    auto sym_power = [](const Mat& m, double power) {
        Eigen::SelfAdjointEigenSolver<Mat> eig(m);
        if (eig.info() != Eigen::Success) throw NumericError("coral_fit: eigensolver failed");
        Vec vals = eig.eigenvalues();
        for (Eigen::Index i = 0; i < vals.size(); ++i) {
            vals[i] = std::pow(std::max(vals[i], 0.0), power);
        }
        return Mat(eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose());
    };
    t.map = sym_power(cs, -0.5) * sym_power(ct, 0.5);
    return t;
}

Mat coral_apply(const CoralTransform& t, const Mat& x) {
    if (x.cols() != t.map.rows()) throw DataError("coral_apply: dimension mismatch");
    Mat centered = x.rowwise() - t.mean_source.transpose();
    Mat out = centered * t.map;
    out.rowwise() += t.mean_target.transpose();
    return out;
}

}  // namespace lsr
