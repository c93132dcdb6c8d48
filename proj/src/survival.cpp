#include "lsr/survival.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "lsr/dataio.hpp"

namespace lsr {

CoxEval cox_eval(const Vec& beta, const Mat& x, const std::vector<double>& times,
                 const std::vector<std::uint8_t>& events, double ridge) {
    const Eigen::Index n = x.rows();
    const Eigen::Index p = x.cols();
    if (static_cast<std::size_t>(n) != times.size() || times.size() != events.size()) {
        throw DataError("cox_eval: rows, times and events must align");
    }
    if (beta.size() != p) throw DataError("cox_eval: beta length mismatch");

    // process in descending time order, accumulating risk-set sums
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        if (times[static_cast<std::size_t>(a)] != times[static_cast<std::size_t>(b)]) {
            return times[static_cast<std::size_t>(a)] > times[static_cast<std::size_t>(b)];
        }
        return a < b;
    });

    CoxEval out;
    out.grad = Vec::Zero(p);
    out.hessian = Mat::Zero(p, p);
    double s0 = 0.0;
    Vec s1 = Vec::Zero(p);
    Mat s2 = Mat::Zero(p, p);

    std::size_t pos = 0;
    while (pos < order.size()) {
        // pull in every subject tied at this time, then emit their event terms
        const double t = times[static_cast<std::size_t>(order[pos])];
        std::size_t stop = pos;
        while (stop < order.size() && times[static_cast<std::size_t>(order[stop])] == t) ++stop;
        for (std::size_t q = pos; q < stop; ++q) {
            const Eigen::Index i = order[q];
            const double w = std::exp(x.row(i).dot(beta));
            s0 += w;
            s1 += w * x.row(i).transpose();
            s2 += w * (x.row(i).transpose() * x.row(i));
        }
        for (std::size_t q = pos; q < stop; ++q) {
            const Eigen::Index i = order[q];
            if (!events[static_cast<std::size_t>(i)]) continue;
            const Vec mean = s1 / s0;
            out.loglik += x.row(i).dot(beta) - std::log(s0);
            out.grad += x.row(i).transpose() - mean;
            out.hessian -= s2 / s0 - mean * mean.transpose();
        }
        pos = stop;
    }

    out.loglik -= 0.5 * ridge * beta.squaredNorm();
    out.grad -= ridge * beta;
    out.hessian.diagonal().array() -= ridge;
    return out;
}

CoxModel cox_fit(const Mat& x, const std::vector<double>& times,
                 const std::vector<std::uint8_t>& events, double ridge, int max_iter) {
    const Eigen::Index n = x.rows();
    const Eigen::Index p = x.cols();
    if (n < 2) throw DataError("cox_fit: need at least 2 subjects");
    if (ridge < 0.0) throw ConfigError("cox_fit: ridge must be >= 0");

    CoxModel model;
    for (auto e : events) model.n_events += (e != 0);
    model.n_censored = static_cast<int>(n) - model.n_events;
    if (model.n_events < 2) throw DataError("cox_fit: fewer than 2 events");

    // zero-variance covariates make the model non-identifiable; flag them
    for (Eigen::Index j = 0; j < p; ++j) {
        const double mean = x.col(j).mean();
        const double var = (x.col(j).array() - mean).square().sum();
        if (var <= 1e-24) {
            model.rank_deficient = true;
            break;
        }
    }

    Vec beta = Vec::Zero(p);
    CoxEval cur = cox_eval(beta, x, times, events, ridge);
    model.ll_history.push_back(cur.loglik);

    bool converged = false;
    int iter = 0;
    for (; iter < max_iter; ++iter) {
        if (cur.grad.cwiseAbs().maxCoeff() / static_cast<double>(n) < 1e-8) {
            converged = true;
            break;
        }
        Mat neg_h = -cur.hessian;
        neg_h.diagonal().array() += 1e-12;
        Eigen::LDLT<Mat> solver(neg_h);
        if (solver.info() != Eigen::Success) {
            throw NumericError("cox_fit: singular information matrix beyond ridge");
        }
        Vec direction = solver.solve(cur.grad);
        if (!direction.allFinite()) {
            throw NumericError("cox_fit: non-finite Newton direction");
        }

        // step-halving: never decrease the penalized log partial likelihood
        double step = 1.0;
        bool improved = false;
        CoxEval next;
        for (int h = 0; h < 40; ++h) {
            const Vec candidate = beta + step * direction;
            next = cox_eval(candidate, x, times, events, ridge);
            if (std::isfinite(next.loglik) && next.loglik >= cur.loglik) {
                beta = candidate;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if (!improved) {
            converged = cur.grad.cwiseAbs().maxCoeff() / static_cast<double>(n) < 1e-6;
            break;
        }
        const double rel_step =
            (step * direction).norm() / std::max(1.0, beta.norm());
        cur = next;
        model.ll_history.push_back(cur.loglik);
        if (rel_step < 1e-10) {
            converged = true;
            ++iter;
            break;
        }
    }

    model.beta = beta;
    model.iterations = iter;
    model.converged = converged;
    model.log_partial_likelihood = cur.loglik;
    if (!converged && !model.rank_deficient) {
        throw NumericError("cox_fit: Newton-Raphson failed to converge after " +
                           std::to_string(iter) + " iterations (max|score|/n = " +
                           std::to_string(cur.grad.cwiseAbs().maxCoeff() / static_cast<double>(n)) + ")");
    }

    Vec eta = x * beta;
    if (n > 1) {
        const double mean = eta.mean();
        const double sd = std::sqrt((eta.array() - mean).square().sum() / static_cast<double>(n - 1));
        model.hr_per_sd = std::exp(sd);
    }
    return model;
}

Mat profiles_to_design(const std::vector<ClusterProfile>& profiles) {
    if (profiles.empty()) throw DataError("profiles_to_design: no profiles");
    const Eigen::Index k = profiles.front().fractions.size();
    if (k < 2) throw DataError("profiles_to_design: need at least 2 clusters");
    Mat x(static_cast<Eigen::Index>(profiles.size()), k - 1);
    for (std::size_t i = 0; i < profiles.size(); ++i) {
        if (profiles[i].fractions.size() != k) throw DataError("profiles_to_design: ragged profiles");
        x.row(static_cast<Eigen::Index>(i)) = profiles[i].fractions.head(k - 1).transpose();
    }
    return x;
}

void write_hr_report(const std::vector<HrRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "k,embedding,hr_per_sd,converged,n_events,n_censored,iterations\n";
    for (const auto& r : rows) {
        out << r.k << ',' << r.embedding << ',' << format_double(r.hr_per_sd) << ','
            << (r.converged ? 1 : 0) << ',' << r.n_events << ',' << r.n_censored << ','
            << r.iterations << "\n";
    }
    out.close();
    if (!out) throw DataError("write failure: " + path);
}

}  // namespace lsr
