#pragma once

#include <string>
#include <vector>

#include "lsr/clustering.hpp"
#include "lsr/common.hpp"

namespace lsr {

struct CoxModel {
    Vec beta;
    double hr_per_sd = 1.0;  // exp(sd of the fitted linear predictor)
    double log_partial_likelihood = 0.0;
    int n_events = 0;
    int n_censored = 0;
    bool converged = false;
    int iterations = 0;
    bool rank_deficient = false;          // zero-variance covariates detected
    std::vector<double> ll_history;       // penalized log PL per Newton iteration
};

/// Breslow-tie partial log-likelihood with an L2 ridge penalty, plus analytic
/// gradient and Hessian. Exposed so tests can check derivatives against
/// finite differences.
struct CoxEval {
    double loglik = 0.0;   // penalized
    Vec grad;              // penalized
    Mat hessian;           // penalized (negative definite at optimum)
};
CoxEval cox_eval(const Vec& beta, const Mat& x, const std::vector<double>& times,
                 const std::vector<std::uint8_t>& events, double ridge);

/// Newton-Raphson with step-halving on the penalized Breslow partial
/// likelihood. Convergence: max |score|/n < 1e-8 or relative step change
/// < 1e-10, at most max_iter iterations.
CoxModel cox_fit(const Mat& x, const std::vector<double>& times,
                 const std::vector<std::uint8_t>& events, double ridge = 1e-4, int max_iter = 100);

/// Design matrix from cluster-volume profiles with the last simplex-redundant
/// column dropped.
Mat profiles_to_design(const std::vector<ClusterProfile>& profiles);

struct HrRow {
    int k = 0;
    std::string embedding;
    double hr_per_sd = 1.0;
    bool converged = false;
    int n_events = 0;
    int n_censored = 0;
    int iterations = 0;
};

void write_hr_report(const std::vector<HrRow>& rows, const std::string& path);

}  // namespace lsr
