#pragma once

#include <string>
#include <utility>
#include <vector>

namespace normdae::surv {

// All computation in this module is 64-bit and deterministic.

struct SurvivalRecord {
    std::string id;
    double duration = 0.0;  // days, > 0
    bool event = false;     // true = death observed, false = censored
    std::vector<double> covariates;  // aligned with the covariate-name list
};

struct CoxFit {
    std::vector<std::string> names;
    std::vector<double> coef;
    std::vector<double> se;
    std::vector<double> hazard_ratio;
    std::vector<double> ci_low, ci_high;  // 95% Wald
    std::vector<double> wald_z;
    std::vector<double> p_value;
    std::vector<std::vector<double>> covariance;
    double loglik = 0.0;
    double loglik_null = 0.0;
    int iterations = 0;
    double final_grad_norm = 0.0;
};

// Efron-corrected Cox partial log-likelihood; exposed so tests can drive an
// independent grid-search oracle over the same objective.
double cox_partial_loglik(const std::vector<SurvivalRecord>& records,
                          const std::vector<double>& beta);

// Newton-Raphson maximization from beta = 0 with step halving. Throws
// CollinearityError (singular information, named covariates),
// SeparationError (|beta| > 50), ConvergenceError (iteration cap).
CoxFit cox_fit(const std::vector<SurvivalRecord>& records,
               const std::vector<std::string>& covariate_names);

struct KMPoint {
    double time = 0.0;
    double survival = 1.0;  // S(t) just after this event time
    int at_risk = 0;
    int deaths = 0;
};

// Product-limit estimator; steps only at death times, deaths precede
// censorings at tied times.
std::vector<KMPoint> km_estimate(const std::vector<SurvivalRecord>& records);

struct TestResult {
    double statistic = 0.0;
    double p_value = 1.0;
    int n = 0;
    int m = 0;  // second sample size where applicable
};

TestResult ks_two_sample(std::vector<double> a, std::vector<double> b);
TestResult pearson(const std::vector<double>& x, const std::vector<double>& y);
TestResult kendall_tau(const std::vector<double>& x, const std::vector<double>& y);

// Equal-frequency binning, natural-log entropies, I(X;Y)/sqrt(H(X) H(Y)).
double normalized_mutual_info(const std::vector<double>& x, const std::vector<double>& y,
                              int bins);

struct MedianSplit {
    std::vector<size_t> low;   // indices with score <= median
    std::vector<size_t> high;  // indices with score > median
    double median = 0.0;
};

MedianSplit median_split(const std::vector<double>& scores);

// Median split with alignment to survival records by subject id. The id sets
// of `scores` and `records` must coincide exactly; throws DataError otherwise.
struct SplitGroups {
    std::vector<SurvivalRecord> low, high;
    double median = 0.0;
};

SplitGroups median_split_by_id(const std::vector<std::pair<std::string, double>>& scores,
                               const std::vector<SurvivalRecord>& records);

// Breslow baseline survival at the covariate mean, raised to exp(lp) for a
// shifted covariate profile; used for partial-effect survival curves.
struct PartialEffectCurve {
    double score_value = 0.0;  // the varied covariate's value
    std::vector<double> times;
    std::vector<double> survival;
};

std::vector<PartialEffectCurve> partial_effect_curves(const std::vector<SurvivalRecord>& records,
                                                      const CoxFit& fit, size_t vary_index,
                                                      const std::vector<double>& vary_values);

// Shared helpers.
double normal_sf(double z);                        // P(Z > z), standard normal
double student_t_sf(double t, int dof);            // P(T > t)
double regularized_incomplete_beta(double a, double b, double x);

} // namespace normdae::surv
