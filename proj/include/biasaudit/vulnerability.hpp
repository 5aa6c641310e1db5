#pragma once

#include <span>
#include <stdexcept>
#include <vector>

namespace biasaudit {

// Thrown when a fit has no information to work with (fewer than 2 points or
// a constant predictor).
struct DegenerateDesign : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InsufficientData : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct LogisticFit {
    double alpha = 0.0;
    double beta = 0.0;
    bool converged = false;
    int iterations = 0;
    double final_gradient_norm = 0.0;
};

// Maximum likelihood fit of f(x) = 1 / (1 + exp(-(alpha + beta x))) by
// Newton-Raphson from (0,0) with step halving, on the ridge-penalized
// quasi-log-likelihood
//   sum_i [ y_i log f(x_i) + (1 - y_i) log(1 - f(x_i)) ] - ridge/2 (a^2+b^2).
// Responses need not be binary (quasi-likelihood): any real y is admitted,
// which is what lets metric values and metric differences be regressed on
// the poisoning rate. Converges when the gradient norm falls below 1e-12.
LogisticFit quasi_logistic_mle(std::span<const double> x, std::span<const double> y,
                               double ridge = 1e-6);

// One observed point of a dose-response series: a metric value for the
// readout group and for the overall population at a given rate and fold.
struct SeriesPoint {
    double rate = 0.0;
    int fold = 0;
    double group_value = 0.0;
    double overall_value = 0.0;
};

struct NuResult {
    LogisticFit fit;       // fit of (group - overall) against rate
    double nu = 0.0;       // = fit.beta
    std::size_t point_count = 0;
};

// The vulnerability score: slope of the logistic fit of per-fold
// (group - overall) metric differences against poisoning rate. Positive when
// poisoning degrades the group relative to the population, negative when the
// group is spared.
NuResult vulnerability_nu(std::span<const SeriesPoint> series, double ridge = 1e-6);

// |beta_group - beta_overall| from separate fits of the raw group and
// overall metric series.
double alt_metric_1(std::span<const SeriesPoint> series, double ridge = 1e-6);

// Slope of a fit on per-fold finite differences of (group - overall) between
// consecutive observed rates, evaluated at interval midpoints. Needs at
// least 3 distinct rates.
double alt_metric_2(std::span<const SeriesPoint> series, double ridge = 1e-6);

struct SpearmanResult {
    double rho = 0.0;
    double p_value = 1.0;
    std::size_t n = 0;
};

// Spearman rank correlation (average ranks for ties) with the t-approximation
// p-value. Used to relate per-group vulnerability to group training size.
SpearmanResult spearman(std::span<const double> a, std::span<const double> b);

SpearmanResult vulnerability_vs_size(std::span<const double> nu_values,
                                     std::span<const double> train_sizes);

} // namespace biasaudit
