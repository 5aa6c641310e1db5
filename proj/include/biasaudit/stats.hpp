#pragma once

#include <optional>
#include <span>
#include <vector>

namespace biasaudit {

// Regularized incomplete beta I_x(a, b) by continued fraction (modified
// Lentz). Accurate to ~1e-14 relative for the parameter ranges used here.
double incomplete_beta(double a, double b, double x);

// Student-t distribution with real-valued df (Welch gives fractional df).
double student_t_cdf(double t, double df);
double student_t_two_sided_p(double t, double df);
double student_t_quantile(double p, double df); // inverse CDF, bisection

enum class TestKind { IndependentT, PairedT };

struct TestResult {
    double statistic = 0.0;
    double p_value = 1.0;
    double df = 0.0;
    TestKind kind = TestKind::IndependentT;
};

// Welch's unequal-variance t-test, two-sided. Requires >= 2 values per side.
// Degenerate inputs follow a fixed convention: both variances zero and equal
// means -> t = 0, p = 1; both variances zero and different means -> t = +/-inf,
// p = 0.
TestResult independent_t(std::span<const double> a, std::span<const double> b);

// Paired two-sided t-test on equal-length samples, df = n - 1. Zero-variance
// differences follow the same convention as above.
TestResult paired_t(std::span<const double> a, std::span<const double> b);

// Benjamini-Hochberg step-up at FDR level q. Returns the rejection decision
// for each p-value in input order.
std::vector<bool> benjamini_hochberg(std::span<const double> p_values, double q);

// A sign change of a rate-indexed difference series between two adjacent
// observed rates. An exact zero at a rate is recorded as a degenerate
// interval (rate, rate, 0, 0) and treated as positive when bracketing.
struct CrossoverInterval {
    double rate_low = 0.0;
    double rate_high = 0.0;
    double delta_low = 0.0;
    double delta_high = 0.0;
};

// `deltas[i]` is the fold-mean difference at `rates[i]`; entries without a
// defined value are skipped, so intervals can span non-adjacent grid rates.
std::vector<CrossoverInterval> detect_crossovers(
    std::span<const std::optional<double>> deltas, std::span<const double> rates);

} // namespace biasaudit
