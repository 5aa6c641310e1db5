#include "biasaudit/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace biasaudit {

namespace {

// Continued fraction for the incomplete beta, modified Lentz algorithm.
double beta_cf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-16;
    constexpr double kTiny = 1e-300;

    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) return h;
    }
    return h; // converged enough for the df ranges we use
}

double mean_of(std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_variance(std::span<const double> v, double mean) {
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return ss / static_cast<double>(v.size() - 1);
}

} // namespace

double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("beta parameters must be positive");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                      a * std::log(x) + b * std::log1p(-x);
    double front = std::exp(ln_front);
    // Use the symmetry relation where the continued fraction converges fast.
    if (x < (a + 1.0) / (a + b + 2.0))
        return front * beta_cf(a, b, x) / a;
    return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
    if (!(df > 0.0)) throw std::invalid_argument("df must be positive");
    if (std::isnan(t)) return std::numeric_limits<double>::quiet_NaN();
    if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
    if (t == 0.0) return 0.5;
    double x = df / (df + t * t);
    double tail = 0.5 * incomplete_beta(0.5 * df, 0.5, x);
    return t > 0 ? 1.0 - tail : tail;
}

double student_t_two_sided_p(double t, double df) {
    if (std::isinf(t)) return 0.0;
    double x = df / (df + t * t);
    double p = incomplete_beta(0.5 * df, 0.5, x);
    return std::min(1.0, std::max(0.0, p));
}

double student_t_quantile(double p, double df) {
    if (!(p > 0.0) || !(p < 1.0)) throw std::invalid_argument("p must be in (0,1)");
    if (p == 0.5) return 0.0;
    // Expand a bracket, then bisect. The CDF is strictly increasing.
    double lo = -1.0, hi = 1.0;
    while (student_t_cdf(lo, df) > p) lo *= 2.0;
    while (student_t_cdf(hi, df) < p) hi *= 2.0;
    for (int i = 0; i < 200; ++i) {
        double mid = 0.5 * (lo + hi);
        if (hi - lo < 1e-13 * std::max(1.0, std::abs(mid))) return mid;
        if (student_t_cdf(mid, df) < p)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

TestResult independent_t(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2)
        throw std::invalid_argument("independent_t needs at least 2 values per sample");
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    const double ma = mean_of(a), mb = mean_of(b);
    const double va = sample_variance(a, ma), vb = sample_variance(b, mb);

    TestResult res;
    res.kind = TestKind::IndependentT;
    if (va == 0.0 && vb == 0.0) {
        res.df = na + nb - 2.0;
        if (ma == mb) {
            res.statistic = 0.0;
            res.p_value = 1.0;
        } else {
            res.statistic = ma > mb ? std::numeric_limits<double>::infinity()
                                    : -std::numeric_limits<double>::infinity();
            res.p_value = 0.0;
        }
        return res;
    }
    const double sea = va / na, seb = vb / nb;
    const double se2 = sea + seb;
    res.statistic = (ma - mb) / std::sqrt(se2);
    res.df = se2 * se2 / (sea * sea / (na - 1.0) + seb * seb / (nb - 1.0));
    res.p_value = student_t_two_sided_p(res.statistic, res.df);
    return res;
}

TestResult paired_t(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw std::invalid_argument("paired_t needs equal-length samples");
    if (a.size() < 2) throw std::invalid_argument("paired_t needs at least 2 pairs");
    const std::size_t n = a.size();
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
    const double md = mean_of(d);
    const double vd = sample_variance(d, md);

    TestResult res;
    res.kind = TestKind::PairedT;
    res.df = static_cast<double>(n - 1);
    if (vd == 0.0) {
        if (md == 0.0) {
            res.statistic = 0.0;
            res.p_value = 1.0;
        } else {
            res.statistic = md > 0 ? std::numeric_limits<double>::infinity()
                                   : -std::numeric_limits<double>::infinity();
            res.p_value = 0.0;
        }
        return res;
    }
    res.statistic = md / std::sqrt(vd / static_cast<double>(n));
    res.p_value = student_t_two_sided_p(res.statistic, res.df);
    return res;
}

std::vector<bool> benjamini_hochberg(std::span<const double> p_values, double q) {
    if (!(q > 0.0) || !(q < 1.0)) throw std::invalid_argument("q must be in (0,1)");
    const std::size_t m = p_values.size();
    std::vector<bool> reject(m, false);
    if (m == 0) return reject;
    for (double p : p_values)
        if (!(p >= 0.0) || !(p <= 1.0))
            throw std::invalid_argument("p-values must be in [0,1]");

    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return p_values[i] < p_values[j]; });

    std::size_t k_star = 0; // 1-based rank of the largest passing p-value
    for (std::size_t k = 1; k <= m; ++k) {
        double threshold = q * static_cast<double>(k) / static_cast<double>(m);
        if (p_values[order[k - 1]] <= threshold) k_star = k;
    }
    for (std::size_t k = 0; k < k_star; ++k) reject[order[k]] = true;
    return reject;
}

std::vector<CrossoverInterval> detect_crossovers(
    std::span<const std::optional<double>> deltas, std::span<const double> rates) {
    if (deltas.size() != rates.size())
        throw std::invalid_argument("deltas and rates must have equal length");
    std::vector<CrossoverInterval> out;
    bool have_prev = false;
    double prev_delta = 0.0, prev_rate = 0.0;
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        if (!deltas[i]) continue; // undefined at this rate, bridge over it
        double d = *deltas[i];
        if (d == 0.0) out.push_back({rates[i], rates[i], 0.0, 0.0});
        if (have_prev) {
            // zero counts as positive when deciding the side of the axis
            bool prev_pos = prev_delta >= 0.0;
            bool cur_pos = d >= 0.0;
            if (prev_pos != cur_pos)
                out.push_back({prev_rate, rates[i], prev_delta, d});
        }
        prev_delta = d;
        prev_rate = rates[i];
        have_prev = true;
    }
    return out;
}

} // namespace biasaudit
