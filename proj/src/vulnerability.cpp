#include "biasaudit/vulnerability.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "biasaudit/stats.hpp"

namespace biasaudit {

namespace {

// log f and log(1-f) combined: y*z - softplus(z), stable for any real y.
double penalized_loglik(std::span<const double> x, std::span<const double> y,
                        double alpha, double beta, double ridge) {
    double ll = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double z = alpha + beta * x[i];
        double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        ll += y[i] * z - softplus;
    }
    return ll - 0.5 * ridge * (alpha * alpha + beta * beta);
}

} // namespace

LogisticFit quasi_logistic_mle(std::span<const double> x, std::span<const double> y,
                               double ridge) {
    if (x.size() != y.size())
        throw std::invalid_argument("x and y must have equal length");
    if (x.size() < 2) throw DegenerateDesign("need at least 2 points");
    bool distinct = false;
    for (std::size_t i = 1; i < x.size(); ++i)
        if (x[i] != x[0]) { distinct = true; break; }
    if (!distinct) throw DegenerateDesign("predictor is constant");
    if (!(ridge > 0.0)) throw std::invalid_argument("ridge must be positive");

    constexpr int kMaxIter = 200;
    constexpr double kTol = 1e-12;

    LogisticFit fit;
    double alpha = 0.0, beta = 0.0;
    double ll = penalized_loglik(x, y, alpha, beta, ridge);

    for (int iter = 0; iter < kMaxIter; ++iter) {
        double g0 = -ridge * alpha, g1 = -ridge * beta;
        double h00 = ridge, h01 = 0.0, h11 = ridge; // negated Hessian accumulators
        for (std::size_t i = 0; i < x.size(); ++i) {
            double z = alpha + beta * x[i];
            double f = 1.0 / (1.0 + std::exp(-z));
            double r = y[i] - f;
            g0 += r;
            g1 += r * x[i];
            double w = f * (1.0 - f);
            h00 += w;
            h01 += w * x[i];
            h11 += w * x[i] * x[i];
        }
        double gnorm = std::sqrt(g0 * g0 + g1 * g1);
        fit.iterations = iter;
        fit.final_gradient_norm = gnorm;
        if (gnorm <= kTol) {
            fit.converged = true;
            break;
        }
        // Newton step: solve (negated Hessian) * delta = gradient. The ridge
        // keeps the system positive definite even for separable data.
        double det = h00 * h11 - h01 * h01;
        double d0 = (h11 * g0 - h01 * g1) / det;
        double d1 = (h00 * g1 - h01 * g0) / det;

        // Near a stationary point the objective is flat to fp resolution and
        // an ascent test would stall the polish; plain Newton is safe there.
        if (gnorm <= 1e-6) {
            alpha += d0;
            beta += d1;
            ll = penalized_loglik(x, y, alpha, beta, ridge);
            continue;
        }
        double step = 1.0;
        while (step > 1e-12) {
            double cand_ll = penalized_loglik(x, y, alpha + step * d0, beta + step * d1, ridge);
            if (cand_ll >= ll) {
                alpha += step * d0;
                beta += step * d1;
                ll = cand_ll;
                break;
            }
            step *= 0.5;
        }
        if (step <= 1e-12) break; // no ascent direction left numerically
    }
    fit.alpha = alpha;
    fit.beta = beta;
    return fit;
}

NuResult vulnerability_nu(std::span<const SeriesPoint> series, double ridge) {
    std::vector<double> x, y;
    x.reserve(series.size());
    y.reserve(series.size());
    for (const SeriesPoint& p : series) {
        x.push_back(p.rate);
        y.push_back(p.group_value - p.overall_value);
    }
    NuResult res;
    res.fit = quasi_logistic_mle(x, y, ridge);
    res.nu = res.fit.beta;
    res.point_count = series.size();
    return res;
}

double alt_metric_1(std::span<const SeriesPoint> series, double ridge) {
    std::vector<double> x, yg, yo;
    x.reserve(series.size());
    for (const SeriesPoint& p : series) {
        x.push_back(p.rate);
        yg.push_back(p.group_value);
        yo.push_back(p.overall_value);
    }
    LogisticFit fg = quasi_logistic_mle(x, yg, ridge);
    LogisticFit fo = quasi_logistic_mle(x, yo, ridge);
    return std::abs(fg.beta - fo.beta);
}

double alt_metric_2(std::span<const SeriesPoint> series, double ridge) {
    // Group points by fold, order each fold's points by rate, difference
    // consecutive ones.
    std::map<int, std::vector<std::pair<double, double>>> by_fold;
    std::vector<double> distinct_rates;
    for (const SeriesPoint& p : series) {
        by_fold[p.fold].push_back({p.rate, p.group_value - p.overall_value});
        if (std::find(distinct_rates.begin(), distinct_rates.end(), p.rate) ==
            distinct_rates.end())
            distinct_rates.push_back(p.rate);
    }
    if (distinct_rates.size() < 3)
        throw InsufficientData("finite-difference slope needs at least 3 rates");

    std::vector<double> x, y;
    for (auto& [fold, pts] : by_fold) {
        std::sort(pts.begin(), pts.end());
        for (std::size_t i = 1; i < pts.size(); ++i) {
            double dr = pts[i].first - pts[i - 1].first;
            if (dr <= 0.0) continue; // duplicate rate within a fold
            x.push_back(0.5 * (pts[i].first + pts[i - 1].first));
            y.push_back((pts[i].second - pts[i - 1].second) / dr);
        }
    }
    return quasi_logistic_mle(x, y, ridge).beta;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        double avg = 0.5 * static_cast<double>(i + 1 + j + 1);
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

} // namespace

SpearmanResult spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw std::invalid_argument("samples must have equal length");
    if (a.size() < 3) throw InsufficientData("spearman needs at least 3 pairs");
    const std::size_t n = a.size();
    std::vector<double> ra = average_ranks(a), rb = average_ranks(b);

    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0)
        throw DegenerateDesign("constant ranks, correlation undefined");

    SpearmanResult res;
    res.n = n;
    res.rho = sab / std::sqrt(saa * sbb);
    double nf = static_cast<double>(n);
    if (std::abs(res.rho) >= 1.0 - 1e-15) {
        res.p_value = 0.0;
    } else {
        double t = res.rho * std::sqrt((nf - 2.0) / (1.0 - res.rho * res.rho));
        res.p_value = student_t_two_sided_p(t, nf - 2.0);
    }
    return res;
}

SpearmanResult vulnerability_vs_size(std::span<const double> nu_values,
                                     std::span<const double> train_sizes) {
    return spearman(nu_values, train_sizes);
}

} // namespace biasaudit
