#include "biasaudit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "biasaudit/stats.hpp"

namespace biasaudit {

std::string_view metric_name(MetricKind m) {
    switch (m) {
        case MetricKind::Auroc: return "auroc";
        case MetricKind::Fnr: return "fnr";
        case MetricKind::For: return "for";
    }
    throw std::invalid_argument("bad metric kind");
}

MetricKind parse_metric(std::string_view s) {
    if (s == "auroc") return MetricKind::Auroc;
    if (s == "fnr") return MetricKind::Fnr;
    if (s == "for") return MetricKind::For;
    throw std::invalid_argument("bad metric: '" + std::string(s) + "'");
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("scores and labels must have equal length");
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (int y : labels) n_pos += static_cast<std::size_t>(y == 1);
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw UndefinedMetric("AUROC requires both classes");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return scores[i] < scores[j]; });

    // Average ranks across tie groups, accumulate the positive-class rank sum.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        double avg_rank = 0.5 * static_cast<double>(i + 1 + j + 1); // 1-based
        for (std::size_t k = i; k <= j; ++k)
            if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

double youden_threshold(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("scores and labels must have equal length");
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (int y : labels) n_pos += static_cast<std::size_t>(y == 1);
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw UndefinedMetric("Youden threshold requires both classes");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return scores[i] < scores[j]; });

    // Sweep candidates in increasing threshold order. At -inf everything is
    // predicted positive; passing a tie group moves its members to predicted
    // negative. J comparisons use exact integer cross-products so ties break
    // deterministically (smaller FPR, then smaller threshold, i.e. first seen).
    const long long np = static_cast<long long>(n_pos);
    const long long nn = static_cast<long long>(n_neg);
    long long tp = np, fp = nn;

    double best_t = -std::numeric_limits<double>::infinity();
    long long best_tp = tp, best_fp = fp;
    auto better = [&](long long cand_tp, long long cand_fp) {
        // J = tp/np - fp/nn; compare via common denominator np*nn
        long long cand_j = cand_tp * nn - cand_fp * np;
        long long best_j = best_tp * nn - best_fp * np;
        if (cand_j != best_j) return cand_j > best_j;
        return cand_fp < best_fp;
    };

    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        for (std::size_t k = i; k <= j; ++k) {
            if (labels[order[k]] == 1)
                --tp;
            else
                --fp;
        }
        double cand = j + 1 < n
                          ? 0.5 * (scores[order[j]] + scores[order[j + 1]])
                          : std::numeric_limits<double>::infinity();
        if (better(tp, fp)) {
            best_t = cand;
            best_tp = tp;
            best_fp = fp;
        }
        i = j + 1;
    }
    return best_t;
}

Confusion confusion_at(std::span<const double> scores, std::span<const int> labels,
                       double threshold) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("scores and labels must have equal length");
    Confusion c;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        bool pred = scores[i] >= threshold;
        if (labels[i] == 1)
            pred ? ++c.tp : ++c.fn;
        else
            pred ? ++c.fp : ++c.tn;
    }
    return c;
}

std::optional<double> fnr(const Confusion& c) {
    std::size_t denom = c.fn + c.tp;
    if (denom == 0) return std::nullopt;
    return static_cast<double>(c.fn) / static_cast<double>(denom);
}

std::optional<double> for_rate(const Confusion& c) {
    std::size_t denom = c.fn + c.tn;
    if (denom == 0) return std::nullopt;
    return static_cast<double>(c.fn) / static_cast<double>(denom);
}

GroupEvalResult evaluate_groups(std::span<const double> scores,
                                std::span<const int> labels,
                                std::span<const DemographicProfile> demographics,
                                std::span<const GroupKey> groups) {
    if (scores.size() != labels.size() || scores.size() != demographics.size())
        throw std::invalid_argument("scores, labels, demographics must align");

    GroupEvalResult result;
    result.threshold = youden_threshold(scores, labels); // throws if single-class

    std::vector<double> g_scores;
    std::vector<int> g_labels;
    for (const GroupKey& key : groups) {
        g_scores.clear();
        g_labels.clear();
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (group_matches(demographics[i], key)) {
                g_scores.push_back(scores[i]);
                g_labels.push_back(labels[i]);
            }
        }
        if (g_scores.empty()) {
            result.skipped_empty.push_back(key);
            continue;
        }
        EvalRecord rec;
        rec.group = key;
        rec.n = g_scores.size();
        rec.threshold = result.threshold;
        bool has_pos = std::find(g_labels.begin(), g_labels.end(), 1) != g_labels.end();
        bool has_neg = std::find(g_labels.begin(), g_labels.end(), 0) != g_labels.end();
        if (has_pos && has_neg) rec.auroc = auroc(g_scores, g_labels);
        rec.confusion = confusion_at(g_scores, g_labels, result.threshold);
        rec.fnr = fnr(rec.confusion);
        rec.for_rate = for_rate(rec.confusion);
        result.records.push_back(std::move(rec));
    }
    return result;
}

FoldCi fold_ci(std::span<const double> fold_values) {
    if (fold_values.size() < 2)
        throw std::invalid_argument("fold_ci needs at least 2 values");
    const double n = static_cast<double>(fold_values.size());
    double mean = std::accumulate(fold_values.begin(), fold_values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : fold_values) ss += (v - mean) * (v - mean);
    double sd = std::sqrt(ss / (n - 1.0));
    FoldCi ci;
    ci.mean = mean;
    if (sd == 0.0) {
        ci.half_width = 0.0;
        return ci;
    }
    double t = student_t_quantile(0.975, n - 1.0);
    ci.half_width = t * sd / std::sqrt(n);
    return ci;
}

} // namespace biasaudit
