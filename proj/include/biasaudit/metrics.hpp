#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "biasaudit/core.hpp"

namespace biasaudit {

// Thrown when a metric's defining population is empty (e.g. AUROC on a
// single-class sample).
struct UndefinedMetric : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Confusion {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    bool operator==(const Confusion&) const = default;
};

enum class MetricKind { Auroc, Fnr, For };
std::string_view metric_name(MetricKind m); // "auroc" / "fnr" / "for"
MetricKind parse_metric(std::string_view s);

// One evaluated (group, test set) slice. `threshold` is the shared decision
// threshold chosen on the whole evaluation set, not per group.
struct EvalRecord {
    GroupKey group;
    std::size_t n = 0;
    std::optional<double> auroc;          // absent when the group is single-class
    double threshold = 0.0;
    Confusion confusion;
    std::optional<double> fnr;            // absent when no positives
    std::optional<double> for_rate;       // absent when no negative predictions
};

// Rank-sum AUROC with average ranks for ties (equivalent to pairwise
// counting with ties scored 1/2). Throws UndefinedMetric unless both classes
// are present.
double auroc(std::span<const double> scores, std::span<const int> labels);

// Threshold maximizing Youden's J = TPR - FPR over midpoints of adjacent
// distinct scores plus -inf/+inf sentinels; prediction is score >= t.
// Ties in J break toward smaller FPR, then smaller threshold. Throws
// UndefinedMetric unless both classes are present.
double youden_threshold(std::span<const double> scores, std::span<const int> labels);

Confusion confusion_at(std::span<const double> scores, std::span<const int> labels,
                       double threshold);

// Eq-style rates on a confusion table; absent when the denominator is empty.
std::optional<double> fnr(const Confusion& c);      // FN / (FN + TP)
std::optional<double> for_rate(const Confusion& c); // FN / (FN + TN)

struct GroupEvalResult {
    double threshold = 0.0;               // shared Youden threshold
    std::vector<EvalRecord> records;      // in the order groups were given
    std::vector<GroupKey> skipped_empty;  // groups with no members
};

// Evaluates every requested group at the shared overall threshold. Labels
// must contain both classes overall (else UndefinedMetric).
GroupEvalResult evaluate_groups(std::span<const double> scores,
                                std::span<const int> labels,
                                std::span<const DemographicProfile> demographics,
                                std::span<const GroupKey> groups);

// Mean and t-based 95% half-width over per-fold values. Needs >= 2 values.
struct FoldCi {
    double mean = 0.0;
    double half_width = 0.0;
};
FoldCi fold_ci(std::span<const double> fold_values);

} // namespace biasaudit
