#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <json.hpp>

#include "biasaudit/core.hpp"

namespace biasaudit {

// Record of one label-flip injection: which samples were eligible, which
// were flipped, under what seed. Serialized next to results so any cell's
// training labels can be reconstructed exactly.
struct PoisonManifest {
    GroupKey target;
    double rate = 0.0;
    int fold = 0;
    std::uint64_t seed = 0;
    std::size_t eligible_count = 0;
    std::vector<std::size_t> flipped_indices; // sorted sample indices
};

// round half up of rate * n, the exact flip count contract.
std::size_t poison_flip_count(double rate, std::size_t n_eligible);

// Flips positive labels to negative for target-group samples in the train or
// val partitions of `fold`; test samples are never eligible. Returns the full
// relabeled vector (cohort order) and the manifest. Throws
// std::invalid_argument for rate outside [0,1] or a bad fold. An empty
// eligible pool is not an error: the manifest just records zero flips.
std::pair<std::vector<int>, PoisonManifest> inject_underdiagnosis(
    const Cohort& cohort, const SplitPlan& splits, int fold, const GroupKey& target,
    double rate, std::uint64_t seed);

// The canonical poisoning-rate grid.
const std::vector<double>& rate_grid();

nlohmann::json manifest_to_json(const PoisonManifest& m);
PoisonManifest manifest_from_json(const nlohmann::json& j);

} // namespace biasaudit
