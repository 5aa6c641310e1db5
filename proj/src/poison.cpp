#include "biasaudit/poison.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "biasaudit/rng.hpp"

namespace biasaudit {

std::size_t poison_flip_count(double rate, std::size_t n_eligible) {
    return static_cast<std::size_t>(std::floor(rate * static_cast<double>(n_eligible) + 0.5));
}

std::pair<std::vector<int>, PoisonManifest> inject_underdiagnosis(
    const Cohort& cohort, const SplitPlan& splits, int fold, const GroupKey& target,
    double rate, std::uint64_t seed) {
    if (!(rate >= 0.0) || !(rate <= 1.0))
        throw std::invalid_argument("poison rate must be in [0,1]");
    if (fold < 0 || fold >= splits.fold_count)
        throw std::invalid_argument("fold out of range");
    const auto& assignment = splits.assignments[static_cast<std::size_t>(fold)];
    if (assignment.size() != cohort.size())
        throw std::invalid_argument("split plan does not cover this cohort");

    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        if (assignment[i] == Partition::Test) continue; // test labels stay clean
        const Sample& s = cohort.samples[i];
        if (s.label == 1 && group_matches(s.demographics, target)) eligible.push_back(i);
    }

    PoisonManifest manifest;
    manifest.target = target;
    manifest.rate = rate;
    manifest.fold = fold;
    manifest.seed = seed;
    manifest.eligible_count = eligible.size();

    const std::size_t k = poison_flip_count(rate, eligible.size());
    // Partial Fisher-Yates: the first k slots of the shuffled pool.
    Rng rng(seed);
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.below(eligible.size() - i));
        std::swap(eligible[i], eligible[j]);
    }
    manifest.flipped_indices.assign(eligible.begin(),
                                    eligible.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(manifest.flipped_indices.begin(), manifest.flipped_indices.end());

    std::vector<int> labels(cohort.size());
    for (std::size_t i = 0; i < cohort.size(); ++i) labels[i] = cohort.samples[i].label;
    for (std::size_t i : manifest.flipped_indices) labels[i] = 0;
    return {std::move(labels), std::move(manifest)};
}

const std::vector<double>& rate_grid() {
    static const std::vector<double> grid = {0.0, 0.05, 0.1, 0.25, 0.5, 0.75, 1.0};
    return grid;
}

nlohmann::json manifest_to_json(const PoisonManifest& m) {
    return {{"target", m.target.str()},
            {"rate", m.rate},
            {"fold", m.fold},
            {"seed", m.seed},
            {"eligible_count", m.eligible_count},
            {"flipped_indices", m.flipped_indices}};
}

PoisonManifest manifest_from_json(const nlohmann::json& j) {
    PoisonManifest m;
    m.target = GroupKey::parse(j.at("target").get<std::string>());
    m.rate = j.at("rate").get<double>();
    m.fold = j.at("fold").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.eligible_count = j.at("eligible_count").get<std::size_t>();
    m.flipped_indices = j.at("flipped_indices").get<std::vector<std::size_t>>();
    return m;
}

} // namespace biasaudit
