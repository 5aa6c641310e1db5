#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "biasaudit/core.hpp"

namespace biasaudit {

// Size and disease prevalence of one sex-by-age cell. Cohort specs list all
// ten cells exactly once.
struct GroupSpec {
    GroupKey key;           // must be an intersection
    std::size_t count = 0;
    double prevalence = 0.3;
};

// Generative model: an orthonormal direction frame is drawn from the seed;
// features are
//   label * disease_signal + sex_embedding + age_embedding + N(0, noise_std^2 I).
// Sex embeddings are antipodal along one frame direction. Age embeddings are
// unit vectors fanned across a fixed plane, spaced so adjacent bins have
// inner product exactly age_similarity (1 = identical, 0 = orthogonal);
// demographic proximity is controlled, not incidental.
struct CohortSpec {
    std::vector<GroupSpec> groups;
    std::size_t feature_dim = 16;
    std::vector<double> disease_signal;  // empty = disease_signal_scale * frame direction
    double disease_signal_scale = 6.0;
    double group_embedding_scale = 1.3;
    double age_similarity = 0.7;
    double noise_std = 1.0;
    double multi_image_fraction = 0.0;   // chance of a second image per patient
    std::uint64_t seed = 1;

    void validate(bool allow_zero_counts = false) const; // throws std::invalid_argument
};

// Ten intersection cells proportioned like a real pneumonia cohort,
// totalling ~10k samples. Prevalence rises with age and is higher for males,
// mirroring clinical base rates.
CohortSpec default_cohort_spec(std::uint64_t seed = 1);

// The resolved direction vectors for a spec (deterministic in spec.seed).
struct EmbeddingSet {
    std::vector<double> disease;                      // scaled signal vector
    std::array<std::vector<double>, 2> sex;           // [Male, Female], scaled
    std::array<std::vector<double>, kAgeBinCount> age; // scaled
};
EmbeddingSet resolve_embeddings(const CohortSpec& spec);

Cohort generate_cohort(const CohortSpec& spec);

// Partial override of one cell for external-site generation. Absent fields
// keep the base value; count 0 removes the cell (e.g. a site without
// pediatric patients).
struct GroupOverride {
    GroupKey key;
    std::optional<std::size_t> count;
    std::optional<double> prevalence;
};

// An external test site: same identity directions as the base spec (so group
// membership means the same thing), optionally jittered embeddings and
// shifted demographics, fresh sampling noise from `seed`.
Cohort generate_external_cohort(const CohortSpec& base,
                                std::span<const GroupOverride> overrides,
                                double embedding_jitter, std::uint64_t seed);

nlohmann::json cohort_spec_to_json(const CohortSpec& spec);
CohortSpec cohort_spec_from_json(const nlohmann::json& j);

} // namespace biasaudit
