#include "biasaudit/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include <json.hpp>

#include "biasaudit/rng.hpp"
#include "biasaudit/seed.hpp"

namespace biasaudit {

namespace {

constexpr std::size_t kFrameSize = 2 + kAgeBinCount; // disease, sex, age bins

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Orthonormal rows via Gram-Schmidt on seeded Gaussian vectors, with one
// re-orthogonalization pass so inner products land at machine epsilon. The
// exactness matters: adjacent-bin correlations below are pinned to the
// requested value rather than drifting with random overlap.
std::vector<std::vector<double>> orthonormal_frame(std::uint64_t seed, std::size_t dim) {
    Rng rng(derive_seed(seed, "frame"));
    std::vector<std::vector<double>> frame(kFrameSize);
    for (auto& v : frame) rng.gaussian_fill(v, dim);
    for (std::size_t i = 0; i < kFrameSize; ++i) {
        for (int pass = 0; pass < 2; ++pass)
            for (std::size_t j = 0; j < i; ++j) {
                double proj = dot(frame[i], frame[j]);
                for (std::size_t d = 0; d < dim; ++d) frame[i][d] -= proj * frame[j][d];
            }
        double norm = std::sqrt(dot(frame[i], frame[i]));
        if (norm < 1e-8) throw std::runtime_error("degenerate frame draw");
        for (double& x : frame[i]) x /= norm;
    }
    return frame;
}

const GroupSpec* find_group(const CohortSpec& spec, const GroupKey& key) {
    for (const GroupSpec& g : spec.groups)
        if (g.key == key) return &g;
    return nullptr;
}

Cohort generate_impl(const CohortSpec& spec, const EmbeddingSet& emb,
                     std::uint64_t sample_seed, std::string provenance) {
    Rng rng(derive_seed(sample_seed, "samples"));
    Cohort cohort;
    cohort.feature_dim = spec.feature_dim;
    cohort.provenance = std::move(provenance);

    std::size_t total = 0;
    for (const GroupSpec& g : spec.groups) total += g.count;
    cohort.samples.reserve(total);

    static constexpr double kBinLow[kAgeBinCount] = {0, 20, 40, 60, 80};
    static constexpr double kBinHigh[kAgeBinCount] = {20, 40, 60, 80, 95};

    std::size_t patient_counter = 0;
    auto emit_sample = [&](const GroupSpec& g, const std::string& pid, int label,
                           double age) {
        Sample s;
        s.patient_id = pid;
        s.label = label;
        s.demographics.sex = g.key.sex;
        s.demographics.age_years = age;
        const auto& sex_emb = emb.sex[g.key.sex == Sex::Male ? 0 : 1];
        const auto& age_emb = emb.age[static_cast<std::size_t>(g.key.age)];
        s.features.resize(spec.feature_dim);
        for (std::size_t d = 0; d < spec.feature_dim; ++d) {
            double v = sex_emb[d] + age_emb[d];
            if (label == 1) v += emb.disease[d];
            if (spec.noise_std > 0.0) v += spec.noise_std * rng.gaussian();
            s.features[d] = v;
        }
        cohort.samples.push_back(std::move(s));
    };

    // Cells are generated in canonical order so the stream of random draws,
    // and therefore the cohort, is a pure function of the seed.
    std::vector<const GroupSpec*> ordered;
    for (const GroupKey& key : enumerate_groups()) {
        if (key.kind != GroupKey::Kind::ByIntersection) continue;
        if (const GroupSpec* g = find_group(spec, key)) ordered.push_back(g);
    }

    for (const GroupSpec* g : ordered) {
        std::size_t b = static_cast<std::size_t>(g->key.age);
        for (std::size_t i = 0; i < g->count; ++i) {
            char pid[16];
            std::snprintf(pid, sizeof(pid), "p%07zu", ++patient_counter);
            double age = kBinLow[b] + (kBinHigh[b] - kBinLow[b]) * rng.uniform01();
            int label = rng.bernoulli(g->prevalence) ? 1 : 0;
            emit_sample(*g, pid, label, age);
            if (spec.multi_image_fraction > 0.0 && rng.bernoulli(spec.multi_image_fraction)) {
                double age2 = std::min(age + rng.uniform01(), std::nextafter(kBinHigh[b], 0.0));
                emit_sample(*g, pid, label, age2); // same patient, second image
            }
        }
    }
    cohort.validate();
    return cohort;
}

} // namespace

void CohortSpec::validate(bool allow_zero_counts) const {
    if (feature_dim < 8)
        throw std::invalid_argument("feature_dim must be >= 8 to hold the direction frame");
    if (!(noise_std >= 0.0)) throw std::invalid_argument("noise_std must be >= 0");
    if (!(age_similarity >= 0.0) || !(age_similarity <= 1.0))
        throw std::invalid_argument("age_similarity must be in [0,1]");
    if (!(multi_image_fraction >= 0.0) || !(multi_image_fraction <= 1.0))
        throw std::invalid_argument("multi_image_fraction must be in [0,1]");
    if (!disease_signal.empty() && disease_signal.size() != feature_dim)
        throw std::invalid_argument("disease_signal length must equal feature_dim");
    if (disease_signal.empty() && !(disease_signal_scale > 0.0))
        throw std::invalid_argument("disease_signal_scale must be positive");
    if (!(group_embedding_scale >= 0.0))
        throw std::invalid_argument("group_embedding_scale must be >= 0");

    std::size_t seen_mask = 0, total = 0;
    for (const GroupSpec& g : groups) {
        if (g.key.kind != GroupKey::Kind::ByIntersection)
            throw std::invalid_argument("cohort cells must be sex-by-age intersections");
        std::size_t bit = (g.key.sex == Sex::Male ? 0 : kAgeBinCount) +
                          static_cast<std::size_t>(g.key.age);
        if (seen_mask & (1u << bit))
            throw std::invalid_argument("duplicate cell: " + g.key.str());
        seen_mask |= 1u << bit;
        if (!allow_zero_counts && g.count == 0)
            throw std::invalid_argument("cell has zero count: " + g.key.str());
        if (!(g.prevalence >= 0.0) || !(g.prevalence <= 1.0))
            throw std::invalid_argument("prevalence must be in [0,1]");
        total += g.count;
    }
    if (seen_mask != (1u << (2 * kAgeBinCount)) - 1)
        throw std::invalid_argument("cohort spec must list all 10 intersection cells");
    if (total == 0) throw std::invalid_argument("cohort spec has no samples");
}

CohortSpec default_cohort_spec(std::uint64_t seed) {
    // Cell sizes follow the proportions of a real pneumonia training cohort,
    // scaled to ~10k samples: middle-aged patients dominate, 80+ cells are
    // thin, males outnumber females overall. Prevalence climbs steeply with
    // age and runs higher in males, as pneumonia base rates do; the asymmetry
    // also keeps a poisoned model's ranking damage mostly inside the targeted
    // group instead of spilling into cross-group score order.
    struct Cell { Sex sex; AgeBin age; std::size_t count; double prev; };
    static constexpr Cell kCells[] = {
        {Sex::Male, AgeBin::Y0_20, 345, 0.19},
        {Sex::Male, AgeBin::Y20_40, 1404, 0.266},
        {Sex::Male, AgeBin::Y40_60, 2408, 0.342},
        {Sex::Male, AgeBin::Y60_80, 1422, 0.57},
        {Sex::Male, AgeBin::Y80_plus, 58, 0.646},
        {Sex::Female, AgeBin::Y0_20, 234, 0.12},
        {Sex::Female, AgeBin::Y20_40, 1127, 0.168},
        {Sex::Female, AgeBin::Y40_60, 1997, 0.216},
        {Sex::Female, AgeBin::Y60_80, 946, 0.36},
        {Sex::Female, AgeBin::Y80_plus, 58, 0.408},
    };
    CohortSpec spec;
    spec.seed = seed;
    for (const Cell& c : kCells)
        spec.groups.push_back({GroupKey::intersection(c.sex, c.age), c.count, c.prev});
    return spec;
}

EmbeddingSet resolve_embeddings(const CohortSpec& spec) {
    auto frame = orthonormal_frame(spec.seed, spec.feature_dim);
    EmbeddingSet emb;

    if (!spec.disease_signal.empty()) {
        emb.disease = spec.disease_signal;
    } else {
        emb.disease = frame[0];
        for (double& x : emb.disease) x *= spec.disease_signal_scale;
    }

    const double gs = spec.group_embedding_scale;
    emb.sex[0].resize(spec.feature_dim);
    emb.sex[1].resize(spec.feature_dim);
    for (std::size_t d = 0; d < spec.feature_dim; ++d) {
        emb.sex[0][d] = gs * frame[1][d];
        emb.sex[1][d] = -gs * frame[1][d];
    }

    // Age bins sit on a planar fan: unit vectors in the span of two fixed
    // frame directions, spaced arccos(s) apart so the adjacent inner product
    // is exactly s and falls off with bin distance. Keeping the bins rank-2
    // matters: a full-rank embedding set would let a linear model suppress
    // one bin with no collateral on its neighbors, whereas in the plane any
    // weight that moves one bin drags similar bins with it.
    const double s = spec.age_similarity;
    const double step = std::acos(std::clamp(s, 0.0, 1.0));
    for (std::size_t b = 0; b < kAgeBinCount; ++b) {
        const double theta = step * static_cast<double>(b);
        const double ca = std::cos(theta), sa = std::sin(theta);
        emb.age[b].resize(spec.feature_dim);
        for (std::size_t d = 0; d < spec.feature_dim; ++d)
            emb.age[b][d] = gs * (ca * frame[2][d] + sa * frame[3][d]);
    }
    return emb;
}

Cohort generate_cohort(const CohortSpec& spec) {
    spec.validate();
    EmbeddingSet emb = resolve_embeddings(spec);
    return generate_impl(spec, emb, spec.seed,
                         "synthetic cohort, seed " + std::to_string(spec.seed));
}

Cohort generate_external_cohort(const CohortSpec& base,
                                std::span<const GroupOverride> overrides,
                                double embedding_jitter, std::uint64_t seed) {
    if (!(embedding_jitter >= 0.0))
        throw std::invalid_argument("embedding_jitter must be >= 0");
    CohortSpec spec = base;
    for (const GroupOverride& ov : overrides) {
        bool found = false;
        for (GroupSpec& g : spec.groups) {
            if (g.key == ov.key) {
                if (ov.count) g.count = *ov.count;
                if (ov.prevalence) g.prevalence = *ov.prevalence;
                found = true;
                break;
            }
        }
        if (!found)
            throw std::invalid_argument("override for unknown cell: " + ov.key.str());
    }
    spec.validate(/*allow_zero_counts=*/true); // sites may lack whole cells

    // Identity directions come from the base seed so "female" or "60-80Y"
    // means the same thing at the external site; the jitter models site-
    // specific distribution shift on top.
    EmbeddingSet emb = resolve_embeddings(base);
    if (embedding_jitter > 0.0) {
        Rng jrng(derive_seed(seed, "jitter"));
        auto jitter_vec = [&](std::vector<double>& v) {
            for (double& x : v) x += embedding_jitter * jrng.gaussian();
        };
        jitter_vec(emb.sex[0]);
        jitter_vec(emb.sex[1]);
        for (auto& v : emb.age) jitter_vec(v);
    }
    return generate_impl(spec, emb, seed,
                         "external cohort, base seed " + std::to_string(base.seed) +
                             ", site seed " + std::to_string(seed));
}

nlohmann::json cohort_spec_to_json(const CohortSpec& spec) {
    nlohmann::json groups = nlohmann::json::array();
    for (const GroupSpec& g : spec.groups)
        groups.push_back({{"sex", std::string(sex_name(g.key.sex))},
                          {"age_bin", std::string(age_bin_name(g.key.age))},
                          {"count", g.count},
                          {"prevalence", g.prevalence}});
    nlohmann::json j = {{"feature_dim", spec.feature_dim},
                        {"disease_signal_scale", spec.disease_signal_scale},
                        {"group_embedding_scale", spec.group_embedding_scale},
                        {"age_similarity", spec.age_similarity},
                        {"noise_std", spec.noise_std},
                        {"multi_image_fraction", spec.multi_image_fraction},
                        {"seed", spec.seed},
                        {"groups", std::move(groups)}};
    if (!spec.disease_signal.empty()) j["disease_signal"] = spec.disease_signal;
    return j;
}

CohortSpec cohort_spec_from_json(const nlohmann::json& j) {
    CohortSpec spec;
    spec.groups.clear();
    spec.feature_dim = j.value("feature_dim", spec.feature_dim);
    spec.disease_signal_scale = j.value("disease_signal_scale", spec.disease_signal_scale);
    spec.group_embedding_scale = j.value("group_embedding_scale", spec.group_embedding_scale);
    spec.age_similarity = j.value("age_similarity", spec.age_similarity);
    spec.noise_std = j.value("noise_std", spec.noise_std);
    spec.multi_image_fraction = j.value("multi_image_fraction", spec.multi_image_fraction);
    spec.seed = j.value("seed", spec.seed);
    if (j.contains("disease_signal"))
        spec.disease_signal = j.at("disease_signal").get<std::vector<double>>();
    if (j.contains("groups")) {
        for (const auto& jg : j.at("groups")) {
            GroupSpec g;
            g.key = GroupKey::intersection(parse_sex(jg.at("sex").get<std::string>()),
                                           parse_age_bin(jg.at("age_bin").get<std::string>()));
            g.count = jg.at("count").get<std::size_t>();
            g.prevalence = jg.value("prevalence", 0.3);
            spec.groups.push_back(g);
        }
    } else {
        spec.groups = default_cohort_spec(spec.seed).groups;
    }
    return spec;
}

} // namespace biasaudit
