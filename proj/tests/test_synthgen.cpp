#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "biasaudit/core.hpp"
#include "biasaudit/synthgen.hpp"

using namespace biasaudit;

static double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

TEST_CASE("default spec covers all ten cells at realistic proportions") {
    CohortSpec spec = default_cohort_spec();
    REQUIRE(spec.groups.size() == 10);
    CHECK_NOTHROW(spec.validate());

    std::size_t total = 0;
    std::set<std::pair<int, int>> cells;
    std::size_t males = 0;
    for (const GroupSpec& g : spec.groups) {
        REQUIRE(g.key.kind == GroupKey::Kind::ByIntersection);
        cells.insert({static_cast<int>(g.key.sex), static_cast<int>(g.key.age)});
        total += g.count;
        if (g.key.sex == Sex::Male) males += g.count;
        CHECK(g.prevalence > 0.0);
        CHECK(g.prevalence < 1.0);
    }
    CHECK(cells.size() == 10);
    CHECK(total > 9000);
    CHECK(total < 11000);
    CHECK(males > total / 2); // male-skewed cohort

    // Prevalence rises with age within each sex and is higher for males.
    std::map<std::pair<Sex, AgeBin>, double> prev;
    for (const GroupSpec& g : spec.groups) prev[{g.key.sex, g.key.age}] = g.prevalence;
    for (Sex s : {Sex::Male, Sex::Female})
        for (int b = 0; b + 1 < static_cast<int>(kAgeBinCount); ++b)
            CHECK(prev[{s, static_cast<AgeBin>(b)}] < prev[{s, static_cast<AgeBin>(b + 1)}]);
    for (int b = 0; b < static_cast<int>(kAgeBinCount); ++b)
        CHECK(prev[{Sex::Male, static_cast<AgeBin>(b)}] >
              prev[{Sex::Female, static_cast<AgeBin>(b)}]);
}

TEST_CASE("spec validation rejects malformed group lists") {
    CohortSpec spec = default_cohort_spec();
    spec.groups[3].key = spec.groups[2].key; // duplicate cell
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);

    CohortSpec missing = default_cohort_spec();
    missing.groups.pop_back();
    CHECK_THROWS_AS(missing.validate(), std::invalid_argument);

    CohortSpec bad_prev = default_cohort_spec();
    bad_prev.groups[0].prevalence = 1.5;
    CHECK_THROWS_AS(bad_prev.validate(), std::invalid_argument);

    CohortSpec zero = default_cohort_spec();
    zero.groups[0].count = 0;
    CHECK_THROWS_AS(zero.validate(), std::invalid_argument);
    CHECK_NOTHROW(zero.validate(/*allow_zero_counts=*/true));
}

TEST_CASE("embeddings have controlled geometry") {
    CohortSpec spec = default_cohort_spec(5);
    spec.age_similarity = 0.6;
    EmbeddingSet emb = resolve_embeddings(spec);

    const double m = spec.disease_signal_scale;
    const double g = spec.group_embedding_scale;
    CHECK(std::sqrt(dot(emb.disease, emb.disease)) == doctest::Approx(m).epsilon(1e-12));

    // Sexes are antipodal and orthogonal to the disease direction.
    for (std::size_t d = 0; d < spec.feature_dim; ++d)
        CHECK(emb.sex[0][d] == doctest::Approx(-emb.sex[1][d]).epsilon(1e-12));
    CHECK(std::sqrt(dot(emb.sex[0], emb.sex[0])) == doctest::Approx(g).epsilon(1e-12));
    CHECK(dot(emb.sex[0], emb.disease) == doctest::Approx(0.0).epsilon(1e-10));

    // Age bins: unit length times scale, adjacent inner products exactly the
    // similarity, second neighbors at the doubled angle, all in one plane.
    for (std::size_t b = 0; b < kAgeBinCount; ++b)
        CHECK(std::sqrt(dot(emb.age[b], emb.age[b])) == doctest::Approx(g).epsilon(1e-12));
    for (std::size_t b = 0; b + 1 < kAgeBinCount; ++b)
        CHECK(dot(emb.age[b], emb.age[b + 1]) ==
              doctest::Approx(0.6 * g * g).epsilon(1e-10));
    const double two_step = std::cos(2.0 * std::acos(0.6));
    for (std::size_t b = 0; b + 2 < kAgeBinCount; ++b)
        CHECK(dot(emb.age[b], emb.age[b + 2]) ==
              doctest::Approx(two_step * g * g).epsilon(1e-10));
    CHECK(dot(emb.age[0], emb.disease) == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(dot(emb.age[0], emb.sex[0]) == doctest::Approx(0.0).epsilon(1e-10));

    // Rank 2: every bin is a combination of the first two, so the Gram
    // matrix of any three bins is singular.
    const double g00 = dot(emb.age[0], emb.age[0]);
    const double g01 = dot(emb.age[0], emb.age[1]);
    const double g02 = dot(emb.age[0], emb.age[2]);
    const double g11 = dot(emb.age[1], emb.age[1]);
    const double g12 = dot(emb.age[1], emb.age[2]);
    const double g22 = dot(emb.age[2], emb.age[2]);
    const double det = g00 * (g11 * g22 - g12 * g12) - g01 * (g01 * g22 - g12 * g02) +
                       g02 * (g01 * g12 - g11 * g02);
    CHECK(std::abs(det) < 1e-9);

    // Similarity endpoints.
    CohortSpec same = spec;
    same.age_similarity = 1.0;
    EmbeddingSet es = resolve_embeddings(same);
    for (std::size_t b = 0; b + 1 < kAgeBinCount; ++b)
        CHECK(dot(es.age[b], es.age[b + 1]) == doctest::Approx(g * g).epsilon(1e-12));
    CohortSpec ortho = spec;
    ortho.age_similarity = 0.0;
    EmbeddingSet eo = resolve_embeddings(ortho);
    for (std::size_t b = 0; b + 1 < kAgeBinCount; ++b)
        CHECK(dot(eo.age[b], eo.age[b + 1]) == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("generation is deterministic in the seed and matches the configured cells") {
    CohortSpec spec = default_cohort_spec(21);
    for (auto& g : spec.groups) g.count /= 10;
    Cohort a = generate_cohort(spec);
    Cohort b = generate_cohort(spec);
    CHECK(cohort_to_csv(a) == cohort_to_csv(b));

    CohortSpec other = spec;
    other.seed = 22;
    CHECK(cohort_to_csv(generate_cohort(other)) != cohort_to_csv(a));

    CHECK_NOTHROW(a.validate());
    CHECK(a.feature_dim == spec.feature_dim);

    std::size_t expect = 0;
    for (const auto& g : spec.groups) expect += g.count;
    CHECK(a.size() == expect);

    // Every sample lands in its cell.
    std::map<std::pair<Sex, AgeBin>, std::size_t> counts;
    for (const Sample& s : a.samples)
        ++counts[{s.demographics.sex, assign_age_bin(s.demographics.age_years)}];
    for (const auto& g : spec.groups)
        CHECK(counts[{g.key.sex, g.key.age}] == g.count);
}

TEST_CASE("labels shift the feature mean along the disease direction") {
    CohortSpec spec = default_cohort_spec(31);
    for (auto& g : spec.groups) g.count /= 5;
    Cohort c = generate_cohort(spec);
    EmbeddingSet emb = resolve_embeddings(spec);

    double pos = 0.0, neg = 0.0;
    std::size_t n_pos = 0, n_neg = 0;
    for (const Sample& s : c.samples) {
        const double proj = dot(s.features, emb.disease);
        if (s.label == 1) { pos += proj; ++n_pos; }
        else { neg += proj; ++n_neg; }
    }
    REQUIRE(n_pos > 0);
    REQUIRE(n_neg > 0);
    const double m2 = dot(emb.disease, emb.disease);
    // Positive-labelled samples carry the disease vector; projections differ
    // by about |disease|^2 between classes.
    CHECK(pos / static_cast<double>(n_pos) - neg / static_cast<double>(n_neg) ==
          doctest::Approx(m2).epsilon(0.15));
}

TEST_CASE("multi-image patients replicate demographics and label") {
    CohortSpec spec = default_cohort_spec(41);
    for (auto& g : spec.groups) g.count /= 10;
    spec.multi_image_fraction = 0.5;
    Cohort c = generate_cohort(spec);

    std::map<std::string, std::vector<const Sample*>> by_patient;
    for (const Sample& s : c.samples) by_patient[s.patient_id].push_back(&s);
    std::size_t repeated = 0;
    for (auto& [id, group] : by_patient) {
        if (group.size() < 2) continue;
        ++repeated;
        for (const Sample* s : group) {
            CHECK(s->label == group[0]->label);
            CHECK(s->demographics.sex == group[0]->demographics.sex);
            // A later image may age the patient slightly but never out of
            // the age bin, so group membership stays put.
            CHECK(s->demographics.age_years >= group[0]->demographics.age_years);
            CHECK(s->demographics.age_years < group[0]->demographics.age_years + 1.0);
            CHECK(assign_age_bin(s->demographics.age_years) ==
                  assign_age_bin(group[0]->demographics.age_years));
            // Distinct images of one patient still differ in features.
            if (s != group[0]) CHECK(s->features != group[0]->features);
        }
    }
    CHECK(repeated > 0);
}

TEST_CASE("external sites share directions but not noise") {
    CohortSpec spec = default_cohort_spec(51);
    for (auto& g : spec.groups) g.count /= 10;

    Cohort plain = generate_external_cohort(spec, {}, 0.0, 61);
    CHECK_NOTHROW(plain.validate());
    CHECK(plain.size() == generate_cohort(spec).size());
    CHECK(cohort_to_csv(plain) != cohort_to_csv(generate_cohort(spec)));

    Cohort again = generate_external_cohort(spec, {}, 0.0, 61);
    CHECK(cohort_to_csv(again) == cohort_to_csv(plain));

    // Count override removes a cell entirely; prevalence override shifts the
    // label rate.
    std::vector<GroupOverride> ov;
    ov.push_back({GroupKey::intersection(Sex::Male, AgeBin::Y0_20), 0, std::nullopt});
    ov.push_back({GroupKey::intersection(Sex::Female, AgeBin::Y0_20), 0, std::nullopt});
    Cohort no_peds = generate_external_cohort(spec, ov, 0.05, 61);
    for (const Sample& s : no_peds.samples)
        CHECK(assign_age_bin(s.demographics.age_years) != AgeBin::Y0_20);
    CHECK(no_peds.size() < plain.size());
}
