#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace biasaudit {

enum class Sex : std::uint8_t { Male, Female };

// Half-open age decades except the last: [0,20) [20,40) [40,60) [60,80) [80,inf).
enum class AgeBin : std::uint8_t { Y0_20, Y20_40, Y40_60, Y60_80, Y80_plus };

inline constexpr std::size_t kAgeBinCount = 5;

struct DemographicProfile {
    Sex sex = Sex::Male;
    double age_years = 0.0;
};

// Throws std::invalid_argument for negative or non-finite ages.
AgeBin assign_age_bin(double age_years);

std::string_view sex_name(Sex s);           // "M" / "F"
std::string_view age_bin_name(AgeBin b);    // "0-20Y" ... "80+Y"
Sex parse_sex(std::string_view s);
AgeBin parse_age_bin(std::string_view s);

// A demographic slice of a cohort. `All` is the whole-population pseudo-group
// used for overall metrics; the 17 attack/readout groups are the two sexes,
// the five age bins, and the ten sex-by-age intersections.
struct GroupKey {
    enum class Kind : std::uint8_t { All, BySex, ByAge, ByIntersection };

    Kind kind = Kind::All;
    Sex sex = Sex::Male;   // meaningful for BySex / ByIntersection
    AgeBin age = AgeBin::Y0_20; // meaningful for ByAge / ByIntersection

    static GroupKey all() { return {}; }
    static GroupKey by_sex(Sex s) { return {Kind::BySex, s, AgeBin::Y0_20}; }
    static GroupKey by_age(AgeBin b) { return {Kind::ByAge, Sex::Male, b}; }
    static GroupKey intersection(Sex s, AgeBin b) { return {Kind::ByIntersection, s, b}; }

    bool operator==(const GroupKey&) const = default;

    std::string str() const;                    // "All", "M", "40-60Y", "F 80+Y"
    static GroupKey parse(std::string_view s);  // inverse of str(); throws
};

// Position in the canonical listing: sexes, then age bins ascending, then
// male intersections, then female intersections. All sorts after everything.
std::size_t canonical_group_index(const GroupKey& key);

// The 17 groups in canonical order (All not included).
const std::vector<GroupKey>& enumerate_groups();

bool group_matches(const DemographicProfile& demo, const GroupKey& key);

struct GroupKeyHash {
    std::size_t operator()(const GroupKey& k) const {
        return (static_cast<std::size_t>(k.kind) << 6) ^
               (static_cast<std::size_t>(k.sex) << 3) ^
               static_cast<std::size_t>(k.age);
    }
};

struct Sample {
    std::string patient_id;
    std::vector<double> features;
    int label = 0; // 1 = disease present
    DemographicProfile demographics;
};

struct Cohort {
    std::vector<Sample> samples;
    std::size_t feature_dim = 0;
    std::string provenance;

    std::size_t size() const { return samples.size(); }
    // Throws std::invalid_argument on inconsistent dimensions, labels outside
    // {0,1}, bad ages, or empty patient ids.
    void validate() const;
};

enum class Partition : std::uint8_t { Train, Val, Test };

// Per-fold partition assignment for every sample. The test partition is
// patient-disjoint from train/val and identical across folds; train/val
// membership is re-drawn per fold at the patient level, so all samples of a
// patient always land in the same partition.
struct SplitPlan {
    int fold_count = 0;
    std::array<double, 3> proportions{}; // train, val, test
    std::vector<std::vector<Partition>> assignments; // [fold][sample]

    std::vector<std::size_t> indices_of(int fold, Partition p) const;
};

// Throws std::invalid_argument when proportions are malformed or there are
// fewer patients than folds.
SplitPlan make_splits(const Cohort& cohort, int fold_count,
                      std::array<double, 3> proportions, std::uint64_t seed);

// Serialization. CSV column order is documented in docs/file_formats.md.
std::string cohort_to_csv(const Cohort& cohort);
Cohort cohort_from_csv(std::string_view text);
nlohmann::json cohort_to_json(const Cohort& cohort);
Cohort cohort_from_json(const nlohmann::json& j);
nlohmann::json splitplan_to_json(const SplitPlan& plan);
SplitPlan splitplan_from_json(const nlohmann::json& j);

} // namespace biasaudit
