#include "biasaudit/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "biasaudit/io.hpp"
#include "biasaudit/rng.hpp"
#include "biasaudit/seed.hpp"

namespace biasaudit {

AgeBin assign_age_bin(double age_years) {
    if (!(age_years >= 0.0) || !std::isfinite(age_years))
        throw std::invalid_argument("age must be finite and non-negative");
    if (age_years < 20.0) return AgeBin::Y0_20;
    if (age_years < 40.0) return AgeBin::Y20_40;
    if (age_years < 60.0) return AgeBin::Y40_60;
    if (age_years < 80.0) return AgeBin::Y60_80;
    return AgeBin::Y80_plus;
}

std::string_view sex_name(Sex s) { return s == Sex::Male ? "M" : "F"; }

std::string_view age_bin_name(AgeBin b) {
    switch (b) {
        case AgeBin::Y0_20: return "0-20Y";
        case AgeBin::Y20_40: return "20-40Y";
        case AgeBin::Y40_60: return "40-60Y";
        case AgeBin::Y60_80: return "60-80Y";
        case AgeBin::Y80_plus: return "80+Y";
    }
    throw std::invalid_argument("bad age bin");
}

Sex parse_sex(std::string_view s) {
    if (s == "M") return Sex::Male;
    if (s == "F") return Sex::Female;
    throw std::invalid_argument("bad sex: '" + std::string(s) + "'");
}

AgeBin parse_age_bin(std::string_view s) {
    for (std::size_t i = 0; i < kAgeBinCount; ++i) {
        AgeBin b = static_cast<AgeBin>(i);
        if (s == age_bin_name(b)) return b;
    }
    throw std::invalid_argument("bad age bin: '" + std::string(s) + "'");
}

std::string GroupKey::str() const {
    switch (kind) {
        case Kind::All: return "All";
        case Kind::BySex: return std::string(sex_name(sex));
        case Kind::ByAge: return std::string(age_bin_name(age));
        case Kind::ByIntersection:
            return std::string(sex_name(sex)) + " " + std::string(age_bin_name(age));
    }
    throw std::invalid_argument("bad group kind");
}

GroupKey GroupKey::parse(std::string_view s) {
    if (s == "All") return all();
    if (s == "M" || s == "F") return by_sex(parse_sex(s));
    auto space = s.find(' ');
    if (space == std::string_view::npos) return by_age(parse_age_bin(s));
    return intersection(parse_sex(s.substr(0, space)), parse_age_bin(s.substr(space + 1)));
}

std::size_t canonical_group_index(const GroupKey& key) {
    switch (key.kind) {
        case GroupKey::Kind::BySex:
            return key.sex == Sex::Male ? 0 : 1;
        case GroupKey::Kind::ByAge:
            return 2 + static_cast<std::size_t>(key.age);
        case GroupKey::Kind::ByIntersection:
            return 7 + (key.sex == Sex::Male ? 0 : kAgeBinCount) +
                   static_cast<std::size_t>(key.age);
        case GroupKey::Kind::All:
            return 17;
    }
    throw std::invalid_argument("bad group kind");
}

const std::vector<GroupKey>& enumerate_groups() {
    static const std::vector<GroupKey> groups = [] {
        std::vector<GroupKey> g;
        g.push_back(GroupKey::by_sex(Sex::Male));
        g.push_back(GroupKey::by_sex(Sex::Female));
        for (std::size_t b = 0; b < kAgeBinCount; ++b)
            g.push_back(GroupKey::by_age(static_cast<AgeBin>(b)));
        for (Sex s : {Sex::Male, Sex::Female})
            for (std::size_t b = 0; b < kAgeBinCount; ++b)
                g.push_back(GroupKey::intersection(s, static_cast<AgeBin>(b)));
        return g;
    }();
    return groups;
}

bool group_matches(const DemographicProfile& demo, const GroupKey& key) {
    switch (key.kind) {
        case GroupKey::Kind::All:
            return true;
        case GroupKey::Kind::BySex:
            return demo.sex == key.sex;
        case GroupKey::Kind::ByAge:
            return assign_age_bin(demo.age_years) == key.age;
        case GroupKey::Kind::ByIntersection:
            return demo.sex == key.sex && assign_age_bin(demo.age_years) == key.age;
    }
    throw std::invalid_argument("bad group kind");
}

void Cohort::validate() const {
    for (const Sample& s : samples) {
        if (s.patient_id.empty())
            throw std::invalid_argument("sample with empty patient id");
        if (s.features.size() != feature_dim)
            throw std::invalid_argument("sample feature dim mismatch for patient " + s.patient_id);
        if (s.label != 0 && s.label != 1)
            throw std::invalid_argument("label outside {0,1} for patient " + s.patient_id);
        assign_age_bin(s.demographics.age_years); // throws on bad age
        for (double f : s.features)
            if (!std::isfinite(f))
                throw std::invalid_argument("non-finite feature for patient " + s.patient_id);
    }
}

std::vector<std::size_t> SplitPlan::indices_of(int fold, Partition p) const {
    if (fold < 0 || fold >= fold_count) throw std::invalid_argument("fold out of range");
    std::vector<std::size_t> out;
    const auto& fa = assignments[static_cast<std::size_t>(fold)];
    for (std::size_t i = 0; i < fa.size(); ++i)
        if (fa[i] == p) out.push_back(i);
    return out;
}

namespace {

// Patients in first-appearance order, with the sample indices they own.
struct PatientIndex {
    std::vector<std::string> ids;
    std::vector<std::vector<std::size_t>> sample_indices;
};

PatientIndex index_patients(const Cohort& cohort) {
    PatientIndex idx;
    std::unordered_map<std::string, std::size_t> seen;
    for (std::size_t i = 0; i < cohort.samples.size(); ++i) {
        const std::string& pid = cohort.samples[i].patient_id;
        auto it = seen.find(pid);
        if (it == seen.end()) {
            seen.emplace(pid, idx.ids.size());
            idx.ids.push_back(pid);
            idx.sample_indices.emplace_back(1, i);
        } else {
            idx.sample_indices[it->second].push_back(i);
        }
    }
    return idx;
}

} // namespace

SplitPlan make_splits(const Cohort& cohort, int fold_count,
                      std::array<double, 3> proportions, std::uint64_t seed) {
    if (fold_count < 1) throw std::invalid_argument("fold_count must be >= 1");
    double sum = proportions[0] + proportions[1] + proportions[2];
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("split proportions must sum to 1");
    for (double p : proportions)
        if (p < 0.0) throw std::invalid_argument("split proportions must be non-negative");

    PatientIndex patients = index_patients(cohort);
    const std::size_t n_patients = patients.ids.size();
    if (n_patients < static_cast<std::size_t>(fold_count))
        throw std::invalid_argument("fewer patients than folds");

    const std::size_t n_test = static_cast<std::size_t>(
        std::llround(proportions[2] * static_cast<double>(n_patients)));
    const std::size_t n_val = static_cast<std::size_t>(
        std::llround(proportions[1] * static_cast<double>(n_patients)));
    if (n_test + n_val > n_patients)
        throw std::invalid_argument("split proportions leave no training patients");

    // Test patients are drawn once and shared by every fold.
    std::vector<std::size_t> order(n_patients);
    for (std::size_t i = 0; i < n_patients; ++i) order[i] = i;
    Rng test_rng(derive_seed(seed, "split|test"));
    test_rng.shuffle(order);

    std::vector<std::size_t> pool(order.begin() + static_cast<std::ptrdiff_t>(n_test),
                                  order.end());
    if (pool.size() < static_cast<std::size_t>(fold_count) && proportions[0] > 0.0)
        throw std::invalid_argument("not enough non-test patients for the requested folds");

    SplitPlan plan;
    plan.fold_count = fold_count;
    plan.proportions = proportions;
    plan.assignments.assign(static_cast<std::size_t>(fold_count),
                            std::vector<Partition>(cohort.size(), Partition::Train));

    for (int f = 0; f < fold_count; ++f) {
        std::vector<std::size_t> fold_order = pool;
        Rng fold_rng(derive_seed(seed, "split|fold=" + std::to_string(f)));
        fold_rng.shuffle(fold_order);
        if (n_val > fold_order.size())
            throw std::invalid_argument("validation proportion exceeds non-test patients");

        auto& fa = plan.assignments[static_cast<std::size_t>(f)];
        for (std::size_t i = 0; i < n_test; ++i)
            for (std::size_t s : patients.sample_indices[order[i]])
                fa[s] = Partition::Test;
        for (std::size_t i = 0; i < n_val; ++i)
            for (std::size_t s : patients.sample_indices[fold_order[i]])
                fa[s] = Partition::Val;
        // everything else stays Train
    }
    return plan;
}

std::string cohort_to_csv(const Cohort& cohort) {
    std::ostringstream out;
    out << "patient_id,sex,age_years,label";
    for (std::size_t d = 0; d < cohort.feature_dim; ++d) out << ",f" << d;
    out << "\n";
    for (const Sample& s : cohort.samples) {
        if (s.patient_id.find(',') != std::string::npos ||
            s.patient_id.find('\n') != std::string::npos)
            throw std::invalid_argument("patient id contains CSV delimiter: " + s.patient_id);
        out << s.patient_id << ',' << sex_name(s.demographics.sex) << ','
            << fmt_double(s.demographics.age_years) << ',' << s.label;
        for (double f : s.features) out << ',' << fmt_double(f);
        out << "\n";
    }
    return out.str();
}

Cohort cohort_from_csv(std::string_view text) {
    Cohort cohort;
    std::size_t pos = 0;
    bool header = true;
    std::size_t expected_fields = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        std::string_view line = text.substr(pos, eol - pos);
        pos = eol + 1;
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (header) {
            if (fields.size() < 4 || fields[0] != "patient_id")
                throw std::invalid_argument("bad cohort CSV header");
            expected_fields = fields.size();
            cohort.feature_dim = fields.size() - 4;
            header = false;
            continue;
        }
        if (fields.size() != expected_fields)
            throw std::invalid_argument("cohort CSV row has wrong field count");
        Sample s;
        s.patient_id = fields[0];
        s.demographics.sex = parse_sex(fields[1]);
        s.demographics.age_years = parse_double(fields[2]);
        s.label = static_cast<int>(parse_int(fields[3]));
        s.features.reserve(cohort.feature_dim);
        for (std::size_t i = 4; i < fields.size(); ++i)
            s.features.push_back(parse_double(fields[i]));
        cohort.samples.push_back(std::move(s));
    }
    if (header) throw std::invalid_argument("empty cohort CSV");
    cohort.provenance = "loaded from CSV";
    cohort.validate();
    return cohort;
}

nlohmann::json cohort_to_json(const Cohort& cohort) {
    nlohmann::json samples = nlohmann::json::array();
    for (const Sample& s : cohort.samples) {
        samples.push_back({{"patient_id", s.patient_id},
                           {"sex", std::string(sex_name(s.demographics.sex))},
                           {"age_years", s.demographics.age_years},
                           {"label", s.label},
                           {"features", s.features}});
    }
    return {{"feature_dim", cohort.feature_dim},
            {"provenance", cohort.provenance},
            {"samples", std::move(samples)}};
}

Cohort cohort_from_json(const nlohmann::json& j) {
    Cohort cohort;
    cohort.feature_dim = j.at("feature_dim").get<std::size_t>();
    cohort.provenance = j.value("provenance", std::string());
    for (const auto& js : j.at("samples")) {
        Sample s;
        s.patient_id = js.at("patient_id").get<std::string>();
        s.demographics.sex = parse_sex(js.at("sex").get<std::string>());
        s.demographics.age_years = js.at("age_years").get<double>();
        s.label = js.at("label").get<int>();
        s.features = js.at("features").get<std::vector<double>>();
        cohort.samples.push_back(std::move(s));
    }
    cohort.validate();
    return cohort;
}

nlohmann::json splitplan_to_json(const SplitPlan& plan) {
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& fa : plan.assignments) {
        std::string enc(fa.size(), '?');
        for (std::size_t i = 0; i < fa.size(); ++i)
            enc[i] = fa[i] == Partition::Train ? 't' : (fa[i] == Partition::Val ? 'v' : 's');
        folds.push_back(std::move(enc));
    }
    return {{"fold_count", plan.fold_count},
            {"proportions", plan.proportions},
            {"assignments", std::move(folds)}};
}

SplitPlan splitplan_from_json(const nlohmann::json& j) {
    SplitPlan plan;
    plan.fold_count = j.at("fold_count").get<int>();
    auto props = j.at("proportions").get<std::vector<double>>();
    if (props.size() != 3) throw std::invalid_argument("proportions must have 3 entries");
    std::copy(props.begin(), props.end(), plan.proportions.begin());
    for (const auto& enc : j.at("assignments")) {
        std::string s = enc.get<std::string>();
        std::vector<Partition> fa(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) {
            switch (s[i]) {
                case 't': fa[i] = Partition::Train; break;
                case 'v': fa[i] = Partition::Val; break;
                case 's': fa[i] = Partition::Test; break;
                default: throw std::invalid_argument("bad partition code");
            }
        }
        plan.assignments.push_back(std::move(fa));
    }
    if (plan.assignments.size() != static_cast<std::size_t>(plan.fold_count))
        throw std::invalid_argument("fold count does not match assignments");
    return plan;
}

} // namespace biasaudit
