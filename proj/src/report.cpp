#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "biasaudit/harness.hpp"
#include "biasaudit/io.hpp"
#include "biasaudit/stats.hpp"
#include "biasaudit/vulnerability.hpp"

namespace fs = std::filesystem;

namespace biasaudit {

namespace {

constexpr std::size_t kAllIdx = 17; // canonical index of the All pseudo-group

std::optional<double> metric_value(const EvalRecord& rec, MetricKind m) {
    switch (m) {
        case MetricKind::Auroc: return rec.auroc;
        case MetricKind::Fnr: return rec.fnr;
        case MetricKind::For: return rec.for_rate;
    }
    return std::nullopt;
}

// All group-level records of one evaluated (trainer, target, test set, rate,
// fold) slice, indexed by canonical group position.
using RecArray = std::array<const EvalRecord*, 18>;

struct SeriesTable {
    // rate -> (fold, records) in ascending fold order
    std::map<double, std::vector<std::pair<int, RecArray>>> by_rate;
};

using TableKey = std::tuple<std::string, std::string, std::string>; // trainer, target, set

struct ReportData {
    std::vector<std::string> trainers;
    std::vector<std::string> targets;   // canonical group order, All last
    std::vector<std::string> test_sets; // "internal" first, then sorted
    std::vector<double> rates;
    std::map<TableKey, SeriesTable> tables;
    std::vector<std::string> group_names; // canonical 0..16 plus All
};

ReportData index_cells(const std::vector<CellResult>& cells) {
    ReportData data;
    std::set<std::string> trainers, test_sets;
    std::set<std::size_t> target_idx;
    std::map<std::size_t, std::string> target_names;
    std::set<double> rates;

    for (const CellResult& cell : cells) {
        if (cell.status != "ok") continue;
        trainers.insert(cell.trainer);
        std::size_t t_idx = canonical_group_index(GroupKey::parse(cell.target));
        target_idx.insert(t_idx);
        target_names[t_idx] = cell.target;
        rates.insert(cell.rate);
        for (const CellResult::SetEval& ev : cell.evals) {
            test_sets.insert(ev.test_set);
            RecArray recs{};
            for (const EvalRecord& rec : ev.records)
                recs[canonical_group_index(rec.group)] = &rec;
            data.tables[{cell.trainer, cell.target, ev.test_set}].by_rate[cell.rate]
                .push_back({cell.fold, recs});
        }
    }
    for (auto& [key, table] : data.tables)
        for (auto& [rate, folds] : table.by_rate)
            std::sort(folds.begin(), folds.end(),
                      [](const auto& a, const auto& b) { return a.first < b.first; });

    data.trainers.assign(trainers.begin(), trainers.end());
    for (auto& [idx, name] : target_names) data.targets.push_back(name);
    if (test_sets.count("internal")) data.test_sets.push_back("internal");
    for (const std::string& s : test_sets)
        if (s != "internal") data.test_sets.push_back(s);
    data.rates.assign(rates.begin(), rates.end());
    for (const GroupKey& g : enumerate_groups()) data.group_names.push_back(g.str());
    data.group_names.push_back("All");
    return data;
}

// Per-fold metric values at one rate; folds without a defined value are
// dropped but fold identity is kept for pairing.
std::vector<std::pair<int, double>> fold_values(const SeriesTable& table, double rate,
                                                std::size_t group_idx, MetricKind metric) {
    std::vector<std::pair<int, double>> out;
    auto it = table.by_rate.find(rate);
    if (it == table.by_rate.end()) return out;
    for (const auto& [fold, recs] : it->second) {
        if (!recs[group_idx]) continue;
        if (auto v = metric_value(*recs[group_idx], metric)) out.push_back({fold, *v});
    }
    return out;
}

std::vector<double> values_only(const std::vector<std::pair<int, double>>& v) {
    std::vector<double> out;
    out.reserve(v.size());
    for (const auto& [fold, value] : v) out.push_back(value);
    return out;
}

constexpr MetricKind kMetrics[] = {MetricKind::Auroc, MetricKind::Fnr, MetricKind::For};

} // namespace

void write_report_tables(const std::string& out_dir,
                         const std::vector<CellResult>& cells, const ReportContext& ctx) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create report dir: " + out_dir);

    ReportData data = index_cells(cells);

    // ---- flat evaluation records (CSV + JSONL) ----
    {
        std::ostringstream csv, jsonl;
        csv << "trainer,target,test_set,rate,fold,group,n,auroc,threshold,tp,fp,tn,fn,fnr,for\n";
        for (const CellResult& cell : cells) {
            if (cell.status != "ok") continue;
            for (const CellResult::SetEval& ev : cell.evals) {
                for (const EvalRecord& rec : ev.records) {
                    csv << cell.trainer << ',' << cell.target << ',' << ev.test_set << ','
                        << fmt_double(cell.rate) << ',' << cell.fold << ',' << rec.group.str()
                        << ',' << rec.n << ',' << fmt_optional(rec.auroc) << ','
                        << fmt_double(rec.threshold) << ',' << rec.confusion.tp << ','
                        << rec.confusion.fp << ',' << rec.confusion.tn << ','
                        << rec.confusion.fn << ',' << fmt_optional(rec.fnr) << ','
                        << fmt_optional(rec.for_rate) << "\n";
                    nlohmann::json row = {
                        {"trainer", cell.trainer}, {"target", cell.target},
                        {"test_set", ev.test_set}, {"rate", cell.rate},
                        {"fold", cell.fold},       {"group", rec.group.str()},
                        {"n", rec.n},              {"tp", rec.confusion.tp},
                        {"fp", rec.confusion.fp},  {"tn", rec.confusion.tn},
                        {"fn", rec.confusion.fn}};
                    row["auroc"] = rec.auroc ? nlohmann::json(*rec.auroc) : nlohmann::json();
                    row["threshold"] = std::isfinite(rec.threshold)
                                           ? nlohmann::json(rec.threshold)
                                           : nlohmann::json(fmt_double(rec.threshold));
                    row["fnr"] = rec.fnr ? nlohmann::json(*rec.fnr) : nlohmann::json();
                    row["for"] = rec.for_rate ? nlohmann::json(*rec.for_rate) : nlohmann::json();
                    jsonl << row.dump() << "\n";
                }
            }
        }
        write_text_file(out_dir + "/eval_records.csv", csv.str());
        write_text_file(out_dir + "/eval_records.jsonl", jsonl.str());
    }

    // ---- dose-response curves with fold CIs ----
    {
        std::ostringstream csv;
        csv << "trainer,target,test_set,metric,group,rate,n_folds,mean,ci_half_width\n";
        for (const std::string& trainer : data.trainers)
            for (const std::string& target : data.targets)
                for (const std::string& set : data.test_sets) {
                    auto it = data.tables.find({trainer, target, set});
                    if (it == data.tables.end()) continue;
                    for (MetricKind metric : kMetrics)
                        for (std::size_t g = 0; g < data.group_names.size(); ++g)
                            for (double rate : data.rates) {
                                auto fv = fold_values(it->second, rate, g, metric);
                                if (fv.empty()) continue;
                                auto vals = values_only(fv);
                                csv << trainer << ',' << target << ',' << set << ','
                                    << metric_name(metric) << ',' << data.group_names[g]
                                    << ',' << fmt_double(rate) << ',' << vals.size() << ',';
                                if (vals.size() >= 2) {
                                    FoldCi ci = fold_ci(vals);
                                    csv << fmt_double(ci.mean) << ','
                                        << fmt_double(ci.half_width);
                                } else {
                                    csv << fmt_double(vals[0]) << ',';
                                }
                                csv << "\n";
                            }
                }
        write_text_file(out_dir + "/curves.csv", csv.str());
    }

    // ---- group vs overall Welch tests, BH-corrected per family ----
    {
        struct Row {
            std::string trainer, target, set, group;
            MetricKind metric;
            double rate;
            TestResult test;
        };
        std::ostringstream csv;
        csv << "trainer,target,test_set,metric,rate,group,statistic,df,p_value,bh_reject\n";
        for (const std::string& trainer : data.trainers)
            for (const std::string& target : data.targets)
                for (const std::string& set : data.test_sets) {
                    auto it = data.tables.find({trainer, target, set});
                    if (it == data.tables.end()) continue;
                    for (MetricKind metric : kMetrics) {
                        std::vector<Row> family;
                        for (double rate : data.rates) {
                            auto overall = values_only(
                                fold_values(it->second, rate, kAllIdx, metric));
                            if (overall.size() < 2) continue;
                            for (std::size_t g = 0; g < kAllIdx; ++g) {
                                auto vals = values_only(
                                    fold_values(it->second, rate, g, metric));
                                if (vals.size() < 2) continue;
                                family.push_back({trainer, target, set,
                                                  data.group_names[g], metric, rate,
                                                  independent_t(vals, overall)});
                            }
                        }
                        if (family.empty()) continue;
                        std::vector<double> ps;
                        ps.reserve(family.size());
                        for (const Row& row : family) ps.push_back(row.test.p_value);
                        std::vector<bool> reject = benjamini_hochberg(ps, ctx.bh_q);
                        for (std::size_t i = 0; i < family.size(); ++i) {
                            const Row& row = family[i];
                            csv << row.trainer << ',' << row.target << ',' << row.set << ','
                                << metric_name(row.metric) << ',' << fmt_double(row.rate)
                                << ',' << row.group << ',' << fmt_double(row.test.statistic)
                                << ',' << fmt_double(row.test.df) << ','
                                << fmt_double(row.test.p_value) << ','
                                << (reject[i] ? 1 : 0) << "\n";
                        }
                    }
                }
        write_text_file(out_dir + "/intergroup_tests.csv", csv.str());
    }

    // ---- rate vs rate paired tests within each group, BH per family ----
    {
        struct Row {
            std::string group;
            double rate_low, rate_high;
            TestResult test;
        };
        std::ostringstream csv;
        csv << "trainer,target,test_set,metric,group,rate_low,rate_high,statistic,df,p_value,"
               "bh_reject\n";
        for (const std::string& trainer : data.trainers)
            for (const std::string& target : data.targets)
                for (const std::string& set : data.test_sets) {
                    auto it = data.tables.find({trainer, target, set});
                    if (it == data.tables.end()) continue;
                    for (MetricKind metric : kMetrics) {
                        std::vector<Row> family;
                        for (std::size_t g = 0; g < data.group_names.size(); ++g) {
                            for (std::size_t i = 0; i < data.rates.size(); ++i)
                                for (std::size_t j = i + 1; j < data.rates.size(); ++j) {
                                    auto lo = fold_values(it->second, data.rates[i], g, metric);
                                    auto hi = fold_values(it->second, data.rates[j], g, metric);
                                    // pair on fold identity
                                    std::vector<double> a, b;
                                    for (const auto& [fold, v] : lo)
                                        for (const auto& [fold2, v2] : hi)
                                            if (fold == fold2) {
                                                a.push_back(v);
                                                b.push_back(v2);
                                            }
                                    if (a.size() < 2) continue;
                                    family.push_back({data.group_names[g], data.rates[i],
                                                      data.rates[j], paired_t(b, a)});
                                }
                        }
                        if (family.empty()) continue;
                        std::vector<double> ps;
                        ps.reserve(family.size());
                        for (const Row& row : family) ps.push_back(row.test.p_value);
                        std::vector<bool> reject = benjamini_hochberg(ps, ctx.bh_q);
                        for (std::size_t i = 0; i < family.size(); ++i) {
                            const Row& row = family[i];
                            csv << trainer << ',' << target << ',' << set << ','
                                << metric_name(metric) << ',' << row.group << ','
                                << fmt_double(row.rate_low) << ',' << fmt_double(row.rate_high)
                                << ',' << fmt_double(row.test.statistic) << ','
                                << fmt_double(row.test.df) << ','
                                << fmt_double(row.test.p_value) << ',' << (reject[i] ? 1 : 0)
                                << "\n";
                        }
                    }
                }
        write_text_file(out_dir + "/interrate_tests.csv", csv.str());
    }

    // ---- sign crossovers of the group-minus-overall fold means ----
    {
        std::ostringstream csv;
        csv << "trainer,target,test_set,metric,group,rate_low,rate_high,delta_low,delta_high\n";
        for (const std::string& trainer : data.trainers)
            for (const std::string& target : data.targets)
                for (const std::string& set : data.test_sets) {
                    auto it = data.tables.find({trainer, target, set});
                    if (it == data.tables.end()) continue;
                    for (MetricKind metric : kMetrics)
                        for (std::size_t g = 0; g < kAllIdx; ++g) {
                            std::vector<std::optional<double>> deltas;
                            for (double rate : data.rates) {
                                auto gv = fold_values(it->second, rate, g, metric);
                                auto ov = fold_values(it->second, rate, kAllIdx, metric);
                                double sum = 0.0;
                                std::size_t count = 0;
                                for (const auto& [fold, v] : gv)
                                    for (const auto& [fold2, v2] : ov)
                                        if (fold == fold2) {
                                            sum += v - v2;
                                            ++count;
                                        }
                                if (count == 0)
                                    deltas.push_back(std::nullopt);
                                else
                                    deltas.push_back(sum / static_cast<double>(count));
                            }
                            for (const CrossoverInterval& ci :
                                 detect_crossovers(deltas, data.rates)) {
                                csv << trainer << ',' << target << ',' << set << ','
                                    << metric_name(metric) << ',' << data.group_names[g] << ','
                                    << fmt_double(ci.rate_low) << ','
                                    << fmt_double(ci.rate_high) << ','
                                    << fmt_double(ci.delta_low) << ','
                                    << fmt_double(ci.delta_high) << "\n";
                            }
                        }
                }
        write_text_file(out_dir + "/crossovers.csv", csv.str());
    }

    // ---- vulnerability fits: nu plus the alternative formulations ----
    // nu_map holds the primary score for the heatmaps and summaries below.
    std::map<std::tuple<std::string, std::string, std::string, MetricKind, std::size_t>,
             double> nu_map;
    std::map<std::tuple<std::string, std::string, std::string, MetricKind, std::size_t>,
             std::array<std::optional<double>, 2>> alt_map;
    {
        std::ostringstream csv;
        csv << "trainer,target,test_set,metric,group,point_count,nu,alt_metric_1,alt_metric_2,"
               "status\n";
        for (const std::string& trainer : data.trainers)
            for (const std::string& target : data.targets)
                for (const std::string& set : data.test_sets) {
                    auto it = data.tables.find({trainer, target, set});
                    if (it == data.tables.end()) continue;
                    for (MetricKind metric : kMetrics)
                        for (std::size_t g = 0; g < kAllIdx; ++g) {
                            std::vector<SeriesPoint> series;
                            for (double rate : data.rates) {
                                auto gv = fold_values(it->second, rate, g, metric);
                                auto ov = fold_values(it->second, rate, kAllIdx, metric);
                                for (const auto& [fold, v] : gv)
                                    for (const auto& [fold2, v2] : ov)
                                        if (fold == fold2)
                                            series.push_back({rate, fold, v, v2});
                            }
                            std::string status = "ok";
                            std::optional<double> nu, alt1, alt2;
                            try {
                                NuResult res = vulnerability_nu(series);
                                nu = res.nu;
                            } catch (const std::exception& e) {
                                status = std::string("insufficient: ") + e.what();
                            }
                            if (nu) {
                                try {
                                    alt1 = alt_metric_1(series);
                                } catch (const std::exception&) {
                                }
                                try {
                                    alt2 = alt_metric_2(series);
                                } catch (const std::exception&) {
                                }
                                nu_map[{trainer, target, set, metric, g}] = *nu;
                                alt_map[{trainer, target, set, metric, g}] = {alt1, alt2};
                            }
                            csv << trainer << ',' << target << ',' << set << ','
                                << metric_name(metric) << ',' << data.group_names[g] << ','
                                << series.size() << ',' << fmt_optional(nu) << ','
                                << fmt_optional(alt1) << ',' << fmt_optional(alt2) << ','
                                << status << "\n";
                        }
                }
        write_text_file(out_dir + "/vulnerability_reports.csv", csv.str());
    }

    // ---- targeted x observed heatmap matrices ----
    for (const std::string& trainer : data.trainers)
        for (const std::string& set : data.test_sets)
            for (MetricKind metric : kMetrics) {
                std::ostringstream csv;
                csv << "target";
                for (std::size_t g = 0; g < kAllIdx; ++g) csv << ',' << data.group_names[g];
                csv << "\n";
                bool any = false;
                for (const std::string& target : data.targets) {
                    csv << target;
                    for (std::size_t g = 0; g < kAllIdx; ++g) {
                        csv << ',';
                        auto it = nu_map.find({trainer, target, set, metric, g});
                        if (it != nu_map.end()) {
                            csv << fmt_double(it->second);
                            any = true;
                        }
                    }
                    csv << "\n";
                }
                if (any)
                    write_text_file(out_dir + "/heatmap_" + std::string(metric_name(metric)) +
                                        "_" + set + "_" + trainer + ".csv",
                                    csv.str());
            }

    // ---- on-diagonal summary with most/least flags per group category ----
    for (const std::string& trainer : data.trainers)
        for (const std::string& set : data.test_sets) {
            struct DiagRow {
                std::size_t g;
                std::optional<double> fnr_nu, for_nu;
            };
            std::vector<DiagRow> rows;
            for (std::size_t g = 0; g < kAllIdx; ++g) {
                const std::string& name = data.group_names[g];
                if (std::find(data.targets.begin(), data.targets.end(), name) ==
                    data.targets.end())
                    continue;
                DiagRow row{g, {}, {}};
                auto it = nu_map.find({trainer, name, set, MetricKind::Fnr, g});
                if (it != nu_map.end()) row.fnr_nu = it->second;
                it = nu_map.find({trainer, name, set, MetricKind::For, g});
                if (it != nu_map.end()) row.for_nu = it->second;
                if (row.fnr_nu || row.for_nu) rows.push_back(row);
            }
            if (rows.empty()) continue;

            // Flag extremes within each group category (sex, age, crossed)
            // separately so a small category can't swallow the flags.
            auto category = [](std::size_t g) { return g < 2 ? 0 : (g < 7 ? 1 : 2); };
            auto flags_for = [&](auto member) {
                std::map<std::size_t, std::string> flags;
                for (int cat = 0; cat < 3; ++cat) {
                    std::size_t best = SIZE_MAX, worst = SIZE_MAX;
                    for (const DiagRow& row : rows) {
                        if (category(row.g) != cat || !(row.*member)) continue;
                        if (best == SIZE_MAX) {
                            best = worst = row.g;
                            continue;
                        }
                        auto val = [&](std::size_t idx) {
                            for (const DiagRow& r : rows)
                                if (r.g == idx) return *(r.*member);
                            return 0.0;
                        };
                        if (*(row.*member) > val(best)) best = row.g;
                        if (*(row.*member) < val(worst)) worst = row.g;
                    }
                    if (best != SIZE_MAX && best != worst) {
                        flags[best] = "most";
                        flags[worst] = "least";
                    }
                }
                return flags;
            };
            auto fnr_flags = flags_for(&DiagRow::fnr_nu);
            auto for_flags = flags_for(&DiagRow::for_nu);

            std::ostringstream csv;
            csv << "group,fnr_nu,fnr_flag,for_nu,for_flag\n";
            for (const DiagRow& row : rows) {
                csv << data.group_names[row.g] << ',' << fmt_optional(row.fnr_nu) << ',';
                if (auto it = fnr_flags.find(row.g); it != fnr_flags.end()) csv << it->second;
                csv << ',' << fmt_optional(row.for_nu) << ',';
                if (auto it = for_flags.find(row.g); it != for_flags.end()) csv << it->second;
                csv << "\n";
            }
            write_text_file(out_dir + "/vulnerability_summary_" + trainer + "_" + set + ".csv",
                            csv.str());
        }

    // ---- vulnerability vs training-set size (on-diagonal Spearman) ----
    {
        std::ostringstream csv;
        csv << "trainer,test_set,metric,variant,n_groups,spearman_rho,p_value,status\n";
        if (!ctx.train_group_sizes.empty()) {
            for (const std::string& trainer : data.trainers)
                for (const std::string& set : data.test_sets)
                    for (MetricKind metric : kMetrics)
                        for (int variant = 0; variant < 3; ++variant) {
                            std::vector<double> values, sizes;
                            for (std::size_t g = 0; g < kAllIdx; ++g) {
                                const std::string& name = data.group_names[g];
                                auto size_it = ctx.train_group_sizes.find(name);
                                if (size_it == ctx.train_group_sizes.end()) continue;
                                std::optional<double> v;
                                if (variant == 0) {
                                    auto it = nu_map.find({trainer, name, set, metric, g});
                                    if (it != nu_map.end()) v = it->second;
                                } else {
                                    auto it = alt_map.find({trainer, name, set, metric, g});
                                    if (it != alt_map.end())
                                        v = it->second[static_cast<std::size_t>(variant - 1)];
                                }
                                if (v) {
                                    values.push_back(*v);
                                    sizes.push_back(size_it->second);
                                }
                            }
                            static const char* kVariants[] = {"nu", "alt_metric_1",
                                                              "alt_metric_2"};
                            csv << trainer << ',' << set << ',' << metric_name(metric) << ','
                                << kVariants[variant] << ',' << values.size() << ',';
                            if (values.size() >= 3) {
                                try {
                                    SpearmanResult sr = vulnerability_vs_size(values, sizes);
                                    csv << fmt_double(sr.rho) << ',' << fmt_double(sr.p_value)
                                        << ",ok\n";
                                } catch (const std::exception&) {
                                    csv << ",,degenerate\n";
                                }
                            } else {
                                csv << ",,insufficient\n";
                            }
                        }
        }
        write_text_file(out_dir + "/vuln_vs_size.csv", csv.str());
    }
}

} // namespace biasaudit
