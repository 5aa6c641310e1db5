#include "biasaudit/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <condition_variable>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "biasaudit/io.hpp"
#include "biasaudit/seed.hpp"

namespace fs = std::filesystem;

namespace biasaudit {

namespace {

bool valid_identifier(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-')
            return false;
    return true;
}

// Group names become path components: "F 80+Y" -> "F_80+Y".
std::string sanitize_group(const std::string& name) {
    std::string out = name;
    std::replace(out.begin(), out.end(), ' ', '_');
    return out;
}

// Encode a possibly infinite double for JSON (nlohmann serializes non-finite
// doubles as null, which would lose the sign of an infinite threshold).
nlohmann::json json_double(double v) {
    if (std::isfinite(v)) return v;
    return fmt_double(v);
}

double json_to_double(const nlohmann::json& j) {
    if (j.is_string()) return parse_double(j.get<std::string>());
    return j.get<double>();
}

nlohmann::json json_optional(const std::optional<double>& v) {
    if (!v) return nullptr;
    return json_double(*v);
}

std::optional<double> json_to_optional(const nlohmann::json& j) {
    if (j.is_null()) return std::nullopt;
    return json_to_double(j);
}

} // namespace

void ExperimentConfig::validate() const {
    cohort.validate();
    if (targets.empty()) throw std::invalid_argument("no targets configured");
    for (std::size_t i = 0; i < targets.size(); ++i)
        for (std::size_t j = i + 1; j < targets.size(); ++j)
            if (targets[i] == targets[j])
                throw std::invalid_argument("duplicate target: " + targets[i].str());
    if (rates.empty()) throw std::invalid_argument("no rates configured");
    for (double r : rates)
        if (!(r >= 0.0) || !(r <= 1.0))
            throw std::invalid_argument("rates must be in [0,1]");
    for (std::size_t i = 1; i < rates.size(); ++i)
        if (!(rates[i] > rates[i - 1]))
            throw std::invalid_argument("rates must be strictly increasing");
    if (fold_count < 1) throw std::invalid_argument("fold_count must be >= 1");
    double psum = split_proportions[0] + split_proportions[1] + split_proportions[2];
    if (std::abs(psum - 1.0) > 1e-9)
        throw std::invalid_argument("split proportions must sum to 1");
    if (trainers.empty()) throw std::invalid_argument("no trainers configured");
    for (std::size_t i = 0; i < trainers.size(); ++i) {
        if (!valid_identifier(trainers[i].name))
            throw std::invalid_argument("bad trainer name: '" + trainers[i].name + "'");
        trainers[i].config.validate();
        for (std::size_t j = i + 1; j < trainers.size(); ++j)
            if (trainers[i].name == trainers[j].name)
                throw std::invalid_argument("duplicate trainer name: " + trainers[i].name);
    }
    for (std::size_t i = 0; i < external_sites.size(); ++i) {
        const auto& site = external_sites[i];
        if (!valid_identifier(site.name) || site.name == "internal")
            throw std::invalid_argument("bad external site name: '" + site.name + "'");
        if (!(site.embedding_jitter >= 0.0))
            throw std::invalid_argument("embedding_jitter must be >= 0");
        for (std::size_t j = i + 1; j < external_sites.size(); ++j)
            if (site.name == external_sites[j].name)
                throw std::invalid_argument("duplicate external site: " + site.name);
    }
    if (!(bh_q > 0.0) || !(bh_q < 1.0)) throw std::invalid_argument("bh_q must be in (0,1)");
    if (output_dir.empty()) throw std::invalid_argument("output_dir must be set");
}

std::vector<TrainerEntry> default_trainers() {
    TrainerConfig logistic;
    logistic.learner = LearnerKind::Logistic;
    logistic.max_epochs = 300;
    logistic.learning_rate = 1.0;
    logistic.lr_decay = 0.995;
    logistic.patience = 25;

    TrainerConfig mlp;
    mlp.learner = LearnerKind::Mlp;
    mlp.hidden_width = 16;
    mlp.max_epochs = 200;
    mlp.learning_rate = 0.5;
    mlp.lr_decay = 0.99;
    mlp.patience = 20;

    return {{"logistic", logistic}, {"mlp", mlp}};
}

ExperimentConfig default_experiment_config() {
    ExperimentConfig config;
    config.cohort = default_cohort_spec();
    config.targets = enumerate_groups();
    config.rates = rate_grid();
    config.trainers = default_trainers();
    return config;
}

namespace {

nlohmann::json trainer_to_json(const TrainerEntry& t) {
    return {{"name", t.name},
            {"learner", t.config.learner == LearnerKind::Mlp ? "mlp" : "logistic"},
            {"hidden_width", t.config.hidden_width},
            {"max_epochs", t.config.max_epochs},
            {"batch_size", t.config.batch_size},
            {"learning_rate", t.config.learning_rate},
            {"lr_decay", t.config.lr_decay},
            {"patience", t.config.patience}};
}

TrainerEntry trainer_from_json(const nlohmann::json& j) {
    TrainerEntry t;
    t.name = j.at("name").get<std::string>();
    std::string learner = j.value("learner", std::string("logistic"));
    if (learner == "mlp")
        t.config.learner = LearnerKind::Mlp;
    else if (learner == "logistic")
        t.config.learner = LearnerKind::Logistic;
    else
        throw std::invalid_argument("bad learner: " + learner);
    TrainerConfig defaults;
    t.config.hidden_width = j.value("hidden_width", defaults.hidden_width);
    t.config.max_epochs = j.value("max_epochs", defaults.max_epochs);
    t.config.batch_size = j.value("batch_size", defaults.batch_size);
    t.config.learning_rate = j.value("learning_rate", defaults.learning_rate);
    t.config.lr_decay = j.value("lr_decay", defaults.lr_decay);
    t.config.patience = j.value("patience", defaults.patience);
    return t;
}

} // namespace

nlohmann::json experiment_config_to_json(const ExperimentConfig& config) {
    nlohmann::json targets = nlohmann::json::array();
    for (const GroupKey& t : config.targets) targets.push_back(t.str());
    nlohmann::json trainers = nlohmann::json::array();
    for (const TrainerEntry& t : config.trainers) trainers.push_back(trainer_to_json(t));
    nlohmann::json sites = nlohmann::json::array();
    for (const ExternalSiteSpec& site : config.external_sites) {
        nlohmann::json overrides = nlohmann::json::array();
        for (const GroupOverride& ov : site.overrides) {
            nlohmann::json jo = {{"group", ov.key.str()}};
            if (ov.count) jo["count"] = *ov.count;
            if (ov.prevalence) jo["prevalence"] = *ov.prevalence;
            overrides.push_back(std::move(jo));
        }
        sites.push_back({{"name", site.name},
                         {"overrides", std::move(overrides)},
                         {"embedding_jitter", site.embedding_jitter},
                         {"seed", site.seed}});
    }
    return {{"cohort", cohort_spec_to_json(config.cohort)},
            {"external_sites", std::move(sites)},
            {"targets", std::move(targets)},
            {"rates", config.rates},
            {"fold_count", config.fold_count},
            {"split_proportions", config.split_proportions},
            {"trainers", std::move(trainers)},
            {"root_seed", config.root_seed},
            {"output_dir", config.output_dir},
            {"export_scores", config.export_scores},
            {"bh_q", config.bh_q}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    ExperimentConfig config = default_experiment_config();
    if (j.contains("cohort")) config.cohort = cohort_spec_from_json(j.at("cohort"));
    if (j.contains("targets")) {
        config.targets.clear();
        for (const auto& jt : j.at("targets"))
            config.targets.push_back(GroupKey::parse(jt.get<std::string>()));
    }
    if (j.contains("rates")) config.rates = j.at("rates").get<std::vector<double>>();
    config.fold_count = j.value("fold_count", config.fold_count);
    if (j.contains("split_proportions")) {
        auto p = j.at("split_proportions").get<std::vector<double>>();
        if (p.size() != 3) throw std::invalid_argument("split_proportions needs 3 entries");
        std::copy(p.begin(), p.end(), config.split_proportions.begin());
    }
    if (j.contains("trainers")) {
        config.trainers.clear();
        for (const auto& jt : j.at("trainers")) config.trainers.push_back(trainer_from_json(jt));
    }
    if (j.contains("external_sites")) {
        for (const auto& js : j.at("external_sites")) {
            ExternalSiteSpec site;
            site.name = js.at("name").get<std::string>();
            site.embedding_jitter = js.value("embedding_jitter", 0.0);
            site.seed = js.value("seed", std::uint64_t{0});
            if (js.contains("overrides")) {
                for (const auto& jo : js.at("overrides")) {
                    GroupOverride ov;
                    ov.key = GroupKey::parse(jo.at("group").get<std::string>());
                    if (jo.contains("count")) ov.count = jo.at("count").get<std::size_t>();
                    if (jo.contains("prevalence"))
                        ov.prevalence = jo.at("prevalence").get<double>();
                    site.overrides.push_back(std::move(ov));
                }
            }
            config.external_sites.push_back(std::move(site));
        }
    }
    config.root_seed = j.value("root_seed", config.root_seed);
    config.output_dir = j.value("output_dir", config.output_dir);
    config.export_scores = j.value("export_scores", config.export_scores);
    config.bh_q = j.value("bh_q", config.bh_q);
    return config;
}

std::string cell_key(const std::string& target, double rate, int fold,
                     const std::string& trainer) {
    return target + "|" + fmt_double(rate) + "|" + std::to_string(fold) + "|" + trainer;
}

namespace {

nlohmann::json record_to_json(const EvalRecord& rec) {
    return {{"group", rec.group.str()},
            {"n", rec.n},
            {"auroc", json_optional(rec.auroc)},
            {"threshold", json_double(rec.threshold)},
            {"tp", rec.confusion.tp},
            {"fp", rec.confusion.fp},
            {"tn", rec.confusion.tn},
            {"fn", rec.confusion.fn},
            {"fnr", json_optional(rec.fnr)},
            {"for", json_optional(rec.for_rate)}};
}

EvalRecord record_from_json(const nlohmann::json& j) {
    EvalRecord rec;
    rec.group = GroupKey::parse(j.at("group").get<std::string>());
    rec.n = j.at("n").get<std::size_t>();
    rec.auroc = json_to_optional(j.at("auroc"));
    rec.threshold = json_to_double(j.at("threshold"));
    rec.confusion.tp = j.at("tp").get<std::size_t>();
    rec.confusion.fp = j.at("fp").get<std::size_t>();
    rec.confusion.tn = j.at("tn").get<std::size_t>();
    rec.confusion.fn = j.at("fn").get<std::size_t>();
    rec.fnr = json_to_optional(j.at("fnr"));
    rec.for_rate = json_to_optional(j.at("for"));
    return rec;
}

} // namespace

nlohmann::json cell_to_json(const CellResult& cell) {
    nlohmann::json evals = nlohmann::json::array();
    for (const CellResult::SetEval& ev : cell.evals) {
        nlohmann::json records = nlohmann::json::array();
        for (const EvalRecord& rec : ev.records) records.push_back(record_to_json(rec));
        evals.push_back({{"test_set", ev.test_set},
                         {"threshold", json_double(ev.threshold)},
                         {"records", std::move(records)}});
    }
    return {{"key", cell_key(cell.target, cell.rate, cell.fold, cell.trainer)},
            {"target", cell.target},
            {"rate", cell.rate},
            {"fold", cell.fold},
            {"trainer", cell.trainer},
            {"status", cell.status},
            {"message", cell.message},
            {"train_size", cell.train_size},
            {"val_size", cell.val_size},
            {"val_bce", cell.val_bce},
            {"best_epoch", cell.best_epoch},
            {"manifest", manifest_to_json(cell.manifest)},
            {"evals", std::move(evals)}};
}

CellResult cell_from_json(const nlohmann::json& j) {
    CellResult cell;
    cell.target = j.at("target").get<std::string>();
    cell.rate = j.at("rate").get<double>();
    cell.fold = j.at("fold").get<int>();
    cell.trainer = j.at("trainer").get<std::string>();
    cell.status = j.at("status").get<std::string>();
    cell.message = j.value("message", std::string());
    cell.train_size = j.value("train_size", std::size_t{0});
    cell.val_size = j.value("val_size", std::size_t{0});
    cell.val_bce = j.value("val_bce", 0.0);
    cell.best_epoch = j.value("best_epoch", std::size_t{0});
    if (j.contains("manifest")) cell.manifest = manifest_from_json(j.at("manifest"));
    for (const auto& je : j.at("evals")) {
        CellResult::SetEval ev;
        ev.test_set = je.at("test_set").get<std::string>();
        ev.threshold = json_to_double(je.at("threshold"));
        for (const auto& jr : je.at("records")) ev.records.push_back(record_from_json(jr));
        cell.evals.push_back(std::move(ev));
    }
    return cell;
}

int resolve_workers(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("BIASAUDIT_WORKERS")) {
        try {
            int n = static_cast<int>(parse_int(env));
            if (n > 0) return n;
        } catch (const std::invalid_argument&) {
            // fall through to default
        }
    }
    return 1;
}

namespace {

// One evaluation surface: the fixed internal test partition or a full
// external cohort.
struct EvalSet {
    std::string name;
    LabeledSet features; // y holds the true labels
    std::vector<int> labels;
    std::vector<DemographicProfile> demographics;
    std::vector<std::string> sample_ids;
};

EvalSet make_eval_set(std::string name, const Cohort& cohort,
                      const std::vector<std::size_t>& indices) {
    EvalSet es;
    es.name = std::move(name);
    std::vector<int> true_labels(cohort.size());
    for (std::size_t i = 0; i < cohort.size(); ++i) true_labels[i] = cohort.samples[i].label;
    es.features = LabeledSet::from_cohort(cohort, indices, true_labels);
    es.labels = es.features.y;
    for (std::size_t i : indices) {
        es.demographics.push_back(cohort.samples[i].demographics);
        es.sample_ids.push_back(cohort.samples[i].patient_id);
    }
    return es;
}

struct CellJob {
    std::size_t index = 0;
    std::size_t target_idx = 0, rate_idx = 0, trainer_idx = 0;
    int fold = 0;
};

struct CellOutput {
    CellResult result;
    // test set name -> full CSV content for the per-cell score export
    std::vector<std::pair<std::string, std::string>> score_files;
};

} // namespace

GridOutcome run_grid(const ExperimentConfig& config, int workers, bool resume) {
    config.validate();
    workers = resolve_workers(workers);

    std::error_code ec;
    fs::create_directories(config.output_dir, ec);
    if (ec) throw IoError("cannot create output dir: " + config.output_dir);

    // Inputs of the grid: base cohort, splits, external sites.
    Cohort cohort = generate_cohort(config.cohort);
    SplitPlan splits = make_splits(cohort, config.fold_count, config.split_proportions,
                                   derive_seed(config.root_seed, "split"));
    write_text_file(config.output_dir + "/cohort.csv", cohort_to_csv(cohort));
    write_text_file(config.output_dir + "/splits.json", splitplan_to_json(splits).dump(2) + "\n");

    std::vector<EvalSet> eval_sets;
    eval_sets.push_back(make_eval_set("internal", cohort, splits.indices_of(0, Partition::Test)));
    for (const ExternalSiteSpec& site : config.external_sites) {
        Cohort external = generate_external_cohort(config.cohort, site.overrides,
                                                   site.embedding_jitter, site.seed);
        write_text_file(config.output_dir + "/external_" + site.name + ".csv",
                        cohort_to_csv(external));
        std::vector<std::size_t> all(external.size());
        std::iota(all.begin(), all.end(), 0);
        eval_sets.push_back(make_eval_set(site.name, external, all));
    }

    std::vector<std::vector<std::size_t>> train_idx(static_cast<std::size_t>(config.fold_count));
    std::vector<std::vector<std::size_t>> val_idx(static_cast<std::size_t>(config.fold_count));
    for (int f = 0; f < config.fold_count; ++f) {
        train_idx[static_cast<std::size_t>(f)] = splits.indices_of(f, Partition::Train);
        val_idx[static_cast<std::size_t>(f)] = splits.indices_of(f, Partition::Val);
    }

    std::vector<GroupKey> eval_groups;
    eval_groups.push_back(GroupKey::all());
    for (const GroupKey& g : enumerate_groups()) eval_groups.push_back(g);

    // Mean train-partition size per group, for the size-vs-vulnerability table.
    std::map<std::string, double> group_sizes;
    {
        std::vector<GroupKey> with_all = eval_groups;
        for (const GroupKey& g : with_all) {
            double total = 0.0;
            for (int f = 0; f < config.fold_count; ++f) {
                std::size_t count = 0;
                for (std::size_t i : train_idx[static_cast<std::size_t>(f)])
                    if (group_matches(cohort.samples[i].demographics, g)) ++count;
                total += static_cast<double>(count);
            }
            group_sizes[g.str()] = total / static_cast<double>(config.fold_count);
        }
    }

    const std::string cells_path = config.output_dir + "/cells.jsonl";

    // Resume: previously committed ok cells are kept; anything else is redone.
    std::map<std::string, CellResult> reused;
    if (resume && fs::exists(cells_path)) {
        std::istringstream in(read_text_file(cells_path));
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            try {
                CellResult cell = cell_from_json(nlohmann::json::parse(line));
                if (cell.status == "ok")
                    reused[cell_key(cell.target, cell.rate, cell.fold, cell.trainer)] =
                        std::move(cell);
            } catch (const std::exception&) {
                // torn or stale line, the cell will simply be recomputed
            }
        }
    }

    // Canonical cell enumeration: target, rate, fold, trainer.
    std::vector<CellJob> jobs;
    std::vector<std::string> keys;
    for (std::size_t t = 0; t < config.targets.size(); ++t)
        for (std::size_t r = 0; r < config.rates.size(); ++r)
            for (int f = 0; f < config.fold_count; ++f)
                for (std::size_t tr = 0; tr < config.trainers.size(); ++tr) {
                    CellJob job;
                    job.index = jobs.size();
                    job.target_idx = t;
                    job.rate_idx = r;
                    job.fold = f;
                    job.trainer_idx = tr;
                    jobs.push_back(job);
                    keys.push_back(cell_key(config.targets[t].str(), config.rates[r], f,
                                            config.trainers[tr].name));
                }

    GridOutcome outcome;
    outcome.cells_total = jobs.size();
    outcome.output_dir = config.output_dir;

    auto compute_cell = [&](const CellJob& job) {
        const GroupKey& target = config.targets[job.target_idx];
        const double rate = config.rates[job.rate_idx];
        const TrainerEntry& trainer = config.trainers[job.trainer_idx];

        CellOutput out;
        CellResult& cell = out.result;
        cell.target = target.str();
        cell.rate = rate;
        cell.fold = job.fold;
        cell.trainer = trainer.name;

        // The target and rate feed only the poison stream; the training seed
        // depends on fold and trainer alone, so every rate-0 cell of a given
        // fold/trainer trains the identical model regardless of target.
        std::uint64_t poison_seed =
            derive_seed(config.root_seed, "poison|target=" + cell.target +
                                              "|rate=" + fmt_double(rate) +
                                              "|fold=" + std::to_string(job.fold));
        std::uint64_t train_seed =
            derive_seed(config.root_seed, "train|fold=" + std::to_string(job.fold) +
                                              "|trainer=" + trainer.name);
        try {
            auto [labels, manifest] =
                inject_underdiagnosis(cohort, splits, job.fold, target, rate, poison_seed);
            cell.manifest = std::move(manifest);

            LabeledSet train_set = LabeledSet::from_cohort(
                cohort, train_idx[static_cast<std::size_t>(job.fold)], labels);
            LabeledSet val_set = LabeledSet::from_cohort(
                cohort, val_idx[static_cast<std::size_t>(job.fold)], labels);
            cell.train_size = train_set.size();
            cell.val_size = val_set.size();

            TrainerConfig tc = trainer.config;
            tc.seed = train_seed;
            ScoreModel model = train(train_set, val_set, tc);
            cell.best_epoch = model.best_epoch;
            cell.val_bce = model.history.at(model.best_epoch - 1).val_bce;

            for (const EvalSet& es : eval_sets) {
                std::vector<double> scores = score_all(model, es.features);
                GroupEvalResult ge =
                    evaluate_groups(scores, es.labels, es.demographics, eval_groups);
                CellResult::SetEval ev;
                ev.test_set = es.name;
                ev.threshold = ge.threshold;
                ev.records = std::move(ge.records);
                cell.evals.push_back(std::move(ev));

                if (config.export_scores) {
                    std::ostringstream csv;
                    csv << "sample_id,score,label,sex,age_years,rate,fold,test_set\n";
                    for (std::size_t i = 0; i < scores.size(); ++i) {
                        csv << es.sample_ids[i] << ',' << fmt_double(scores[i]) << ','
                            << es.labels[i] << ',' << sex_name(es.demographics[i].sex) << ','
                            << fmt_double(es.demographics[i].age_years) << ','
                            << fmt_double(rate) << ',' << job.fold << ',' << es.name << "\n";
                    }
                    out.score_files.emplace_back(es.name, csv.str());
                }
            }
            cell.status = "ok";
        } catch (const std::exception& e) {
            cell.status = "error";
            cell.message = e.what();
            cell.evals.clear();
            out.score_files.clear();
        }
        return out;
    };

    std::vector<CellResult> all_cells(jobs.size());
    std::ofstream cells_out(cells_path, resume ? std::ios::app : std::ios::trunc);
    if (!cells_out) throw IoError("cannot write " + cells_path);

    auto commit_cell = [&](const CellJob& job, CellOutput&& out, bool fresh) {
        CellResult& cell = out.result;
        if (fresh) {
            for (auto& [set_name, content] : out.score_files) {
                std::string dir = config.output_dir + "/scores/" + cell.trainer + "/" +
                                  sanitize_group(cell.target);
                fs::create_directories(dir, ec);
                if (ec) throw IoError("cannot create score dir: " + dir);
                write_text_file(dir + "/r" + fmt_double(cell.rate) + "_f" +
                                    std::to_string(cell.fold) + "_" + set_name + ".csv",
                                content);
            }
            cells_out << cell_to_json(cell).dump() << "\n";
            cells_out.flush();
            ++outcome.cells_run;
        } else {
            ++outcome.cells_reused;
        }
        if (cell.status != "ok") ++outcome.cells_failed;
        all_cells[job.index] = std::move(cell);
    };

    if (workers <= 1) {
        for (const CellJob& job : jobs) {
            auto it = reused.find(keys[job.index]);
            if (it != reused.end()) {
                CellOutput out;
                out.result = it->second;
                commit_cell(job, std::move(out), /*fresh=*/false);
            } else {
                commit_cell(job, compute_cell(job), /*fresh=*/true);
            }
        }
    } else {
        // Workers claim jobs by atomic counter; a reorder buffer hands results
        // to the committing thread in canonical index order, so the output
        // files are byte-identical to a single-worker run.
        std::atomic<std::size_t> next_job{0};
        std::mutex mu;
        std::condition_variable cv;
        std::map<std::size_t, CellOutput> done;

        auto worker = [&] {
            while (true) {
                std::size_t i = next_job.fetch_add(1);
                if (i >= jobs.size()) break;
                CellOutput out;
                auto it = reused.find(keys[i]);
                bool fresh = it == reused.end();
                if (fresh)
                    out = compute_cell(jobs[i]);
                else
                    out.result = it->second;
                {
                    std::lock_guard<std::mutex> lock(mu);
                    done.emplace(i, std::move(out));
                }
                cv.notify_one();
            }
        };

        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);

        for (std::size_t commit = 0; commit < jobs.size(); ++commit) {
            std::unique_lock<std::mutex> lock(mu);
            cv.wait(lock, [&] { return done.count(commit) > 0; });
            CellOutput out = std::move(done.at(commit));
            done.erase(commit);
            lock.unlock();
            commit_cell(jobs[commit], std::move(out), reused.find(keys[commit]) == reused.end());
        }
        for (std::thread& th : pool) th.join();
    }
    cells_out.close();

    // Rewrite the cell log in canonical order (a resumed run may have
    // appended out of order relative to a fresh one).
    {
        std::ostringstream canonical;
        for (const CellResult& cell : all_cells) canonical << cell_to_json(cell).dump() << "\n";
        write_text_file(cells_path, canonical.str());
    }

    nlohmann::json config_json = experiment_config_to_json(config);
    config_json.erase("output_dir"); // self-referential; keeps twin runs byte-identical
    nlohmann::json manifest = {{"config", std::move(config_json)},
                               {"train_group_sizes", group_sizes},
                               {"schema", 1}};
    write_text_file(config.output_dir + "/run_manifest.json", manifest.dump(2) + "\n");

    ReportContext ctx;
    ctx.bh_q = config.bh_q;
    ctx.train_group_sizes = group_sizes;
    write_report_tables(config.output_dir + "/report", all_cells, ctx);
    return outcome;
}

namespace {

struct AuditRow {
    std::string sample_id;
    double score = 0.0;
    int label = 0;
    DemographicProfile demo;
    double rate = 0.0;
    int fold = 0;
    std::string test_set;
};

} // namespace

AuditOutcome run_audit(const std::string& input_csv, const std::string& out_dir) {
    std::string text = read_text_file(input_csv);

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output dir: " + out_dir);

    static const std::string kHeader =
        "sample_id,score,label,sex,age_years,rate,fold,test_set";

    std::vector<AuditRow> rows;
    std::ostringstream rejects;
    rejects << "kind,line,reason\n";
    AuditOutcome outcome;
    outcome.output_dir = out_dir;

    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!saw_header) {
            if (line != kHeader)
                throw AuditError("audit input must start with header: " + kHeader);
            saw_header = true;
            continue;
        }
        auto fields = split_csv_line(line);
        auto reject = [&](const std::string& reason) {
            ++outcome.rows_rejected;
            rejects << "row," << line_no << ',' << reason << "\n";
        };
        if (fields.size() != 8) {
            reject("expected 8 fields");
            continue;
        }
        AuditRow row;
        row.sample_id = fields[0];
        try {
            row.score = parse_double(fields[1]);
            row.label = static_cast<int>(parse_int(fields[2]));
            row.demo.sex = parse_sex(fields[3]);
            row.demo.age_years = parse_double(fields[4]);
            row.rate = parse_double(fields[5]);
            row.fold = static_cast<int>(parse_int(fields[6]));
            row.test_set = fields[7];
        } catch (const std::invalid_argument& e) {
            reject(e.what());
            continue;
        }
        if (!std::isfinite(row.score)) {
            reject("non-finite score");
            continue;
        }
        if (row.label != 0 && row.label != 1) {
            reject("label not in {0,1}");
            continue;
        }
        if (!(row.demo.age_years >= 0.0) || !std::isfinite(row.demo.age_years)) {
            reject("bad age");
            continue;
        }
        if (!(row.rate >= 0.0) || !(row.rate <= 1.0)) {
            reject("rate outside [0,1]");
            continue;
        }
        if (row.fold < 0) {
            reject("negative fold");
            continue;
        }
        if (!valid_identifier(row.test_set)) {
            reject("bad test_set tag");
            continue;
        }
        rows.push_back(std::move(row));
        ++outcome.rows_used;
    }
    if (!saw_header) throw AuditError("audit input is empty");
    if (rows.empty()) throw AuditError("no usable rows in audit input");

    std::vector<double> distinct_rates;
    for (const AuditRow& r : rows)
        if (std::find(distinct_rates.begin(), distinct_rates.end(), r.rate) ==
            distinct_rates.end())
            distinct_rates.push_back(r.rate);
    std::sort(distinct_rates.begin(), distinct_rates.end());
    if (distinct_rates.size() < 2 || distinct_rates.front() != 0.0)
        throw AuditError("audit input must cover rate 0 and at least one higher rate");

    // Slice rows by (rate, fold, test_set) and evaluate each slice against
    // the shared group list, exactly as the grid runner does post-training.
    std::map<std::pair<double, int>, std::map<std::string, std::vector<const AuditRow*>>> slices;
    for (const AuditRow& r : rows)
        slices[{r.rate, r.fold}][r.test_set].push_back(&r);

    std::vector<GroupKey> eval_groups;
    eval_groups.push_back(GroupKey::all());
    for (const GroupKey& g : enumerate_groups()) eval_groups.push_back(g);

    std::vector<CellResult> cells;
    for (auto& [rf, by_set] : slices) {
        CellResult cell;
        cell.target = "All";
        cell.rate = rf.first;
        cell.fold = rf.second;
        cell.trainer = "audit";
        cell.manifest.target = GroupKey::all();
        cell.manifest.rate = rf.first;
        cell.manifest.fold = rf.second;
        for (auto& [set_name, set_rows] : by_set) {
            std::vector<double> scores;
            std::vector<int> labels;
            std::vector<DemographicProfile> demos;
            scores.reserve(set_rows.size());
            for (const AuditRow* r : set_rows) {
                scores.push_back(r->score);
                labels.push_back(r->label);
                demos.push_back(r->demo);
            }
            try {
                GroupEvalResult ge = evaluate_groups(scores, labels, demos, eval_groups);
                CellResult::SetEval ev;
                ev.test_set = set_name;
                ev.threshold = ge.threshold;
                ev.records = std::move(ge.records);
                cell.evals.push_back(std::move(ev));
                ++outcome.slices_evaluated;
            } catch (const UndefinedMetric& e) {
                ++outcome.slices_rejected;
                rejects << "slice," << 0 << ','
                        << (set_name + " rate " + fmt_double(rf.first) + " fold " +
                            std::to_string(rf.second) + ": " + e.what())
                        << "\n";
            }
        }
        if (!cell.evals.empty()) cells.push_back(std::move(cell));
    }
    if (cells.empty()) throw AuditError("no evaluable slices in audit input");

    std::ostringstream cells_text;
    for (const CellResult& cell : cells) cells_text << cell_to_json(cell).dump() << "\n";
    write_text_file(out_dir + "/cells.jsonl", cells_text.str());
    write_text_file(out_dir + "/rejects.csv", rejects.str());

    nlohmann::json manifest = {{"mode", "audit"},
                               {"input", input_csv},
                               {"rows_used", outcome.rows_used},
                               {"rows_rejected", outcome.rows_rejected},
                               {"slices_evaluated", outcome.slices_evaluated},
                               {"slices_rejected", outcome.slices_rejected},
                               {"schema", 1}};
    write_text_file(out_dir + "/audit_manifest.json", manifest.dump(2) + "\n");

    ReportContext ctx;
    write_report_tables(out_dir + "/report", cells, ctx);
    return outcome;
}

void emit_report(const std::string& results_dir, const std::string& out_dir) {
    const std::string cells_path = results_dir + "/cells.jsonl";
    std::vector<CellResult> cells;
    std::istringstream in(read_text_file(cells_path));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            cells.push_back(cell_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw IoError("bad cell record at " + cells_path + ":" +
                          std::to_string(line_no) + ": " + e.what());
        }
    }
    if (cells.empty()) throw IoError("no cells found in " + cells_path);

    ReportContext ctx;
    const std::string manifest_path = results_dir + "/run_manifest.json";
    if (fs::exists(manifest_path)) {
        nlohmann::json manifest = nlohmann::json::parse(read_text_file(manifest_path));
        if (manifest.contains("config") && manifest.at("config").contains("bh_q"))
            ctx.bh_q = manifest.at("config").at("bh_q").get<double>();
        if (manifest.contains("train_group_sizes"))
            ctx.train_group_sizes =
                manifest.at("train_group_sizes").get<std::map<std::string, double>>();
    }
    write_report_tables(out_dir, cells, ctx);
}

} // namespace biasaudit
