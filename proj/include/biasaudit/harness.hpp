#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "biasaudit/classifier.hpp"
#include "biasaudit/core.hpp"
#include "biasaudit/io.hpp"
#include "biasaudit/metrics.hpp"
#include "biasaudit/poison.hpp"
#include "biasaudit/synthgen.hpp"

namespace biasaudit {

// Invalid audit input (malformed beyond repair, or unusable rate coverage).
struct AuditError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainerEntry {
    std::string name; // table identifier, e.g. "logistic", "mlp"
    TrainerConfig config;
};

struct ExternalSiteSpec {
    std::string name;
    std::vector<GroupOverride> overrides;
    double embedding_jitter = 0.0;
    std::uint64_t seed = 0;
};

struct ExperimentConfig {
    CohortSpec cohort;
    std::vector<ExternalSiteSpec> external_sites;
    std::vector<GroupKey> targets;                 // default: the 17 groups
    std::vector<double> rates;                     // default: rate_grid()
    int fold_count = 5;
    std::array<double, 3> split_proportions{0.7, 0.1, 0.2};
    std::vector<TrainerEntry> trainers;
    std::uint64_t root_seed = 1;
    std::string output_dir = "results";
    bool export_scores = true;
    double bh_q = 0.05;

    void validate() const; // throws std::invalid_argument
};

// Both reference learners with their calibrated defaults.
std::vector<TrainerEntry> default_trainers();
ExperimentConfig default_experiment_config();

nlohmann::json experiment_config_to_json(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

// One grid cell: a (target, rate, fold, trainer) training plus its
// evaluations on every test set.
struct CellResult {
    std::string target;
    double rate = 0.0;
    int fold = 0;
    std::string trainer;
    std::string status = "ok"; // "ok" or "error"
    std::string message;
    PoisonManifest manifest;
    std::size_t train_size = 0, val_size = 0;
    double val_bce = 0.0;      // best-snapshot validation loss
    std::size_t best_epoch = 0;
    struct SetEval {
        std::string test_set;
        double threshold = 0.0;
        std::vector<EvalRecord> records;
    };
    std::vector<SetEval> evals;
};

std::string cell_key(const std::string& target, double rate, int fold,
                     const std::string& trainer);
nlohmann::json cell_to_json(const CellResult& cell);
CellResult cell_from_json(const nlohmann::json& j);

struct GridOutcome {
    std::size_t cells_total = 0;
    std::size_t cells_run = 0;
    std::size_t cells_reused = 0;
    std::size_t cells_failed = 0;
    std::string output_dir;
};

// Runs the full target x rate x fold x trainer grid. Workers only affect
// wall time: results are committed in canonical cell order, so output bytes
// are identical for any worker count. With `resume`, cells already recorded
// in the output directory are not retrained.
GridOutcome run_grid(const ExperimentConfig& config, int workers, bool resume);

// Worker count resolution: explicit argument > BIASAUDIT_WORKERS env var > 1.
int resolve_workers(int requested);

struct AuditOutcome {
    std::size_t rows_used = 0;
    std::size_t rows_rejected = 0;
    std::size_t slices_evaluated = 0;
    std::size_t slices_rejected = 0;
    std::string output_dir;
};

// Recomputes every metric, vulnerability score, and statistical table from a
// CSV of externally supplied per-sample scores (no training involved).
// Input columns: sample_id,score,label,sex,age_years,rate,fold,test_set.
// Malformed rows are rejected with reasons into rejects.csv; the input must
// cover rate 0 plus at least one higher rate.
AuditOutcome run_audit(const std::string& input_csv, const std::string& out_dir);

// Rebuilds all report tables from a results directory (cells.jsonl plus the
// run manifest when present).
void emit_report(const std::string& results_dir, const std::string& out_dir);

// Shared table writer, used by run/audit/report paths so all three produce
// identical artifacts for identical cells.
struct ReportContext {
    double bh_q = 0.05;
    std::map<std::string, double> train_group_sizes; // group str -> mean size
};
void write_report_tables(const std::string& out_dir,
                         const std::vector<CellResult>& cells,
                         const ReportContext& ctx);

} // namespace biasaudit
