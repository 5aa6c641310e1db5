#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "biasaudit/harness.hpp"
#include "biasaudit/io.hpp"
#include "biasaudit/synthgen.hpp"

namespace {

// Exit codes: 0 ok, 1 bad config / bad audit input, 2 some grid cells
// failed, 3 I/O failure.
enum ExitCode { kOk = 0, kConfigError = 1, kPartialFailure = 2, kIoFailure = 3 };

int cmd_run(const std::string& config_path, int workers, bool resume) {
    nlohmann::json j = nlohmann::json::parse(biasaudit::read_text_file(config_path));
    biasaudit::ExperimentConfig config = biasaudit::experiment_config_from_json(j);
    config.validate();
    biasaudit::GridOutcome out =
        biasaudit::run_grid(config, biasaudit::resolve_workers(workers), resume);
    std::printf("cells: %zu total, %zu run, %zu reused, %zu failed\n", out.cells_total,
                out.cells_run, out.cells_reused, out.cells_failed);
    std::printf("results: %s\n", out.output_dir.c_str());
    if (out.cells_failed > 0) {
        std::fprintf(stderr, "%zu cell(s) failed; see cells.jsonl for messages\n",
                     out.cells_failed);
        return kPartialFailure;
    }
    return kOk;
}

int cmd_audit(const std::string& input, const std::string& out_dir) {
    biasaudit::AuditOutcome out = biasaudit::run_audit(input, out_dir);
    std::printf("rows: %zu used, %zu rejected\n", out.rows_used, out.rows_rejected);
    std::printf("slices: %zu evaluated, %zu rejected\n", out.slices_evaluated,
                out.slices_rejected);
    std::printf("results: %s\n", out.output_dir.c_str());
    return kOk;
}

int cmd_report(const std::string& results_dir, const std::string& out_dir) {
    biasaudit::emit_report(results_dir, out_dir);
    std::printf("report: %s\n", out_dir.c_str());
    return kOk;
}

int cmd_config(const std::string& out_path) {
    nlohmann::json j =
        biasaudit::experiment_config_to_json(biasaudit::default_experiment_config());
    std::string text = j.dump(2) + "\n";
    if (out_path.empty()) {
        std::fputs(text.c_str(), stdout);
    } else {
        biasaudit::write_text_file(out_path, text);
        std::printf("wrote %s\n", out_path.c_str());
    }
    return kOk;
}

int cmd_synth(const std::string& config_path, const std::string& out_csv) {
    biasaudit::CohortSpec spec = biasaudit::default_cohort_spec();
    if (!config_path.empty()) {
        nlohmann::json j = nlohmann::json::parse(biasaudit::read_text_file(config_path));
        spec = biasaudit::cohort_spec_from_json(j);
    }
    spec.validate();
    biasaudit::Cohort cohort = biasaudit::generate_cohort(spec);
    biasaudit::write_text_file(out_csv, biasaudit::cohort_to_csv(cohort));
    std::printf("wrote %zu samples to %s\n", cohort.samples.size(), out_csv.c_str());
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"label-poisoning bias audit harness"};
    app.require_subcommand(1);

    std::string config_path, input_path, results_dir, out_path;
    int workers = 0;
    bool resume = false;

    CLI::App* run = app.add_subcommand("run", "train and evaluate the full poisoning grid");
    run->add_option("--config", config_path, "experiment config JSON")->required();
    run->add_option("--workers", workers, "worker threads (default: BIASAUDIT_WORKERS or 1)");
    run->add_flag("--resume", resume, "reuse finished cells from a previous run");

    CLI::App* audit = app.add_subcommand("audit", "recompute all tables from exported scores");
    audit->add_option("--input", input_path, "per-sample score CSV")->required();
    audit->add_option("--out", out_path, "output directory")->required();

    CLI::App* report = app.add_subcommand("report", "rebuild report tables from a results dir");
    report->add_option("--results", results_dir, "results directory with cells.jsonl")
        ->required();
    report->add_option("--out", out_path, "output directory")->required();

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic cohort CSV");
    synth->add_option("--config", config_path, "cohort spec JSON (default spec if omitted)");
    synth->add_option("--out", out_path, "output CSV path")->required();

    CLI::App* config = app.add_subcommand("config", "print the default experiment config");
    config->add_option("--out", out_path, "write to a file instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (run->parsed()) return cmd_run(config_path, workers, resume);
        if (audit->parsed()) return cmd_audit(input_path, out_path);
        if (report->parsed()) return cmd_report(results_dir, out_path);
        if (synth->parsed()) return cmd_synth(config_path, out_path);
        if (config->parsed()) return cmd_config(out_path);
    } catch (const biasaudit::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kIoFailure;
    } catch (const std::filesystem::filesystem_error& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kIoFailure;
    } catch (const biasaudit::AuditError& e) {
        std::fprintf(stderr, "audit error: %s\n", e.what());
        return kConfigError;
    } catch (const nlohmann::json::exception& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfigError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kConfigError;
    }
    return kOk;
}
