// Command-line experiment runner: demo generation, fitting, evaluation,
// lambda sweeps, and result aggregation, all driven by one config file.
#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mtirl/config.hpp"
#include "mtirl/harness.hpp"

namespace {

mtirl::Experiment load_experiment(const std::string& config_path,
                                  const std::string& output_dir_override) {
    mtirl::ExperimentConfig cfg = mtirl::load_config(config_path);
    if (!output_dir_override.empty()) {
        cfg.output_dir =
            std::filesystem::absolute(output_dir_override).lexically_normal().string();
    }
    return mtirl::build_experiment(cfg);
}

void print_rows(const std::vector<mtirl::ResultRow>& rows) {
    std::printf("%s\n", mtirl::kResultHeader);
    for (const mtirl::ResultRow& r : rows) {
        std::printf("%s\t%s\t%d\t%g\t%llu\t%.12g\t%.12g\t%.12g\n", r.algorithm.c_str(),
                    r.task.c_str(), r.m, r.lambda,
                    static_cast<unsigned long long>(r.seed), r.value, r.oracle_value,
                    r.expert_value);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-task IRL experiment harness"};
    app.require_subcommand(1);

    std::string config_path;
    std::string output_dir;
    int n_jobs = 1;
    int verbosity = 0;

    auto add_common = [&](CLI::App* cmd, bool with_jobs) {
        cmd->add_option("-c,--config", config_path, "Experiment config file (JSON)")
            ->required();
        cmd->add_option("-o,--output-dir", output_dir,
                        "Override the config's output directory");
        if (with_jobs) {
            cmd->add_option("-j,--jobs", n_jobs, "Worker threads for the fit grid")
                ->check(CLI::PositiveNumber);
        }
        cmd->add_flag_function(
            "-v,--verbose", [&](std::int64_t n) { verbosity = static_cast<int>(n); },
            "Increase log verbosity (repeatable)");
    };

    CLI::App* gen = app.add_subcommand("gen-demos", "Generate and write all demo files");
    add_common(gen, false);

    CLI::App* run = app.add_subcommand("run", "Fit the configured grid, write results.tsv");
    add_common(run, true);

    CLI::App* sweep = app.add_subcommand(
        "sweep-lambda", "Multitask sweep over {1e-2,1e-1,1e0}, write sweep_lambda.tsv");
    add_common(sweep, true);

    CLI::App* agg = app.add_subcommand("aggregate", "Aggregate result files over seeds");
    std::vector<std::string> agg_files;
    std::string agg_mode = "mean_ci95";
    std::string agg_out;
    agg->add_option("files", agg_files, "Result files (TSV)")->required()->expected(-1);
    agg->add_option("-m,--mode", agg_mode, "best_of_seeds | mean_ci95")
        ->check(CLI::IsMember({"best_of_seeds", "mean_ci95"}));
    agg->add_option("--out", agg_out, "Summary output path")->required();

    CLI::App* eval = app.add_subcommand("eval-policy",
                                        "Evaluate a saved theta's greedy policy on a task");
    add_common(eval, false);
    std::string theta_path;
    std::string task_name;
    eval->add_option("--theta", theta_path, "Theta file written by the library")
        ->required();
    eval->add_option("--task", task_name, "Task to evaluate against")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            mtirl::Experiment ex = load_experiment(config_path, output_dir);
            mtirl::cmd_gen_demos(ex, verbosity);
            std::printf("demo files written to %s\n",
                        (std::filesystem::path(ex.config.output_dir) / "demos").c_str());
        } else if (run->parsed()) {
            mtirl::Experiment ex = load_experiment(config_path, output_dir);
            std::vector<mtirl::ResultRow> rows = mtirl::cmd_run(ex, n_jobs, verbosity);
            std::printf("%zu rows -> %s\n", rows.size(),
                        mtirl::results_path(ex.config).c_str());
        } else if (sweep->parsed()) {
            mtirl::Experiment ex = load_experiment(config_path, output_dir);
            std::vector<mtirl::ResultRow> rows =
                mtirl::cmd_sweep_lambda(ex, n_jobs, verbosity);
            std::printf("%zu rows -> %s\n", rows.size(),
                        mtirl::sweep_path(ex.config).c_str());
        } else if (agg->parsed()) {
            std::vector<mtirl::SummaryRow> summary = mtirl::cmd_aggregate(
                agg_files, mtirl::aggregate_mode_from_string(agg_mode), agg_out);
            std::printf("%zu summary rows -> %s\n", summary.size(), agg_out.c_str());
        } else if (eval->parsed()) {
            mtirl::Experiment ex = load_experiment(config_path, output_dir);
            mtirl::ResultRow row = mtirl::cmd_eval_policy(ex, theta_path, task_name);
            print_rows({row});
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
