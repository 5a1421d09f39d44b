#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "mtirl/config.hpp"
#include "mtirl/demos.hpp"
#include "mtirl/errors.hpp"
#include "mtirl/gridworld.hpp"
#include "mtirl/irl.hpp"
#include "mtirl/mdp.hpp"
#include "mtirl/meta.hpp"
#include "mtirl/rng.hpp"
#include "mtirl/serialize.hpp"
#include "mtirl/soft_planner.hpp"

namespace mtirl {

inline constexpr const char* kHarnessVersion = "1.0.0";

/// One task of the experiment, fully built: the MDP under the config's
/// dynamics, the ground-truth reward, the soft-optimal expert that generates
/// demonstrations, and the exact reference values every result row carries.
struct HarnessTask {
    std::string name;
    TaskRewardSpec weights;
    TabularMdp mdp;
    Mat true_reward;
    SoftPolicy expert;
    double oracle_value = 0.0;
    double expert_value = 0.0;
};

/// A validated config together with everything derived from it once:
/// parsed grid, feature map, built tasks.
struct Experiment {
    ExperimentConfig config;
    GridSpec grid;
    FeatureMap features;
    std::vector<HarnessTask> tasks;

    const HarnessTask& task(const std::string& name) const {
        for (const HarnessTask& t : tasks) {
            if (t.name == name) return t;
        }
        throw ValidationError(ValidationError::Code::bad_config,
                              "unknown task name '" + name + "'");
    }

    std::vector<const HarnessTask*> others(const std::string& name) const {
        std::vector<const HarnessTask*> out;
        for (const HarnessTask& t : tasks) {
            if (t.name != name) out.push_back(&t);
        }
        return out;
    }
};

inline HarnessTask build_harness_task(const GridSpec& grid, const std::string& name,
                                      const TaskRewardSpec& weights,
                                      const ExperimentConfig& cfg) {
    HarnessTask t;
    t.name = name;
    t.weights = weights;
    t.mdp = build_mdp(grid, weights, cfg.discount, cfg.slip);
    t.true_reward = *t.mdp.reward;
    t.expert = soft_value_iteration(t.mdp, t.true_reward, cfg.fit.planner_tolerance,
                                    cfg.fit.planner_max_iterations);
    ViResult vi = value_iteration(t.mdp, t.true_reward);
    t.oracle_value = t.mdp.initial_dist.dot(vi.v);
    t.expert_value = policy_value(t.mdp, t.true_reward, t.expert.pi);
    return t;
}

/// Reads the grid file and builds every task. Throws ValidationError with a
/// field-level message on any problem.
inline Experiment build_experiment(const ExperimentConfig& cfg) {
    Experiment ex;
    ex.config = cfg;
    {
        std::ifstream in(cfg.grid_file, std::ios::binary);
        if (!in) {
            throw ValidationError(ValidationError::Code::bad_file,
                                  "cannot open grid file: " + cfg.grid_file);
        }
        std::stringstream ss;
        ss << in.rdbuf();
        ex.grid = parse_grid(ss.str());
    }
    ex.features = make_features(ex.grid, cfg.features);
    for (const TaskConfig& tc : cfg.tasks) {
        ex.tasks.push_back(build_harness_task(ex.grid, tc.name, tc.weights, cfg));
    }
    return ex;
}

/// Exact value of the greedy policy for an inferred reward, evaluated under
/// the task's ground-truth reward from the initial distribution. This is the
/// "value" every result row reports.
inline double inferred_policy_value(const HarnessTask& task, const FeatureMap& features,
                                    const Vec& theta) {
    ViResult vi = value_iteration(task.mdp, reward_from_theta(task.mdp, features, theta));
    return policy_value(task.mdp, task.true_reward, greedy_policy(vi.q));
}

// ---------------------------------------------------------------------------
// Demo generation
// ---------------------------------------------------------------------------

/// Seed of the RNG stream that samples one (task, role, seed) demo set.
/// Everything random in the harness derives from config.master_seed through
/// labeled streams like this one, so a config pins the entire pipeline.
inline std::uint64_t demo_stream(std::uint64_t master_seed, const std::string& task,
                                 const std::string& role, std::uint64_t seed) {
    return derive_stream(master_seed, {fnv1a64(task), fnv1a64(role), seed});
}

/// Target demo sets are sampled once per seed as a pool of max(m_values)
/// trajectories; a budget-M fit uses the first M of the pool. This makes the
/// M axis nested (the M=2 demos are the first two of the M=20 demos), which
/// is how few-shot budgets are usually compared.
inline int target_pool_size(const ExperimentConfig& cfg) {
    return *std::max_element(cfg.m_values.begin(), cfg.m_values.end());
}

inline std::string demo_file_path(const ExperimentConfig& cfg, const std::string& task,
                                  const std::string& role, std::uint64_t seed) {
    return (std::filesystem::path(cfg.output_dir) / "demos" /
            (task + "_" + role + "_seed" + std::to_string(seed) + ".demoset"))
        .string();
}

/// Generates and writes every demo file: one DemoSet per (task,
/// role in {source, target}, seed). Reruns with the same config overwrite
/// with byte-identical content.
inline void cmd_gen_demos(const Experiment& ex, int verbosity = 0) {
    const ExperimentConfig& cfg = ex.config;
    std::filesystem::create_directories(std::filesystem::path(cfg.output_dir) / "demos");
    const int pool = target_pool_size(cfg);
    for (const HarnessTask& t : ex.tasks) {
        for (std::uint64_t seed : cfg.seeds) {
            for (const auto& [role, count] :
                 {std::pair<std::string, int>{"source", cfg.n_source},
                  std::pair<std::string, int>{"target", pool}}) {
                std::uint64_t stream = demo_stream(cfg.master_seed, t.name, role, seed);
                DemoSet demos = sample_trajectories(t.mdp, t.expert.pi, count,
                                                    cfg.horizon, stream, t.name);
                std::string path = demo_file_path(cfg, t.name, role, seed);
                save_demos(path, demos);
                if (verbosity >= 1) {
                    std::fprintf(stderr, "[gen-demos] %s: %d trajectories\n",
                                 path.c_str(), count);
                }
            }
        }
    }
}

/// In-memory demo collection for one run, keyed by (task, role, seed).
struct DemoBank {
    std::map<std::tuple<std::string, std::string, std::uint64_t>, DemoSet> sets;

    const DemoSet& get(const std::string& task, const std::string& role,
                       std::uint64_t seed) const {
        auto it = sets.find({task, role, seed});
        if (it == sets.end()) {
            throw ValidationError(ValidationError::Code::bad_config,
                                  "demo set not loaded: " + task + "/" + role +
                                      "/seed" + std::to_string(seed));
        }
        return it->second;
    }
};

/// Loads every demo file the run needs. Missing files get a message that
/// names the file and the fix.
inline DemoBank load_demo_bank(const Experiment& ex) {
    DemoBank bank;
    for (const HarnessTask& t : ex.tasks) {
        for (std::uint64_t seed : ex.config.seeds) {
            for (const std::string role : {"source", "target"}) {
                std::string path = demo_file_path(ex.config, t.name, role, seed);
                if (!std::filesystem::exists(path)) {
                    throw ValidationError(ValidationError::Code::bad_file,
                                          "missing demo file " + path +
                                              " (run gen-demos first)");
                }
                bank.sets.emplace(std::make_tuple(t.name, role, seed),
                                  load_demos(path));
            }
        }
    }
    return bank;
}

/// Samples the same demo sets gen-demos would write, without touching disk.
/// Tests use this to cross-check the file path against the in-memory path.
inline DemoBank sample_demo_bank(const Experiment& ex) {
    DemoBank bank;
    const int pool = target_pool_size(ex.config);
    for (const HarnessTask& t : ex.tasks) {
        for (std::uint64_t seed : ex.config.seeds) {
            for (const auto& [role, count] :
                 {std::pair<std::string, int>{"source", ex.config.n_source},
                  std::pair<std::string, int>{"target", pool}}) {
                std::uint64_t stream =
                    demo_stream(ex.config.master_seed, t.name, role, seed);
                bank.sets.emplace(std::make_tuple(t.name, role, seed),
                                  sample_trajectories(t.mdp, t.expert.pi, count,
                                                      ex.config.horizon, stream,
                                                      t.name));
            }
        }
    }
    return bank;
}

// ---------------------------------------------------------------------------
// Result rows
// ---------------------------------------------------------------------------

/// One fitted-and-evaluated cell of the experiment grid, or a reference row
/// (algorithm "oracle" / "expert"). `value` is NaN for a failed (diverged)
/// fit. `wall_clock_seconds` is kept in memory for logging but deliberately
/// not serialized: result files must be byte-identical across reruns.
struct ResultRow {
    std::string algorithm;
    std::string task;
    int m = 0;
    double lambda = 0.0;
    std::uint64_t seed = 0;
    double value = 0.0;
    double oracle_value = 0.0;
    double expert_value = 0.0;
    double wall_clock_seconds = 0.0;
};

namespace detail {

inline std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.12g", x);
    return buf;
}

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, '\t')) out.push_back(field);
    return out;
}

}  // namespace detail

inline constexpr const char* kResultHeader =
    "algorithm\ttask\tm\tlambda\tseed\tvalue\toracle_value\texpert_value";

/// Writes rows as tab-separated values with a header. Doubles print with
/// %.12g so files are diff-able and reread rows compare equal.
inline void write_result_file(const std::string& path,
                              const std::vector<ResultRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ValidationError(ValidationError::Code::bad_file,
                              "cannot open for writing: " + path);
    }
    out << kResultHeader << "\n";
    for (const ResultRow& r : rows) {
        if (!std::isnan(r.value) && r.value > r.oracle_value + 1e-6) {
            throw ValidationError(ValidationError::Code::bad_config,
                                  "result row exceeds its oracle value: " + r.algorithm +
                                      "/" + r.task + " value " +
                                      detail::format_double(r.value) + " > oracle " +
                                      detail::format_double(r.oracle_value));
        }
        out << r.algorithm << '\t' << r.task << '\t' << r.m << '\t'
            << detail::format_double(r.lambda) << '\t' << r.seed << '\t'
            << detail::format_double(r.value) << '\t'
            << detail::format_double(r.oracle_value) << '\t'
            << detail::format_double(r.expert_value) << '\n';
    }
}

inline std::vector<ResultRow> read_result_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError(ValidationError::Code::bad_file,
                              "cannot open result file: " + path);
    }
    std::string line;
    if (!std::getline(in, line) || line != kResultHeader) {
        throw ValidationError(ValidationError::Code::bad_file,
                              "result file " + path + " has an unexpected header");
    }
    std::vector<ResultRow> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> f = detail::split_tabs(line);
        if (f.size() != 8) {
            throw ValidationError(ValidationError::Code::bad_file,
                                  "result file " + path + " line " +
                                      std::to_string(line_no) + ": expected 8 fields, got " +
                                      std::to_string(f.size()));
        }
        ResultRow r;
        r.algorithm = f[0];
        r.task = f[1];
        r.m = std::atoi(f[2].c_str());
        r.lambda = std::strtod(f[3].c_str(), nullptr);
        r.seed = std::strtoull(f[4].c_str(), nullptr, 10);
        r.value = std::strtod(f[5].c_str(), nullptr);
        r.oracle_value = std::strtod(f[6].c_str(), nullptr);
        r.expert_value = std::strtod(f[7].c_str(), nullptr);
        rows.push_back(std::move(r));
    }
    return rows;
}

/// Sidecar metadata written next to each result file. Contents are fully
/// determined by the config (hash, RNG identifier, version, row count) so
/// reruns reproduce it byte for byte; timings go to the log instead.
inline void write_result_metadata(const std::string& result_path, const Experiment& ex,
                                  size_t n_rows) {
    nlohmann::json j;
    j["format"] = "mtirl-results-meta v1";
    j["config_hash"] = config_hash(ex.config);
    j["rng"] = kRngAlgorithmId;
    j["version"] = kHarnessVersion;
    j["rows"] = n_rows;
    j["grid_file"] = ex.config.grid_file;
    detail::write_json_file(result_path + ".meta.json", j);
}

// ---------------------------------------------------------------------------
// Fitting one cell
// ---------------------------------------------------------------------------

/// Fits one (algorithm, target, M, lambda, seed) cell and returns the theta
/// used for evaluation. Throws DivergenceError when the optimizer aborts.
inline Vec fit_cell(const Experiment& ex, const DemoBank& bank, Algorithm algorithm,
                    const HarnessTask& target, int m, double lambda,
                    std::uint64_t seed) {
    const ExperimentConfig& cfg = ex.config;
    const FeatureMap& features = ex.features;
    DemoSet target_demos = prefix(bank.get(target.name, "target", seed), m);
    Vec target_counts = empirical_feature_counts(target_demos, features,
                                                 target.mdp.discount,
                                                 target.mdp.n_actions);

    switch (algorithm) {
        case Algorithm::single: {
            auto [theta, report] = fit_single(target.mdp, features, target_counts, cfg.fit);
            return theta;
        }
        case Algorithm::joint: {
            // Joint training: one reward fit on the concatenation of every
            // task's demonstrations (the other tasks contribute their source
            // sets, the target its M-trajectory budget).
            std::vector<const DemoSet*> pool;
            for (const HarnessTask* src : ex.others(target.name)) {
                pool.push_back(&bank.get(src->name, "source", seed));
            }
            pool.push_back(&target_demos);
            auto [theta, report] = fit_joint_baseline(target.mdp, features, pool, cfg.fit);
            return theta;
        }
        case Algorithm::multitask: {
            // Shared-mean multi-task fit: the other tasks bring N source
            // demos each, the target its M-trajectory budget; the target's
            // theta is the last entry.
            std::vector<Vec> counts;
            std::vector<TaskData> data;
            for (const HarnessTask* src : ex.others(target.name)) {
                counts.push_back(empirical_feature_counts(
                    bank.get(src->name, "source", seed), features, src->mdp.discount,
                    src->mdp.n_actions));
            }
            counts.push_back(target_counts);
            size_t i = 0;
            for (const HarnessTask* src : ex.others(target.name)) {
                data.push_back(TaskData{&src->mdp, &features, counts[i++], src->name});
            }
            data.push_back(TaskData{&target.mdp, &features, counts[i], target.name});
            auto [params, report] = fit_multitask(data, lambda, cfg.fit);
            return params.thetas.back();
        }
        case Algorithm::meta: {
            // Reptile pretraining on the other tasks' source demos, then a
            // short finetune on the target budget from the learned phi.
            std::vector<Vec> counts;
            std::vector<TaskData> data;
            for (const HarnessTask* src : ex.others(target.name)) {
                counts.push_back(empirical_feature_counts(
                    bank.get(src->name, "source", seed), features, src->mdp.discount,
                    src->mdp.n_actions));
            }
            size_t i = 0;
            for (const HarnessTask* src : ex.others(target.name)) {
                data.push_back(TaskData{&src->mdp, &features, counts[i++], src->name});
            }
            if (data.empty()) {
                throw ValidationError(ValidationError::Code::bad_config,
                                      "meta fitting needs at least one non-target task");
            }
            ReptileOptions ropts;
            ropts.outer_iterations = cfg.meta.outer_iterations;
            ropts.inner_steps = cfg.meta.inner_steps;
            ropts.outer_learning_rate = cfg.meta.outer_lr;
            ropts.inner_learning_rate = cfg.fit.learning_rate;
            ropts.planner_tolerance = cfg.fit.planner_tolerance;
            ropts.planner_max_iterations = cfg.fit.planner_max_iterations;
            ropts.record_history = false;
            MetaState state = reptile_meta(
                data, ropts,
                derive_stream(cfg.master_seed,
                              {fnv1a64("reptile"), fnv1a64(target.name), seed}));
            return finetune(state.phi, target.mdp, features, target_counts,
                            cfg.meta.finetune_steps, cfg.fit.learning_rate);
        }
    }
    throw ValidationError(ValidationError::Code::bad_config, "unreachable algorithm");
}

// ---------------------------------------------------------------------------
// Running the experiment grid
// ---------------------------------------------------------------------------

/// Computes the full result table for the given algorithms and lambda grid:
/// one row per (algorithm, target, M, lambda, seed) — algorithms that ignore
/// lambda (single, joint, meta) run once with lambda recorded as 0 — plus
/// one oracle and one expert reference row per target. Jobs are independent;
/// with n_jobs > 1 they run on a worker pool, and the row order (and hence
/// the output file) is identical to sequential execution.
inline std::vector<ResultRow> run_experiment(const Experiment& ex, const DemoBank& bank,
                                             const std::vector<Algorithm>& algorithms,
                                             const std::vector<double>& lambdas,
                                             int n_jobs = 1, int verbosity = 0) {
    const ExperimentConfig& cfg = ex.config;
    struct Job {
        Algorithm algorithm;
        const HarnessTask* target;
        int m;
        double lambda;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (Algorithm a : algorithms) {
        const std::vector<double> algo_lambdas =
            a == Algorithm::multitask ? lambdas : std::vector<double>{0.0};
        for (const std::string& name : cfg.target_tasks) {
            const HarnessTask& target = ex.task(name);
            for (int m : cfg.m_values) {
                for (double lambda : algo_lambdas) {
                    for (std::uint64_t seed : cfg.seeds) {
                        jobs.push_back(Job{a, &target, m, lambda, seed});
                    }
                }
            }
        }
    }

    std::vector<ResultRow> rows(jobs.size());
    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1)) {
            const Job& job = jobs[i];
            ResultRow row;
            row.algorithm = to_string(job.algorithm);
            row.task = job.target->name;
            row.m = job.m;
            row.lambda = job.lambda;
            row.seed = job.seed;
            row.oracle_value = job.target->oracle_value;
            row.expert_value = job.target->expert_value;
            auto t0 = std::chrono::steady_clock::now();
            try {
                Vec theta = fit_cell(ex, bank, job.algorithm, *job.target, job.m,
                                     job.lambda, job.seed);
                row.value = inferred_policy_value(*job.target, ex.features, theta);
            } catch (const DivergenceError& e) {
                // Failed fit: record the row as NaN and keep sweeping.
                row.value = std::numeric_limits<double>::quiet_NaN();
                if (verbosity >= 1) {
                    std::fprintf(stderr, "[run] diverged: %s %s m=%d lambda=%g seed=%llu: %s\n",
                                 row.algorithm.c_str(), row.task.c_str(), row.m,
                                 row.lambda, static_cast<unsigned long long>(row.seed),
                                 e.what());
                }
            }
            row.wall_clock_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                    .count();
            if (verbosity >= 2) {
                std::fprintf(stderr, "[run] %s %s m=%d lambda=%g seed=%llu value=%.6g (%.1fs)\n",
                             row.algorithm.c_str(), row.task.c_str(), row.m, row.lambda,
                             static_cast<unsigned long long>(row.seed), row.value,
                             row.wall_clock_seconds);
            }
            rows[i] = std::move(row);
        }
    };
    const int workers = std::max(1, n_jobs);
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        threads.reserve(workers);
        for (int w = 0; w < workers; ++w) threads.emplace_back(worker);
        for (std::thread& t : threads) t.join();
    }

    for (const std::string& name : cfg.target_tasks) {
        const HarnessTask& target = ex.task(name);
        for (const char* ref : {"oracle", "expert"}) {
            ResultRow row;
            row.algorithm = ref;
            row.task = target.name;
            row.m = 0;
            row.lambda = 0.0;
            row.seed = 0;
            row.value = std::string(ref) == "oracle" ? target.oracle_value
                                                     : target.expert_value;
            row.oracle_value = target.oracle_value;
            row.expert_value = target.expert_value;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

inline std::string results_path(const ExperimentConfig& cfg) {
    return (std::filesystem::path(cfg.output_dir) / "results.tsv").string();
}

inline std::string sweep_path(const ExperimentConfig& cfg) {
    return (std::filesystem::path(cfg.output_dir) / "sweep_lambda.tsv").string();
}

/// run subcommand: fits the config's algorithm/M/lambda/seed grid and writes
/// results.tsv plus its metadata sidecar. Returns the rows.
inline std::vector<ResultRow> cmd_run(const Experiment& ex, int n_jobs = 1,
                                      int verbosity = 0) {
    DemoBank bank = load_demo_bank(ex);
    std::vector<ResultRow> rows =
        run_experiment(ex, bank, ex.config.algorithms, ex.config.lambdas, n_jobs,
                       verbosity);
    std::filesystem::create_directories(ex.config.output_dir);
    std::string path = results_path(ex.config);
    write_result_file(path, rows);
    write_result_metadata(path, ex, rows.size());
    if (verbosity >= 1) {
        double total = 0.0;
        for (const ResultRow& r : rows) total += r.wall_clock_seconds;
        std::fprintf(stderr, "[run] %zu rows -> %s (fit time %.1fs)\n", rows.size(),
                     path.c_str(), total);
    }
    return rows;
}

inline const std::vector<double>& default_lambda_grid() {
    static const std::vector<double> grid = {1e-2, 1e-1, 1e0};
    return grid;
}

/// sweep-lambda subcommand: multitask rows over the canonical lambda grid
/// {1e-2, 1e-1, 1e0} (ignoring the config's lambda list), written to
/// sweep_lambda.tsv. Exactly |grid|*|m_values|*|seeds| multitask rows per
/// target task, plus the reference rows.
inline std::vector<ResultRow> cmd_sweep_lambda(const Experiment& ex, int n_jobs = 1,
                                               int verbosity = 0) {
    DemoBank bank = load_demo_bank(ex);
    std::vector<ResultRow> rows =
        run_experiment(ex, bank, {Algorithm::multitask}, default_lambda_grid(), n_jobs,
                       verbosity);
    std::filesystem::create_directories(ex.config.output_dir);
    std::string path = sweep_path(ex.config);
    write_result_file(path, rows);
    write_result_metadata(path, ex, rows.size());
    if (verbosity >= 1) {
        std::fprintf(stderr, "[sweep-lambda] %zu rows -> %s\n", rows.size(), path.c_str());
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

enum class AggregateMode { best_of_seeds, mean_ci95 };

inline AggregateMode aggregate_mode_from_string(const std::string& s) {
    if (s == "best_of_seeds") return AggregateMode::best_of_seeds;
    if (s == "mean_ci95") return AggregateMode::mean_ci95;
    throw ValidationError(ValidationError::Code::bad_config,
                          "unknown aggregation mode '" + s +
                              "' (expected best_of_seeds|mean_ci95)");
}

/// One aggregated cell: the group key, how many rows entered (and how many
/// of them were failed fits), the aggregate value, and - in mean_ci95 mode -
/// the half-width of the normal-approximation 95% confidence interval
/// (1.96 * sd / sqrt(n), sample standard deviation; width 0 for a single
/// seed under the documented degenerate rule).
struct SummaryRow {
    std::string algorithm;
    std::string task;
    int m = 0;
    double lambda = 0.0;
    int n = 0;
    int n_failed = 0;
    double value = 0.0;
    double ci95_half_width = 0.0;
};

/// Groups rows by (algorithm, task, M, lambda) and aggregates the seed axis.
/// Best-of takes the max over seeds; mean_ci95 reports mean and CI. Failed
/// (NaN) rows are counted but excluded from the statistic; a group with no
/// successful row aggregates to NaN. Group order is canonical (sorted by the
/// key), so aggregation commutes with row permutation.
inline std::vector<SummaryRow> aggregate(const std::vector<ResultRow>& rows,
                                         AggregateMode mode) {
    if (rows.empty()) {
        throw ValidationError(ValidationError::Code::bad_config,
                              "nothing to aggregate: no result rows");
    }
    std::map<std::tuple<std::string, std::string, int, double>, std::vector<double>>
        groups;
    std::map<std::tuple<std::string, std::string, int, double>, int> failed;
    for (const ResultRow& r : rows) {
        auto key = std::make_tuple(r.algorithm, r.task, r.m, r.lambda);
        if (std::isnan(r.value)) {
            ++failed[key];
            groups[key];  // ensure the group exists even if all rows failed
        } else {
            groups[key].push_back(r.value);
        }
    }
    std::vector<SummaryRow> out;
    for (auto& [key, values] : groups) {
        // Canonical value order makes the floating-point reduction (and so
        // the whole aggregation) independent of row order.
        std::sort(values.begin(), values.end());
        SummaryRow s;
        std::tie(s.algorithm, s.task, s.m, s.lambda) = key;
        auto fit = failed.find(key);
        s.n_failed = fit == failed.end() ? 0 : fit->second;
        s.n = static_cast<int>(values.size()) + s.n_failed;
        if (values.empty()) {
            s.value = std::numeric_limits<double>::quiet_NaN();
            s.ci95_half_width = std::numeric_limits<double>::quiet_NaN();
        } else if (mode == AggregateMode::best_of_seeds) {
            s.value = *std::max_element(values.begin(), values.end());
        } else {
            double mean = 0.0;
            for (double v : values) mean += v;
            mean /= static_cast<double>(values.size());
            s.value = mean;
            if (values.size() > 1) {
                double ss = 0.0;
                for (double v : values) ss += (v - mean) * (v - mean);
                double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
                s.ci95_half_width =
                    1.96 * sd / std::sqrt(static_cast<double>(values.size()));
            } else {
                s.ci95_half_width = 0.0;  // degenerate single-seed rule
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

inline constexpr const char* kSummaryHeader =
    "algorithm\ttask\tm\tlambda\tn\tn_failed\tvalue\tci95_half_width";

inline void write_summary_file(const std::string& path,
                               const std::vector<SummaryRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ValidationError(ValidationError::Code::bad_file,
                              "cannot open for writing: " + path);
    }
    out << kSummaryHeader << "\n";
    for (const SummaryRow& s : rows) {
        out << s.algorithm << '\t' << s.task << '\t' << s.m << '\t'
            << detail::format_double(s.lambda) << '\t' << s.n << '\t' << s.n_failed
            << '\t' << detail::format_double(s.value) << '\t'
            << detail::format_double(s.ci95_half_width) << '\n';
    }
}

/// aggregate subcommand: reads one or more result files, aggregates, writes
/// the summary table, and returns it.
inline std::vector<SummaryRow> cmd_aggregate(const std::vector<std::string>& result_files,
                                             AggregateMode mode,
                                             const std::string& out_path) {
    if (result_files.empty()) {
        throw ValidationError(ValidationError::Code::bad_config,
                              "aggregate needs at least one result file");
    }
    std::vector<ResultRow> rows;
    for (const std::string& path : result_files) {
        std::vector<ResultRow> r = read_result_file(path);
        rows.insert(rows.end(), std::make_move_iterator(r.begin()),
                    std::make_move_iterator(r.end()));
    }
    std::vector<SummaryRow> summary = aggregate(rows, mode);
    write_summary_file(out_path, summary);
    return summary;
}

// ---------------------------------------------------------------------------
// eval-policy
// ---------------------------------------------------------------------------

/// eval-policy subcommand: loads a saved theta, evaluates its greedy policy
/// on the named task, and returns the corresponding row.
inline ResultRow cmd_eval_policy(const Experiment& ex, const std::string& theta_path,
                                 const std::string& task_name) {
    ThetaRecord record = load_theta(theta_path);
    const HarnessTask& task = ex.task(task_name);
    if (record.theta.size() != ex.features.k) {
        throw ValidationError(ValidationError::Code::shape_mismatch,
                              "theta file " + theta_path + " has dimension " +
                                  std::to_string(record.theta.size()) +
                                  ", experiment features have " +
                                  std::to_string(ex.features.k));
    }
    ResultRow row;
    row.algorithm = "eval";
    row.task = task.name;
    row.m = 0;
    row.lambda = record.lambda;
    row.seed = record.seed;
    row.value = inferred_policy_value(task, ex.features, record.theta);
    row.oracle_value = task.oracle_value;
    row.expert_value = task.expert_value;
    return row;
}

// ---------------------------------------------------------------------------
// Meta-learning family experiment
// ---------------------------------------------------------------------------

/// Outcome of one seed of the paired meta-learning comparison: finetuning
/// from the Reptile initialization versus from zero, on a fresh target task.
struct MetaComparison {
    double meta_value = 0.0;
    double zero_value = 0.0;
    double oracle_value = 0.0;
};

/// Builds a family of `cfg.meta.family_size` tasks on the experiment grid
/// with gold/silver weights drawn uniformly from [0, 5] (other terrain
/// weights as in the first configured task), pretrains a Reptile
/// initialization on their demos, draws one more held-out task the same way,
/// and finetunes on a single trajectory from it - once from phi, once from
/// zero. All randomness derives from master_seed and the given seed.
inline MetaComparison meta_family_comparison(const Experiment& ex, std::uint64_t seed,
                                             int n_family_demos = 50) {
    const ExperimentConfig& cfg = ex.config;
    const FeatureMap& features = ex.features;
    TaskRewardSpec base = cfg.tasks.front().weights;

    Rng weight_rng(derive_stream(cfg.master_seed, {fnv1a64("family"), seed}));
    std::vector<HarnessTask> family;
    family.reserve(cfg.meta.family_size);
    for (int i = 0; i < cfg.meta.family_size; ++i) {
        TaskRewardSpec w = base;
        w.gold = 5.0 * weight_rng.uniform01();
        w.silver = 5.0 * weight_rng.uniform01();
        family.push_back(
            build_harness_task(ex.grid, "fam" + std::to_string(i), w, cfg));
    }

    std::vector<Vec> counts;
    counts.reserve(family.size());
    for (size_t i = 0; i < family.size(); ++i) {
        DemoSet demos = sample_trajectories(
            family[i].mdp, family[i].expert.pi, n_family_demos, cfg.horizon,
            derive_stream(cfg.master_seed,
                          {fnv1a64("famdemo"), seed, static_cast<std::uint64_t>(i)}),
            family[i].name);
        counts.push_back(empirical_feature_counts(demos, features,
                                                  family[i].mdp.discount,
                                                  family[i].mdp.n_actions));
    }
    std::vector<TaskData> data;
    for (size_t i = 0; i < family.size(); ++i) {
        data.push_back(TaskData{&family[i].mdp, &features, counts[i], family[i].name});
    }

    ReptileOptions ropts;
    ropts.outer_iterations = cfg.meta.outer_iterations;
    ropts.inner_steps = cfg.meta.inner_steps;
    ropts.outer_learning_rate = cfg.meta.outer_lr;
    ropts.inner_learning_rate = cfg.fit.learning_rate;
    ropts.planner_tolerance = cfg.fit.planner_tolerance;
    ropts.planner_max_iterations = cfg.fit.planner_max_iterations;
    ropts.record_history = false;
    MetaState state = reptile_meta(data, ropts,
                                   derive_stream(cfg.master_seed,
                                                 {fnv1a64("reptile"), seed}));

    TaskRewardSpec tw = base;
    tw.gold = 5.0 * weight_rng.uniform01();
    tw.silver = 5.0 * weight_rng.uniform01();
    HarnessTask target = build_harness_task(ex.grid, "heldout", tw, cfg);
    DemoSet demo = sample_trajectories(
        target.mdp, target.expert.pi, 1, cfg.horizon,
        derive_stream(cfg.master_seed, {fnv1a64("targetdemo"), seed}), target.name);
    Vec target_counts = empirical_feature_counts(demo, features, target.mdp.discount,
                                                 target.mdp.n_actions);

    MetaComparison out;
    out.oracle_value = target.oracle_value;
    Vec th_meta = finetune(state.phi, target.mdp, features, target_counts,
                           cfg.meta.finetune_steps, cfg.fit.learning_rate);
    Vec th_zero = finetune(Vec::Zero(features.k), target.mdp, features, target_counts,
                           cfg.meta.finetune_steps, cfg.fit.learning_rate);
    out.meta_value = inferred_policy_value(target, features, th_meta);
    out.zero_value = inferred_policy_value(target, features, th_zero);
    return out;
}

}  // namespace mtirl
