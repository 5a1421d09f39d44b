#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtirl/errors.hpp"
#include "mtirl/gridworld.hpp"
#include "mtirl/irl.hpp"
#include "mtirl/rng.hpp"

namespace mtirl {

/// Which fitting algorithm a harness run should execute.
enum class Algorithm { single, joint, multitask, meta };

inline const char* to_string(Algorithm a) {
    switch (a) {
        case Algorithm::single: return "single";
        case Algorithm::joint: return "joint";
        case Algorithm::multitask: return "multitask";
        case Algorithm::meta: return "meta";
    }
    return "?";
}

inline Algorithm algorithm_from_string(const std::string& s) {
    if (s == "single") return Algorithm::single;
    if (s == "joint") return Algorithm::joint;
    if (s == "multitask") return Algorithm::multitask;
    if (s == "meta") return Algorithm::meta;
    throw ValidationError(ValidationError::Code::bad_config,
                          "config field 'algorithms': unknown algorithm '" + s +
                              "' (expected single|joint|multitask|meta)");
}

/// One labeled task: a name plus its per-terrain reward weights.
struct TaskConfig {
    std::string name;
    TaskRewardSpec weights;
};

/// Hyperparameters for the Reptile meta-learning path (used only when the
/// algorithm list contains "meta").
struct MetaConfig {
    int family_size = 8;       // tasks in the randomized pretraining family
    long outer_iterations = 40;
    double outer_lr = 1.0;     // Reptile interpolation coefficient
    long inner_steps = 40;     // gradient steps per sampled task
    long finetune_steps = 20;  // budget when adapting to the target
};

/// The single structured configuration file that drives every harness
/// subcommand. JSON on disk (format tag "mtirl-config v1"); all
/// hyperparameters that the experiment depends on surface here so a config
/// plus a seed list pins a run completely.
///
/// Paths are resolved relative to the directory containing the config file.
struct ExperimentConfig {
    std::string grid_file;                  // resolved at load; must exist
    std::vector<TaskConfig> tasks;          // labeled weight specs, names unique
    std::vector<std::string> target_tasks;  // few-shot targets; subset of tasks
    double discount = 0.95;
    double slip = 0.8;                      // probability the intended move succeeds
    int horizon = 200;                      // demo rollout length
    int n_source = 200;                     // source demos per (task, seed)
    std::vector<int> m_values = {1, 2, 5, 20};   // target demo budgets
    std::vector<double> lambdas = {0.1};         // shared-mean regularization grid
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    std::uint64_t master_seed = 17;         // base of every derived RNG stream
    std::vector<Algorithm> algorithms = {Algorithm::single, Algorithm::multitask};
    FeatureKind features = FeatureKind::one_hot_state;
    FitOptions fit;
    MetaConfig meta;
    std::string output_dir = "out";         // resolved at load

    const TaskConfig& task(const std::string& name) const {
        for (const TaskConfig& t : tasks) {
            if (t.name == name) return t;
        }
        throw ValidationError(ValidationError::Code::bad_config,
                              "unknown task name '" + name + "'");
    }
};

namespace detail {

[[noreturn]] inline void config_error(const std::string& field, const std::string& what) {
    throw ValidationError(ValidationError::Code::bad_config,
                          "config field '" + field + "': " + what);
}

inline const nlohmann::json& require_key(const nlohmann::json& j, const std::string& key,
                                         const std::string& scope) {
    auto it = j.find(key);
    if (it == j.end()) config_error(scope + key, "missing");
    return *it;
}

inline double as_number(const nlohmann::json& v, const std::string& field) {
    if (!v.is_number()) config_error(field, "expected a number, got " + v.dump());
    return v.get<double>();
}

inline long as_integer(const nlohmann::json& v, const std::string& field) {
    if (!v.is_number_integer()) config_error(field, "expected an integer, got " + v.dump());
    return v.get<long>();
}

inline std::string as_string(const nlohmann::json& v, const std::string& field) {
    if (!v.is_string()) config_error(field, "expected a string, got " + v.dump());
    return v.get<std::string>();
}

inline bool as_bool(const nlohmann::json& v, const std::string& field) {
    if (!v.is_boolean()) config_error(field, "expected a boolean, got " + v.dump());
    return v.get<bool>();
}

inline const nlohmann::json& as_array(const nlohmann::json& v, const std::string& field) {
    if (!v.is_array()) config_error(field, "expected an array, got " + v.dump());
    return v;
}

inline void reject_unknown_keys(const nlohmann::json& j,
                                const std::set<std::string>& known,
                                const std::string& scope) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.count(it.key())) {
            config_error(scope + it.key(), "unknown key (check spelling)");
        }
    }
}

inline std::string resolve_path(const std::string& raw,
                                const std::filesystem::path& base_dir) {
    std::filesystem::path p(raw);
    if (p.is_absolute()) return p.lexically_normal().string();
    return (base_dir / p).lexically_normal().string();
}

}  // namespace detail

/// Parses an ExperimentConfig from JSON text. `base_dir` anchors relative
/// paths (pass the config file's parent directory). Performs full
/// validation; every failure names the offending field.
inline ExperimentConfig parse_config(const nlohmann::json& j,
                                     const std::filesystem::path& base_dir) {
    using detail::as_array;
    using detail::as_bool;
    using detail::as_integer;
    using detail::as_number;
    using detail::as_string;
    using detail::config_error;
    using detail::require_key;

    if (!j.is_object()) {
        throw ValidationError(ValidationError::Code::bad_config,
                              "config root must be a JSON object");
    }
    detail::reject_unknown_keys(
        j,
        {"format", "grid_file", "tasks", "target_tasks", "discount", "slip", "horizon",
         "n_source", "m_values", "lambdas", "seeds", "master_seed", "algorithms",
         "features", "fit", "meta", "output_dir"},
        "");
    if (as_string(require_key(j, "format", ""), "format") != "mtirl-config v1") {
        config_error("format", "expected \"mtirl-config v1\"");
    }

    ExperimentConfig cfg;
    cfg.grid_file =
        detail::resolve_path(as_string(require_key(j, "grid_file", ""), "grid_file"),
                             base_dir);

    const nlohmann::json& tasks = as_array(require_key(j, "tasks", ""), "tasks");
    if (tasks.empty()) config_error("tasks", "must list at least one task");
    for (size_t i = 0; i < tasks.size(); ++i) {
        const std::string scope = "tasks[" + std::to_string(i) + "].";
        const nlohmann::json& t = tasks[i];
        if (!t.is_object()) config_error("tasks[" + std::to_string(i) + "]", "expected an object");
        detail::reject_unknown_keys(t, {"name", "weights"}, scope);
        TaskConfig tc;
        tc.name = as_string(require_key(t, "name", scope), scope + "name");
        const nlohmann::json& w = require_key(t, "weights", scope);
        if (!w.is_object()) config_error(scope + "weights", "expected an object");
        detail::reject_unknown_keys(w, {"dirt", "grass", "lava", "gold", "silver"},
                                    scope + "weights.");
        tc.weights.dirt = as_number(require_key(w, "dirt", scope + "weights."), scope + "weights.dirt");
        tc.weights.grass = as_number(require_key(w, "grass", scope + "weights."), scope + "weights.grass");
        tc.weights.lava = as_number(require_key(w, "lava", scope + "weights."), scope + "weights.lava");
        tc.weights.gold = as_number(require_key(w, "gold", scope + "weights."), scope + "weights.gold");
        tc.weights.silver = as_number(require_key(w, "silver", scope + "weights."), scope + "weights.silver");
        for (const TaskConfig& prev : cfg.tasks) {
            if (prev.name == tc.name) config_error(scope + "name", "duplicate task name '" + tc.name + "'");
        }
        cfg.tasks.push_back(std::move(tc));
    }

    if (j.count("target_tasks")) {
        for (const nlohmann::json& v : as_array(j["target_tasks"], "target_tasks")) {
            cfg.target_tasks.push_back(as_string(v, "target_tasks[]"));
        }
    } else {
        for (const TaskConfig& t : cfg.tasks) cfg.target_tasks.push_back(t.name);
    }
    for (const std::string& name : cfg.target_tasks) {
        cfg.task(name);  // throws with a field-level message if unknown
    }

    if (j.count("discount")) cfg.discount = as_number(j["discount"], "discount");
    if (!(cfg.discount > 0.0 && cfg.discount < 1.0)) {
        config_error("discount", "must lie in (0, 1)");
    }
    if (j.count("slip")) cfg.slip = as_number(j["slip"], "slip");
    if (!(cfg.slip > 0.0 && cfg.slip <= 1.0)) config_error("slip", "must lie in (0, 1]");
    if (j.count("horizon")) cfg.horizon = static_cast<int>(as_integer(j["horizon"], "horizon"));
    if (cfg.horizon <= 0) config_error("horizon", "must be positive");
    if (j.count("n_source")) cfg.n_source = static_cast<int>(as_integer(j["n_source"], "n_source"));
    if (cfg.n_source <= 0) config_error("n_source", "must be positive");

    if (j.count("m_values")) {
        cfg.m_values.clear();
        for (const nlohmann::json& v : as_array(j["m_values"], "m_values")) {
            cfg.m_values.push_back(static_cast<int>(as_integer(v, "m_values[]")));
        }
    }
    if (cfg.m_values.empty()) config_error("m_values", "must be non-empty");
    for (int m : cfg.m_values) {
        if (m <= 0) config_error("m_values", "entries must be positive");
    }

    if (j.count("lambdas")) {
        cfg.lambdas.clear();
        for (const nlohmann::json& v : as_array(j["lambdas"], "lambdas")) {
            cfg.lambdas.push_back(as_number(v, "lambdas[]"));
        }
    }
    if (cfg.lambdas.empty()) config_error("lambdas", "must be non-empty");
    for (double l : cfg.lambdas) {
        if (l < 0.0) config_error("lambdas", "entries must be nonnegative");
    }

    if (j.count("seeds")) {
        cfg.seeds.clear();
        for (const nlohmann::json& v : as_array(j["seeds"], "seeds")) {
            long s = as_integer(v, "seeds[]");
            if (s < 0) config_error("seeds", "entries must be nonnegative");
            cfg.seeds.push_back(static_cast<std::uint64_t>(s));
        }
    }
    if (cfg.seeds.empty()) config_error("seeds", "must be non-empty");
    {
        std::set<std::uint64_t> uniq(cfg.seeds.begin(), cfg.seeds.end());
        if (uniq.size() != cfg.seeds.size()) config_error("seeds", "entries must be distinct");
    }

    if (j.count("master_seed")) {
        long s = as_integer(j["master_seed"], "master_seed");
        if (s < 0) config_error("master_seed", "must be nonnegative");
        cfg.master_seed = static_cast<std::uint64_t>(s);
    }

    if (j.count("algorithms")) {
        cfg.algorithms.clear();
        for (const nlohmann::json& v : as_array(j["algorithms"], "algorithms")) {
            cfg.algorithms.push_back(algorithm_from_string(as_string(v, "algorithms[]")));
        }
        if (cfg.algorithms.empty()) config_error("algorithms", "must be non-empty");
    }

    if (j.count("features")) {
        std::string f = as_string(j["features"], "features");
        if (f == "terrain") cfg.features = FeatureKind::terrain;
        else if (f == "one_hot_state") cfg.features = FeatureKind::one_hot_state;
        else config_error("features", "expected terrain|one_hot_state, got '" + f + "'");
    }

    if (j.count("fit")) {
        const nlohmann::json& f = j["fit"];
        if (!f.is_object()) config_error("fit", "expected an object");
        detail::reject_unknown_keys(f,
                                    {"learning_rate", "max_iterations", "gradient_tolerance",
                                     "planner_tolerance", "planner_max_iterations",
                                     "halve_on_decrease", "divergence_patience"},
                                    "fit.");
        if (f.count("learning_rate")) cfg.fit.learning_rate = as_number(f["learning_rate"], "fit.learning_rate");
        if (cfg.fit.learning_rate <= 0.0) config_error("fit.learning_rate", "must be positive");
        if (f.count("max_iterations")) cfg.fit.max_iterations = as_integer(f["max_iterations"], "fit.max_iterations");
        if (cfg.fit.max_iterations <= 0) config_error("fit.max_iterations", "must be positive");
        if (f.count("gradient_tolerance")) cfg.fit.gradient_tolerance = as_number(f["gradient_tolerance"], "fit.gradient_tolerance");
        if (cfg.fit.gradient_tolerance <= 0.0) config_error("fit.gradient_tolerance", "must be positive");
        if (f.count("planner_tolerance")) cfg.fit.planner_tolerance = as_number(f["planner_tolerance"], "fit.planner_tolerance");
        if (cfg.fit.planner_tolerance <= 0.0) config_error("fit.planner_tolerance", "must be positive");
        if (f.count("planner_max_iterations")) cfg.fit.planner_max_iterations = as_integer(f["planner_max_iterations"], "fit.planner_max_iterations");
        if (cfg.fit.planner_max_iterations <= 0) config_error("fit.planner_max_iterations", "must be positive");
        if (f.count("halve_on_decrease")) cfg.fit.halve_on_decrease = as_bool(f["halve_on_decrease"], "fit.halve_on_decrease");
        if (f.count("divergence_patience")) cfg.fit.divergence_patience = as_integer(f["divergence_patience"], "fit.divergence_patience");
        if (cfg.fit.divergence_patience <= 0) config_error("fit.divergence_patience", "must be positive");
    }

    if (j.count("meta")) {
        const nlohmann::json& m = j["meta"];
        if (!m.is_object()) config_error("meta", "expected an object");
        detail::reject_unknown_keys(m,
                                    {"family_size", "outer_iterations", "outer_lr",
                                     "inner_steps", "finetune_steps"},
                                    "meta.");
        if (m.count("family_size")) cfg.meta.family_size = static_cast<int>(as_integer(m["family_size"], "meta.family_size"));
        if (cfg.meta.family_size <= 0) config_error("meta.family_size", "must be positive");
        if (m.count("outer_iterations")) cfg.meta.outer_iterations = as_integer(m["outer_iterations"], "meta.outer_iterations");
        if (cfg.meta.outer_iterations <= 0) config_error("meta.outer_iterations", "must be positive");
        if (m.count("outer_lr")) cfg.meta.outer_lr = as_number(m["outer_lr"], "meta.outer_lr");
        if (cfg.meta.outer_lr < 0.0 || cfg.meta.outer_lr > 1.0) config_error("meta.outer_lr", "must lie in [0, 1]");
        if (m.count("inner_steps")) cfg.meta.inner_steps = as_integer(m["inner_steps"], "meta.inner_steps");
        if (cfg.meta.inner_steps <= 0) config_error("meta.inner_steps", "must be positive");
        if (m.count("finetune_steps")) cfg.meta.finetune_steps = as_integer(m["finetune_steps"], "meta.finetune_steps");
        if (cfg.meta.finetune_steps <= 0) config_error("meta.finetune_steps", "must be positive");
    }

    if (j.count("output_dir")) {
        cfg.output_dir = detail::resolve_path(as_string(j["output_dir"], "output_dir"), base_dir);
    } else {
        cfg.output_dir = detail::resolve_path("out", base_dir);
    }

    if (!std::filesystem::exists(cfg.grid_file)) {
        config_error("grid_file", "file does not exist: " + cfg.grid_file);
    }
    return cfg;
}

/// Loads and validates a config file from disk.
inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError(ValidationError::Code::bad_file,
                              "cannot open config file: " + path);
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(ValidationError::Code::bad_file,
                              std::string("malformed config file ") + path + ": " + e.what());
    }
    return parse_config(j, std::filesystem::path(path).parent_path());
}

/// Canonical JSON rendering of a parsed config (defaults filled in, paths
/// resolved). Used for the config hash recorded in result metadata.
inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["format"] = "mtirl-config v1";
    j["grid_file"] = cfg.grid_file;
    nlohmann::json tasks = nlohmann::json::array();
    for (const TaskConfig& t : cfg.tasks) {
        tasks.push_back({{"name", t.name},
                         {"weights",
                          {{"dirt", t.weights.dirt},
                           {"grass", t.weights.grass},
                           {"lava", t.weights.lava},
                           {"gold", t.weights.gold},
                           {"silver", t.weights.silver}}}});
    }
    j["tasks"] = tasks;
    j["target_tasks"] = cfg.target_tasks;
    j["discount"] = cfg.discount;
    j["slip"] = cfg.slip;
    j["horizon"] = cfg.horizon;
    j["n_source"] = cfg.n_source;
    j["m_values"] = cfg.m_values;
    j["lambdas"] = cfg.lambdas;
    j["seeds"] = cfg.seeds;
    j["master_seed"] = cfg.master_seed;
    nlohmann::json algos = nlohmann::json::array();
    for (Algorithm a : cfg.algorithms) algos.push_back(to_string(a));
    j["algorithms"] = algos;
    j["features"] = to_string(cfg.features);
    j["fit"] = {{"learning_rate", cfg.fit.learning_rate},
                {"max_iterations", cfg.fit.max_iterations},
                {"gradient_tolerance", cfg.fit.gradient_tolerance},
                {"planner_tolerance", cfg.fit.planner_tolerance},
                {"planner_max_iterations", cfg.fit.planner_max_iterations},
                {"halve_on_decrease", cfg.fit.halve_on_decrease},
                {"divergence_patience", cfg.fit.divergence_patience}};
    j["meta"] = {{"family_size", cfg.meta.family_size},
                 {"outer_iterations", cfg.meta.outer_iterations},
                 {"outer_lr", cfg.meta.outer_lr},
                 {"inner_steps", cfg.meta.inner_steps},
                 {"finetune_steps", cfg.meta.finetune_steps}};
    j["output_dir"] = cfg.output_dir;
    return j;
}

/// Stable 64-bit hash of the canonical config rendering, hex-encoded.
inline std::string config_hash(const ExperimentConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(config_to_json(cfg).dump())));
    return buf;
}

}  // namespace mtirl
