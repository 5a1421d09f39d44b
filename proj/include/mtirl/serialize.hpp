#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtirl/errors.hpp"
#include "mtirl/meta.hpp"

namespace mtirl {

/// A learned weight vector with its provenance: which task, which feature
/// map, the regularization and seed it was fit with, plus free-form fit
/// metadata (config hash, RNG identifier, software version, ...).
struct ThetaRecord {
    std::string task_label;
    std::string feature_kind;
    double lambda = 0.0;
    std::uint64_t seed = 0;
    Vec theta;
    std::map<std::string, std::string> metadata;
};

namespace detail {

inline nlohmann::json vec_to_json(const Vec& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (long i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

inline Vec vec_from_json(const nlohmann::json& arr) {
    Vec v(arr.size());
    for (size_t i = 0; i < arr.size(); ++i) v[static_cast<long>(i)] = arr[i].get<double>();
    return v;
}

inline nlohmann::json load_json_file(const std::string& path, const char* kind) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError(ValidationError::Code::bad_file,
                              std::string("cannot open ") + kind + " file: " + path);
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(ValidationError::Code::bad_file,
                              std::string("malformed ") + kind + " file " + path + ": " +
                                  e.what());
    }
    return j;
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ValidationError(ValidationError::Code::bad_file,
                              "cannot open for writing: " + path);
    }
    out << j.dump(2) << "\n";
}

}  // namespace detail

inline void save_theta(const std::string& path, const ThetaRecord& record) {
    nlohmann::json j;
    j["format"] = "mtirl-theta v1";
    j["task_label"] = record.task_label;
    j["feature_kind"] = record.feature_kind;
    j["lambda"] = record.lambda;
    j["seed"] = record.seed;
    j["theta"] = detail::vec_to_json(record.theta);
    j["metadata"] = record.metadata;
    detail::write_json_file(path, j);
}

inline ThetaRecord load_theta(const std::string& path) {
    nlohmann::json j = detail::load_json_file(path, "theta");
    if (j.value("format", "") != "mtirl-theta v1") {
        throw ValidationError(ValidationError::Code::bad_file,
                              "not a mtirl-theta v1 file: " + path);
    }
    ThetaRecord record;
    try {
        record.task_label = j.at("task_label").get<std::string>();
        record.feature_kind = j.at("feature_kind").get<std::string>();
        record.lambda = j.at("lambda").get<double>();
        record.seed = j.at("seed").get<std::uint64_t>();
        record.theta = detail::vec_from_json(j.at("theta"));
        record.metadata = j.value("metadata", std::map<std::string, std::string>{});
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(ValidationError::Code::bad_file,
                              "malformed theta file " + path + ": " + e.what());
    }
    return record;
}

inline void save_meta_state(const std::string& path, const MetaState& state,
                            const std::map<std::string, std::string>& metadata = {}) {
    nlohmann::json j;
    j["format"] = "mtirl-meta v1";
    j["phi"] = detail::vec_to_json(state.phi);
    j["outer_lr"] = state.outer_lr;
    j["inner_steps"] = state.inner_steps;
    nlohmann::json history = nlohmann::json::array();
    for (const MetaState::OuterRecord& rec : state.history) {
        history.push_back({{"task_index", rec.task_index},
                           {"theta_start", detail::vec_to_json(rec.theta_start)},
                           {"theta_end", detail::vec_to_json(rec.theta_end)}});
    }
    j["history"] = history;
    j["metadata"] = metadata;
    detail::write_json_file(path, j);
}

inline MetaState load_meta_state(const std::string& path) {
    nlohmann::json j = detail::load_json_file(path, "meta-state");
    if (j.value("format", "") != "mtirl-meta v1") {
        throw ValidationError(ValidationError::Code::bad_file,
                              "not a mtirl-meta v1 file: " + path);
    }
    MetaState state;
    try {
        state.phi = detail::vec_from_json(j.at("phi"));
        state.outer_lr = j.at("outer_lr").get<double>();
        state.inner_steps = j.at("inner_steps").get<long>();
        for (const nlohmann::json& rec : j.at("history")) {
            state.history.push_back(MetaState::OuterRecord{
                rec.at("task_index").get<int>(),
                detail::vec_from_json(rec.at("theta_start")),
                detail::vec_from_json(rec.at("theta_end"))});
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(ValidationError::Code::bad_file,
                              "malformed meta-state file " + path + ": " + e.what());
    }
    return state;
}

}  // namespace mtirl
