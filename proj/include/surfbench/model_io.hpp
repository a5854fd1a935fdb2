// Versioned JSON (de)serialization for PipelineModel. nlohmann::json emits
// shortest-roundtrip doubles, so save -> load reproduces every coefficient
// bit for bit.
#pragma once

#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

#include "surfbench/pipeline.hpp"

namespace surfbench {

constexpr const char* kModelFormat = "surfbench-model";
constexpr int kModelVersion = 1;

namespace detail {

using ordered_json = nlohmann::ordered_json;

inline ordered_json matrix_to_json(const Eigen::MatrixXd& m) {
    ordered_json rows = ordered_json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        ordered_json row = ordered_json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline ordered_json vector_to_json(const Eigen::VectorXd& v) {
    ordered_json arr = ordered_json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

inline Eigen::MatrixXd matrix_from_json(const ordered_json& j, const char* name) {
    if (!j.is_array() || j.empty() || !j[0].is_array())
        throw IncompatibleModel(std::string("field '") + name + "' is not a 2-d array");
    const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
    const Eigen::Index cols = static_cast<Eigen::Index>(j[0].size());
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        if (static_cast<Eigen::Index>(j[i].size()) != cols)
            throw IncompatibleModel(std::string("ragged rows in field '") + name + "'");
        for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = j[i][k].get<double>();
    }
    return m;
}

inline Eigen::VectorXd vector_from_json(const ordered_json& j, const char* name) {
    if (!j.is_array())
        throw IncompatibleModel(std::string("field '") + name + "' is not an array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j[i].get<double>();
    return v;
}

inline const ordered_json& require(const ordered_json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end())
        throw IncompatibleModel(std::string("missing field '") + key + "'");
    return *it;
}

inline ordered_json gru_to_json(const GruWeights& g) {
    ordered_json j;
    j["w_z"] = matrix_to_json(g.w_z);
    j["u_z"] = matrix_to_json(g.u_z);
    j["b_z"] = vector_to_json(g.b_z);
    j["w_r"] = matrix_to_json(g.w_r);
    j["u_r"] = matrix_to_json(g.u_r);
    j["b_r"] = vector_to_json(g.b_r);
    j["w_h"] = matrix_to_json(g.w_h);
    j["u_h"] = matrix_to_json(g.u_h);
    j["b_h"] = vector_to_json(g.b_h);
    return j;
}

inline GruWeights gru_from_json(const ordered_json& j) {
    GruWeights g;
    g.w_z = matrix_from_json(require(j, "w_z"), "w_z");
    g.u_z = matrix_from_json(require(j, "u_z"), "u_z");
    g.b_z = vector_from_json(require(j, "b_z"), "b_z");
    g.w_r = matrix_from_json(require(j, "w_r"), "w_r");
    g.u_r = matrix_from_json(require(j, "u_r"), "u_r");
    g.b_r = vector_from_json(require(j, "b_r"), "b_r");
    g.w_h = matrix_from_json(require(j, "w_h"), "w_h");
    g.u_h = matrix_from_json(require(j, "u_h"), "u_h");
    g.b_h = vector_from_json(require(j, "b_h"), "b_h");
    return g;
}

}  // namespace detail

inline nlohmann::ordered_json model_to_json(const PipelineModel& m) {
    using detail::matrix_to_json;
    using detail::vector_to_json;
    nlohmann::ordered_json j;
    j["format"] = kModelFormat;
    j["version"] = kModelVersion;
    j["window"] = m.window;
    j["class_names"] = m.class_names;
    j["scaler"] = {{"mean", vector_to_json(m.scaler.mean)},
                   {"std", vector_to_json(m.scaler.std)}};
    j["pca"] = {{"mean", vector_to_json(m.pca.mean)},
                {"components", matrix_to_json(m.pca.components)},
                {"eigenvalues", vector_to_json(m.pca.eigenvalues)}};
    j["gru_fwd"] = detail::gru_to_json(m.fwd);
    j["gru_bwd"] = detail::gru_to_json(m.bwd);
    j["head"] = {{"w", matrix_to_json(m.head_w)}, {"b", vector_to_json(m.head_b)}};
    return j;
}

inline PipelineModel model_from_json(const nlohmann::ordered_json& j) {
    using detail::require;
    if (!j.is_object() || require(j, "format").get<std::string>() != kModelFormat)
        throw IncompatibleModel("not a surfbench model file");
    const int version = require(j, "version").get<int>();
    if (version != kModelVersion)
        throw IncompatibleModel("unsupported model version " + std::to_string(version));
    PipelineModel m;
    m.window = require(j, "window").get<int>();
    m.class_names = require(j, "class_names").get<std::vector<std::string>>();
    const auto& scaler = require(j, "scaler");
    m.scaler.mean = detail::vector_from_json(require(scaler, "mean"), "scaler.mean");
    m.scaler.std = detail::vector_from_json(require(scaler, "std"), "scaler.std");
    const auto& pca = require(j, "pca");
    m.pca.mean = detail::vector_from_json(require(pca, "mean"), "pca.mean");
    m.pca.components =
        detail::matrix_from_json(require(pca, "components"), "pca.components");
    m.pca.eigenvalues =
        detail::vector_from_json(require(pca, "eigenvalues"), "pca.eigenvalues");
    m.fwd = detail::gru_from_json(require(j, "gru_fwd"));
    m.bwd = detail::gru_from_json(require(j, "gru_bwd"));
    const auto& head = require(j, "head");
    m.head_w = detail::matrix_from_json(require(head, "w"), "head.w");
    m.head_b = detail::vector_from_json(require(head, "b"), "head.b");
    m.validate();
    return m;
}

inline void save_model(const PipelineModel& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot open '" + path + "' for writing");
    out << model_to_json(m).dump(2) << '\n';
    if (!out.good()) throw RuntimeError("failed writing model to '" + path + "'");
}

inline PipelineModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open model file '" + path + "'");
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("model file is not valid JSON: ") + e.what());
    }
    return model_from_json(j);
}

}  // namespace surfbench
