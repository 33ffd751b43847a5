#pragma once

#include "robllc/llc.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

// File formats. Matrices are stored as row-major flat arrays, node indices in
// files are 1-based, and floating-point values are written with 17 significant
// digits so a rerun with the same seed reproduces files byte for byte.

namespace robllc {
namespace detail {

inline std::vector<double> flatten(const Matrix& m) {
    std::vector<double> flat;
    flat.reserve(m.size());
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
    return flat;
}

inline Matrix unflatten(const std::vector<double>& flat, int d, const char* what) {
    if (static_cast<int>(flat.size()) != d * d)
        throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(d * d) +
                                    " entries, got " + std::to_string(flat.size()));
    Matrix m(d, d);
    for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c) m(r, c) = flat[r * d + c];
    return m;
}

inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline nlohmann::json model_to_json(const CausalModel& model) {
    return {{"d", model.d},
            {"B", detail::flatten(model.B)},
            {"SigmaE", detail::flatten(model.sigma_e)}};
}

inline CausalModel model_from_json(const nlohmann::json& j) {
    CausalModel model;
    model.d = j.at("d").get<int>();
    if (model.d < 1) throw std::invalid_argument("model: d must be positive");
    model.B = detail::unflatten(j.at("B").get<std::vector<double>>(), model.d, "model B");
    model.sigma_e =
        detail::unflatten(j.at("SigmaE").get<std::vector<double>>(), model.d, "model SigmaE");
    const auto report = validate_model(model);
    if (!report.ok()) throw std::invalid_argument("invalid model: " + report.violations.front());
    return model;
}

inline nlohmann::json design_to_json(const ExperimentDesign& design) {
    nlohmann::json experiments = nlohmann::json::array();
    for (const auto& exp : design.experiments) {
        nlohmann::json nodes = nlohmann::json::array();
        for (int i : exp.intervened) nodes.push_back(i + 1);
        experiments.push_back(nodes);
    }
    return {{"experiments", experiments}};
}

inline ExperimentDesign design_from_json(const nlohmann::json& j, int d) {
    ExperimentDesign design;
    for (const auto& nodes : j.at("experiments")) {
        std::vector<int> intervened;
        for (const auto& node : nodes) {
            const int one_based = node.get<int>();
            if (one_based < 1 || one_based > d)
                throw std::invalid_argument("design: node index " + std::to_string(one_based) +
                                            " outside 1.." + std::to_string(d));
            intervened.push_back(one_based - 1);
        }
        design.experiments.push_back(intervened.empty()
                                         ? Experiment::observational(d)
                                         : Experiment::intervene(intervened, d));
    }
    return design;
}

inline nlohmann::json estimate_to_json(const LlcEstimate& est) {
    const int d = static_cast<int>(est.b_hat.rows());
    nlohmann::json j = {{"d", d},
                        {"B", detail::flatten(est.b_hat)},
                        {"SigmaE", detail::flatten(est.sigma_e_hat)}};
    j["diagnostics"] = {{"block_condition", est.diagnostics.block_condition},
                        {"ill_conditioned", est.diagnostics.ill_conditioned},
                        {"residual_norm", est.diagnostics.residual_norm},
                        {"solver", est.diagnostics.solver},
                        {"lambda", est.diagnostics.lambda}};
    return j;
}

inline void write_json_file(const nlohmann::json& j, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return nlohmann::json::parse(in);
}

/// CSV with header x1,...,xd and one row per observation.
inline void write_matrix_csv(const Matrix& data, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (int c = 0; c < data.cols(); ++c) out << (c ? ",x" : "x") << c + 1;
    out << '\n';
    for (int r = 0; r < data.rows(); ++r) {
        for (int c = 0; c < data.cols(); ++c) {
            if (c) out << ',';
            out << detail::fmt17(data(r, c));
        }
        out << '\n';
    }
}

inline Matrix read_matrix_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty file " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    int d = 0;
    {
        std::stringstream header(line);
        std::string cell;
        while (std::getline(header, cell, ',')) {
            ++d;
            if (cell != "x" + std::to_string(d))
                throw std::runtime_error("unexpected column name '" + cell + "' in " +
                                         path.string());
        }
    }
    if (d == 0) throw std::runtime_error("no columns in " + path.string());

    std::vector<double> values;
    int rows = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        int cols = 0;
        while (std::getline(ss, cell, ',')) {
            values.push_back(std::stod(cell));
            ++cols;
        }
        if (cols != d)
            throw std::runtime_error("row " + std::to_string(rows + 1) + " of " + path.string() +
                                     " has " + std::to_string(cols) + " cells, expected " +
                                     std::to_string(d));
        ++rows;
    }
    Matrix data(rows, d);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < d; ++c) data(r, c) = values[r * d + c];
    return data;
}

}  // namespace robllc
