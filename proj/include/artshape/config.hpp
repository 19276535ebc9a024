#pragma once

// Run configuration. Every knob of the pipeline lives here so a single
// config.json (plus the seed) reproduces a run.

#include "artshape/errors.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace artshape {

struct StageSpec {
    std::string name; // "camera", "shared" or "instance"
    int steps = 0;
    double learning_rate = 0.0;
};

struct EnsembleConfig {
    int n_instances = 1;
    std::optional<int> reference_index;
    int image_height = 128;
    int image_width = 128;
    double alpha_sem = 0.05;
    std::map<std::string, double> loss_weights = {{"sil", 1.0},  {"part", 0.5}, {"sem", 0.5}, {"rot", 0.1},
                                                  {"sym", 0.1},  {"lap", 0.05}, {"norm", 0.05}};
    std::vector<double> pe_frequencies = {1, 2, 4, 8, 16, 32, 64};
    std::vector<StageSpec> stage_schedule = {{"camera", 500, 1e-2}, {"shared", 1000, 5e-3}, {"instance", 500, 2e-3}};

    // Part networks.
    int hidden_width = 64;
    int shared_depth = 4;
    int template_level = 3;
    int export_level = 4;
    int feature_width = 64;
    double feature_frequency = 2.0;

    // Skeleton discovery.
    double sym_lambda = 1.0;
    double sym_tau = 0.5;

    // Rendering.
    double sigma_pixels = 1.0;
    double sigma_anneal = 0.5;
    double zoom_factor = 4.0;
    double focal = 2.0;
    double camera_distance = 2.0;
    double visibility_eps = 0.02;
    bool weak_perspective_camera_stage = true;

    // Semantic loss sampling.
    int n_sem = 1024;
    int m_sem = 128;
    bool sym_on_posed = false;

    // Camera search.
    int azimuth_bins = 12;
    std::vector<double> elevations_deg = {-15.0, 0.0, 15.0};

    // EM feature updates.
    int em_period = 50;
    int em_inner_steps = 100;
    double em_learning_rate = 1e-2;

    // Stage control.
    int convergence_window = 50;
    double convergence_tol = 1e-4;
    double divergence_factor = 10.0;

    std::uint64_t seed = 0;

    [[nodiscard]] int layers() const { return static_cast<int>(pe_frequencies.size()) - 1; }

    [[nodiscard]] double weight(const std::string& name) const
    {
        auto it = loss_weights.find(name);
        return it == loss_weights.end() ? 0.0 : it->second;
    }

    void validate() const
    {
        if (n_instances < 1) {
            throw ValidationError("config: n_instances must be >= 1");
        }
        if (reference_index && (*reference_index < 0 || *reference_index >= n_instances)) {
            throw ValidationError("config: reference_index out of range");
        }
        if (image_height <= 0 || image_width <= 0) {
            throw ValidationError("config: image_size must be positive");
        }
        if (!(alpha_sem >= 0)) {
            throw ValidationError("config: alpha_sem must be non-negative");
        }
        static const std::set<std::string> known = {"sil", "part", "sem", "rot", "sym", "lap", "norm"};
        for (const auto& [k, v] : loss_weights) {
            if (!known.count(k)) {
                throw ValidationError("config: unknown loss weight '" + k + "'");
            }
            if (!(v >= 0)) {
                throw ValidationError("config: loss weight '" + k + "' must be non-negative");
            }
        }
        if (pe_frequencies.size() < 2) {
            throw ValidationError("config: pe_frequencies needs at least two entries");
        }
        for (std::size_t i = 0; i < pe_frequencies.size(); ++i) {
            if (!(pe_frequencies[i] > 0)) {
                throw ValidationError("config: pe_frequencies must be positive");
            }
            if (i > 0 && !(pe_frequencies[i] > pe_frequencies[i - 1])) {
                throw ValidationError("config: pe_frequencies must be strictly increasing");
            }
        }
        if (shared_depth < 1 || shared_depth > layers()) {
            throw ValidationError("config: shared_depth must lie in [1, L]");
        }
        static const std::set<std::string> stages = {"camera", "shared", "instance"};
        for (const StageSpec& s : stage_schedule) {
            if (!stages.count(s.name)) {
                throw ValidationError("config: unknown stage '" + s.name + "'");
            }
            if (s.steps < 0 || !(s.learning_rate > 0)) {
                throw ValidationError("config: stage '" + s.name + "' needs steps >= 0 and learning rate > 0");
            }
        }
        if (hidden_width < 1 || feature_width < 1 || template_level < 0 || export_level < 0) {
            throw ValidationError("config: network widths and template levels must be positive");
        }
        if (!(sigma_pixels > 0) || !(sigma_anneal > 0) || !(zoom_factor >= 1) || !(focal > 0) ||
            !(camera_distance > 0)) {
            throw ValidationError("config: renderer settings out of range");
        }
        if (n_sem < 1 || m_sem < 1 || azimuth_bins < 1 || elevations_deg.empty()) {
            throw ValidationError("config: sampling counts must be positive");
        }
        if (em_period < 1 || em_inner_steps < 0 || convergence_window < 1) {
            throw ValidationError("config: EM period / convergence window must be positive");
        }
    }
};

inline nlohmann::json to_json(const EnsembleConfig& c)
{
    nlohmann::json j;
    j["n_instances"] = c.n_instances;
    j["reference_index"] = c.reference_index ? nlohmann::json(*c.reference_index) : nlohmann::json(nullptr);
    j["image_size"] = {c.image_height, c.image_width};
    j["alpha_sem"] = c.alpha_sem;
    j["loss_weights"] = c.loss_weights;
    j["pe_frequencies"] = c.pe_frequencies;
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : c.stage_schedule) {
        stages.push_back({s.name, s.steps, s.learning_rate});
    }
    j["stage_schedule"] = stages;
    j["hidden_width"] = c.hidden_width;
    j["shared_depth"] = c.shared_depth;
    j["template_level"] = c.template_level;
    j["export_level"] = c.export_level;
    j["feature_width"] = c.feature_width;
    j["feature_frequency"] = c.feature_frequency;
    j["sym_lambda"] = c.sym_lambda;
    j["sym_tau"] = c.sym_tau;
    j["sigma_pixels"] = c.sigma_pixels;
    j["sigma_anneal"] = c.sigma_anneal;
    j["zoom_factor"] = c.zoom_factor;
    j["focal"] = c.focal;
    j["camera_distance"] = c.camera_distance;
    j["visibility_eps"] = c.visibility_eps;
    j["weak_perspective_camera_stage"] = c.weak_perspective_camera_stage;
    j["n_sem"] = c.n_sem;
    j["m_sem"] = c.m_sem;
    j["sym_on_posed"] = c.sym_on_posed;
    j["azimuth_bins"] = c.azimuth_bins;
    j["elevations_deg"] = c.elevations_deg;
    j["em_period"] = c.em_period;
    j["em_inner_steps"] = c.em_inner_steps;
    j["em_learning_rate"] = c.em_learning_rate;
    j["convergence_window"] = c.convergence_window;
    j["convergence_tol"] = c.convergence_tol;
    j["divergence_factor"] = c.divergence_factor;
    j["seed"] = c.seed;
    return j;
}

// Parses a config object. Keys not listed in to_json() are rejected; absent
// keys keep their defaults.
inline EnsembleConfig config_from_json(const nlohmann::json& j)
{
    if (!j.is_object()) {
        throw ValidationError("config: expected a JSON object");
    }
    const nlohmann::json reference = to_json(EnsembleConfig{});
    for (const auto& [key, value] : j.items()) {
        if (!reference.contains(key)) {
            throw ValidationError("config: unknown key '" + key + "'");
        }
    }
    EnsembleConfig c;
    try {
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) {
                j.at(key).get_to(field);
            }
        };
        get("n_instances", c.n_instances);
        if (j.contains("reference_index") && !j.at("reference_index").is_null()) {
            c.reference_index = j.at("reference_index").get<int>();
        }
        if (j.contains("image_size")) {
            const auto& s = j.at("image_size");
            if (!s.is_array() || s.size() != 2) {
                throw ValidationError("config: image_size must be [h, w]");
            }
            c.image_height = s[0].get<int>();
            c.image_width = s[1].get<int>();
        }
        get("alpha_sem", c.alpha_sem);
        if (j.contains("loss_weights")) {
            for (const auto& [k, v] : j.at("loss_weights").items()) {
                c.loss_weights[k] = v.get<double>();
            }
        }
        get("pe_frequencies", c.pe_frequencies);
        if (j.contains("stage_schedule")) {
            c.stage_schedule.clear();
            for (const auto& s : j.at("stage_schedule")) {
                if (!s.is_array() || s.size() != 3) {
                    throw ValidationError("config: stage_schedule entries must be [name, steps, lr]");
                }
                c.stage_schedule.push_back({s[0].get<std::string>(), s[1].get<int>(), s[2].get<double>()});
            }
        }
        get("hidden_width", c.hidden_width);
        get("shared_depth", c.shared_depth);
        get("template_level", c.template_level);
        get("export_level", c.export_level);
        get("feature_width", c.feature_width);
        get("feature_frequency", c.feature_frequency);
        get("sym_lambda", c.sym_lambda);
        get("sym_tau", c.sym_tau);
        get("sigma_pixels", c.sigma_pixels);
        get("sigma_anneal", c.sigma_anneal);
        get("zoom_factor", c.zoom_factor);
        get("focal", c.focal);
        get("camera_distance", c.camera_distance);
        get("visibility_eps", c.visibility_eps);
        get("weak_perspective_camera_stage", c.weak_perspective_camera_stage);
        get("n_sem", c.n_sem);
        get("m_sem", c.m_sem);
        get("sym_on_posed", c.sym_on_posed);
        get("azimuth_bins", c.azimuth_bins);
        get("elevations_deg", c.elevations_deg);
        get("em_period", c.em_period);
        get("em_inner_steps", c.em_inner_steps);
        get("em_learning_rate", c.em_learning_rate);
        get("convergence_window", c.convergence_window);
        get("convergence_tol", c.convergence_tol);
        get("divergence_factor", c.divergence_factor);
        get("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

inline EnsembleConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("config " + path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

} // namespace artshape
