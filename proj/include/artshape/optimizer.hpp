#pragma once

// Staged optimization of an ensemble model.
//
//   camera    per-instance viewpoint grid search, then Adam on cam/* only
//   shared    cam/*, pose/*, rest/*, mlp/* (shallow layers) on the summed loss
//   instance  inst/* (deep layers), cam/*, pose/*
//
// Feature networks Q are refit every em_period steps (E-step: project visible
// surface samples and gather pixel descriptors; M-step: regress Q onto the
// per-sample mean descriptor). Instances are evaluated on separate tapes and
// their gradients reduced in index order, so results do not depend on the
// thread count.

#include "artshape/config.hpp"
#include "artshape/errors.hpp"
#include "artshape/ingest.hpp"
#include "artshape/log.hpp"
#include "artshape/losses.hpp"
#include "artshape/model.hpp"
#include "artshape/parallel.hpp"
#include "artshape/render.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <cstring>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace artshape {

// ---------------------------------------------------------------------------
// Adam.

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double learning_rate = 1e-3;
    long step = 0;
    int skipped = 0;
    std::map<std::string, Matrix> m, v;
};

// One bias-corrected update of every parameter that has a gradient. A
// non-finite gradient skips the whole step.
inline bool adam_step(AdamState& s, ParameterStore& params, const ParameterStore& grads)
{
    for (const auto& [k, g] : grads) {
        if (!g.allFinite()) {
            ++s.skipped;
            log::warn("adam: non-finite gradient for '" + k + "', step skipped (" + std::to_string(s.skipped) +
                      " so far)");
            return false;
        }
    }
    ++s.step;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    for (const auto& [k, g] : grads) {
        Matrix& p = params.at(k);
        auto [mit, fresh] = s.m.try_emplace(k, Matrix::Zero(g.rows(), g.cols()));
        auto vit = s.v.try_emplace(k, Matrix::Zero(g.rows(), g.cols())).first;
        Matrix& m1 = mit->second;
        Matrix& m2 = vit->second;
        m1 = s.beta1 * m1 + (1.0 - s.beta1) * g;
        m2 = s.beta2 * m2 + (1.0 - s.beta2) * g.cwiseProduct(g);
        p.array() -= s.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + s.eps);
    }
    return true;
}

// ---------------------------------------------------------------------------
// Stage parameter sets.

inline bool starts_with(const std::string& s, const char* prefix)
{
    return s.rfind(prefix, 0) == 0;
}

inline std::function<bool(const std::string&)> stage_trainable(const std::string& stage)
{
    if (stage == "camera") {
        return [](const std::string& k) { return starts_with(k, "cam/"); };
    }
    if (stage == "shared") {
        return [](const std::string& k) {
            return starts_with(k, "cam/") || starts_with(k, "pose/") || starts_with(k, "rest/") ||
                   starts_with(k, "mlp/");
        };
    }
    if (stage == "instance") {
        return [](const std::string& k) {
            return starts_with(k, "inst/") || starts_with(k, "cam/") || starts_with(k, "pose/");
        };
    }
    throw ValidationError("unknown stage '" + stage + "'");
}

// FNV-1a over names and raw bytes of the selected entries.
inline std::uint64_t hash_parameters(const ParameterStore& params, const std::function<bool(const std::string&)>& pick)
{
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& [k, v] : params) {
        if (!pick(k)) {
            continue;
        }
        mix(k.data(), k.size());
        const Eigen::Index dims[2] = {v.rows(), v.cols()};
        mix(dims, sizeof dims);
        mix(v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
    }
    return h;
}

// ---------------------------------------------------------------------------
// Per-instance targets.

struct InstanceData {
    Grid target; // 0/1 pseudo mask
    Eigen::Matrix2Xd sem_pixels;   // normalized to [0, 1] by max(h, w)
    Eigen::MatrixXd sem_features;  // d x N unit descriptors
    Eigen::MatrixXd feature_cost;  // N x (parts * m_sem), refreshed by EM
    double area = 0;
    Vec2 centroid = Vec2::Zero(); // pixels
};

inline InstanceData make_instance_data(const InstanceRecord& r, int n_sem, std::mt19937_64& rng)
{
    InstanceData d;
    const int h = r.height();
    const int w = r.width();
    const double s = std::max(h, w);
    d.target = r.pseudo_mask.cast<double>();
    std::vector<std::pair<int, int>> fg;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (r.pseudo_mask(y, x) != 0) {
                fg.emplace_back(x, y);
                d.centroid += Vec2(x + 0.5, y + 0.5);
            }
        }
    }
    d.area = static_cast<double>(fg.size());
    if (!fg.empty()) {
        d.centroid /= d.area;
    }
    const std::vector<int> pick = stratified_sample(static_cast<int>(fg.size()), n_sem, rng);
    d.sem_pixels.resize(2, static_cast<Eigen::Index>(pick.size()));
    d.sem_features.resize(r.feature_map.dim, static_cast<Eigen::Index>(pick.size()));
    for (std::size_t k = 0; k < pick.size(); ++k) {
        const auto [x, y] = fg[static_cast<std::size_t>(pick[k])];
        d.sem_pixels.col(static_cast<Eigen::Index>(k)) = Vec2((x + 0.5) / s, (y + 0.5) / s);
        d.sem_features.col(static_cast<Eigen::Index>(k)) = r.feature_map.at(y, x);
    }
    return d;
}

inline std::pair<double, Vec2> mass_and_centroid(const Grid& g)
{
    double a = 0;
    Vec2 c = Vec2::Zero();
    for (Eigen::Index y = 0; y < g.rows(); ++y) {
        for (Eigen::Index x = 0; x < g.cols(); ++x) {
            a += g(y, x);
            c += g(y, x) * Vec2(x + 0.5, y + 0.5);
        }
    }
    return {a, a > 0 ? Vec2(c / a) : Vec2(Vec2::Zero())};
}

// Plain evaluation of one instance's geometry, for stages where it is not
// trained.
struct FrozenInstance {
    std::vector<Points3> vertices;
    std::vector<Points3> canonical;
    std::vector<Mat3> rotations;
    std::vector<Mat3> rest;
    Points3 rest_joints;
};

inline FrozenInstance freeze_instance(const EnsembleModel& m, int j)
{
    FrozenInstance f;
    f.vertices = instance_surfaces(m, j);
    for (int i = 0; i < m.n_parts(); ++i) {
        f.canonical.push_back(canonical_points(m, i, j, m.templ.X));
    }
    f.rotations = pose_skeleton(m, j).rotations;
    f.rest = rest_rotations(m);
    f.rest_joints = pose_skeleton(m, -1).joints;
    return f;
}

using StepCallback = std::function<void(const std::string& stage, int step, const LossBreakdown&)>;

struct StageReport {
    std::string name;
    int steps_run = 0;
    bool converged = false;
    LossBreakdown initial;
    LossBreakdown final;
    double seconds = 0;
};

class EnsembleOptimizer {
public:
    EnsembleOptimizer(EnsembleModel& model, const std::vector<InstanceRecord>& records, EnsembleConfig config,
                      int reference, int threads = 1)
        : model_(model), records_(records), config_(std::move(config)), reference_(reference),
          threads_(std::max(1, threads)), size_{records.front().height(), records.front().width()}
    {
        if (static_cast<int>(records.size()) != model.n_instances) {
            throw ValidationError("optimizer: model and ensemble disagree on the instance count");
        }
        std::mt19937_64 rng(config_.seed ^ 0x5eedULL);
        sem_points_ = stratified_sample(model_.templ.size(), config_.m_sem, rng);
        for (const InstanceRecord& r : records) {
            data_.push_back(make_instance_data(r, config_.n_sem, rng));
            if (data_.back().area == 0) {
                log::warn("instance " + std::to_string(data_.size() - 1) +
                          " has an empty mask; its semantic term is skipped");
            }
        }
        refresh_feature_costs();
    }

    [[nodiscard]] const std::vector<InstanceData>& data() const { return data_; }
    [[nodiscard]] ImageSize image_size() const { return size_; }
    [[nodiscard]] const std::vector<int>& sem_points() const { return sem_points_; }
    [[nodiscard]] int reference() const { return reference_; }

    // Features Q at the semantic sample points of every part: d x (b * m).
    [[nodiscard]] Matrix point_features() const
    {
        const int b = model_.n_parts();
        const auto m = static_cast<Eigen::Index>(sem_points_.size());
        Points3 X(3, m);
        for (Eigen::Index k = 0; k < m; ++k) {
            X.col(k) = model_.templ.X.col(sem_points_[static_cast<std::size_t>(k)]);
        }
        Matrix out(model_.features.front().dim(), b * m);
        for (int i = 0; i < b; ++i) {
            out.middleCols(i * m, m) = query_feature(model_.features[i], X);
        }
        return out;
    }

    void refresh_feature_costs()
    {
        const Matrix q = point_features();
        for (InstanceData& d : data_) {
            d.feature_cost = feature_cost(d.sem_features, q, config_.alpha_sem);
        }
    }

    // E-step over `instances`, then M-step regression of every part's Q.
    // Returns the number of (part, sample) targets per part.
    std::vector<int> em_update(const std::vector<int>& instances)
    {
        const int b = model_.n_parts();
        const int m = model_.templ.size();
        const int dim = model_.features.front().dim();
        std::vector<Matrix> sums(static_cast<std::size_t>(b), Matrix::Zero(dim, m));
        std::vector<std::vector<int>> counts(static_cast<std::size_t>(b), std::vector<int>(m, 0));
        for (int j : instances) {
            const std::vector<Points3> surf = instance_surfaces(model_, j);
            const CameraPose cam = model_.camera(j);
            std::vector<Projection> prs;
            for (const Points3& v : surf) {
                prs.push_back(project(cam, v, size_));
            }
            const DepthBuffer depth = z_buffer(prs, model_.templ.faces, size_);
            const InstanceRecord& r = records_[static_cast<std::size_t>(j)];
            for (int i = 0; i < b; ++i) {
                const std::vector<bool> vis = visibility(prs[i], depth, config_.visibility_eps, size_);
                for (int k = 0; k < m; ++k) {
                    if (!vis[static_cast<std::size_t>(k)]) {
                        continue;
                    }
                    const int x = static_cast<int>(prs[i].pixels(0, k));
                    const int y = static_cast<int>(prs[i].pixels(1, k));
                    if (r.pseudo_mask(y, x) == 0) {
                        continue;
                    }
                    sums[i].col(k) += r.feature_map.at(y, x);
                    ++counts[i][k];
                }
            }
        }
        std::vector<int> used(static_cast<std::size_t>(b), 0);
        parallel_for(b, threads_, [&](int i) {
            std::vector<int> cols;
            for (int k = 0; k < m; ++k) {
                if (counts[i][k] > 0 && sums[i].col(k).norm() > 0) {
                    cols.push_back(k);
                }
            }
            used[static_cast<std::size_t>(i)] = static_cast<int>(cols.size());
            if (cols.empty()) {
                return;
            }
            Points3 X(3, static_cast<Eigen::Index>(cols.size()));
            Matrix targets(dim, static_cast<Eigen::Index>(cols.size()));
            for (std::size_t c = 0; c < cols.size(); ++c) {
                X.col(static_cast<Eigen::Index>(c)) = model_.templ.X.col(cols[c]);
                targets.col(static_cast<Eigen::Index>(c)) = sums[i].col(cols[c]).normalized();
            }
            fit_feature_mlp(model_.features[i], X, targets, config_.em_inner_steps, config_.em_learning_rate);
        });
        refresh_feature_costs();
        return used;
    }

    // Loss (and optionally gradients of trainable entries) over `instances`.
    LossBreakdown evaluate(const std::vector<int>& instances, const std::function<bool(const std::string&)>& trainable,
                           double sigma, bool weak, ParameterStore* grads,
                           const std::vector<FrozenInstance>* frozen = nullptr)
    {
        const int n = static_cast<int>(instances.size());
        std::vector<std::unique_ptr<Graph>> graphs(static_cast<std::size_t>(n));
        parallel_for(n, threads_, [&](int idx) {
            graphs[static_cast<std::size_t>(idx)] =
                build_graph(instances[static_cast<std::size_t>(idx)], trainable, sigma, weak,
                            frozen ? &(*frozen)[static_cast<std::size_t>(idx)] : nullptr);
        });
        int valid = 0;
        for (const auto& g : graphs) {
            valid += g->part_valid;
        }
        LossBreakdown total;
        for (const auto& g : graphs) {
            total.sil += g->sil.scalar();
            total.part += valid > 0 ? g->part_sum.scalar() / valid : 0.0;
            total.sem += g->sem.scalar();
            total.rot += g->rot.scalar();
            total.lap += g->lap.scalar();
            total.norm += g->norm.scalar();
            if (g->has_sym) {
                total.sym += g->sym.scalar();
            }
        }
        total.total = weighted_total(total, config_.loss_weights);
        if (grads != nullptr) {
            std::vector<ParameterStore> partial(static_cast<std::size_t>(n));
            parallel_for(n, threads_, [&](int idx) {
                Graph& g = *graphs[static_cast<std::size_t>(idx)];
                ad::Tape& tape = *g.tape;
                auto w = [&](const char* k) { return config_.weight(k); };
                ad::Var t = ad::scale(g.sil, w("sil"));
                if (valid > 0) {
                    t = ad::add(t, ad::scale(g.part_sum, w("part") / valid));
                }
                t = ad::add(t, ad::scale(g.sem, w("sem")));
                t = ad::add(t, ad::scale(g.rot, w("rot")));
                t = ad::add(t, ad::scale(g.lap, w("lap")));
                t = ad::add(t, ad::scale(g.norm, w("norm")));
                if (g.has_sym) {
                    t = ad::add(t, ad::scale(g.sym, w("sym")));
                }
                tape.backward(t);
                for (const auto& [k, var] : g.params.vars) {
                    if (tape.requires_grad(var)) {
                        partial[static_cast<std::size_t>(idx)][k] = tape.grad(var);
                    }
                }
            });
            grads->clear();
            for (const ParameterStore& p : partial) {
                for (const auto& [k, g] : p) {
                    auto [it, fresh] = grads->try_emplace(k, g);
                    if (!fresh) {
                        it->second += g;
                    }
                }
            }
        }
        return total;
    }

    // Plain (no tape) camera score: weighted silhouette + semantic terms.
    double camera_score(int j, const CameraPose& cam, const std::vector<Points3>& surf, double sigma, bool weak) const
    {
        const InstanceData& d = data_[static_cast<std::size_t>(j)];
        const RenderBuffer buf = render_silhouette(surf, cam, sigma, weak);
        double score = config_.weight("sil") * loss_sil(buf.silhouette, d.target);
        if (config_.weight("sem") > 0 && d.sem_pixels.cols() > 0) {
            score += config_.weight("sem") * chamfer(semantic_matrix(j, cam, surf, weak));
        }
        return score;
    }

    // Grid over azimuth x elevation; each candidate is first aligned to the
    // target's area (depth) and centroid (x, y translation). Ties keep the
    // lowest grid index (elevation-major).
    CameraPose camera_grid_search(int j, double sigma, bool weak) const
    {
        const std::vector<Points3> surf = instance_surfaces(model_, j);
        const InstanceData& d = data_[static_cast<std::size_t>(j)];
        double best = std::numeric_limits<double>::infinity();
        CameraPose best_cam = model_.camera(j);
        const double a = model_.focal * size_.half_extent();
        for (double elev : config_.elevations_deg) {
            for (int k = 0; k < config_.azimuth_bins; ++k) {
                const double azim = 360.0 * k / config_.azimuth_bins;
                CameraPose cam;
                cam.focal = model_.focal;
                cam.rotation = log_rotation(rotation_from_view(azim, elev));
                cam.translation = Vec3(0, 0, config_.camera_distance);
                auto [area, centroid] = mass_and_centroid(render_silhouette(surf, cam, sigma, weak).silhouette);
                if (area <= 0 || d.area <= 0) {
                    continue;
                }
                const double depth = config_.camera_distance * std::sqrt(area / d.area);
                const Vec2 center(0.5 * size_.width, 0.5 * size_.height);
                const Vec2 moved = center + (centroid - center) * (config_.camera_distance / depth);
                const Vec2 shift = d.centroid - moved;
                cam.translation = Vec3(shift.x() * depth / a, shift.y() * depth / a, depth);
                const double score = camera_score(j, cam, surf, sigma, weak);
                if (score < best) {
                    best = score;
                    best_cam = cam;
                }
            }
        }
        return best_cam;
    }

    // Grid search followed by Adam on this instance's camera alone.
    CameraPose run_camera_search(int j, const StageSpec& stage, double sigma, bool weak, bool grid = true)
    {
        if (grid) {
            model_.set_camera(j, camera_grid_search(j, sigma, weak));
        }
        const std::vector<FrozenInstance> frozen = {freeze_instance(model_, j)};
        auto trainable = [j](const std::string& k) { return k == cam_rot_key(j) || k == cam_trans_key(j); };
        AdamState adam;
        adam.learning_rate = stage.learning_rate;
        StageTracker tracker(config_);
        for (int step = 0; step < stage.steps; ++step) {
            ParameterStore grads;
            const LossBreakdown lb = evaluate({j}, trainable, sigma, weak, &grads, &frozen);
            if (tracker.update(lb, "camera search (instance " + std::to_string(j) + ")")) {
                break;
            }
            adam_step(adam, model_.params, grads);
        }
        return model_.camera(j);
    }

    StageReport run_stage(const StageSpec& stage, int stage_index, const StepCallback& on_step = {})
    {
        const auto start = std::chrono::steady_clock::now();
        const double sigma = config_.sigma_pixels * std::pow(config_.sigma_anneal, stage_index);
        std::vector<int> all(static_cast<std::size_t>(model_.n_instances));
        for (int j = 0; j < model_.n_instances; ++j) {
            all[static_cast<std::size_t>(j)] = j;
        }
        StageReport report;
        report.name = stage.name;
        if (stage.name == "camera") {
            const bool weak = config_.weak_perspective_camera_stage;
            em_update({reference_});
            report.initial = evaluate(all, [](const std::string&) { return false; }, sigma, weak, nullptr);
            // The reference camera stays at the frame the skeleton was lifted
            // from; fitting it alone would trade pose mismatch for viewpoint.
            for (int j = 0; j < model_.n_instances; ++j) {
                if (j != reference_) {
                    run_camera_search(j, stage, sigma, weak);
                }
            }
            report.final = evaluate(all, [](const std::string&) { return false; }, sigma, weak, nullptr);
            report.steps_run = stage.steps;
            if (on_step) {
                on_step(stage.name, stage.steps, report.final);
            }
        } else {
            // The reference camera fixes the global frame: with it free, a
            // joint rotation of every camera against the shapes leaves the
            // silhouettes unchanged and the views drift.
            const auto base = stage_trainable(stage.name);
            const std::string ref_rot = cam_rot_key(reference_);
            const std::string ref_trans = cam_trans_key(reference_);
            const auto trainable = [base, ref_rot, ref_trans](const std::string& k) {
                return base(k) && k != ref_rot && k != ref_trans;
            };
            AdamState adam;
            adam.learning_rate = stage.learning_rate;
            StageTracker tracker(config_);
            for (int step = 0; step < stage.steps; ++step) {
                if (step % config_.em_period == 0) {
                    em_update(all);
                }
                ParameterStore grads;
                const LossBreakdown lb = evaluate(all, trainable, sigma, false, &grads);
                if (step == 0) {
                    report.initial = lb;
                }
                report.final = lb;
                report.steps_run = step + 1;
                if (on_step) {
                    on_step(stage.name, step, lb);
                }
                if (tracker.update(lb, stage.name + " stage")) {
                    report.converged = true;
                    break;
                }
                adam_step(adam, model_.params, grads);
            }
        }
        report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return report;
    }

    RenderBuffer render_silhouette(const std::vector<Points3>& surf, const CameraPose& cam, double sigma,
                                   bool weak) const
    {
        return rasterize_soft(surf, model_.templ.faces, cam, sigma, size_, config_.visibility_eps, weak);
    }

private:
    // Divergence and trailing-window convergence bookkeeping.
    class StageTracker {
    public:
        explicit StageTracker(const EnsembleConfig& c) : config_(c) {}

        // True when the stage should stop (converged). Throws on divergence.
        bool update(const LossBreakdown& lb, const std::string& what)
        {
            if (!std::isfinite(lb.total) ||
                (initial_ && lb.total > config_.divergence_factor * std::max(*initial_, 1e-12))) {
                throw DivergenceError(what + " diverged: loss " + to_json(lb).dump() + " exceeds " +
                                      std::to_string(config_.divergence_factor) + "x the initial total " +
                                      std::to_string(initial_.value_or(0.0)));
            }
            if (!initial_) {
                initial_ = lb.total;
            }
            history_.push_back(lb.total);
            const auto w = static_cast<std::size_t>(config_.convergence_window);
            if (history_.size() <= w) {
                return false;
            }
            const double before = *std::min_element(history_.begin(), history_.end() - static_cast<long>(w));
            const double recent = *std::min_element(history_.end() - static_cast<long>(w), history_.end());
            return recent > before - config_.convergence_tol * std::abs(before);
        }

    private:
        const EnsembleConfig& config_;
        std::optional<double> initial_;
        std::vector<double> history_;
    };

    struct Graph {
        std::unique_ptr<ad::Tape> tape;
        TapeParams params;
        ad::Var sil, part_sum, sem, rot, lap, norm, sym;
        bool has_sym = false;
        int part_valid = 0;
    };

    Matrix semantic_matrix(int j, const CameraPose& cam, const std::vector<Points3>& surf, bool weak) const
    {
        const InstanceData& d = data_[static_cast<std::size_t>(j)];
        const auto m = static_cast<Eigen::Index>(sem_points_.size());
        const double s = std::max(size_.height, size_.width);
        Matrix D = d.feature_cost;
        for (std::size_t i = 0; i < surf.size(); ++i) {
            Points3 sub(3, m);
            for (Eigen::Index k = 0; k < m; ++k) {
                sub.col(k) = surf[i].col(sem_points_[static_cast<std::size_t>(k)]);
            }
            const Eigen::Matrix2Xd px = project(cam, sub, size_, weak).pixels / s;
            for (Eigen::Index k = 0; k < m; ++k) {
                const Eigen::Index c = static_cast<Eigen::Index>(i) * m + k;
                D.col(c).array() += (d.sem_pixels.colwise() - px.col(k)).colwise().squaredNorm().transpose().array();
            }
        }
        return D;
    }

    std::unique_ptr<Graph> build_graph(int j, const std::function<bool(const std::string&)>& trainable, double sigma,
                                       bool weak, const FrozenInstance* frozen) const
    {
        auto g = std::make_unique<Graph>();
        g->tape = std::make_unique<ad::Tape>();
        ad::Tape& tape = *g->tape;
        g->params.tape = g->tape.get();
        g->params.model = &model_;
        g->params.trainable = trainable;
        const InstanceData& d = data_[static_cast<std::size_t>(j)];
        const int b = model_.n_parts();

        std::vector<ad::Var> verts;
        std::vector<ad::Var> canon;
        std::vector<ad::Var> rot, rest;
        ad::Var joints;
        if (frozen != nullptr) {
            for (int i = 0; i < b; ++i) {
                verts.push_back(tape.constant(frozen->vertices[static_cast<std::size_t>(i)]));
                canon.push_back(tape.constant(frozen->canonical[static_cast<std::size_t>(i)]));
                rot.push_back(tape.constant(frozen->rotations[static_cast<std::size_t>(i)]));
                rest.push_back(tape.constant(frozen->rest[static_cast<std::size_t>(i)]));
            }
            joints = tape.constant(frozen->rest_joints);
        } else {
            SurfacesAd s = instance_surfaces_ad(g->params, j);
            verts = s.vertices;
            canon = s.canonical;
            rot = s.skeleton.rotations;
            rest = s.skeleton.rest;
            if (j == reference_) {
                joints = config_.sym_on_posed ? s.skeleton.joints : pose_skeleton_ad(g->params, -1).joints;
            }
        }

        ad::Var R0 = ad::rodrigues(g->params.get(cam_rot_key(j)));
        ad::Var t0 = g->params.get(cam_trans_key(j));
        std::vector<ad::Var> pixels;
        for (const ad::Var& v : verts) {
            pixels.push_back(project_ad(R0, t0, v, model_.focal, size_, weak));
        }
        std::vector<Grid> part_masks;
        ad::Var sil = soft_silhouette_ad(pixels, model_.templ.faces, sigma, size_, &part_masks);
        g->sil = loss_sil(sil, d.target);

        std::vector<CropBox> boxes;
        for (const Grid& pm : part_masks) {
            boxes.push_back(part_box(pm));
        }
        g->part_sum = part_loss_sum(sil, d.target, boxes, config_.zoom_factor, g->part_valid);

        if (d.sem_pixels.cols() > 0) {
            std::vector<ad::Index> idx(sem_points_.begin(), sem_points_.end());
            std::vector<ad::Var> sub;
            for (const ad::Var& p : pixels) {
                sub.push_back(ad::gather_cols(p, idx));
            }
            const double s = std::max(size_.height, size_.width);
            g->sem = loss_sem(ad::scale(ad::concat_cols(sub), 1.0 / s), d.sem_pixels, d.feature_cost);
        } else {
            g->sem = tape.scalar_constant(0.0);
        }

        g->rot = loss_rot(rot, rest);
        ad::Var lap = loss_lap(canon[0], model_.templ.neighbors);
        ad::Var nrm = loss_norm(canon[0], model_.templ.faces, model_.templ.face_pairs);
        for (int i = 1; i < b; ++i) {
            lap = ad::add(lap, loss_lap(canon[i], model_.templ.neighbors));
            nrm = ad::add(nrm, loss_norm(canon[i], model_.templ.faces, model_.templ.face_pairs));
        }
        g->lap = ad::scale(lap, 1.0 / b);
        g->norm = ad::scale(nrm, 1.0 / b);
        if (j == reference_) {
            g->sym = loss_sym(joints.valid() ? joints : tape.constant(model_.skeleton.joints), model_.skeleton.sym_pairs);
            g->has_sym = true;
        }
        return g;
    }

    EnsembleModel& model_;
    const std::vector<InstanceRecord>& records_;
    EnsembleConfig config_;
    int reference_;
    int threads_;
    ImageSize size_;
    std::vector<int> sem_points_;
    std::vector<InstanceData> data_;
};

} // namespace artshape
