#pragma once

// discover -> optimize -> export -> evaluate, as used by the CLI.

#include "artshape/config.hpp"
#include "artshape/errors.hpp"
#include "artshape/export_metrics.hpp"
#include "artshape/ingest.hpp"
#include "artshape/log.hpp"
#include "artshape/model.hpp"
#include "artshape/optimizer.hpp"
#include "artshape/parallel.hpp"
#include "artshape/skeleton2d.hpp"
#include "artshape/skeleton3d.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace artshape {

inline constexpr const char* kVersion = "artshape 0.1.0";

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitValidation = 2, kExitDivergence = 3, kExitIo = 4 };

namespace fs = std::filesystem;

// Writes `text` to a sibling temp file and renames it into place.
inline void write_atomic(const fs::path& path, const std::string& text)
{
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) {
            throw IoError("cannot write " + tmp.string());
        }
        out << text;
        if (!out) {
            throw IoError("short write on " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

inline nlohmann::json read_json(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

inline std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h = 1469598103934665603ull)
{
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v)
{
    std::ostringstream s;
    s << std::hex;
    s.width(16);
    s.fill('0');
    s << v;
    return s.str();
}

inline std::string file_bytes(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// Command-line overrides applied on top of a config file.
struct RunOptions {
    std::optional<fs::path> config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> reference_index;
    std::vector<std::string> stages; // empty = every stage in the schedule
    int threads = default_threads();
    fs::path out = "run";
};

// Config from file (or defaults sized to the ensemble on disk), then flags.
inline EnsembleConfig resolve_config(const fs::path& ensemble, const RunOptions& opt)
{
    EnsembleConfig c;
    if (opt.config_path) {
        c = load_config(*opt.config_path);
    } else {
        int n = 0;
        while (fs::exists(ensemble / instance_file(n, ".mask.png"))) {
            ++n;
        }
        if (n == 0) {
            throw IoError("no instances found in " + ensemble.string() + " (expected 0.mask.png)");
        }
        const ByteGrid first = png_io::read_gray(ensemble / instance_file(0, ".mask.png"));
        c.n_instances = n;
        c.image_height = static_cast<int>(first.rows());
        c.image_width = static_cast<int>(first.cols());
    }
    if (opt.seed) {
        c.seed = *opt.seed;
    }
    if (opt.reference_index) {
        c.reference_index = *opt.reference_index;
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Discovery

struct Discovery {
    SkeletonTree tree2d;
    std::vector<JointPair> pairs2d;
    Skeleton3D skeleton;
};

inline Discovery discover_skeleton(const ByteGrid& mask, const FeatureMap& features, const EnsembleConfig& config)
{
    const ByteGrid fg = largest_component(mask);
    if (fg.cast<int>().sum() == 0) {
        throw ValidationError("discover: reference mask is empty");
    }
    const Grid dfield = distance_transform(fg);
    const ByteGrid skel = thin(fg);
    Discovery d;
    d.tree2d = filter_joints(build_tree(skel, classify_points(skel), dfield));
    if (d.tree2d.bones.empty()) {
        throw ValidationError("discover: skeleton has no bones (mask too small?)");
    }
    const auto desc = describe_branches(d.tree2d, features);
    d.pairs2d = match_symmetric(desc, d.tree2d, config.sym_lambda, config.sym_tau);
    auto [split, pairs] = split_shared_parents(d.tree2d, d.pairs2d);
    d.skeleton = uplift(split, pairs, static_cast<int>(mask.rows()), static_cast<int>(mask.cols()));
    return d;
}

// Mask at half intensity, bone paths white, joints mid-grey.
inline ByteGrid skeleton_overlay(const ByteGrid& mask, const SkeletonTree& tree)
{
    ByteGrid img = (mask.array() != 0).cast<std::uint8_t>().matrix() * std::uint8_t{80};
    for (const Bone2D& b : tree.bones) {
        for (const Pixel& p : b.path) {
            img(p.y, p.x) = 255;
        }
    }
    for (const Joint2D& j : tree.joints) {
        img(j.y, j.x) = 160;
    }
    return img;
}

struct DiscoverResult {
    int reference = 0;
    Discovery discovery;
};

inline DiscoverResult cmd_discover(const fs::path& ensemble, const RunOptions& opt)
{
    const EnsembleConfig config = resolve_config(ensemble, opt);
    const std::vector<InstanceRecord> records = load_ensemble(ensemble, config);
    DiscoverResult r;
    r.reference = select_reference(records, config);
    const InstanceRecord& ref = records[static_cast<std::size_t>(r.reference)];
    log::info("discover: reference instance " + std::to_string(r.reference));
    r.discovery = discover_skeleton(ref.pseudo_mask, ref.feature_map, config);
    fs::create_directories(opt.out);
    save_skeleton3d(opt.out / "skeleton3d.json", r.discovery.skeleton);
    nlohmann::json j2 = to_json(r.discovery.tree2d);
    j2["reference_index"] = r.reference;
    j2["symmetric_pairs"] = r.discovery.pairs2d;
    write_atomic(opt.out / "skeleton2d.json", j2.dump(2) + "\n");
    png_io::write_gray(opt.out / "skeleton_overlay.png", skeleton_overlay(ref.pseudo_mask, r.discovery.tree2d));
    log::info("discover: " + std::to_string(r.discovery.skeleton.n_bones()) + " bones, " +
              std::to_string(r.discovery.pairs2d.size()) + " symmetric pairs");
    return r;
}

// ---------------------------------------------------------------------------
// Checkpoints: trained parameters plus the feature networks.

inline NamedMatrices model_checkpoint(const EnsembleModel& m)
{
    NamedMatrices out = m.params;
    for (std::size_t i = 0; i < m.features.size(); ++i) {
        const FeatureMLP& f = m.features[i];
        const std::string k = "feature/" + std::to_string(i) + "/";
        out[k + "W1"] = f.W1;
        out[k + "b1"] = f.b1;
        out[k + "W2"] = f.W2;
        out[k + "b2"] = f.b2;
        out[k + "W3"] = f.W3;
        out[k + "b3"] = f.b3;
    }
    return out;
}

// Inverse of model_checkpoint on a model freshly built from the same
// skeleton and config (fixed encodings come from the seed).
inline void restore_checkpoint(EnsembleModel& m, const NamedMatrices& ckpt)
{
    for (auto& [k, v] : m.params) {
        auto it = ckpt.find(k);
        if (it == ckpt.end() || it->second.rows() != v.rows() || it->second.cols() != v.cols()) {
            throw ValidationError("checkpoint: missing or mis-shaped entry '" + k + "'");
        }
        v = it->second;
    }
    for (std::size_t i = 0; i < m.features.size(); ++i) {
        FeatureMLP& f = m.features[i];
        const std::string k = "feature/" + std::to_string(i) + "/";
        for (auto [name, field] : {std::pair{"W1", &f.W1}, std::pair{"b1", &f.b1}, std::pair{"W2", &f.W2},
                                   std::pair{"b2", &f.b2}, std::pair{"W3", &f.W3}, std::pair{"b3", &f.b3}}) {
            auto it = ckpt.find(k + name);
            if (it == ckpt.end() || it->second.rows() != field->rows() || it->second.cols() != field->cols()) {
                throw ValidationError("checkpoint: missing or mis-shaped entry '" + k + name + "'");
            }
            *field = it->second;
        }
    }
}

// ---------------------------------------------------------------------------
// Optimization

struct RunManifest {
    EnsembleConfig config;
    std::uint64_t seed = 0;
    std::string ensemble;
    std::string skeleton;
    int reference = 0;
    std::vector<StageReport> stages;
    std::vector<std::string> outputs; // relative to the run directory
    std::string input_hash;
    std::vector<std::uint64_t> stage_hashes; // full parameter hash after each stage
};

inline nlohmann::json to_json(const RunManifest& m)
{
    nlohmann::json j;
    j["version"] = kVersion;
    j["config"] = to_json(m.config);
    j["seed"] = m.seed;
    j["ensemble"] = m.ensemble;
    j["skeleton"] = m.skeleton;
    j["reference_index"] = m.reference;
    j["input_hash"] = m.input_hash;
    nlohmann::json st = nlohmann::json::array();
    for (std::size_t k = 0; k < m.stages.size(); ++k) {
        const StageReport& s = m.stages[k];
        st.push_back({{"name", s.name},
                      {"steps_run", s.steps_run},
                      {"converged", s.converged},
                      {"initial", to_json(s.initial)},
                      {"final", to_json(s.final)},
                      {"parameter_hash", hex64(m.stage_hashes[k])}});
    }
    j["stages"] = st;
    j["outputs"] = m.outputs;
    return j;
}

struct OptimizeResult {
    EnsembleModel model;
    RunManifest manifest;
};

inline std::string ensemble_hash(const fs::path& ensemble, const EnsembleConfig& config, const fs::path& skeleton)
{
    std::uint64_t h = fnv1a(to_json(config).dump());
    h = fnv1a(file_bytes(skeleton), h);
    for (int i = 0; i < config.n_instances; ++i) {
        for (const char* suffix : {".rgb.png", ".mask.png", ".clusters.png", ".feat.bin"}) {
            h = fnv1a(file_bytes(ensemble / instance_file(i, suffix)), h);
        }
    }
    return hex64(h);
}

// Renders instance j's silhouette with a near-hard edge.
inline ByteGrid predicted_mask(const EnsembleModel& m, int j, ImageSize size)
{
    const RenderBuffer buf = rasterize_soft(instance_surfaces(m, j), m.templ.faces, m.camera(j), 0.25, size);
    return threshold(buf.silhouette);
}

inline TexturedMesh export_instance(const EnsembleModel& m, int j, const InstanceRecord& r, const EnsembleConfig& c)
{
    const TriMesh sampling = make_icosphere(c.export_level);
    const ImageSize size{r.height(), r.width()};
    const InstanceView view = view_instance(m, j, sampling, size, c.visibility_eps);
    return sample_texture(view.surfaces, sampling.faces, m.camera(j), r.rgb, view.visible,
                          m.skeleton.sym_bone_pairs());
}

inline OptimizeResult cmd_optimize(const fs::path& ensemble, const fs::path& skeleton_path, const RunOptions& opt)
{
    const EnsembleConfig config = resolve_config(ensemble, opt);
    for (const std::string& s : opt.stages) {
        if (s != "camera" && s != "shared" && s != "instance") {
            throw ValidationError("unknown stage '" + s + "' (expected camera, shared or instance)");
        }
    }
    const std::vector<InstanceRecord> records = load_ensemble(ensemble, config);
    const Skeleton3D skeleton = load_skeleton3d(skeleton_path);
    const int reference = select_reference(records, config);
    OptimizeResult res{make_model(skeleton, config, records.front().feature_map.dim), {}};
    EnsembleModel& model = res.model;
    RunManifest& man = res.manifest;
    man.config = config;
    man.seed = config.seed;
    man.ensemble = ensemble.string();
    man.skeleton = skeleton_path.string();
    man.reference = reference;
    man.input_hash = ensemble_hash(ensemble, config, skeleton_path);

    fs::create_directories(opt.out);
    std::ofstream losses(opt.out / "losses.jsonl");
    if (!losses) {
        throw IoError("cannot write " + (opt.out / "losses.jsonl").string());
    }
    EnsembleOptimizer optimizer(model, records, config, reference, opt.threads);
    nlohmann::json timings = nlohmann::json::object();
    for (std::size_t k = 0; k < config.stage_schedule.size(); ++k) {
        const StageSpec& stage = config.stage_schedule[k];
        if (!opt.stages.empty() &&
            std::find(opt.stages.begin(), opt.stages.end(), stage.name) == opt.stages.end()) {
            continue;
        }
        log::info("stage " + stage.name + ": " + std::to_string(stage.steps) + " steps");
        const StageReport rep =
            optimizer.run_stage(stage, static_cast<int>(k), [&](const std::string& name, int step, const LossBreakdown& lb) {
                nlohmann::json line = to_json(lb);
                line["stage"] = name;
                line["step"] = step;
                losses << line.dump() << '\n';
            });
        log::info("stage " + stage.name + ": total " + std::to_string(rep.initial.total) + " -> " +
                  std::to_string(rep.final.total) + " in " + std::to_string(rep.steps_run) + " steps");
        man.stages.push_back(rep);
        man.stage_hashes.push_back(hash_parameters(model.params, [](const std::string&) { return true; }));
        timings[stage.name] = rep.seconds;
    }
    losses.close();
    man.outputs.push_back("losses.jsonl");

    checkpoint_io::save(opt.out / "params.hlpm", model_checkpoint(model));
    man.outputs.push_back("params.hlpm");
    fs::create_directories(opt.out / "meshes");
    fs::create_directories(opt.out / "masks");
    std::vector<TexturedMesh> meshes(records.size());
    parallel_for(model.n_instances, opt.threads,
                 [&](int j) { meshes[static_cast<std::size_t>(j)] = export_instance(model, j, records[j], config); });
    nlohmann::json cameras = nlohmann::json::array();
    for (int j = 0; j < model.n_instances; ++j) {
        const std::string obj = "meshes/instance_" + std::to_string(j) + ".obj";
        export_obj(meshes[static_cast<std::size_t>(j)], opt.out / obj);
        man.outputs.push_back(obj);
        man.outputs.push_back(sidecar_path(obj).string());
        const std::string mask = "masks/instance_" + std::to_string(j) + ".png";
        ByteGrid pm = predicted_mask(model, j, {records[j].height(), records[j].width()});
        png_io::write_gray(opt.out / mask, ByteGrid(pm * std::uint8_t{255}));
        man.outputs.push_back(mask);
        const CameraPose cam = model.camera(j);
        const Mat3 r0 = cam.rotation_matrix();
        cameras.push_back({{"rotation", {cam.rotation.x(), cam.rotation.y(), cam.rotation.z()}},
                           {"translation", {cam.translation.x(), cam.translation.y(), cam.translation.z()}},
                           {"azimuth_deg", camera_azimuth_deg(r0)},
                           {"elevation_deg", camera_elevation_deg(r0)}});
    }
    write_atomic(opt.out / "cameras.json", cameras.dump(2) + "\n");
    man.outputs.push_back("cameras.json");
    // Wall-clock times vary run to run; they stay out of the manifest so
    // identical seeds give identical manifests.
    write_atomic(opt.out / "timings.json", timings.dump(2) + "\n");
    man.outputs.push_back("timings.json");
    man.outputs.push_back("manifest.json");
    write_atomic(opt.out / "manifest.json", to_json(man).dump(2) + "\n");
    return res;
}

// ---------------------------------------------------------------------------
// Evaluation

// Keypoint file: a JSON list (one entry per instance) of lists of
// {"name", "x", "y", "visible"?} with x, y normalized by width / height.
inline std::vector<KeypointSet> load_keypoints(const fs::path& path)
{
    const nlohmann::json j = read_json(path);
    if (!j.is_array()) {
        throw ValidationError(path.string() + ": expected a list of per-instance keypoint lists");
    }
    std::vector<KeypointSet> out;
    try {
        for (const auto& inst : j) {
            KeypointSet set;
            for (const auto& k : inst) {
                Keypoint kp;
                kp.name = k.at("name").get<std::string>();
                kp.x = k.at("x").get<double>();
                kp.y = k.at("y").get<double>();
                kp.visible = k.value("visible", true);
                set.push_back(kp);
            }
            out.push_back(std::move(set));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    return out;
}

inline nlohmann::json keypoints_to_json(const std::vector<KeypointSet>& sets)
{
    nlohmann::json j = nlohmann::json::array();
    for (const KeypointSet& s : sets) {
        nlohmann::json inst = nlohmann::json::array();
        for (const Keypoint& k : s) {
            inst.push_back({{"name", k.name}, {"x", k.x}, {"y", k.y}, {"visible", k.visible}});
        }
        j.push_back(inst);
    }
    return j;
}

struct PairPck {
    int src = 0;
    int dst = 0;
    std::optional<double> pck;
};

// PCK for src -> dst over keypoints visible (by name) in both images.
inline PairPck pair_pck(const InstanceView& src, const InstanceView& dst, const KeypointSet& kp_src,
                        const KeypointSet& kp_dst, ImageSize size, double rho)
{
    KeypointSet from, to;
    for (const Keypoint& a : kp_src) {
        if (!a.visible) {
            continue;
        }
        for (const Keypoint& b : kp_dst) {
            if (b.name == a.name && b.visible) {
                from.push_back(a);
                to.push_back(b);
                break;
            }
        }
    }
    PairPck p;
    p.pck = pck(transfer_keypoints(src, dst, from, size, rho), to, size);
    return p;
}

// Rebuilds the optimized model of a run directory.
inline std::pair<EnsembleModel, nlohmann::json> load_run(const fs::path& run)
{
    const nlohmann::json man = read_json(run / "manifest.json");
    EnsembleConfig config;
    Skeleton3D skeleton;
    int dim = 0;
    try {
        config = config_from_json(man.at("config"));
        skeleton = load_skeleton3d(man.at("skeleton").get<std::string>());
        const NamedMatrices ckpt = checkpoint_io::load(run / "params.hlpm");
        dim = static_cast<int>(ckpt.at("feature/0/W3").rows());
        EnsembleModel m = make_model(skeleton, config, dim);
        restore_checkpoint(m, ckpt);
        return {std::move(m), man};
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError((run / "manifest.json").string() + ": " + e.what());
    } catch (const std::out_of_range& e) {
        throw ValidationError((run / "params.hlpm").string() + ": " + e.what());
    }
}

inline nlohmann::json cmd_eval(const fs::path& run, const std::optional<fs::path>& keypoints_path, int threads)
{
    auto [model, man] = load_run(run);
    const EnsembleConfig config = config_from_json(man.at("config"));
    const std::vector<InstanceRecord> records = load_ensemble(man.at("ensemble").get<std::string>(), config);
    const ImageSize size{config.image_height, config.image_width};
    const int n = model.n_instances;

    nlohmann::json metrics;
    std::vector<double> ious(static_cast<std::size_t>(n));
    parallel_for(n, threads, [&](int j) {
        ious[static_cast<std::size_t>(j)] = iou(predicted_mask(model, j, size), records[j].pseudo_mask);
    });
    double mean_iou = 0;
    for (double v : ious) {
        mean_iou += v / n;
    }
    metrics["iou"] = ious;
    metrics["mean_iou"] = mean_iou;

    if (keypoints_path && fs::exists(*keypoints_path)) {
        const std::vector<KeypointSet> kps = load_keypoints(*keypoints_path);
        if (static_cast<int>(kps.size()) != n) {
            throw ValidationError("keypoints: " + std::to_string(kps.size()) + " instance lists for " +
                                  std::to_string(n) + " instances");
        }
        const TriMesh sampling = make_icosphere(config.export_level);
        std::vector<InstanceView> views(static_cast<std::size_t>(n));
        parallel_for(n, threads, [&](int j) {
            views[static_cast<std::size_t>(j)] = view_instance(model, j, sampling, size, config.visibility_eps);
        });
        const double rho = 0.02 * std::max(size.height, size.width);
        std::vector<PairPck> pairs(static_cast<std::size_t>(n * n));
        parallel_for(n * n, threads, [&](int k) {
            const int s = k / n;
            const int t = k % n;
            if (s != t) {
                pairs[static_cast<std::size_t>(k)] = pair_pck(views[s], views[t], kps[s], kps[t], size, rho);
                pairs[static_cast<std::size_t>(k)].src = s;
                pairs[static_cast<std::size_t>(k)].dst = t;
            }
        });
        nlohmann::json rows = nlohmann::json::array();
        double sum = 0;
        int counted = 0;
        for (int k = 0; k < n * n; ++k) {
            const PairPck& p = pairs[static_cast<std::size_t>(k)];
            if (k / n == k % n) {
                continue;
            }
            rows.push_back({{"src", p.src}, {"dst", p.dst}, {"pck", p.pck ? nlohmann::json(*p.pck) : nlohmann::json(nullptr)}});
            if (p.pck) {
                sum += *p.pck;
                ++counted;
            }
        }
        metrics["pck"] = {{"threshold", 0.05},
                          {"pairs", rows},
                          {"mean", counted > 0 ? nlohmann::json(sum / counted) : nlohmann::json(nullptr)}};
    } else if (keypoints_path) {
        log::warn("keypoint file " + keypoints_path->string() + " not found; reporting IOU only");
    }
    write_atomic(run / "metrics.json", metrics.dump(2) + "\n");
    return metrics;
}

} // namespace artshape
