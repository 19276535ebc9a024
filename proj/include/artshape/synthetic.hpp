#pragma once

// Procedural quadruped ensembles with known skeleton, cameras and per-part
// features. Used by the test suite, the acceptance gate and `artshape synth`.

#include "artshape/config.hpp"
#include "artshape/export_metrics.hpp"
#include "artshape/geometry.hpp"
#include "artshape/image.hpp"
#include "artshape/ingest.hpp"
#include "artshape/model.hpp"
#include "artshape/render.hpp"
#include "artshape/skeleton3d.hpp"

#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace artshape {

// Bone order: body, neck, head, tail, front-left, front-right, back-left,
// back-right. Joint 0 (rear of the body) is the root.
inline Skeleton3D quadruped_skeleton()
{
    Skeleton3D s;
    s.joints.resize(3, 9);
    s.joints.col(0) = Vec3(0.30, 0.0, 0.0);   // rear
    s.joints.col(1) = Vec3(-0.30, 0.0, 0.0);  // front
    s.joints.col(2) = Vec3(-0.50, -0.28, 0.0); // neck top
    s.joints.col(3) = Vec3(-0.72, -0.30, 0.0); // nose
    s.joints.col(4) = Vec3(0.62, -0.10, 0.0); // tail tip
    s.joints.col(5) = Vec3(-0.28, 0.48, 0.09);
    s.joints.col(6) = Vec3(-0.28, 0.48, -0.09);
    s.joints.col(7) = Vec3(0.28, 0.48, 0.09);
    s.joints.col(8) = Vec3(0.28, 0.48, -0.09);
    s.bones = {{0, 1}, {1, 2}, {2, 3}, {0, 4}, {1, 5}, {1, 6}, {0, 7}, {0, 8}};
    s.bone_radii = {0.17, 0.07, 0.08, 0.04, 0.07, 0.07, 0.07, 0.07};
    s.sym_pairs = {{5, 6}, {7, 8}};
    s.root = 0;
    refresh_rest_transforms(s);
    return s;
}

struct SyntheticEnsemble {
    Skeleton3D skeleton;
    std::vector<InstanceRecord> records;
    std::vector<CameraPose> cameras;
    std::vector<double> azimuths_deg;
    std::vector<double> elevations_deg;
    std::vector<Matrix> poses; // 3 x b axis-angle per instance
    std::vector<Eigen::VectorXd> part_features;
    std::vector<KeypointSet> keypoints; // distal tip of every part, per instance
};

struct SyntheticOptions {
    int size = 64;
    int n_instances = 3;
    std::vector<double> azimuths_deg = {0.0, 35.0, -50.0};
    std::vector<double> elevations_deg = {0.0, 8.0, -6.0};
    int feature_dim = 8;
    int render_level = 3;
    double reference_splay_deg = 24.0;
    std::optional<Skeleton3D> skeleton; // default: quadruped_skeleton()
    std::uint64_t seed = 1;
};

// Unit descriptors per part. Left/right legs are close but not identical
// (cosine ~0.78), enough to stay pairable while telling the sides apart.
inline std::vector<Eigen::VectorXd> quadruped_features(int dim)
{
    if (dim < 8) {
        throw std::invalid_argument("quadruped_features: need at least 8 dimensions");
    }
    auto e = [dim](int k) { return Eigen::VectorXd::Unit(dim, k); };
    std::vector<Eigen::VectorXd> f = {e(0),
                                      e(1),
                                      e(2),
                                      e(3),
                                      (e(4) + 0.35 * e(5)).normalized(),
                                      (e(4) - 0.35 * e(5)).normalized(),
                                      (e(6) + 0.35 * e(7)).normalized(),
                                      (e(6) - 0.35 * e(7)).normalized()};
    return f;
}

inline Vec3 quadruped_color(int part)
{
    static const Vec3 colors[] = {{0.55, 0.35, 0.20}, {0.60, 0.40, 0.25}, {0.70, 0.50, 0.30}, {0.30, 0.20, 0.10},
                                  {0.80, 0.30, 0.30}, {0.30, 0.30, 0.80}, {0.80, 0.60, 0.30}, {0.30, 0.70, 0.60}};
    return colors[part % 8];
}

// Hard labels by per-part z-buffer: 0 background, else 1 + nearest part.
inline ByteGrid render_part_labels(const std::vector<Points3>& parts, const std::vector<Face>& faces,
                                   const CameraPose& cam, ImageSize size)
{
    ByteGrid labels = ByteGrid::Zero(size.height, size.width);
    Grid best = Grid::Constant(size.height, size.width, std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const Grid d = depth_buffer({project(cam, parts[i], size)}, faces, size);
        for (Eigen::Index k = 0; k < d.size(); ++k) {
            if (d(k) < best(k)) {
                best(k) = d(k);
                labels(k) = static_cast<std::uint8_t>(i + 1);
            }
        }
    }
    return labels;
}

// Projected +z pole (distal end) of every part, visible when it passes the
// depth test.
inline KeypointSet part_tip_keypoints(const std::vector<Points3>& parts, const PartTemplate& templ,
                                      const CameraPose& cam, ImageSize size)
{
    Eigen::Index tip = 0;
    templ.X.row(2).maxCoeff(&tip);
    std::vector<Projection> prs;
    for (const Points3& p : parts) {
        prs.push_back(project(cam, p, size));
    }
    const DepthBuffer depth = z_buffer(prs, templ.faces, size);
    KeypointSet out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        Keypoint k;
        k.name = "tip_" + std::to_string(i);
        k.x = prs[i].pixels(0, tip) / size.width;
        k.y = prs[i].pixels(1, tip) / size.height;
        k.visible = visibility(prs[i], depth, 0.02, size)[static_cast<std::size_t>(tip)];
        out.push_back(k);
    }
    return out;
}

// Instance j's leg/neck pose. The reference splays its legs so all four are
// visible from the side.
inline Matrix quadruped_pose(int j, std::mt19937_64& rng, double splay_deg = 24.0)
{
    Matrix pose = Matrix::Zero(3, 8);
    const double deg = std::numbers::pi / 180.0;
    if (j == 0) {
        pose(2, 4) = -splay_deg * deg;
        pose(2, 5) = splay_deg * deg;
        pose(2, 6) = -splay_deg * deg;
        pose(2, 7) = splay_deg * deg;
        return pose;
    }
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int b = 4; b < 8; ++b) {
        pose(2, b) = 18 * deg * u(rng);
    }
    pose(2, 1) = 10 * deg * u(rng);
    pose(2, 3) = 15 * deg * u(rng);
    return pose;
}

inline EnsembleConfig ground_truth_config(const SyntheticOptions& opt)
{
    EnsembleConfig cfg;
    cfg.n_instances = opt.n_instances;
    cfg.template_level = opt.render_level;
    cfg.hidden_width = 4;
    cfg.feature_width = 4;
    return cfg;
}

inline SyntheticEnsemble make_synthetic_ensemble(const SyntheticOptions& opt = {})
{
    if (static_cast<int>(opt.azimuths_deg.size()) < opt.n_instances ||
        static_cast<int>(opt.elevations_deg.size()) < opt.n_instances) {
        throw std::invalid_argument("make_synthetic_ensemble: one view per instance required");
    }
    SyntheticEnsemble out;
    out.skeleton = opt.skeleton ? *opt.skeleton : quadruped_skeleton();
    out.part_features = quadruped_features(opt.feature_dim);
    const EnsembleConfig cfg = ground_truth_config(opt);
    EnsembleModel gt = make_model(out.skeleton, cfg, opt.feature_dim);
    std::mt19937_64 rng(opt.seed);
    const ImageSize size{opt.size, opt.size};
    for (int j = 0; j < opt.n_instances; ++j) {
        CameraPose cam;
        cam.rotation = log_rotation(rotation_from_view(opt.azimuths_deg[j], opt.elevations_deg[j]));
        cam.translation = Vec3(0, 0, cfg.camera_distance);
        cam.focal = cfg.focal;
        gt.set_camera(j, cam);
        gt.params[pose_key(j)] = quadruped_pose(j, rng, opt.reference_splay_deg);
        out.cameras.push_back(cam);
        out.azimuths_deg.push_back(opt.azimuths_deg[j]);
        out.elevations_deg.push_back(opt.elevations_deg[j]);
        out.poses.push_back(gt.params[pose_key(j)]);

        const std::vector<Points3> parts = instance_surfaces(gt, j);
        const ByteGrid labels = render_part_labels(parts, gt.templ.faces, cam, size);
        out.keypoints.push_back(part_tip_keypoints(parts, gt.templ, cam, size));
        InstanceRecord r;
        r.pseudo_mask = ByteGrid::Zero(opt.size, opt.size);
        r.part_clusters = labels;
        r.rgb.height = r.rgb.width = opt.size;
        r.rgb.data = Eigen::Matrix3Xd::Constant(3, static_cast<Eigen::Index>(opt.size) * opt.size, 0.9);
        r.feature_map.height = r.feature_map.width = opt.size;
        r.feature_map.dim = opt.feature_dim;
        r.feature_map.data = Eigen::MatrixXd::Zero(opt.feature_dim, static_cast<Eigen::Index>(opt.size) * opt.size);
        for (int y = 0; y < opt.size; ++y) {
            for (int x = 0; x < opt.size; ++x) {
                const int l = labels(y, x);
                if (l == 0) {
                    continue;
                }
                r.pseudo_mask(y, x) = 1;
                const auto col = static_cast<Eigen::Index>(y) * opt.size + x;
                r.rgb.data.col(col) = quadruped_color(l - 1);
                r.feature_map.data.col(col) = out.part_features[static_cast<std::size_t>(l - 1)];
            }
        }
        out.records.push_back(std::move(r));
    }
    return out;
}

// Settings that fit the fixture ensemble at `size` pixels in well under a
// minute on one core: coarse template, small networks, short stages.
// The generating model, with the ensemble's cameras and poses.
inline EnsembleModel ground_truth_model(const SyntheticEnsemble& ens, const SyntheticOptions& opt)
{
    EnsembleModel gt = make_model(ens.skeleton, ground_truth_config(opt), opt.feature_dim);
    for (int j = 0; j < opt.n_instances; ++j) {
        gt.set_camera(j, ens.cameras[static_cast<std::size_t>(j)]);
        gt.params[pose_key(j)] = ens.poses[static_cast<std::size_t>(j)];
    }
    return gt;
}

inline EnsembleConfig fixture_config(int size = 64, int n_instances = 3)
{
    EnsembleConfig c;
    c.n_instances = n_instances;
    c.image_height = c.image_width = size;
    c.template_level = 2;
    c.export_level = 3;
    c.hidden_width = 32;
    c.feature_width = 32;
    c.pe_frequencies = {1, 2, 4, 8};
    c.shared_depth = 2;
    c.stage_schedule = {{"camera", 60, 1e-2}, {"shared", 200, 5e-3}, {"instance", 100, 2e-3}};
    c.n_sem = 256;
    c.m_sem = 48;
    c.em_period = 50;
    c.em_inner_steps = 50;
    c.seed = 7;
    c.validate();
    return c;
}

// A flat side-view quadruped silhouette for 2D skeleton discovery: body,
// neck, tail and four splayed legs drawn as capsules. The matching feature
// map carries the same per-part descriptors as the 3D fixture.
struct QuadrupedMask2D {
    ByteGrid mask;
    FeatureMap features;
};

inline QuadrupedMask2D quadruped_mask_2d(int size = 96, int feature_dim = 8)
{
    struct Capsule {
        Vec2 a, b;
        double r;
        int part;
    };
    const double s = size / 96.0;
    const std::vector<Capsule> caps = {
        {{30 * s, 44 * s}, {66 * s, 44 * s}, 12 * s, 0}, // body
        {{30 * s, 40 * s}, {18 * s, 20 * s}, 5 * s, 1},  // neck
        {{66 * s, 40 * s}, {86 * s, 30 * s}, 3 * s, 3},  // tail
        {{31 * s, 50 * s}, {20 * s, 84 * s}, 4 * s, 4},  // front legs
        {{31 * s, 50 * s}, {42 * s, 84 * s}, 4 * s, 5},
        {{65 * s, 50 * s}, {54 * s, 84 * s}, 4 * s, 6}, // back legs
        {{65 * s, 50 * s}, {76 * s, 84 * s}, 4 * s, 7},
    };
    const auto feats = quadruped_features(feature_dim);
    QuadrupedMask2D out;
    out.mask = ByteGrid::Zero(size, size);
    out.features.height = out.features.width = size;
    out.features.dim = feature_dim;
    out.features.data = Eigen::MatrixXd::Zero(feature_dim, static_cast<Eigen::Index>(size) * size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const Vec2 p(x + 0.5, y + 0.5);
            double best = std::numeric_limits<double>::infinity();
            int part = -1;
            for (const Capsule& c : caps) {
                const Vec2 ab = c.b - c.a;
                const double t = std::clamp((p - c.a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
                const double d = (c.a + t * ab - p).norm() - c.r;
                if (d <= 0 && d < best) {
                    best = d;
                    part = c.part;
                }
            }
            if (part >= 0) {
                out.mask(y, x) = 1;
                out.features.at(y, x) = feats[static_cast<std::size_t>(part)];
            }
        }
    }
    return out;
}

} // namespace artshape
