#pragma once

// Ensemble state: shared skeleton and part networks, per-instance cameras,
// part rotations and deep layers. All trainable tensors live in one ordered
// name -> matrix store:
//
//   cam/{j}/rot, cam/{j}/trans      camera axis-angle and translation
//   pose/{j}                        3 x b axis-angle offsets from rest
//   rest/rot, rest/logscale         3 x b rest offsets, 1 x b log scales
//   mlp/{i}/L{l}/{Wh,bh,Wo,bo}      shared layers l <= k of part i
//   inst/{j}/mlp/{i}/L{l}/...       instance layers l > k
//
// Part i of instance j:
//   Rbar_i  = Rod(rest_rot_i) Rinit_i,   R_i^j = Rod(pose_i^j) Rbar_i
//   s_i     = exp(logscale_i) sinit_i
//   child   = parent + s_i R_i^j e_z,   t_i = midpoint of the bone
//   V_i^j   = s_i R_i^j (a_i * X + y_i^j(X)) + t_i
// with a_i a fixed per-axis prior that turns the unit sphere into an
// ellipsoid spanning the bone.

#include "artshape/config.hpp"
#include "artshape/diff.hpp"
#include "artshape/geometry.hpp"
#include "artshape/partmodel.hpp"
#include "artshape/render.hpp"
#include "artshape/skeleton3d.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace artshape {

using ParameterStore = std::map<std::string, Matrix>;

inline std::string cam_rot_key(int j) { return "cam/" + std::to_string(j) + "/rot"; }
inline std::string cam_trans_key(int j) { return "cam/" + std::to_string(j) + "/trans"; }
inline std::string pose_key(int j) { return "pose/" + std::to_string(j); }

inline std::string layer_key(int part, int layer, int instance, int shared_depth)
{
    const std::string base = "mlp/" + std::to_string(part) + "/L" + std::to_string(layer) + "/";
    return layer <= shared_depth ? base : "inst/" + std::to_string(instance) + "/" + base;
}

// Ellipsoid half-axes of a part relative to its scale: radius across the
// bone, 0.6 of the length along it (a little overlap at the joints).
inline Vec3 part_prior(double radius, double length)
{
    const double across = std::clamp(radius / length, 0.05, 1.0);
    return {across, across, 0.6};
}

struct EnsembleModel {
    Skeleton3D skeleton;
    PartTemplate templ;
    std::vector<Vec3> priors;
    std::vector<PartDeformMLP> mlps; // encodings; layer weights are copied from the store
    std::vector<std::vector<Matrix>> encodings;
    std::vector<FeatureMLP> features;
    ParameterStore params;
    int n_instances = 0;
    int shared_depth = 1;
    double focal = 2.0;

    [[nodiscard]] int n_parts() const { return skeleton.n_bones(); }
    [[nodiscard]] int depth() const { return mlps.front().depth(); }

    [[nodiscard]] const Matrix& at(const std::string& key) const
    {
        auto it = params.find(key);
        if (it == params.end()) {
            throw std::out_of_range("parameter '" + key + "' not found");
        }
        return it->second;
    }

    [[nodiscard]] CameraPose camera(int j) const
    {
        CameraPose c;
        c.rotation = at(cam_rot_key(j)).col(0);
        c.translation = at(cam_trans_key(j)).col(0);
        c.focal = focal;
        return c;
    }

    void set_camera(int j, const CameraPose& c)
    {
        params[cam_rot_key(j)] = c.rotation;
        params[cam_trans_key(j)] = c.translation;
    }

    // Deformation network of part i as seen by instance j.
    [[nodiscard]] PartDeformMLP part_mlp(int part, int instance) const
    {
        PartDeformMLP m = mlps.at(part);
        for (int l = 1; l <= m.depth(); ++l) {
            const std::string k = layer_key(part, l, instance, shared_depth);
            m.layers[l - 1] = {at(k + "Wh"), at(k + "bh"), at(k + "Wo"), at(k + "bo")};
        }
        return m;
    }
};

inline EnsembleModel make_model(const Skeleton3D& skeleton, const EnsembleConfig& config, int feature_dim)
{
    if (skeleton.n_bones() == 0) {
        throw ValidationError("model: skeleton has no bones");
    }
    EnsembleModel m;
    m.skeleton = skeleton;
    if (m.skeleton.rest_transforms.size() != skeleton.bones.size()) {
        refresh_rest_transforms(m.skeleton);
    }
    m.templ = make_template(config.template_level);
    m.n_instances = config.n_instances;
    m.shared_depth = config.shared_depth;
    m.focal = config.focal;
    std::mt19937_64 rng(config.seed);
    const int b = m.n_parts();
    for (int i = 0; i < b; ++i) {
        const double radius = i < static_cast<int>(skeleton.bone_radii.size()) ? skeleton.bone_radii[i] : 0.05;
        m.priors.push_back(part_prior(radius, m.skeleton.rest_transforms[i].scale));
        PartDeformMLP mlp = make_deform_mlp(config.hidden_width, config.pe_frequencies, config.shared_depth, rng);
        for (int l = 1; l <= mlp.depth(); ++l) {
            const DeformLayer& layer = mlp.layers[l - 1];
            for (int j = 0; j < (l <= config.shared_depth ? 1 : m.n_instances); ++j) {
                const std::string k = layer_key(i, l, j, config.shared_depth);
                m.params[k + "Wh"] = layer.Wh;
                m.params[k + "bh"] = layer.bh;
                m.params[k + "Wo"] = layer.Wo;
                m.params[k + "bo"] = layer.bo;
            }
        }
        m.encodings.push_back(encode_all(mlp, m.templ.X));
        m.mlps.push_back(std::move(mlp));
        m.features.push_back(make_feature_mlp(config.feature_width, feature_dim, config.feature_frequency, rng));
    }
    for (int j = 0; j < m.n_instances; ++j) {
        m.params[cam_rot_key(j)] = Matrix::Zero(3, 1);
        // Depth = focal maps the z = 0 plane onto the reference image frame.
        m.params[cam_trans_key(j)] = Eigen::Vector3d(0, 0, config.focal);
        m.params[pose_key(j)] = Matrix::Zero(3, b);
    }
    m.params["rest/rot"] = Matrix::Zero(3, b);
    m.params["rest/logscale"] = Matrix::Zero(1, b);
    return m;
}

// ---------------------------------------------------------------------------
// Plain evaluation.

struct PosedSkeleton {
    Points3 joints;
    std::vector<Mat3> rotations; // R_i^j
    std::vector<double> scales;
    std::vector<Vec3> centers; // t_i
};

inline std::vector<Mat3> rest_rotations(const EnsembleModel& m)
{
    const Matrix& rr = m.at("rest/rot");
    std::vector<Mat3> out;
    for (int i = 0; i < m.n_parts(); ++i) {
        out.push_back(rodrigues(rr.col(i)) * m.skeleton.rest_transforms[i].rotation);
    }
    return out;
}

// instance < 0 poses the rest skeleton.
inline PosedSkeleton pose_skeleton(const EnsembleModel& m, int instance)
{
    const int b = m.n_parts();
    PosedSkeleton ps;
    ps.joints = m.skeleton.joints;
    ps.rotations = rest_rotations(m);
    ps.scales.resize(b);
    ps.centers.resize(b);
    const Matrix& ls = m.at("rest/logscale");
    if (instance >= 0) {
        const Matrix& pose = m.at(pose_key(instance));
        for (int i = 0; i < b; ++i) {
            ps.rotations[i] = rodrigues(pose.col(i)) * ps.rotations[i];
        }
    }
    for (int bi : m.skeleton.topological_bones()) {
        const auto [p, c] = m.skeleton.bones[bi];
        const double s = std::exp(ls(0, bi)) * m.skeleton.rest_transforms[bi].scale;
        const Vec3 axis = s * ps.rotations[bi].col(2);
        ps.joints.col(c) = ps.joints.col(p) + axis;
        ps.scales[bi] = s;
        ps.centers[bi] = ps.joints.col(p) + 0.5 * axis;
    }
    return ps;
}

// Canonical (pre-transform) deformed points of part i for instance j at
// arbitrary template points.
inline Points3 canonical_points(const EnsembleModel& m, int part, int instance, const Points3& X)
{
    const PartDeformMLP mlp = m.part_mlp(part, instance);
    Points3 f = m.priors[part].asDiagonal() * X;
    f += deform(mlp, X, mlp.depth());
    return f;
}

inline std::vector<Points3> instance_surfaces(const EnsembleModel& m, int instance, const Points3& X)
{
    const PosedSkeleton ps = pose_skeleton(m, instance);
    std::vector<Points3> out;
    for (int i = 0; i < m.n_parts(); ++i) {
        Points3 v = ps.scales[i] * (ps.rotations[i] * canonical_points(m, i, instance, X));
        v.colwise() += ps.centers[i];
        out.push_back(std::move(v));
    }
    return out;
}

inline std::vector<Points3> instance_surfaces(const EnsembleModel& m, int instance)
{
    return instance_surfaces(m, instance, m.templ.X);
}

// ---------------------------------------------------------------------------
// Tape evaluation.

// Store entries placed on one tape; trainable ones are parameters.
struct TapeParams {
    ad::Tape* tape = nullptr;
    const EnsembleModel* model = nullptr;
    std::function<bool(const std::string&)> trainable;
    std::map<std::string, ad::Var> vars;

    ad::Var get(const std::string& key)
    {
        auto it = vars.find(key);
        if (it != vars.end()) {
            return it->second;
        }
        const Matrix& v = model->at(key);
        ad::Var var = trainable(key) ? tape->parameter(v, key) : tape->constant(v);
        vars.emplace(key, var);
        return var;
    }
};

struct PosedSkeletonAd {
    ad::Var joints; // 3 x p
    std::vector<ad::Var> rotations;
    std::vector<ad::Var> rest;
    std::vector<ad::Var> scales; // 1 x 1
    std::vector<ad::Var> centers;
};

inline PosedSkeletonAd pose_skeleton_ad(TapeParams& tp, int instance)
{
    const EnsembleModel& m = *tp.model;
    ad::Tape& tape = *tp.tape;
    const int b = m.n_parts();
    PosedSkeletonAd ps;
    ad::Var rr = tp.get("rest/rot");
    ad::Var scales = ad::exp(tp.get("rest/logscale"));
    ad::Var pose = instance >= 0 ? tp.get(pose_key(instance)) : ad::Var{};
    for (int i = 0; i < b; ++i) {
        ad::Var rest = ad::matmul(ad::rodrigues(ad::col(rr, i)), tape.constant(m.skeleton.rest_transforms[i].rotation));
        ps.rest.push_back(rest);
        ps.rotations.push_back(instance >= 0 ? ad::matmul(ad::rodrigues(ad::col(pose, i)), rest) : rest);
        ps.scales.push_back(ad::scale(ad::block(scales, 0, i, 1, 1), m.skeleton.rest_transforms[i].scale));
    }
    ps.centers.resize(b);
    std::vector<ad::Var> joints(static_cast<std::size_t>(m.skeleton.n_joints()));
    for (int j = 0; j < m.skeleton.n_joints(); ++j) {
        if (j == m.skeleton.root || m.skeleton.bone_to(j) < 0) {
            joints[j] = tape.constant(m.skeleton.joints.col(j));
        }
    }
    for (int bi : m.skeleton.topological_bones()) {
        const auto [p, c] = m.skeleton.bones[bi];
        ad::Var axis = ad::scalar_mul(ps.scales[bi], ad::col(ps.rotations[bi], 2));
        joints[c] = ad::add(joints[p], axis);
        ps.centers[bi] = ad::add(joints[p], ad::scale(axis, 0.5));
    }
    ps.joints = ad::concat_cols(joints);
    return ps;
}

inline std::vector<DeformLayerVars> layer_vars(TapeParams& tp, int part, int instance)
{
    std::vector<DeformLayerVars> out;
    for (int l = 1; l <= tp.model->depth(); ++l) {
        const std::string k = layer_key(part, l, instance, tp.model->shared_depth);
        out.push_back({tp.get(k + "Wh"), tp.get(k + "bh"), tp.get(k + "Wo"), tp.get(k + "bo")});
    }
    return out;
}

struct SurfacesAd {
    PosedSkeletonAd skeleton;
    std::vector<ad::Var> canonical; // a * X + y per part
    std::vector<ad::Var> vertices;  // posed, model frame
};

inline SurfacesAd instance_surfaces_ad(TapeParams& tp, int instance)
{
    const EnsembleModel& m = *tp.model;
    ad::Tape& tape = *tp.tape;
    SurfacesAd s;
    s.skeleton = pose_skeleton_ad(tp, instance);
    for (int i = 0; i < m.n_parts(); ++i) {
        ad::Var y = deform_ad(tape, m.encodings[i], layer_vars(tp, i, instance), m.depth());
        ad::Var f = ad::add(tape.constant(m.priors[i].asDiagonal() * m.templ.X), y);
        s.canonical.push_back(f);
        ad::Var v = ad::scalar_mul(s.skeleton.scales[i], ad::matmul(s.skeleton.rotations[i], f));
        s.vertices.push_back(ad::add_colwise(v, s.skeleton.centers[i]));
    }
    return s;
}

// Camera azimuth / elevation (degrees) of R_0 = Rx(elev) Ry(azim).
inline double camera_azimuth_deg(const Mat3& r0)
{
    const Vec3 dir = r0.transpose() * Vec3::UnitZ();
    return std::atan2(-dir.x(), dir.z()) * 180.0 / std::numbers::pi;
}

inline double camera_elevation_deg(const Mat3& r0)
{
    const Vec3 dir = r0.transpose() * Vec3::UnitZ();
    return std::asin(std::clamp(dir.y(), -1.0, 1.0)) * 180.0 / std::numbers::pi;
}

inline Mat3 rotation_from_view(double azimuth_deg, double elevation_deg)
{
    const double a = azimuth_deg * std::numbers::pi / 180.0;
    const double e = elevation_deg * std::numbers::pi / 180.0;
    return (Eigen::AngleAxisd(e, Vec3::UnitX()) * Eigen::AngleAxisd(a, Vec3::UnitY())).toRotationMatrix();
}

// Wrapped |a - b| in degrees, in [0, 180].
inline double angle_gap_deg(double a, double b)
{
    double d = std::fmod(std::abs(a - b), 360.0);
    return d > 180.0 ? 360.0 - d : d;
}

} // namespace artshape
