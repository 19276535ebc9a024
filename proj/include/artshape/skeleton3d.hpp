#pragma once

// Uplifting the 2D skeleton tree to a 3D skeleton: symmetric branch pairs are
// pushed to opposite sides of the z = 0 plane.

#include "artshape/errors.hpp"
#include "artshape/geometry.hpp"
#include "artshape/image.hpp"
#include "artshape/log.hpp"
#include "artshape/skeleton2d.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <tuple>
#include <utility>
#include <vector>

namespace artshape {

using JointPair = std::pair<int, int>;

struct Skeleton3D {
    Points3 joints;                      // 3 x p, normalized image units, z = depth
    std::vector<std::pair<int, int>> bones; // (parent joint, child joint), one part per bone
    std::vector<JointPair> sym_pairs;
    std::vector<RigidTransform> rest_transforms; // per bone
    std::vector<double> bone_radii;              // per bone, normalized units
    int root = 0;

    [[nodiscard]] int n_joints() const { return static_cast<int>(joints.cols()); }
    [[nodiscard]] int n_bones() const { return static_cast<int>(bones.size()); }

    // Bone indices ordered so every bone's parent joint is placed before it.
    [[nodiscard]] std::vector<int> topological_bones() const
    {
        std::vector<int> order;
        std::vector<bool> placed(static_cast<std::size_t>(n_joints()), false);
        placed[root] = true;
        std::vector<bool> used(bones.size(), false);
        bool progress = true;
        while (progress) {
            progress = false;
            for (std::size_t b = 0; b < bones.size(); ++b) {
                if (!used[b] && placed[bones[b].first]) {
                    used[b] = true;
                    placed[bones[b].second] = true;
                    order.push_back(static_cast<int>(b));
                    progress = true;
                }
            }
        }
        if (order.size() != bones.size()) {
            throw ValidationError("skeleton: bones do not form a tree rooted at the root joint");
        }
        return order;
    }

    // Bone whose child joint is `joint`, or -1 for the root.
    [[nodiscard]] int bone_to(int joint) const
    {
        for (std::size_t b = 0; b < bones.size(); ++b) {
            if (bones[b].second == joint) {
                return static_cast<int>(b);
            }
        }
        return -1;
    }

    // Pairs of bones whose child joints form a symmetric pair.
    [[nodiscard]] std::vector<std::pair<int, int>> sym_bone_pairs() const
    {
        std::vector<std::pair<int, int>> out;
        for (const auto& [a, b] : sym_pairs) {
            const int ba = bone_to(a);
            const int bb = bone_to(b);
            if (ba >= 0 && bb >= 0) {
                out.emplace_back(ba, bb);
            }
        }
        return out;
    }
};

// Rest transform of a bone from its endpoints: scale = length, translation =
// midpoint, rotation = minimal twist from +z to the bone direction.
inline RigidTransform bone_transform(const Vec3& parent, const Vec3& child)
{
    const Vec3 d = child - parent;
    const double len = d.norm();
    if (len == 0.0) {
        throw ValidationError("uplift: zero-length bone");
    }
    return {len, minimal_twist_rotation(d), 0.5 * (parent + child)};
}

inline void refresh_rest_transforms(Skeleton3D& s)
{
    s.rest_transforms.clear();
    for (const auto& [p, c] : s.bones) {
        s.rest_transforms.push_back(bone_transform(s.joints.col(p), s.joints.col(c)));
    }
}

// ---------------------------------------------------------------------------
// Branch descriptors and symmetric pairing

struct BoneDescriptor {
    double length = 0.0;
    double mean_radius = 0.0;
    Eigen::VectorXd mean_feature;
    bool valid = false; // false for the root
};

// Descriptor of every non-root joint from the path connecting it to its
// parent (the common ancestor of any sibling pair). Path pixels outside the
// feature grid are clamped.
inline std::vector<BoneDescriptor> describe_branches(const SkeletonTree& tree, const FeatureMap& feat)
{
    std::vector<BoneDescriptor> out(tree.joints.size());
    for (const Bone2D& b : tree.bones) {
        BoneDescriptor d;
        d.length = path_length(b.path);
        d.mean_radius = b.mean_radius;
        d.mean_feature = Eigen::VectorXd::Zero(feat.dim);
        for (const Pixel& p : b.path) {
            const int x = std::clamp(p.x, 0, feat.width - 1);
            const int y = std::clamp(p.y, 0, feat.height - 1);
            Eigen::VectorXd f = feat.at(y, x);
            const double n = f.norm();
            if (n > 0) {
                d.mean_feature += f / n;
            }
        }
        const double n = d.mean_feature.norm();
        if (n > 0) {
            d.mean_feature /= n;
        }
        d.valid = true;
        out[b.child] = std::move(d);
    }
    return out;
}

// Normalized geometric gaps plus lambda * (1 - cosine) of mean features.
inline double symmetry_distance(const BoneDescriptor& a, const BoneDescriptor& b, double lambda)
{
    auto rel = [](double u, double v) {
        const double m = std::max(std::abs(u), std::abs(v));
        return m > 0 ? std::abs(u - v) / m : 0.0;
    };
    double cosine = 1.0;
    if (a.mean_feature.size() > 0 && a.mean_feature.size() == b.mean_feature.size()) {
        const double na = a.mean_feature.norm();
        const double nb = b.mean_feature.norm();
        cosine = (na > 0 && nb > 0) ? a.mean_feature.dot(b.mean_feature) / (na * nb) : 0.0;
    }
    return rel(a.length, b.length) + rel(a.mean_radius, b.mean_radius) + lambda * (1.0 - cosine);
}

// Greedy disjoint pairing among siblings, lowest distance first (ties by
// joint indices), accepted while the distance stays below tau.
inline std::vector<JointPair> match_symmetric(const std::vector<BoneDescriptor>& descriptors,
                                              const SkeletonTree& tree, double lambda = 1.0, double tau = 0.5)
{
    std::vector<std::tuple<double, int, int>> candidates;
    for (std::size_t p = 0; p < tree.joints.size(); ++p) {
        std::vector<int> kids = tree.children_of(static_cast<int>(p));
        std::sort(kids.begin(), kids.end());
        for (std::size_t i = 0; i < kids.size(); ++i) {
            for (std::size_t j = i + 1; j < kids.size(); ++j) {
                const auto& da = descriptors.at(kids[i]);
                const auto& db = descriptors.at(kids[j]);
                if (!da.valid || !db.valid) {
                    continue;
                }
                candidates.emplace_back(symmetry_distance(da, db, lambda), kids[i], kids[j]);
            }
        }
    }
    std::sort(candidates.begin(), candidates.end());
    std::vector<bool> taken(tree.joints.size(), false);
    std::vector<JointPair> pairs;
    for (const auto& [d, a, b] : candidates) {
        if (!(d < tau)) {
            break;
        }
        if (taken[a] || taken[b]) {
            continue;
        }
        taken[a] = taken[b] = true;
        pairs.emplace_back(a, b);
    }
    return pairs;
}

// Duplicates the parent of a symmetric pair when it has exactly those two
// children; the copy attaches to the grandparent and the two copies become a
// new pair. Repeats until no pair qualifies. The root is never split.
inline std::pair<SkeletonTree, std::vector<JointPair>> split_shared_parents(const SkeletonTree& input,
                                                                              const std::vector<JointPair>& pairs)
{
    SkeletonTree t = input;
    std::vector<JointPair> out = pairs;
    std::vector<bool> done(out.size(), false);
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t k = 0; k < out.size(); ++k) {
            if (done[k]) {
                continue;
            }
            const auto [a, b] = out[k];
            const int p = t.parent_of(a);
            if (p < 0 || p != t.parent_of(b)) {
                done[k] = true;
                continue;
            }
            std::vector<int> kids = t.children_of(p);
            if (kids.size() != 2) {
                done[k] = true;
                continue;
            }
            if (p == t.root) {
                log::warn("split_shared_parents: the root joint is shared by a symmetric pair and cannot be split");
                done[k] = true;
                continue;
            }
            const int g = t.parent_of(p);
            const Bone2D upper = *t.bone_to(p);
            Joint2D copy = t.joints[p];
            copy.kind = JointKind::Junction;
            t.joints.push_back(copy);
            const int p2 = static_cast<int>(t.joints.size()) - 1;
            Bone2D twin = upper;
            twin.parent = g;
            twin.child = p2;
            t.bones.push_back(twin);
            for (Bone2D& bone : t.bones) {
                if (bone.parent == p && bone.child == b) {
                    bone.parent = p2;
                }
            }
            done[k] = true;
            out.emplace_back(p, p2);
            done.push_back(false);
            changed = true;
        }
    }
    return {t, out};
}

// 2D pixel coordinates to normalized image units: centred, y down, the
// longer image side spanning [-1, 1].
inline Vec2 pixel_to_normalized(double x, double y, int height, int width)
{
    const double half = 0.5 * std::max(height, width);
    return {(x + 0.5 - 0.5 * width) / half, (y + 0.5 - 0.5 * height) / half};
}

inline Skeleton3D uplift(const SkeletonTree& tree, const std::vector<JointPair>& pairs, int height, int width)
{
    const double half = 0.5 * std::max(height, width);
    Skeleton3D s;
    s.root = tree.root;
    s.joints.resize(3, static_cast<Eigen::Index>(tree.joints.size()));
    for (std::size_t j = 0; j < tree.joints.size(); ++j) {
        const Vec2 xy = pixel_to_normalized(tree.joints[j].x, tree.joints[j].y, height, width);
        s.joints.col(static_cast<Eigen::Index>(j)) = Vec3(xy.x(), xy.y(), 0.0);
    }
    for (const auto& [a, b] : pairs) {
        // Paired joints share their image-plane position so the rest pose is
        // exactly mirror-symmetric about z = 0.
        const double r = 0.5 * (tree.joints[a].radius + tree.joints[b].radius) / half;
        const Eigen::Vector2d mid = 0.5 * (s.joints.col(a).head<2>() + s.joints.col(b).head<2>());
        s.joints.col(a).head<2>() = mid;
        s.joints.col(b).head<2>() = mid;
        s.joints(2, std::min(a, b)) = r;
        s.joints(2, std::max(a, b)) = -r;
    }
    s.sym_pairs = pairs;
    for (const Bone2D& b : tree.bones) {
        s.bones.emplace_back(b.parent, b.child);
        s.bone_radii.push_back(b.mean_radius / half);
    }
    refresh_rest_transforms(s);
    (void)s.topological_bones(); // validates the tree
    return s;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const Skeleton3D& s)
{
    nlohmann::json j;
    j["root"] = s.root;
    j["joints"] = nlohmann::json::array();
    for (int c = 0; c < s.n_joints(); ++c) {
        j["joints"].push_back({s.joints(0, c), s.joints(1, c), s.joints(2, c)});
    }
    j["bones"] = nlohmann::json::array();
    for (const auto& [p, c] : s.bones) {
        j["bones"].push_back({p, c});
    }
    j["sym_pairs"] = nlohmann::json::array();
    for (const auto& [a, b] : s.sym_pairs) {
        j["sym_pairs"].push_back({a, b});
    }
    j["bone_radii"] = s.bone_radii;
    j["rest_transforms"] = nlohmann::json::array();
    for (const RigidTransform& t : s.rest_transforms) {
        nlohmann::json r = nlohmann::json::array();
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) {
                r.push_back(t.rotation(a, b));
            }
        }
        j["rest_transforms"].push_back(
            {{"scale", t.scale}, {"rotation", r}, {"translation", {t.translation.x(), t.translation.y(), t.translation.z()}}});
    }
    return j;
}

inline Skeleton3D skeleton3d_from_json(const nlohmann::json& j)
{
    try {
        Skeleton3D s;
        s.root = j.at("root").get<int>();
        const auto& joints = j.at("joints");
        s.joints.resize(3, static_cast<Eigen::Index>(joints.size()));
        for (std::size_t c = 0; c < joints.size(); ++c) {
            for (int a = 0; a < 3; ++a) {
                s.joints(a, static_cast<Eigen::Index>(c)) = joints[c].at(a).get<double>();
            }
        }
        for (const auto& b : j.at("bones")) {
            s.bones.emplace_back(b.at(0).get<int>(), b.at(1).get<int>());
        }
        for (const auto& p : j.at("sym_pairs")) {
            s.sym_pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
        }
        s.bone_radii = j.at("bone_radii").get<std::vector<double>>();
        if (s.bone_radii.size() != s.bones.size()) {
            throw ValidationError("skeleton3d: bone_radii must have one entry per bone");
        }
        for (const auto& [p, c] : s.bones) {
            if (p < 0 || c < 0 || p >= s.n_joints() || c >= s.n_joints()) {
                throw ValidationError("skeleton3d: bone references a missing joint");
            }
        }
        refresh_rest_transforms(s);
        (void)s.topological_bones();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("skeleton3d: ") + e.what());
    }
}

inline void save_skeleton3d(const std::filesystem::path& path, const Skeleton3D& s)
{
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << to_json(s).dump(2) << '\n';
}

inline Skeleton3D load_skeleton3d(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open skeleton " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("skeleton " + path.string() + ": " + e.what());
    }
    return skeleton3d_from_json(j);
}

inline nlohmann::json to_json(const SkeletonTree& t)
{
    nlohmann::json j;
    j["root"] = t.root;
    j["joints"] = nlohmann::json::array();
    for (const Joint2D& jt : t.joints) {
        const char* kind = jt.kind == JointKind::Root ? "root" : (jt.kind == JointKind::Endpoint ? "endpoint" : "junction");
        j["joints"].push_back({{"x", jt.x}, {"y", jt.y}, {"radius", jt.radius}, {"kind", kind}});
    }
    j["bones"] = nlohmann::json::array();
    for (const Bone2D& b : t.bones) {
        nlohmann::json path = nlohmann::json::array();
        for (const Pixel& p : b.path) {
            path.push_back({p.x, p.y});
        }
        j["bones"].push_back({{"parent", b.parent}, {"child", b.child}, {"mean_radius", b.mean_radius}, {"path", path}});
    }
    return j;
}

} // namespace artshape
