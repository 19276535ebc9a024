#pragma once

#include "artshape/diff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

namespace artshape {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Points3 = Eigen::Matrix3Xd; // one point per column
using Face = std::array<int, 3>;

// x -> scale * rotation * x + translation
struct RigidTransform {
    double scale = 1.0;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
};

inline Mat3 skew(const Vec3& v)
{
    Mat3 k;
    k << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return k;
}

// Axis-angle vector to rotation matrix (Rodrigues).
inline Mat3 rodrigues(const Vec3& w)
{
    const double t = w.norm();
    const Mat3 k = skew(w);
    double a = 1.0;
    double b = 0.5;
    if (t > 1e-4) {
        a = std::sin(t) / t;
        b = (1.0 - std::cos(t)) / (t * t);
    } else {
        const double t2 = t * t;
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
    }
    return Mat3::Identity() + a * k + b * k * k;
}

// Rotation matrix to axis-angle (inverse of rodrigues on |w| < pi).
inline Vec3 log_rotation(const Mat3& r)
{
    Eigen::AngleAxisd aa(r);
    return aa.axis() * aa.angle();
}

// Rotation taking +z onto `dir` about the axis z x dir (minimal twist).
// The antiparallel case rotates 180 degrees about x.
inline Mat3 minimal_twist_rotation(const Vec3& dir)
{
    const double n = dir.norm();
    if (n == 0.0) {
        throw std::invalid_argument("minimal_twist_rotation: zero-length direction");
    }
    const Vec3 d = dir / n;
    const Vec3 z(0, 0, 1);
    const Vec3 axis = z.cross(d);
    const double s = axis.norm();
    const double c = z.dot(d);
    if (s < 1e-12) {
        if (c > 0) {
            return Mat3::Identity();
        }
        return Eigen::AngleAxisd(std::numbers::pi, Vec3::UnitX()).toRotationMatrix();
    }
    return Eigen::AngleAxisd(std::atan2(s, c), axis / s).toRotationMatrix();
}

namespace ad {

// Rodrigues' formula on the tape: 3x1 axis-angle -> 3x3 rotation.
inline Var rodrigues(Var w)
{
    if (w.rows() != 3 || w.cols() != 1) {
        throw std::invalid_argument("rodrigues: expected a 3x1 axis-angle vector");
    }
    const Vec3 v = w.value().col(0);
    const double t = v.norm();
    double a, b, da, db; // da = a'(t)/t, db = b'(t)/t
    if (t > 1e-4) {
        const double s = std::sin(t);
        const double c = std::cos(t);
        a = s / t;
        b = (1.0 - c) / (t * t);
        da = (t * c - s) / (t * t * t);
        db = (t * s - 2.0 * (1.0 - c)) / (t * t * t * t);
    } else {
        const double t2 = t * t;
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
        da = -1.0 / 3.0 + t2 / 30.0;
        db = -1.0 / 12.0 + t2 / 180.0;
    }
    const Mat3 k = skew(v);
    const Mat3 k2 = k * k;
    Matrix out = Mat3::Identity() + a * k + b * k2;
    return custom({w}, std::move(out), [v, k, k2, a, b, da, db](const Matrix& g, InputGrads in) {
        if (in[0] == nullptr) {
            return;
        }
        for (int i = 0; i < 3; ++i) {
            const Mat3 e = skew(Vec3::Unit(i));
            const Mat3 dr = da * v(i) * k + a * e + db * v(i) * k2 + b * (e * k + k * e);
            (*in[0])(i, 0) += (g.array() * dr.array()).sum();
        }
    });
}

} // namespace ad

// ---------------------------------------------------------------------------
// Triangle meshes.

struct TriMesh {
    Points3 vertices;
    std::vector<Face> faces;
};

// Icosphere on the unit sphere; level 0 is the icosahedron (12 vertices),
// level 3 has 642. Faces are counter-clockwise seen from outside.
inline TriMesh make_icosphere(int level)
{
    if (level < 0) {
        throw std::invalid_argument("make_icosphere: negative level");
    }
    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> v = {{-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0}, {0, -1, phi}, {0, 1, phi},
                           {0, -1, -phi}, {0, 1, -phi}, {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1}};
    for (auto& p : v) {
        p.normalize();
    }
    std::vector<Face> f = {{0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                           {11, 10, 2}, {10, 7, 6}, {7, 1, 8}, {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8},
                           {3, 8, 9}, {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};
    for (int l = 0; l < level; ++l) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            const auto key = std::minmax(a, b);
            auto it = midpoint.find(key);
            if (it != midpoint.end()) {
                return it->second;
            }
            v.push_back((v[a] + v[b]).normalized());
            const int id = static_cast<int>(v.size()) - 1;
            midpoint.emplace(key, id);
            return id;
        };
        std::vector<Face> next;
        next.reserve(f.size() * 4);
        for (const Face& t : f) {
            const int ab = mid(t[0], t[1]);
            const int bc = mid(t[1], t[2]);
            const int ca = mid(t[2], t[0]);
            next.push_back({t[0], ab, ca});
            next.push_back({t[1], bc, ab});
            next.push_back({t[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        f = std::move(next);
    }
    TriMesh mesh;
    mesh.vertices.resize(3, static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
        mesh.vertices.col(static_cast<Eigen::Index>(i)) = v[i];
    }
    mesh.faces = std::move(f);
    return mesh;
}

// Level whose icosphere has exactly `m` vertices (10 * 4^level + 2).
inline int icosphere_level_for(int m)
{
    for (int level = 0; level < 8; ++level) {
        const int count = 10 * (1 << (2 * level)) + 2;
        if (count == m) {
            return level;
        }
    }
    throw std::invalid_argument("icosphere_level_for: " + std::to_string(m) + " is not an icosphere vertex count");
}

inline std::vector<std::vector<int>> vertex_neighbors(int n_vertices, const std::vector<Face>& faces)
{
    std::vector<std::set<int>> sets(static_cast<std::size_t>(n_vertices));
    for (const Face& f : faces) {
        for (int k = 0; k < 3; ++k) {
            const int a = f[k];
            const int b = f[(k + 1) % 3];
            sets[a].insert(b);
            sets[b].insert(a);
        }
    }
    std::vector<std::vector<int>> out(sets.size());
    for (std::size_t i = 0; i < sets.size(); ++i) {
        out[i].assign(sets[i].begin(), sets[i].end());
    }
    return out;
}

// Pairs of faces sharing an edge, each pair listed once (lower index first).
inline std::vector<std::pair<int, int>> adjacent_face_pairs(const std::vector<Face>& faces)
{
    std::map<std::pair<int, int>, std::vector<int>> edge_faces;
    for (std::size_t i = 0; i < faces.size(); ++i) {
        for (int k = 0; k < 3; ++k) {
            edge_faces[std::minmax(faces[i][k], faces[i][(k + 1) % 3])].push_back(static_cast<int>(i));
        }
    }
    std::set<std::pair<int, int>> pairs;
    for (const auto& [edge, fs] : edge_faces) {
        for (std::size_t a = 0; a < fs.size(); ++a) {
            for (std::size_t b = a + 1; b < fs.size(); ++b) {
                pairs.insert(std::minmax(fs[a], fs[b]));
            }
        }
    }
    return {pairs.begin(), pairs.end()};
}

inline int count_unique_edges(const std::vector<Face>& faces)
{
    std::set<std::pair<int, int>> edges;
    for (const Face& f : faces) {
        for (int k = 0; k < 3; ++k) {
            edges.insert(std::minmax(f[k], f[(k + 1) % 3]));
        }
    }
    return static_cast<int>(edges.size());
}

} // namespace artshape
