#pragma once

// Textured mesh export, keypoint transfer and evaluation metrics.

#include "artshape/errors.hpp"
#include "artshape/geometry.hpp"
#include "artshape/image.hpp"
#include "artshape/model.hpp"
#include "artshape/render.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cstdio>
#include <set>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

namespace artshape {

struct TexturedMesh {
    Points3 vertices;
    std::vector<Face> faces;
    Eigen::Matrix3Xd colors; // 0-1 RGB per vertex
    std::vector<int> part_ids;
};

// Bilinear RGB at continuous pixel position (u, v); the sample position is
// clamped to the pixel-centre lattice, so no read leaves the image.
inline Vec3 sample_rgb(const RgbImage& img, double u, double v)
{
    const double fx = std::clamp(u - 0.5, 0.0, img.width - 1.0);
    const double fy = std::clamp(v - 0.5, 0.0, img.height - 1.0);
    const int x0 = static_cast<int>(std::floor(fx));
    const int y0 = static_cast<int>(std::floor(fy));
    const int x1 = std::min(x0 + 1, img.width - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double tx = fx - x0;
    const double ty = fy - y0;
    return (1 - ty) * ((1 - tx) * img.at(y0, x0) + tx * img.at(y0, x1)) +
           ty * ((1 - tx) * img.at(y1, x0) + tx * img.at(y1, x1));
}

// Colours every part vertex: visible ones from the image, hidden ones from
// the same template vertex of the symmetric part when that one is visible,
// otherwise from the nearest visible vertex in 3D.
inline TexturedMesh sample_texture(const std::vector<Points3>& parts, const std::vector<Face>& faces,
                                   const CameraPose& cam, const RgbImage& rgb,
                                   const std::vector<std::vector<bool>>& visible,
                                   const std::vector<std::pair<int, int>>& sym_parts)
{
    const ImageSize size{rgb.height, rgb.width};
    const int b = static_cast<int>(parts.size());
    std::vector<int> partner(static_cast<std::size_t>(b), -1);
    for (const auto& [a, c] : sym_parts) {
        partner.at(a) = c;
        partner.at(c) = a;
    }
    TexturedMesh mesh;
    Eigen::Index total = 0;
    for (const Points3& p : parts) {
        total += p.cols();
    }
    mesh.vertices.resize(3, total);
    mesh.colors.resize(3, total);
    std::vector<bool> has(static_cast<std::size_t>(total), false);
    std::vector<Eigen::Index> offset;
    Eigen::Index off = 0;
    for (int i = 0; i < b; ++i) {
        offset.push_back(off);
        const Projection pr = project(cam, parts[i], size);
        mesh.vertices.middleCols(off, parts[i].cols()) = parts[i];
        for (Eigen::Index k = 0; k < parts[i].cols(); ++k) {
            if (visible[i][static_cast<std::size_t>(k)]) {
                mesh.colors.col(off + k) = sample_rgb(rgb, pr.pixels(0, k), pr.pixels(1, k));
                has[static_cast<std::size_t>(off + k)] = true;
            }
        }
        for (const Face& f : faces) {
            mesh.faces.push_back({static_cast<int>(off) + f[0], static_cast<int>(off) + f[1],
                                  static_cast<int>(off) + f[2]});
        }
        mesh.part_ids.insert(mesh.part_ids.end(), static_cast<std::size_t>(parts[i].cols()), i);
        off += parts[i].cols();
    }
    std::vector<Eigen::Index> seen;
    for (Eigen::Index k = 0; k < total; ++k) {
        if (has[static_cast<std::size_t>(k)]) {
            seen.push_back(k);
        }
    }
    if (seen.empty()) {
        throw ValidationError("sample_texture: no visible vertices");
    }
    std::vector<bool> direct = has;
    for (int i = 0; i < b; ++i) {
        for (Eigen::Index k = 0; k < parts[i].cols(); ++k) {
            const Eigen::Index g = offset[i] + k;
            if (direct[static_cast<std::size_t>(g)]) {
                continue;
            }
            const int q = partner[i];
            if (q >= 0 && k < parts[q].cols() && direct[static_cast<std::size_t>(offset[q] + k)]) {
                mesh.colors.col(g) = mesh.colors.col(offset[q] + k);
                continue;
            }
            Eigen::Index best = seen.front();
            double best_d = std::numeric_limits<double>::infinity();
            for (Eigen::Index s : seen) {
                const double d = (mesh.vertices.col(s) - mesh.vertices.col(g)).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = s;
                }
            }
            mesh.colors.col(g) = mesh.colors.col(best);
        }
    }
    return mesh;
}

// ---------------------------------------------------------------------------
// OBJ with per-vertex colour ("v x y z r g b") plus a JSON sidecar of part ids.

inline std::filesystem::path sidecar_path(const std::filesystem::path& obj)
{
    std::filesystem::path p = obj;
    p.replace_extension(".parts.json");
    return p;
}

inline void export_obj(const TexturedMesh& mesh, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    char buf[256];
    for (Eigen::Index k = 0; k < mesh.vertices.cols(); ++k) {
        std::snprintf(buf, sizeof buf, "v %.17g %.17g %.17g %.17g %.17g %.17g\n", mesh.vertices(0, k),
                      mesh.vertices(1, k), mesh.vertices(2, k), mesh.colors(0, k), mesh.colors(1, k),
                      mesh.colors(2, k));
        out << buf;
    }
    for (const Face& f : mesh.faces) {
        out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
    }
    if (!out) {
        throw IoError("short write on " + path.string());
    }
    std::ofstream side(sidecar_path(path));
    if (!side) {
        throw IoError("cannot write " + sidecar_path(path).string());
    }
    side << nlohmann::json{{"part_ids", mesh.part_ids}}.dump() << '\n';
}

inline TexturedMesh import_obj(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::vector<std::array<double, 6>> verts;
    TexturedMesh mesh;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "v") {
            std::array<double, 6> v{0, 0, 0, 0, 0, 0};
            for (double& x : v) {
                ls >> x;
            }
            verts.push_back(v);
        } else if (tag == "f") {
            Face f{};
            for (int& i : f) {
                ls >> i;
                --i;
            }
            mesh.faces.push_back(f);
        }
    }
    mesh.vertices.resize(3, static_cast<Eigen::Index>(verts.size()));
    mesh.colors.resize(3, static_cast<Eigen::Index>(verts.size()));
    for (std::size_t k = 0; k < verts.size(); ++k) {
        for (int c = 0; c < 3; ++c) {
            mesh.vertices(c, static_cast<Eigen::Index>(k)) = verts[k][c];
            mesh.colors(c, static_cast<Eigen::Index>(k)) = verts[k][3 + c];
        }
    }
    std::ifstream side(sidecar_path(path));
    if (side) {
        nlohmann::json j;
        side >> j;
        mesh.part_ids = j.at("part_ids").get<std::vector<int>>();
    }
    return mesh;
}

// ---------------------------------------------------------------------------
// Keypoints. Coordinates are normalized: x = u / w, y = v / h.

struct Keypoint {
    std::string name;
    double x = 0;
    double y = 0;
    bool visible = true;
};

using KeypointSet = std::vector<Keypoint>;

struct TransferredKeypoint {
    std::string name;
    double x = 0; // normalized on the destination image
    double y = 0;
    bool transferable = false;
};

// Everything keypoint transfer needs about one optimized instance, sampled
// at a (usually denser) set of template points.
struct InstanceView {
    std::vector<Points3> surfaces;
    std::vector<Projection> projections;
    std::vector<std::vector<bool>> visible;
};

inline InstanceView view_instance(const EnsembleModel& m, int j, const TriMesh& sampling, ImageSize size,
                                  double eps_z)
{
    InstanceView v;
    v.surfaces = instance_surfaces(m, j, sampling.vertices);
    const CameraPose cam = m.camera(j);
    for (const Points3& s : v.surfaces) {
        v.projections.push_back(project(cam, s, size));
    }
    const DepthBuffer depth = z_buffer(v.projections, sampling.faces, size);
    for (const Projection& pr : v.projections) {
        v.visible.push_back(visibility(pr, depth, eps_z, size));
    }
    return v;
}

// Source keypoint -> nearest visible source sample (pixel distance, within
// rho pixels) -> same template sample on the destination -> its projection.
inline std::vector<TransferredKeypoint> transfer_keypoints(const InstanceView& src, const InstanceView& dst,
                                                           const KeypointSet& kps, ImageSize size, double rho)
{
    std::vector<TransferredKeypoint> out;
    for (const Keypoint& kp : kps) {
        TransferredKeypoint t;
        t.name = kp.name;
        const Vec2 p(kp.x * size.width, kp.y * size.height);
        double best = std::numeric_limits<double>::infinity();
        int bi = -1;
        Eigen::Index bk = -1;
        for (std::size_t i = 0; i < src.projections.size(); ++i) {
            const auto& pr = src.projections[i];
            for (Eigen::Index k = 0; k < pr.pixels.cols(); ++k) {
                if (!src.visible[i][static_cast<std::size_t>(k)]) {
                    continue;
                }
                const double d = (pr.pixels.col(k) - p).norm();
                if (d < best) {
                    best = d;
                    bi = static_cast<int>(i);
                    bk = k;
                }
            }
        }
        if (kp.visible && bi >= 0 && best <= rho) {
            const Vec2 q = dst.projections[static_cast<std::size_t>(bi)].pixels.col(bk);
            t.x = q.x() / size.width;
            t.y = q.y() / size.height;
            t.transferable = true;
        }
        out.push_back(t);
    }
    return out;
}

// Fraction of keypoints whose pixel error is strictly below
// threshold * max(h, w). Untransferable points count as misses; absent
// for an empty list.
inline std::optional<double> pck(const std::vector<TransferredKeypoint>& pred, const KeypointSet& gt, ImageSize size,
                                 double threshold = 0.05)
{
    if (pred.size() != gt.size()) {
        throw std::invalid_argument("pck: keypoint lists differ in length");
    }
    if (pred.empty()) {
        return std::nullopt;
    }
    const double limit = threshold * std::max(size.height, size.width);
    int hit = 0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        if (!pred[k].transferable) {
            continue;
        }
        const Vec2 e((pred[k].x - gt[k].x) * size.width, (pred[k].y - gt[k].y) * size.height);
        if (e.norm() < limit) {
            ++hit;
        }
    }
    return static_cast<double>(hit) / static_cast<double>(pred.size());
}

template <class A, class B>
double iou(const Eigen::MatrixBase<A>& pred, const Eigen::MatrixBase<B>& gt)
{
    if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) {
        throw std::invalid_argument("iou: shape mismatch");
    }
    long long inter = 0, uni = 0;
    for (Eigen::Index k = 0; k < pred.size(); ++k) {
        const bool a = pred(k) != 0;
        const bool b = gt(k) != 0;
        inter += (a && b) ? 1 : 0;
        uni += (a || b) ? 1 : 0;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Greedy one-to-one mapping predicted label -> ground-truth label by largest
// overlap (ties: lower labels first).
inline std::map<int, int> greedy_part_mapping(const ByteGrid& pred, const ByteGrid& gt)
{
    std::map<std::pair<int, int>, long long> overlap;
    for (Eigen::Index k = 0; k < pred.size(); ++k) {
        if (pred(k) != 0 && gt(k) != 0) {
            ++overlap[{pred(k), gt(k)}];
        }
    }
    std::vector<std::tuple<long long, int, int>> cand;
    for (const auto& [key, n] : overlap) {
        cand.emplace_back(-n, key.first, key.second);
    }
    std::sort(cand.begin(), cand.end());
    std::map<int, int> mapping;
    std::set<int> used_gt;
    for (const auto& [neg, p, g] : cand) {
        if (mapping.count(p) || used_gt.count(g)) {
            continue;
        }
        mapping[p] = g;
        used_gt.insert(g);
    }
    return mapping;
}

// IoU per ground-truth label after relabelling predictions through
// `mapping` (greedy when empty). Unmatched labels score 0.
inline std::map<int, double> part_iou(const ByteGrid& pred, const ByteGrid& gt, std::map<int, int> mapping = {})
{
    if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) {
        throw std::invalid_argument("part_iou: shape mismatch");
    }
    if (mapping.empty()) {
        mapping = greedy_part_mapping(pred, gt);
    }
    std::set<int> labels;
    for (Eigen::Index k = 0; k < gt.size(); ++k) {
        if (gt(k) != 0) {
            labels.insert(gt(k));
        }
    }
    std::map<int, double> out;
    for (int g : labels) {
        long long inter = 0, uni = 0;
        for (Eigen::Index k = 0; k < gt.size(); ++k) {
            auto it = mapping.find(pred(k));
            const bool a = pred(k) != 0 && it != mapping.end() && it->second == g;
            const bool b = gt(k) == g;
            inter += (a && b) ? 1 : 0;
            uni += (a || b) ? 1 : 0;
        }
        out[g] = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
    }
    return out;
}

// Hard label image: 1 + index of the part with the largest soft coverage
// where the silhouette exceeds 0.5, 0 elsewhere.
inline ByteGrid part_labels(const RenderBuffer& buf)
{
    ByteGrid out = ByteGrid::Zero(buf.silhouette.rows(), buf.silhouette.cols());
    for (Eigen::Index k = 0; k < buf.silhouette.size(); ++k) {
        if (buf.silhouette(k) <= 0.5) {
            continue;
        }
        double best = -1;
        for (std::size_t i = 0; i < buf.parts.size(); ++i) {
            if (buf.parts[i](k) > best) {
                best = buf.parts[i](k);
                out(k) = static_cast<std::uint8_t>(std::min<std::size_t>(i + 1, 255));
            }
        }
    }
    return out;
}

} // namespace artshape
