#pragma once

// Camera, soft silhouette rasterization, visibility and the part zoom crop.
//
// Pixel (col c, row r) covers [c, c+1) x [r, r+1); its centre is (c+0.5,
// r+0.5). With S = max(h, w), a camera-space point p maps to
//   u = w/2 + f * p.x / p.z * S/2,   v = h/2 + f * p.y / p.z * S/2
// (weak perspective divides by t0.z instead of p.z).

#include "artshape/diff.hpp"
#include "artshape/geometry.hpp"
#include "artshape/image.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <tuple>
#include <vector>

namespace artshape {

struct CameraPose {
    Vec3 rotation = Vec3::Zero(); // axis-angle R_0
    Vec3 translation = Vec3(0, 0, 2);
    double focal = 2.0;

    [[nodiscard]] Mat3 rotation_matrix() const { return rodrigues(rotation); }
};

inline constexpr double kMinDepth = 1e-3;

struct ImageSize {
    int height = 0;
    int width = 0;

    [[nodiscard]] double half_extent() const { return 0.5 * std::max(height, width); }
};

struct Projection {
    Eigen::Matrix2Xd pixels;
    Eigen::VectorXd depth;
    std::vector<bool> clamped; // depth hit kMinDepth
};

inline Projection project(const CameraPose& cam, const Points3& X, ImageSize size, bool weak = false)
{
    const Mat3 r = cam.rotation_matrix();
    Points3 p = r * X;
    p.colwise() += cam.translation;
    const double a = cam.focal * size.half_extent();
    Projection out;
    out.pixels.resize(2, X.cols());
    out.depth.resize(X.cols());
    out.clamped.assign(static_cast<std::size_t>(X.cols()), false);
    for (Eigen::Index k = 0; k < X.cols(); ++k) {
        double z = weak ? cam.translation.z() : p(2, k);
        if (z <= kMinDepth) {
            z = kMinDepth;
            out.clamped[static_cast<std::size_t>(k)] = true;
        }
        out.pixels(0, k) = 0.5 * size.width + a * p(0, k) / z;
        out.pixels(1, k) = 0.5 * size.height + a * p(1, k) / z;
        out.depth(k) = std::max(p(2, k), kMinDepth);
    }
    return out;
}

// Tape version: R (3x3), t (3x1), X (3xk) -> 2xk pixels. Clamped points get
// no gradient.
inline ad::Var project_ad(ad::Var R, ad::Var t, ad::Var X, double focal, ImageSize size, bool weak = false)
{
    const Eigen::Matrix3d r = R.value();
    const Eigen::Vector3d tv = t.value().col(0);
    const ad::Matrix& x = X.value();
    ad::Matrix p = r * x;
    p.colwise() += tv;
    const double a = focal * size.half_extent();
    ad::Matrix out(2, x.cols());
    std::vector<bool> clamped(static_cast<std::size_t>(x.cols()), false);
    for (Eigen::Index k = 0; k < x.cols(); ++k) {
        double z = weak ? tv.z() : p(2, k);
        if (z <= kMinDepth) {
            z = kMinDepth;
            clamped[static_cast<std::size_t>(k)] = true;
        }
        out(0, k) = 0.5 * size.width + a * p(0, k) / z;
        out(1, k) = 0.5 * size.height + a * p(1, k) / z;
    }
    return ad::custom({R, t, X}, std::move(out),
                      [r, tv, x, p, a, weak, clamped](const ad::Matrix& g, ad::InputGrads in) {
                          ad::Matrix gp = ad::Matrix::Zero(3, x.cols());
                          double gtz = 0.0;
                          for (Eigen::Index k = 0; k < x.cols(); ++k) {
                              if (clamped[static_cast<std::size_t>(k)]) {
                                  continue;
                              }
                              const double z = weak ? tv.z() : p(2, k);
                              gp(0, k) = a * g(0, k) / z;
                              gp(1, k) = a * g(1, k) / z;
                              const double dz = -a * (g(0, k) * p(0, k) + g(1, k) * p(1, k)) / (z * z);
                              if (weak) {
                                  gtz += dz;
                              } else {
                                  gp(2, k) = dz;
                              }
                          }
                          if (in[0] != nullptr) {
                              *in[0] += gp * x.transpose();
                          }
                          if (in[1] != nullptr) {
                              *in[1] += gp.rowwise().sum();
                              (*in[1])(2, 0) += gtz;
                          }
                          if (in[2] != nullptr) {
                              *in[2] += r.transpose() * gp;
                          }
                      });
}

// ---------------------------------------------------------------------------
// Soft rasterization.

namespace detail {

// Contributions further than this many sigmas outside a face are dropped.
inline constexpr double kCutoffSigmas = 8.0;

inline double sigmoid(double x)
{
    if (x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Distance from p to segment ab and the clamped segment parameter.
struct SegmentDistance {
    double dist;
    double t;
    Vec2 closest;
};

inline SegmentDistance segment_distance(const Vec2& p, const Vec2& a, const Vec2& b)
{
    const Vec2 ab = b - a;
    const double len2 = ab.squaredNorm();
    double t = len2 > 0 ? (p - a).dot(ab) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const Vec2 q = a + t * ab;
    return {(p - q).norm(), t, q};
}

// Signed distance from p to triangle (a, b, c): positive inside. Also
// reports the nearest edge (0: ab, 1: bc, 2: ca) and its segment data.
struct TriangleDistance {
    double signed_dist;
    int edge;
    SegmentDistance seg;
};

inline TriangleDistance triangle_distance(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c, double area2)
{
    const std::array<const Vec2*, 3> v = {&a, &b, &c};
    TriangleDistance best{0.0, -1, {std::numeric_limits<double>::infinity(), 0.0, Vec2::Zero()}};
    bool inside = true;
    for (int e = 0; e < 3; ++e) {
        const Vec2& s = *v[e];
        const Vec2& t = *v[(e + 1) % 3];
        const double cross = (t.x() - s.x()) * (p.y() - s.y()) - (t.y() - s.y()) * (p.x() - s.x());
        if (cross * area2 < 0) {
            inside = false;
        }
        SegmentDistance sd = segment_distance(p, s, t);
        if (sd.dist < best.seg.dist) {
            best.seg = sd;
            best.edge = e;
        }
    }
    best.signed_dist = inside ? best.seg.dist : -best.seg.dist;
    return best;
}

inline double area2(const Vec2& a, const Vec2& b, const Vec2& c)
{
    return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

struct PixelRange {
    int x0, x1, y0, y1; // inclusive; empty when x0 > x1 or y0 > y1
};

inline PixelRange face_range(const Vec2& a, const Vec2& b, const Vec2& c, double margin, ImageSize size)
{
    const double minx = std::min({a.x(), b.x(), c.x()}) - margin;
    const double maxx = std::max({a.x(), b.x(), c.x()}) + margin;
    const double miny = std::min({a.y(), b.y(), c.y()}) - margin;
    const double maxy = std::max({a.y(), b.y(), c.y()}) + margin;
    // Pixel centre c + 0.5 within [min, max].
    PixelRange r;
    r.x0 = std::max(0, static_cast<int>(std::ceil(minx - 0.5)));
    r.x1 = std::min(size.width - 1, static_cast<int>(std::floor(maxx - 0.5)));
    r.y0 = std::max(0, static_cast<int>(std::ceil(miny - 0.5)));
    r.y1 = std::min(size.height - 1, static_cast<int>(std::floor(maxy - 0.5)));
    return r;
}

// Signed distance of every pixel centre to the outline of one projected
// part: positive where some face covers the centre, magnitude the distance
// to the nearest contour edge (an edge whose two faces have opposite 2D
// orientation, i.e. a fold of the projection). Edges shared by two faces
// facing the same way lie inside the covered region and are ignored, so the
// interior of a closed part reads as fully covered. `edge` is the index into
// `contour` of the nearest contour edge, -1 beyond the cutoff (dist is then
// +-inf). Ties keep the lower edge index.
struct PartField {
    Grid dist;
    Eigen::MatrixXi edge;
    std::vector<std::array<int, 2>> contour;
};

// Undirected edges with their (up to two) incident faces; -1 marks a missing
// face on an open boundary.
struct EdgeFaces {
    std::array<int, 2> v;
    std::array<int, 2> f;
};

inline std::vector<EdgeFaces> edge_faces(const std::vector<Face>& faces)
{
    std::vector<std::tuple<int, int, int>> half;
    half.reserve(faces.size() * 3);
    for (std::size_t fi = 0; fi < faces.size(); ++fi) {
        for (int e = 0; e < 3; ++e) {
            const int a = faces[fi][e];
            const int b = faces[fi][(e + 1) % 3];
            half.emplace_back(std::min(a, b), std::max(a, b), static_cast<int>(fi));
        }
    }
    std::sort(half.begin(), half.end());
    std::vector<EdgeFaces> out;
    for (std::size_t k = 0; k < half.size();) {
        EdgeFaces ef{{std::get<0>(half[k]), std::get<1>(half[k])}, {std::get<2>(half[k]), -1}};
        std::size_t m = k + 1;
        if (m < half.size() && std::get<0>(half[m]) == ef.v[0] && std::get<1>(half[m]) == ef.v[1]) {
            ef.f[1] = std::get<2>(half[m]);
            ++m;
        }
        // Non-manifold extras are skipped; the template is a closed manifold.
        while (m < half.size() && std::get<0>(half[m]) == ef.v[0] && std::get<1>(half[m]) == ef.v[1]) {
            ++m;
        }
        out.push_back(ef);
        k = m;
    }
    return out;
}

inline PartField part_field(const Eigen::Matrix2Xd& px, const std::vector<Face>& faces, double sigma, ImageSize size)
{
    constexpr double inf = std::numeric_limits<double>::infinity();
    PartField pf{Grid::Constant(size.height, size.width, -inf), Eigen::MatrixXi::Constant(size.height, size.width, -1),
                 {}};
    std::vector<double> orient(faces.size());
    for (std::size_t fi = 0; fi < faces.size(); ++fi) {
        const Face& f = faces[fi];
        const Vec2 a = px.col(f[0]);
        const Vec2 b = px.col(f[1]);
        const Vec2 c = px.col(f[2]);
        const double ar = area2(a, b, c);
        orient[fi] = ar;
        if (std::abs(ar) < 1e-12) {
            continue;
        }
        const PixelRange r = face_range(a, b, c, 0.0, size);
        for (int y = r.y0; y <= r.y1; ++y) {
            for (int x = r.x0; x <= r.x1; ++x) {
                if (pf.dist(y, x) > 0) {
                    continue;
                }
                const Vec2 p(x + 0.5, y + 0.5);
                const double w0 = area2(b, c, p) / ar;
                const double w1 = area2(c, a, p) / ar;
                if (w0 >= 0 && w1 >= 0 && w0 + w1 <= 1) {
                    pf.dist(y, x) = inf;
                }
            }
        }
    }
    auto same_side = [&](int f, int g) {
        return f >= 0 && g >= 0 && ((orient[f] >= 1e-12 && orient[g] >= 1e-12) ||
                                    (orient[f] <= -1e-12 && orient[g] <= -1e-12));
    };
    auto solid = [&](int f) { return f >= 0 && std::abs(orient[f]) >= 1e-12; };
    for (const EdgeFaces& ef : edge_faces(faces)) {
        if ((solid(ef.f[0]) || solid(ef.f[1])) && !same_side(ef.f[0], ef.f[1])) {
            pf.contour.push_back(ef.v);
        }
    }
    Grid best = Grid::Constant(size.height, size.width, inf);
    const double margin = kCutoffSigmas * sigma;
    for (std::size_t ei = 0; ei < pf.contour.size(); ++ei) {
        const Vec2 a = px.col(pf.contour[ei][0]);
        const Vec2 b = px.col(pf.contour[ei][1]);
        const PixelRange r = face_range(a, b, b, margin, size);
        for (int y = r.y0; y <= r.y1; ++y) {
            for (int x = r.x0; x <= r.x1; ++x) {
                const double d = segment_distance(Vec2(x + 0.5, y + 0.5), a, b).dist;
                if (d > margin || d >= best(y, x)) {
                    continue;
                }
                best(y, x) = d;
                pf.edge(y, x) = static_cast<int>(ei);
            }
        }
    }
    for (Eigen::Index k = 0; k < best.size(); ++k) {
        if (pf.edge(k) >= 0) {
            pf.dist(k) = pf.dist(k) > 0 ? best(k) : -best(k);
        }
    }
    return pf;
}

inline Grid field_mask(const PartField& pf, double sigma)
{
    Grid m(pf.dist.rows(), pf.dist.cols());
    for (Eigen::Index k = 0; k < m.size(); ++k) {
        if (pf.edge(k) >= 0) {
            m(k) = sigmoid(pf.dist(k) / sigma);
        } else {
            m(k) = pf.dist(k) > 0 ? 1.0 : 0.0;
        }
    }
    return m;
}

} // namespace detail

// Soft coverage of one part: sigmoid of the signed outline distance over
// sigma. The 0.5 level sits on the projected outline however finely the part
// is tessellated.
inline Grid soft_part_mask(const Eigen::Matrix2Xd& pixels, const std::vector<Face>& faces, double sigma, ImageSize size)
{
    return detail::field_mask(detail::part_field(pixels, faces, sigma, size), sigma);
}

// Silhouette of all parts on the tape: 1 - prod_i (1 - part_i). Inputs are
// 2 x m projected vertices per part. When `part_masks` is given it receives
// the per-part soft masks.
inline ad::Var soft_silhouette_ad(const std::vector<ad::Var>& part_pixels, const std::vector<Face>& faces, double sigma,
                                  ImageSize size, std::vector<Grid>* part_masks = nullptr)
{
    const std::size_t n = part_pixels.size();
    std::vector<Eigen::Matrix2Xd> px;
    std::vector<detail::PartField> fields;
    std::vector<Grid> masks;
    for (const ad::Var& v : part_pixels) {
        px.emplace_back(v.value());
        fields.push_back(detail::part_field(px.back(), faces, sigma, size));
        masks.push_back(detail::field_mask(fields.back(), sigma));
    }
    // others[i] = prod_{k != i} (1 - part_k), from prefix and suffix products.
    std::vector<Grid> others(n, Grid::Ones(size.height, size.width));
    Grid run = Grid::Ones(size.height, size.width);
    for (std::size_t i = 0; i < n; ++i) {
        others[i] = run;
        run.array() *= 1.0 - masks[i].array();
    }
    ad::Matrix out = (1.0 - run.array()).matrix();
    run.setOnes();
    for (std::size_t i = n; i-- > 0;) {
        others[i].array() *= run.array();
        run.array() *= 1.0 - masks[i].array();
    }
    if (part_masks != nullptr) {
        part_masks->insert(part_masks->end(), masks.begin(), masks.end());
    }
    return ad::custom(part_pixels, std::move(out),
                      [px = std::move(px), fields = std::move(fields), masks = std::move(masks),
                       others = std::move(others), sigma](const ad::Matrix& g, ad::InputGrads in) {
                          for (std::size_t part = 0; part < px.size(); ++part) {
                              if (in[part] == nullptr) {
                                  continue;
                              }
                              ad::Matrix& gv = *in[part];
                              const Eigen::Matrix2Xd& P = px[part];
                              const detail::PartField& pf = fields[part];
                              for (Eigen::Index x = 0; x < pf.edge.cols(); ++x) {
                                  for (Eigen::Index y = 0; y < pf.edge.rows(); ++y) {
                                      const int ei = pf.edge(y, x);
                                      if (ei < 0) {
                                          continue;
                                      }
                                      const double m = masks[part](y, x);
                                      // d out / d d = prod_{k != i}(1 - part_k) * m (1 - m) / sigma
                                      const double dd = g(y, x) * others[part](y, x) * m * (1.0 - m) / sigma;
                                      if (dd == 0.0) {
                                          continue;
                                      }
                                      const auto& e = pf.contour[static_cast<std::size_t>(ei)];
                                      const Vec2 p(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
                                      const detail::SegmentDistance sd = detail::segment_distance(p, P.col(e[0]), P.col(e[1]));
                                      if (sd.dist == 0.0) {
                                          continue;
                                      }
                                      const double sign = pf.dist(y, x) >= 0 ? 1.0 : -1.0;
                                      const Vec2 nrm = (p - sd.closest) / sd.dist;
                                      // d dist / d endpoint = -(segment weight) * n
                                      gv.col(e[0]) += -sign * dd * (1.0 - sd.t) * nrm;
                                      gv.col(e[1]) += -sign * dd * sd.t * nrm;
                                  }
                              }
                          }
                      });
}

// ---------------------------------------------------------------------------
// Plain render buffer.

struct RenderBuffer {
    Grid silhouette;
    std::vector<Grid> parts;
    Grid depth; // +inf where no face covers the pixel centre
    std::vector<std::vector<bool>> visible; // per part, per vertex
};

// Hard z-buffer. Each pixel centre keeps the nearest face depth and that
// face's 1/z plane in screen space (1/z is affine in u, v under perspective),
// so depth can be re-evaluated at any sub-pixel point of the winning face.
struct DepthBuffer {
    Grid depth;                // +inf where no face covers the pixel centre
    Eigen::Matrix3Xd inv_plane; // per pixel (column-major): 1/z = a u + b v + c

    [[nodiscard]] double surface_depth(double u, double v) const
    {
        const Eigen::Index x = static_cast<Eigen::Index>(u);
        const Eigen::Index y = static_cast<Eigen::Index>(v);
        if (!std::isfinite(depth(y, x))) {
            return std::numeric_limits<double>::infinity();
        }
        const Eigen::Vector3d c = inv_plane.col(y + x * depth.rows());
        const double inv = c(0) * u + c(1) * v + c(2);
        return inv > 0 ? 1.0 / inv : std::numeric_limits<double>::infinity();
    }
};

inline DepthBuffer z_buffer(const std::vector<Projection>& parts, const std::vector<Face>& faces, ImageSize size)
{
    DepthBuffer zb{Grid::Constant(size.height, size.width, std::numeric_limits<double>::infinity()),
                   Eigen::Matrix3Xd::Zero(3, static_cast<Eigen::Index>(size.height) * size.width)};
    for (const Projection& pr : parts) {
        for (const Face& f : faces) {
            const Vec2 a = pr.pixels.col(f[0]);
            const Vec2 b = pr.pixels.col(f[1]);
            const Vec2 c = pr.pixels.col(f[2]);
            const double ar = detail::area2(a, b, c);
            if (std::abs(ar) < 1e-12) {
                continue;
            }
            auto inv_depth = [&](const Vec2& p) {
                const double w0 = detail::area2(b, c, p) / ar;
                const double w1 = detail::area2(c, a, p) / ar;
                return w0 / pr.depth(f[0]) + w1 / pr.depth(f[1]) + (1.0 - w0 - w1) / pr.depth(f[2]);
            };
            const double i0 = inv_depth(Vec2::Zero());
            const Eigen::Vector3d plane(inv_depth(Vec2(1, 0)) - i0, inv_depth(Vec2(0, 1)) - i0, i0);
            const detail::PixelRange r = detail::face_range(a, b, c, 0.0, size);
            for (int y = r.y0; y <= r.y1; ++y) {
                for (int x = r.x0; x <= r.x1; ++x) {
                    const Vec2 p(x + 0.5, y + 0.5);
                    const double w0 = detail::area2(b, c, p) / ar;
                    const double w1 = detail::area2(c, a, p) / ar;
                    if (w0 < 0 || w1 < 0 || w0 + w1 > 1) {
                        continue;
                    }
                    const double z = 1.0 / inv_depth(p);
                    if (z < zb.depth(y, x)) {
                        zb.depth(y, x) = z;
                        zb.inv_plane.col(y + static_cast<Eigen::Index>(x) * size.height) = plane;
                    }
                }
            }
        }
    }
    return zb;
}

inline Grid depth_buffer(const std::vector<Projection>& parts, const std::vector<Face>& faces, ImageSize size)
{
    return z_buffer(parts, faces, size).depth;
}

// A vertex is visible iff it lands inside the image and its depth is within
// eps of the front surface at its exact image position. Looking up the pixel
// centre alone hides rim vertices, where depth changes fast across a pixel.
inline std::vector<bool> visibility(const Projection& pr, const DepthBuffer& zb, double eps, ImageSize size)
{
    std::vector<bool> vis(static_cast<std::size_t>(pr.pixels.cols()), false);
    for (Eigen::Index k = 0; k < pr.pixels.cols(); ++k) {
        const double u = pr.pixels(0, k);
        const double v = pr.pixels(1, k);
        if (!(u >= 0 && v >= 0 && u < size.width && v < size.height) || pr.clamped[static_cast<std::size_t>(k)]) {
            continue;
        }
        vis[static_cast<std::size_t>(k)] = pr.depth(k) <= zb.surface_depth(u, v) + eps;
    }
    return vis;
}

inline RenderBuffer rasterize_soft(const std::vector<Points3>& parts, const std::vector<Face>& faces,
                                   const CameraPose& cam, double sigma, ImageSize size, double eps_z = 0.02,
                                   bool weak = false)
{
    RenderBuffer buf;
    Grid keep = Grid::Ones(size.height, size.width);
    std::vector<Projection> prs;
    for (const Points3& v : parts) {
        prs.push_back(project(cam, v, size, weak));
        buf.parts.push_back(soft_part_mask(prs.back().pixels, faces, sigma, size));
        keep.array() *= 1.0 - buf.parts.back().array();
    }
    buf.silhouette = (1.0 - keep.array()).matrix();
    const DepthBuffer zb = z_buffer(prs, faces, size);
    buf.depth = zb.depth;
    for (const Projection& pr : prs) {
        buf.visible.push_back(visibility(pr, zb, eps_z, size));
    }
    return buf;
}

// ---------------------------------------------------------------------------
// Zoom crop.

// Crop window in continuous pixel-edge coordinates.
struct CropBox {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    bool empty = true;
};

// Bounding box of mask > 0.5, padded by `pad` of its size on every side and
// clipped to the image.
inline CropBox part_box(const Grid& mask, double pad = 0.1)
{
    int minx = std::numeric_limits<int>::max(), miny = minx, maxx = -1, maxy = -1;
    for (Eigen::Index y = 0; y < mask.rows(); ++y) {
        for (Eigen::Index x = 0; x < mask.cols(); ++x) {
            if (mask(y, x) > 0.5) {
                minx = std::min(minx, static_cast<int>(x));
                maxx = std::max(maxx, static_cast<int>(x));
                miny = std::min(miny, static_cast<int>(y));
                maxy = std::max(maxy, static_cast<int>(y));
            }
        }
    }
    CropBox b;
    if (maxx < 0) {
        return b;
    }
    const double bw = maxx + 1 - minx;
    const double bh = maxy + 1 - miny;
    b.x0 = std::max(0.0, minx - pad * bw);
    b.x1 = std::min(static_cast<double>(mask.cols()), maxx + 1 + pad * bw);
    b.y0 = std::max(0.0, miny - pad * bh);
    b.y1 = std::min(static_cast<double>(mask.rows()), maxy + 1 + pad * bh);
    b.empty = false;
    return b;
}

// Bilinear sampling plan (align-corners false, border clamped): each output
// pixel blends four input pixels.
struct CropPlan {
    int out_h = 0;
    int out_w = 0;
    std::vector<std::array<Eigen::Index, 4>> index; // linear (column-major) input indices
    std::vector<std::array<double, 4>> weight;
};

inline CropPlan make_crop_plan(const CropBox& box, double factor, int in_h, int in_w)
{
    CropPlan plan;
    if (box.empty) {
        return plan;
    }
    plan.out_h = std::max(1, static_cast<int>(std::lround(factor * (box.y1 - box.y0))));
    plan.out_w = std::max(1, static_cast<int>(std::lround(factor * (box.x1 - box.x0))));
    const double sy = (box.y1 - box.y0) / plan.out_h;
    const double sx = (box.x1 - box.x0) / plan.out_w;
    plan.index.resize(static_cast<std::size_t>(plan.out_h) * plan.out_w);
    plan.weight.resize(plan.index.size());
    for (int ox = 0; ox < plan.out_w; ++ox) {
        double fx = std::clamp(box.x0 + (ox + 0.5) * sx - 0.5, 0.0, in_w - 1.0);
        const int xa = static_cast<int>(std::floor(fx));
        const int xb = std::min(xa + 1, in_w - 1);
        const double tx = fx - xa;
        for (int oy = 0; oy < plan.out_h; ++oy) {
            double fy = std::clamp(box.y0 + (oy + 0.5) * sy - 0.5, 0.0, in_h - 1.0);
            const int ya = static_cast<int>(std::floor(fy));
            const int yb = std::min(ya + 1, in_h - 1);
            const double ty = fy - ya;
            const std::size_t k = static_cast<std::size_t>(ox) * plan.out_h + oy;
            plan.index[k] = {ya + static_cast<Eigen::Index>(xa) * in_h, yb + static_cast<Eigen::Index>(xa) * in_h,
                             ya + static_cast<Eigen::Index>(xb) * in_h, yb + static_cast<Eigen::Index>(xb) * in_h};
            plan.weight[k] = {(1 - ty) * (1 - tx), ty * (1 - tx), (1 - ty) * tx, ty * tx};
        }
    }
    return plan;
}

inline Grid apply_crop(const CropPlan& plan, const Grid& g)
{
    Grid out(plan.out_h, plan.out_w);
    for (std::size_t k = 0; k < plan.index.size(); ++k) {
        double s = 0;
        for (int q = 0; q < 4; ++q) {
            s += plan.weight[k][q] * g(plan.index[k][q]);
        }
        out(static_cast<Eigen::Index>(k)) = s;
    }
    return out;
}

inline Grid zoom_crop(const Grid& g, const CropBox& box, double factor)
{
    return apply_crop(make_crop_plan(box, factor, static_cast<int>(g.rows()), static_cast<int>(g.cols())), g);
}

inline ad::Var zoom_crop_ad(ad::Var g, const CropPlan& plan)
{
    ad::Matrix out = apply_crop(plan, g.value());
    return ad::custom({g}, std::move(out), [plan](const ad::Matrix& go, ad::InputGrads in) {
        if (in[0] == nullptr) {
            return;
        }
        for (std::size_t k = 0; k < plan.index.size(); ++k) {
            const double v = go(static_cast<Eigen::Index>(k));
            for (int q = 0; q < 4; ++q) {
                (*in[0])(plan.index[k][q]) += plan.weight[k][q] * v;
            }
        }
    });
}

} // namespace artshape
