#pragma once

// Optimization objectives. Every loss is a mean over its elements so the
// weights do not depend on resolution or mesh size.

#include "artshape/diff.hpp"
#include "artshape/geometry.hpp"
#include "artshape/image.hpp"
#include "artshape/render.hpp"

#include <nlohmann/json.hpp>

#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace artshape {

struct LossBreakdown {
    double sil = 0, part = 0, sem = 0, rot = 0, sym = 0, lap = 0, norm = 0;
    double total = 0;

    [[nodiscard]] std::map<std::string, double> terms() const
    {
        return {{"sil", sil}, {"part", part}, {"sem", sem}, {"rot", rot}, {"sym", sym}, {"lap", lap}, {"norm", norm}};
    }
};

inline double weighted_total(const LossBreakdown& b, const std::map<std::string, double>& weights)
{
    double t = 0;
    for (const auto& [k, v] : b.terms()) {
        auto it = weights.find(k);
        if (it != weights.end()) {
            t += it->second * v;
        }
    }
    return t;
}

inline nlohmann::json to_json(const LossBreakdown& b)
{
    nlohmann::json j = b.terms();
    j["total"] = b.total;
    return j;
}

// ---------------------------------------------------------------------------
// Silhouette and zoomed part silhouettes.

inline double loss_sil(const Grid& m, const Grid& target)
{
    if (m.rows() != target.rows() || m.cols() != target.cols()) {
        throw std::invalid_argument("loss_sil: shape mismatch");
    }
    return (m - target).squaredNorm() / static_cast<double>(m.size());
}

inline ad::Var loss_sil(ad::Var m, const Grid& target)
{
    if (m.rows() != target.rows() || m.cols() != target.cols()) {
        throw std::invalid_argument("loss_sil: shape mismatch");
    }
    ad::Tape& tape = *m.tape();
    return ad::mean(ad::square(ad::sub(m, tape.constant(target))));
}

// Sum over non-empty boxes of the mean squared difference between the
// zoomed crops; `valid` receives the number of boxes used.
inline ad::Var part_loss_sum(ad::Var m, const Grid& target, const std::vector<CropBox>& boxes, double factor, int& valid)
{
    ad::Tape& tape = *m.tape();
    valid = 0;
    ad::Var total = tape.scalar_constant(0.0);
    for (const CropBox& box : boxes) {
        if (box.empty) {
            continue;
        }
        const CropPlan plan = make_crop_plan(box, factor, static_cast<int>(m.rows()), static_cast<int>(m.cols()));
        ad::Var crop = zoom_crop_ad(m, plan);
        ad::Var diff = ad::sub(crop, tape.constant(apply_crop(plan, target)));
        total = ad::add(total, ad::mean(ad::square(diff)));
        ++valid;
    }
    return total;
}

// Mean over valid boxes; 0 when every part is invisible.
inline ad::Var loss_part(ad::Var m, const Grid& target, const std::vector<CropBox>& boxes, double factor)
{
    int valid = 0;
    ad::Var s = part_loss_sum(m, target, boxes, factor, valid);
    return valid == 0 ? s : ad::scale(s, 1.0 / valid);
}

inline double loss_part(const Grid& m, const Grid& target, const std::vector<CropBox>& boxes, double factor)
{
    double s = 0;
    int valid = 0;
    for (const CropBox& box : boxes) {
        if (box.empty) {
            continue;
        }
        const Grid a = zoom_crop(m, box, factor);
        const Grid b = zoom_crop(target, box, factor);
        s += (a - b).squaredNorm() / static_cast<double>(a.size());
        ++valid;
    }
    return valid == 0 ? 0.0 : s / valid;
}

// ---------------------------------------------------------------------------
// Semantic Chamfer.

// D(p, x) = |pi(x) - p|^2 + alpha |Q(x) - K(p)|^2 with normalized pixel
// coordinates.
inline double semantic_distance(const Vec2& p, const Vec2& projected, const Eigen::VectorXd& q,
                                const Eigen::VectorXd& k, double alpha)
{
    return (projected - p).squaredNorm() + alpha * (q - k).squaredNorm();
}

// alpha |Q(x) - K(p)|^2 for every (pixel, point): N x n.
inline Eigen::MatrixXd feature_cost(const Eigen::MatrixXd& pixel_features, const Eigen::MatrixXd& point_features,
                                    double alpha)
{
    const Eigen::VectorXd pn = pixel_features.colwise().squaredNorm().transpose();
    const Eigen::RowVectorXd qn = point_features.colwise().squaredNorm();
    Eigen::MatrixXd c = -2.0 * pixel_features.transpose() * point_features;
    c.colwise() += pn;
    c.rowwise() += qn;
    return alpha * c.array().max(0.0).matrix();
}

// mean_p min_x D + mean_x min_p D for an explicit N x n distance matrix.
inline double chamfer(const Eigen::MatrixXd& d)
{
    if (d.rows() == 0 || d.cols() == 0) {
        return 0.0;
    }
    return d.rowwise().minCoeff().mean() + d.colwise().minCoeff().mean();
}

// Chamfer on the tape. `projected` (2 x n) are normalized point projections,
// `pixels` (2 x N) normalized foreground pixel coordinates, `fcost` the
// N x n feature term. Only the geometric term carries gradient.
inline ad::Var loss_sem(ad::Var projected, const Eigen::Matrix2Xd& pixels, const Eigen::MatrixXd& fcost)
{
    const Eigen::Matrix2Xd x = projected.value();
    const Eigen::Index n = x.cols();
    const Eigen::Index np = pixels.cols();
    if (fcost.rows() != np || fcost.cols() != n) {
        throw std::invalid_argument("loss_sem: feature cost has the wrong shape");
    }
    if (n == 0 || np == 0) {
        return projected.tape()->scalar_constant(0.0);
    }
    std::vector<Eigen::Index> best_x(static_cast<std::size_t>(np));
    std::vector<Eigen::Index> best_p(static_cast<std::size_t>(n));
    Eigen::VectorXd row_min = Eigen::VectorXd::Constant(np, std::numeric_limits<double>::infinity());
    Eigen::VectorXd col_min = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i < np; ++i) {
            const double dx = x(0, j) - pixels(0, i);
            const double dy = x(1, j) - pixels(1, i);
            const double d = dx * dx + dy * dy + fcost(i, j);
            if (d < row_min(i)) {
                row_min(i) = d;
                best_x[static_cast<std::size_t>(i)] = j;
            }
            if (d < col_min(j)) {
                col_min(j) = d;
                best_p[static_cast<std::size_t>(j)] = i;
            }
        }
    }
    ad::Matrix out = ad::Matrix::Constant(1, 1, row_min.mean() + col_min.mean());
    return ad::custom({projected}, std::move(out),
                      [x, pixels, best_x, best_p, n, np](const ad::Matrix& g, ad::InputGrads in) {
                          if (in[0] == nullptr) {
                              return;
                          }
                          const double s = g(0, 0);
                          for (Eigen::Index i = 0; i < np; ++i) {
                              const Eigen::Index j = best_x[static_cast<std::size_t>(i)];
                              in[0]->col(j) += (2.0 * s / np) * (x.col(j) - pixels.col(i));
                          }
                          for (Eigen::Index j = 0; j < n; ++j) {
                              const Eigen::Index i = best_p[static_cast<std::size_t>(j)];
                              in[0]->col(j) += (2.0 * s / n) * (x.col(j) - pixels.col(i));
                          }
                      });
}

// At most `count` indices out of [0, n): one uniform pick per equal stratum.
inline std::vector<int> stratified_sample(int n, int count, std::mt19937_64& rng)
{
    std::vector<int> out;
    if (n <= count) {
        for (int i = 0; i < n; ++i) {
            out.push_back(i);
        }
        return out;
    }
    for (int s = 0; s < count; ++s) {
        const long long lo = static_cast<long long>(s) * n / count;
        const long long hi = static_cast<long long>(s + 1) * n / count;
        std::uniform_int_distribution<long long> u(lo, hi - 1);
        out.push_back(static_cast<int>(u(rng)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pose and shape regularizers.

// Mean over parts of |R_i - Rbar_i|_F^2.
inline ad::Var loss_rot(const std::vector<ad::Var>& rotations, const std::vector<ad::Var>& rest)
{
    if (rotations.size() != rest.size() || rotations.empty()) {
        throw std::invalid_argument("loss_rot: need matching non-empty rotation lists");
    }
    ad::Var total = ad::sum(ad::square(ad::sub(rotations[0], rest[0])));
    for (std::size_t i = 1; i < rotations.size(); ++i) {
        total = ad::add(total, ad::sum(ad::square(ad::sub(rotations[i], rest[i]))));
    }
    return ad::scale(total, 1.0 / static_cast<double>(rotations.size()));
}

inline double rotation_distance_sq(const Mat3& r, const Mat3& rest)
{
    return (r - rest).squaredNorm();
}

// Sum over pairs of |J_a - Psi(J_b)|^2, Psi negating z.
inline ad::Var loss_sym(ad::Var joints, const std::vector<std::pair<int, int>>& pairs)
{
    ad::Tape& tape = *joints.tape();
    if (pairs.empty()) {
        return tape.scalar_constant(0.0);
    }
    std::vector<ad::Index> as, bs;
    for (const auto& [a, b] : pairs) {
        as.push_back(a);
        bs.push_back(b);
    }
    const ad::Matrix psi = Eigen::Vector3d(1, 1, -1).asDiagonal();
    ad::Var ja = ad::gather_cols(joints, as);
    ad::Var jb = ad::matmul(tape.constant(psi), ad::gather_cols(joints, bs));
    return ad::sum(ad::square(ad::sub(ja, jb)));
}

// Mean over non-isolated vertices of |v - mean(neighbours)|^2.
inline ad::Var loss_lap(ad::Var vertices, const std::vector<std::vector<int>>& neighbors)
{
    const Points3 v = vertices.value();
    Points3 r = Points3::Zero(3, v.cols());
    int count = 0;
    for (Eigen::Index i = 0; i < v.cols(); ++i) {
        const auto& nb = neighbors.at(static_cast<std::size_t>(i));
        if (nb.empty()) {
            continue;
        }
        Vec3 c = Vec3::Zero();
        for (int j : nb) {
            c += v.col(j);
        }
        r.col(i) = v.col(i) - c / static_cast<double>(nb.size());
        ++count;
    }
    const double value = count == 0 ? 0.0 : r.squaredNorm() / count;
    return ad::custom({vertices}, ad::Matrix::Constant(1, 1, value),
                      [r, neighbors, count](const ad::Matrix& g, ad::InputGrads in) {
                          if (in[0] == nullptr || count == 0) {
                              return;
                          }
                          const double s = 2.0 * g(0, 0) / count;
                          for (Eigen::Index i = 0; i < r.cols(); ++i) {
                              const auto& nb = neighbors[static_cast<std::size_t>(i)];
                              if (nb.empty()) {
                                  continue;
                              }
                              const Vec3 gi = s * r.col(i);
                              in[0]->col(i) += gi;
                              const Vec3 gn = gi / static_cast<double>(nb.size());
                              for (int j : nb) {
                                  in[0]->col(j) -= gn;
                              }
                          }
                      });
}

// Mean over adjacent face pairs of 1 - cos(angle between normals);
// degenerate faces are skipped.
inline ad::Var loss_norm(ad::Var vertices, const std::vector<Face>& faces,
                         const std::vector<std::pair<int, int>>& face_pairs)
{
    const Points3 v = vertices.value();
    std::vector<Vec3> normals;
    std::vector<double> lengths;
    for (const Face& f : faces) {
        const Vec3 n = (v.col(f[1]) - v.col(f[0])).cross(v.col(f[2]) - v.col(f[0]));
        normals.push_back(n);
        lengths.push_back(n.norm());
    }
    std::vector<std::pair<int, int>> used;
    double total = 0;
    for (const auto& [a, b] : face_pairs) {
        if (lengths[a] < 1e-14 || lengths[b] < 1e-14) {
            continue;
        }
        total += 1.0 - normals[a].dot(normals[b]) / (lengths[a] * lengths[b]);
        used.emplace_back(a, b);
    }
    const double value = used.empty() ? 0.0 : total / static_cast<double>(used.size());
    return ad::custom({vertices}, ad::Matrix::Constant(1, 1, value),
                      [v, faces, normals, lengths, used](const ad::Matrix& g, ad::InputGrads in) {
                          if (in[0] == nullptr || used.empty()) {
                              return;
                          }
                          const double s = -g(0, 0) / static_cast<double>(used.size());
                          std::vector<Vec3> gn(normals.size(), Vec3::Zero());
                          for (const auto& [a, b] : used) {
                              const Vec3 ua = normals[a] / lengths[a];
                              const Vec3 ub = normals[b] / lengths[b];
                              const double c = ua.dot(ub);
                              gn[a] += s * (ub - c * ua) / lengths[a];
                              gn[b] += s * (ua - c * ub) / lengths[b];
                          }
                          for (std::size_t k = 0; k < faces.size(); ++k) {
                              if (gn[k].isZero(0)) {
                                  continue;
                              }
                              const Face& f = faces[k];
                              const Vec3 e1 = v.col(f[1]) - v.col(f[0]);
                              const Vec3 e2 = v.col(f[2]) - v.col(f[0]);
                              const Vec3 gb = e2.cross(gn[k]);
                              const Vec3 gc = gn[k].cross(e1);
                              in[0]->col(f[1]) += gb;
                              in[0]->col(f[2]) += gc;
                              in[0]->col(f[0]) -= gb + gc;
                          }
                      });
}

} // namespace artshape
