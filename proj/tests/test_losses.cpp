#include "artshape/losses.hpp"
#include "artshape/geometry.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <random>

using namespace artshape;
using ad::Matrix;

namespace {

Matrix uniform(std::mt19937_64& rng, int r, int c, double lo, double hi)
{
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(r, c);
    for (Eigen::Index k = 0; k < m.size(); ++k) {
        m(k) = u(rng);
    }
    return m;
}

Grid block_mask(int size, int x0, int y0, int w, int h)
{
    Grid g = Grid::Zero(size, size);
    g.block(y0, x0, h, w).setOnes();
    return g;
}

// Triangular lattice (i + j/2, j sqrt(3)/2), n x n vertices. Only interior
// vertices get neighbour lists (valence 6); the rim is excluded.
struct Lattice {
    Points3 V;
    std::vector<std::vector<int>> neighbors;
    int n;
    [[nodiscard]] int id(int i, int j) const { return i + j * n; }
};

Lattice triangular_lattice(int n)
{
    Lattice L{Points3(3, n * n), std::vector<std::vector<int>>(static_cast<std::size_t>(n * n)), n};
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            L.V.col(L.id(i, j)) = Vec3(i + 0.5 * j, j * std::sqrt(3.0) / 2, 0.0);
        }
    }
    const int off[6][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {-1, 1}, {1, -1}};
    for (int j = 1; j < n - 1; ++j) {
        for (int i = 1; i < n - 1; ++i) {
            for (const auto& o : off) {
                L.neighbors[L.id(i, j)].push_back(L.id(i + o[0], j + o[1]));
            }
        }
    }
    return L;
}

double eval(const std::function<ad::Var(ad::Tape&, ad::Var)>& f, const Matrix& x)
{
    ad::Tape t;
    return f(t, t.constant(x)).scalar();
}

} // namespace

TEST(LossSil, ExamplesAndShapeCheck)
{
    const Grid a = block_mask(10, 2, 2, 5, 5);
    EXPECT_EQ(loss_sil(a, a), 0.0);
    EXPECT_EQ(loss_sil(Grid::Zero(6, 7), Grid::Ones(6, 7)), 1.0);
    EXPECT_THROW(loss_sil(Grid::Zero(6, 7), Grid::Zero(7, 6)), std::invalid_argument);
}

TEST(LossSil, DisagreeingPixelsOverTotal)
{
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const auto ma = testing_support::random_mask(rng, 13, 17, 0.4);
        const auto mb = testing_support::random_mask(rng, 13, 17, 0.4);
        int q = 0;
        for (int y = 0; y < 13; ++y) {
            for (int x = 0; x < 17; ++x) {
                q += ma(y, x) != mb(y, x) ? 1 : 0;
            }
        }
        const Grid a = ma.cast<double>();
        const Grid b = mb.cast<double>();
        EXPECT_DOUBLE_EQ(loss_sil(a, b), q / (13.0 * 17.0));
        ad::Tape t;
        EXPECT_DOUBLE_EQ(loss_sil(t.constant(a), b).scalar(), q / (13.0 * 17.0));
    }
}

TEST(LossPart, IdentityBoxReducesToSilhouette)
{
    std::mt19937_64 rng(2);
    const Grid m = uniform(rng, 12, 12, 0, 1);
    const Grid t = uniform(rng, 12, 12, 0, 1);
    const std::vector<CropBox> full = {CropBox{0, 0, 12, 12, false}};
    EXPECT_NEAR(loss_part(m, t, full, 1.0), loss_sil(m, t), 1e-15);
    EXPECT_EQ(loss_part(t, t, full, 4.0), 0.0);
    EXPECT_EQ(loss_part(m, t, {CropBox{}, CropBox{}}, 4.0), 0.0);
}

TEST(LossPart, ZoomAmplifiesAMisalignedSmallPart)
{
    // Two parts: a 24x24 body that matches and a 4x4 tip shifted by 2 px.
    const int S = 64;
    const Grid body = block_mask(S, 10, 10, 24, 24);
    const Grid tip_target = block_mask(S, 40, 20, 4, 4);
    const Grid tip_render = block_mask(S, 42, 20, 4, 4);
    const Grid target = body + tip_target;
    const Grid render = body + tip_render;
    const std::vector<CropBox> boxes = {part_box(body), part_box(tip_target)};
    const double sil = loss_sil(render, target);
    // Only the tip contributes to the silhouette loss: 16 mismatched pixels.
    EXPECT_DOUBLE_EQ(sil, 16.0 / (S * S));
    const double part = loss_part(render, target, boxes, 4.0);
    EXPECT_GT(part, sil);
    const double tip_only = loss_part(render, target, {boxes[1]}, 4.0);
    EXPECT_GT(tip_only, sil);
    EXPECT_NEAR(loss_part(render, target, {boxes[0]}, 4.0), 0.0, 1e-15);

    ad::Tape t;
    EXPECT_NEAR(loss_part(t.constant(render), target, boxes, 4.0).scalar(), part, 1e-12);
}

TEST(SemanticDistance, Examples)
{
    const Vec2 p(0.3, 0.4);
    Eigen::VectorXd q(3), k(3);
    q << 0.6, 0.8, 0.0;
    EXPECT_EQ(semantic_distance(p, p, q, q, 5.0), 0.0);
    k << 0.6, 0.3, 0.0; // |q - k|^2 = 0.25
    EXPECT_NEAR(semantic_distance(p, p + Vec2(0.3, 0.1), q, k, 0.0), 0.1, 1e-15);
    EXPECT_NEAR(semantic_distance(p, p + Vec2(0.3, 0.1), q, k, 2.0), 0.6, 1e-15);
}

TEST(SemanticDistance, FeatureCostMatchesPairwiseFormula)
{
    std::mt19937_64 rng(3);
    const Matrix pf = uniform(rng, 5, 7, -1, 1);
    const Matrix qf = uniform(rng, 5, 4, -1, 1);
    const Matrix c = feature_cost(pf, qf, 1.5);
    for (int i = 0; i < 7; ++i) {
        for (int j = 0; j < 4; ++j) {
            EXPECT_NEAR(c(i, j), 1.5 * (pf.col(i) - qf.col(j)).squaredNorm(), 1e-12);
        }
    }
}

TEST(Chamfer, HandSetThreeByThree)
{
    Matrix d(3, 3);
    d << 0.5, 2.0, 1.0,
         3.0, 0.25, 4.0,
         1.5, 2.5, 6.0;
    // Rows: 0.5, 0.25, 1.5 -> 0.75; columns: 0.5, 0.25, 1.0 -> 7/12.
    EXPECT_NEAR(chamfer(d), 0.75 + 7.0 / 12.0, 1e-15);
    EXPECT_NEAR(chamfer(d), testing_support::brute_chamfer({{0.5, 2.0, 1.0}, {3.0, 0.25, 4.0}, {1.5, 2.5, 6.0}}), 1e-15);
}

TEST(Chamfer, RandomMatricesMatchBruteForce)
{
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> side(1, 16);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = side(rng);
        const int m = side(rng);
        const Matrix d = uniform(rng, n, m, 0, 3);
        std::vector<std::vector<double>> rows(n, std::vector<double>(m));
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < m; ++j) {
                rows[i][j] = d(i, j);
            }
        }
        EXPECT_NEAR(chamfer(d), testing_support::brute_chamfer(rows), 1e-12);
    }
}

TEST(LossSem, AlphaZeroIsPlainTwoDimensionalChamfer)
{
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> side(1, 16);
    for (int trial = 0; trial < 30; ++trial) {
        const int np = side(rng);
        const int n = side(rng);
        const Eigen::Matrix2Xd pixels = uniform(rng, 2, np, 0, 1);
        const Matrix proj = uniform(rng, 2, n, 0, 1);
        std::vector<std::vector<double>> rows(np, std::vector<double>(n));
        for (int i = 0; i < np; ++i) {
            for (int j = 0; j < n; ++j) {
                rows[i][j] = (pixels.col(i) - proj.col(j)).squaredNorm();
            }
        }
        const Matrix fcost = feature_cost(uniform(rng, 4, np, -1, 1), uniform(rng, 4, n, -1, 1), 0.0);
        ad::Tape t;
        EXPECT_NEAR(loss_sem(t.constant(proj), pixels, fcost).scalar(), testing_support::brute_chamfer(rows), 1e-12);
    }
}

TEST(LossSem, SinglePairAtZeroDistanceIsZero)
{
    ad::Tape t;
    const Eigen::Matrix2Xd px = Eigen::Vector2d(0.4, 0.6);
    EXPECT_EQ(loss_sem(t.constant(Matrix(px)), px, Matrix::Zero(1, 1)).scalar(), 0.0);
}

// A duplicated point leaves every pixel's nearest distance unchanged; only
// the point-side mean gains one more term, so the change is exactly
// (d_dup - mean_x min_p D) / (n + 1) and can be of either sign.
TEST(LossSem, DuplicatingAPointOnlyReweightsThePointSide)
{
    std::mt19937_64 rng(6);
    int increased = 0;
    for (int trial = 0; trial < 30; ++trial) {
        const Eigen::Matrix2Xd pixels = uniform(rng, 2, 9, 0, 1);
        const Matrix proj = uniform(rng, 2, 6, 0, 1);
        const Matrix pf = uniform(rng, 3, 9, -1, 1);
        const Matrix qf = uniform(rng, 3, 6, -1, 1);
        const int dup = trial % 6;
        Matrix proj2(2, 7);
        proj2 << proj, proj.col(dup);
        Matrix qf2(3, 7);
        qf2 << qf, qf.col(dup);
        const Matrix fc = feature_cost(pf, qf, 0.7);
        Matrix D(9, 6);
        for (int i = 0; i < 9; ++i) {
            for (int j = 0; j < 6; ++j) {
                D(i, j) = (pixels.col(i) - proj.col(j)).squaredNorm() + fc(i, j);
            }
        }
        const double point_mean = D.colwise().minCoeff().mean();
        const double expected = (D.col(dup).minCoeff() - point_mean) / 7.0;
        ad::Tape t;
        const double before = loss_sem(t.constant(proj), pixels, fc).scalar();
        const double after = loss_sem(t.constant(proj2), pixels, feature_cost(pf, qf2, 0.7)).scalar();
        EXPECT_NEAR(after - before, expected, 1e-12);
        increased += after > before ? 1 : 0;
    }
    EXPECT_GT(increased, 0);
}

TEST(StratifiedSample, OnePickPerStratumAndSeeded)
{
    std::mt19937_64 a(7), b(7);
    const auto s = stratified_sample(1000, 64, a);
    ASSERT_EQ(s.size(), 64u);
    for (int k = 0; k < 64; ++k) {
        EXPECT_GE(s[k], k * 1000 / 64);
        EXPECT_LT(s[k], (k + 1) * 1000 / 64);
    }
    EXPECT_EQ(stratified_sample(1000, 64, b), s);
    std::mt19937_64 c(7);
    EXPECT_EQ(stratified_sample(5, 64, c), (std::vector<int>{0, 1, 2, 3, 4}));
}

TEST(LossRot, ExamplesAndRelabelling)
{
    ad::Tape t;
    const Mat3 I = Mat3::Identity();
    const Mat3 half = rodrigues(Vec3(std::numbers::pi, 0, 0));
    EXPECT_EQ(loss_rot({t.constant(I)}, {t.constant(I)}).scalar(), 0.0);
    // |R - Rbar|^2 = 6 - 2 tr(Rbar^T R) = 6 - 2(-1) = 8.
    EXPECT_NEAR(loss_rot({t.constant(half)}, {t.constant(I)}).scalar(), 8.0, 1e-12);
    EXPECT_NEAR(rotation_distance_sq(half, I), 6.0 - 2.0 * (I.transpose() * half).trace(), 1e-12);

    const Mat3 r1 = rodrigues(Vec3(0.3, -0.2, 0.9));
    const Mat3 r2 = rodrigues(Vec3(-1.0, 0.4, 0.1));
    const Mat3 b1 = rodrigues(Vec3(0.1, 0.1, 0.1));
    const double ab = loss_rot({t.constant(r1), t.constant(r2)}, {t.constant(b1), t.constant(I)}).scalar();
    const double ba = loss_rot({t.constant(r2), t.constant(r1)}, {t.constant(I), t.constant(b1)}).scalar();
    EXPECT_NEAR(ab, ba, 1e-15);
    EXPECT_THROW(loss_rot({}, {}), std::invalid_argument);
}

TEST(LossSym, Examples)
{
    ad::Tape t;
    Matrix j(3, 3);
    j << 1, 1, 0,
         0, 0, 0,
         0.5, -0.5, 0;
    EXPECT_EQ(loss_sym(t.constant(j), {{0, 1}}).scalar(), 0.0);
    Matrix same(3, 2);
    same << 1, 1, 0, 0, 0.5, 0.5;
    EXPECT_NEAR(loss_sym(t.constant(same), {{0, 1}}).scalar(), 1.0, 1e-15);
    EXPECT_EQ(loss_sym(t.constant(same), {}).scalar(), 0.0);
}

TEST(LossLap, PlanarLatticeInteriorIsZero)
{
    const Lattice L = triangular_lattice(7);
    ad::Tape t;
    EXPECT_NEAR(loss_lap(t.constant(L.V), L.neighbors).scalar(), 0.0, 1e-24);
}

TEST(LossLap, DisplacedVertexOnValenceSixLattice)
{
    // Vertex term |d|^2 plus six neighbour terms (|d|/6)^2: |d|^2 (1 + 1/6).
    Lattice L = triangular_lattice(9);
    const double delta = 0.3;
    L.V(2, L.id(4, 4)) += delta;
    ad::Tape t;
    int count = 0;
    for (const auto& nb : L.neighbors) {
        count += nb.empty() ? 0 : 1;
    }
    const double sum = loss_lap(t.constant(L.V), L.neighbors).scalar() * count;
    EXPECT_NEAR(sum, delta * delta * (1.0 + 1.0 / 6.0), 1e-12);
}

TEST(LossLap, ScalingByCScalesByCSquared)
{
    std::mt19937_64 rng(8);
    const TriMesh m = make_icosphere(2);
    const auto nb = vertex_neighbors(static_cast<int>(m.vertices.cols()), m.faces);
    const Matrix V = Matrix(m.vertices) + uniform(rng, 3, static_cast<int>(m.vertices.cols()), -0.05, 0.05);
    ad::Tape t;
    const double base = loss_lap(t.constant(V), nb).scalar();
    EXPECT_NEAR(loss_lap(t.constant(2.5 * V), nb).scalar(), 6.25 * base, 1e-12 * base);
}

TEST(LossNorm, FlatFoldedAndDegenerate)
{
    Matrix V(3, 4);
    V << 0, 1, 0, 1,
         0, 0, 1, 1,
         0, 0, 0, 0;
    const std::vector<Face> faces = {{0, 1, 2}, {1, 3, 2}};
    const std::vector<std::pair<int, int>> pairs = {{0, 1}};
    ad::Tape t;
    EXPECT_NEAR(loss_norm(t.constant(V), faces, pairs).scalar(), 0.0, 1e-15);

    // Fold the second triangle up about the diagonal edge 1-2 by 90 degrees.
    Matrix F = V;
    const Vec3 mid(0.5, 0.5, 0.0);
    const Vec3 up = Vec3(0, 0, 1) * (Vec3(1, 1, 0) - mid).norm();
    F.col(3) = mid + up;
    EXPECT_NEAR(loss_norm(t.constant(F), faces, pairs).scalar(), 1.0, 1e-12);

    Matrix D = V;
    D.col(3) = D.col(1); // second face collapses to a segment
    EXPECT_EQ(loss_norm(t.constant(D), faces, pairs).scalar(), 0.0);
}

TEST(LossNorm, IcosphereDecreasesWithSubdivision)
{
    double prev = std::numeric_limits<double>::infinity();
    for (int level = 1; level <= 3; ++level) {
        const TriMesh m = make_icosphere(level);
        ad::Tape t;
        const double v = loss_norm(t.constant(Matrix(m.vertices)), m.faces, adjacent_face_pairs(m.faces)).scalar();
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, prev) << "level " << level;
        prev = v;
    }
}

TEST(Losses, EveryLossPassesGradientCheck)
{
    const TriMesh ico = make_icosphere(1);
    const int nv = static_cast<int>(ico.vertices.cols());
    const auto nb = vertex_neighbors(nv, ico.faces);
    const auto fp = adjacent_face_pairs(ico.faces);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        const Grid target = uniform(rng, 10, 10, 0, 1);
        const Grid small_target = block_mask(10, 3, 2, 4, 5);
        const std::vector<CropBox> boxes = {CropBox{1.5, 0.5, 8.25, 9.0, false}, CropBox{}};
        const Eigen::Matrix2Xd pixels = uniform(rng, 2, 12, 0, 1);
        const Matrix fcost = feature_cost(uniform(rng, 4, 12, -1, 1), uniform(rng, 4, 8, -1, 1), 0.5);
        const Matrix rest_w = uniform(rng, 3, 1, -1, 1);
        const std::vector<std::pair<int, int>> pairs = {{0, 1}, {2, 3}};

        struct Case {
            const char* name;
            ad::ScalarFunction f;
            std::vector<Matrix> point;
        };
        const std::vector<Case> cases = {
            {"sil", [&](ad::Tape&, const std::vector<ad::Var>& v) { return loss_sil(v[0], target); },
             {uniform(rng, 10, 10, 0, 1)}},
            {"part", [&](ad::Tape&, const std::vector<ad::Var>& v) { return loss_part(v[0], small_target, boxes, 4.0); },
             {uniform(rng, 10, 10, 0, 1)}},
            {"sem", [&](ad::Tape&, const std::vector<ad::Var>& v) { return loss_sem(v[0], pixels, fcost); },
             {uniform(rng, 2, 8, 0, 1)}},
            {"rot",
             [&](ad::Tape& t, const std::vector<ad::Var>& v) {
                 return loss_rot({rodrigues(v[0]), rodrigues(v[1])},
                                 {t.constant(rodrigues(Vec3(rest_w.col(0)))), t.constant(Mat3::Identity())});
             },
             {uniform(rng, 3, 1, -2, 2), uniform(rng, 3, 1, -2, 2)}},
            {"sym", [&](ad::Tape&, const std::vector<ad::Var>& v) { return loss_sym(v[0], pairs); },
             {uniform(rng, 3, 4, -1, 1)}},
            {"lap", [&](ad::Tape&, const std::vector<ad::Var>& v) { return loss_lap(v[0], nb); },
             {Matrix(ico.vertices) + uniform(rng, 3, nv, -0.1, 0.1)}},
            {"norm", [&](ad::Tape&, const std::vector<ad::Var>& v) { return loss_norm(v[0], ico.faces, fp); },
             {Matrix(ico.vertices) + uniform(rng, 3, nv, -0.1, 0.1)}},
        };
        for (const Case& c : cases) {
            const auto report = ad::check_gradients(c.f, c.point, 1e-6, 1e-4);
            EXPECT_TRUE(report.passed) << c.name << " seed " << seed << ": " << report.max_rel_error << " "
                                       << report.failure;
            ad::Tape t;
            std::vector<ad::Var> vars;
            for (const Matrix& p : c.point) {
                vars.push_back(t.constant(p));
            }
            EXPECT_GE(c.f(t, vars).scalar(), 0.0) << c.name;
        }
    }
}

TEST(Losses, WeightedTotalIsLinearInEachWeight)
{
    LossBreakdown b;
    b.sil = 0.3;
    b.part = 0.2;
    b.sem = 0.7;
    b.rot = 1.1;
    b.sym = 0.05;
    b.lap = 0.01;
    b.norm = 0.02;
    const std::map<std::string, double> w = {{"sil", 1.0},  {"part", 0.5}, {"sem", 0.5}, {"rot", 0.1},
                                             {"sym", 0.1},  {"lap", 0.05}, {"norm", 0.05}};
    const double base = weighted_total(b, w);
    for (const auto& [k, v] : b.terms()) {
        auto w2 = w;
        w2[k] *= 2;
        EXPECT_NEAR(weighted_total(b, w2) - base, w.at(k) * v, 1e-15) << k;
    }
    EXPECT_NEAR(base, 0.3 + 0.1 + 0.35 + 0.11 + 0.005 + 0.0005 + 0.001, 1e-15);
}

TEST(Losses, TapeFormAgreesWithGridForm)
{
    std::mt19937_64 rng(9);
    const Grid m = uniform(rng, 5, 5, 0, 1);
    const Grid tg = uniform(rng, 5, 5, 0, 1);
    EXPECT_NEAR(eval([&](ad::Tape&, ad::Var x) { return loss_sil(x, tg); }, m), loss_sil(m, tg), 1e-15);
}
