#pragma once

// Neural part surfaces. A part is a unit-sphere template pushed through a
// frequency-decomposed deformation network and a rigid (s, R, t) transform:
//
//   z_0 = PE_0(x)
//   z_i = PE_i(x) * (W_i^h z_{i-1} + b_i^h)          elementwise product
//   y_i = y_{i-1} + W_i^o z_i + b_i^o,   y_0 = 0
//   V   = s R (x + y_depth) + t
//
// PE_i(x) = sin(omega_i A_i x + phi_i) with fixed unit-row lifts A_i.

#include "artshape/diff.hpp"
#include "artshape/errors.hpp"
#include "artshape/geometry.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace artshape {

using Matrix = Eigen::MatrixXd;

struct PartTemplate {
    Points3 X;
    std::vector<Face> faces;
    std::vector<std::vector<int>> neighbors;
    std::vector<std::pair<int, int>> face_pairs;

    [[nodiscard]] int size() const { return static_cast<int>(X.cols()); }
};

inline PartTemplate make_template(int level)
{
    TriMesh m = make_icosphere(level);
    PartTemplate t;
    t.X = std::move(m.vertices);
    t.faces = std::move(m.faces);
    t.neighbors = vertex_neighbors(t.size(), t.faces);
    t.face_pairs = adjacent_face_pairs(t.faces);
    return t;
}

// Random unit rows, one per hidden unit.
inline Matrix random_directions(int rows, std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix d(rows, 3);
    for (int r = 0; r < rows; ++r) {
        Vec3 v;
        do {
            v = Vec3(n(rng), n(rng), n(rng));
        } while (v.norm() < 1e-6);
        d.row(r) = v.normalized().transpose();
    }
    return d;
}

// Phases 0, pi/2, 0, pi/2, ... so the lift carries sine and cosine parts.
inline Eigen::VectorXd alternating_phases(int rows)
{
    Eigen::VectorXd p(rows);
    for (int r = 0; r < rows; ++r) {
        p(r) = (r % 2 == 0) ? 0.0 : 0.5 * std::numbers::pi;
    }
    return p;
}

inline Matrix uniform_matrix(int rows, int cols, double bound, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix m(rows, cols);
    for (int c = 0; c < cols; ++c) {
        for (int r = 0; r < rows; ++r) {
            m(r, c) = u(rng);
        }
    }
    return m;
}

struct DeformLayer {
    Matrix Wh; // width x width
    Matrix bh; // width x 1
    Matrix Wo; // 3 x width
    Matrix bo; // 3 x 1
};

struct PartDeformMLP {
    std::vector<double> omegas;          // omega_0 .. omega_L
    std::vector<Matrix> directions;      // per level, width x 3 unit rows
    std::vector<Eigen::VectorXd> phases; // per level
    std::vector<DeformLayer> layers;     // layers[l - 1] is layer l
    int shared_depth = 1;

    [[nodiscard]] int depth() const { return static_cast<int>(layers.size()); }
    [[nodiscard]] int width() const { return static_cast<int>(directions.front().rows()); }
    [[nodiscard]] Matrix lift(int level) const { return omegas.at(level) * directions.at(level); }
};

// Hidden weights uniform in +-1/sqrt(fan_in); output weights zero so the
// network starts as the identity deformation.
inline PartDeformMLP make_deform_mlp(int width, const std::vector<double>& omegas, int shared_depth,
                                     std::mt19937_64& rng)
{
    if (omegas.size() < 2) {
        throw ValidationError("deform mlp: need at least omega_0 and omega_1");
    }
    PartDeformMLP m;
    m.omegas = omegas;
    m.shared_depth = shared_depth;
    for (std::size_t i = 0; i < omegas.size(); ++i) {
        m.directions.push_back(random_directions(width, rng));
        m.phases.push_back(alternating_phases(width));
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(width));
    for (std::size_t l = 1; l < omegas.size(); ++l) {
        DeformLayer layer;
        layer.Wh = uniform_matrix(width, width, bound, rng);
        layer.bh = uniform_matrix(width, 1, bound, rng);
        layer.Wo = Matrix::Zero(3, width);
        layer.bo = Matrix::Zero(3, 1);
        m.layers.push_back(std::move(layer));
    }
    return m;
}

// width x n encoding of the columns of X at `level`.
inline Matrix positional_encoding(const PartDeformMLP& mlp, const Points3& X, int level)
{
    Matrix a = mlp.lift(level) * X;
    a.colwise() += mlp.phases.at(level);
    return a.array().sin().matrix();
}

// Offsets y_depth (3 x n) for every column of X.
inline Matrix deform(const PartDeformMLP& mlp, const Points3& X, int depth)
{
    if (depth < 1 || depth > mlp.depth()) {
        throw std::invalid_argument("deform: depth must lie in [1, L]");
    }
    Matrix z = positional_encoding(mlp, X, 0);
    Matrix y = Matrix::Zero(3, X.cols());
    for (int l = 1; l <= depth; ++l) {
        const DeformLayer& layer = mlp.layers[l - 1];
        Matrix h = layer.Wh * z;
        h.colwise() += layer.bh.col(0);
        z = positional_encoding(mlp, X, l).cwiseProduct(h);
        y += layer.Wo * z;
        y.colwise() += layer.bo.col(0);
    }
    return y;
}

// Elementwise per-axis prior scale applied to template points before the
// offsets are added; ones give the plain sphere.
inline Points3 assemble_part(const PartTemplate& templ, const PartDeformMLP& mlp, const RigidTransform& tr, int depth,
                             const Vec3& prior = Vec3::Ones())
{
    if (!(tr.scale > 0)) {
        throw ValidationError("assemble_part: scale must be positive");
    }
    Points3 f = prior.asDiagonal() * templ.X;
    f += deform(mlp, templ.X, depth);
    Points3 v = tr.scale * (tr.rotation * f);
    v.colwise() += tr.translation;
    return v;
}

// ---------------------------------------------------------------------------
// Deformation on the tape.

struct DeformLayerVars {
    ad::Var Wh, bh, Wo, bo;
};

// Encodings PE_0..PE_L as constants for fixed inputs (the template).
inline std::vector<Matrix> encode_all(const PartDeformMLP& mlp, const Points3& X)
{
    std::vector<Matrix> out;
    for (std::size_t level = 0; level < mlp.omegas.size(); ++level) {
        out.push_back(positional_encoding(mlp, X, static_cast<int>(level)));
    }
    return out;
}

inline ad::Var deform_ad(ad::Tape& tape, const std::vector<Matrix>& encodings, const std::vector<DeformLayerVars>& layers,
                         int depth)
{
    ad::Var z = tape.constant(encodings.at(0));
    ad::Var y;
    for (int l = 1; l <= depth; ++l) {
        const DeformLayerVars& layer = layers.at(l - 1);
        ad::Var h = ad::add_colwise(ad::matmul(layer.Wh, z), layer.bh);
        z = ad::mul(tape.constant(encodings.at(l)), h);
        ad::Var out = ad::add_colwise(ad::matmul(layer.Wo, z), layer.bo);
        y = (l == 1) ? out : ad::add(y, out);
    }
    return y;
}

// Same recurrence with the points themselves on the tape.
inline ad::Var deform_ad(ad::Tape& tape, const PartDeformMLP& mlp, ad::Var X, const std::vector<DeformLayerVars>& layers,
                         int depth)
{
    auto encode = [&](int level) {
        ad::Var a = ad::matmul(tape.constant(mlp.lift(level)), X);
        return ad::sin(ad::add_colwise(a, tape.constant(mlp.phases.at(level))));
    };
    ad::Var z = encode(0);
    ad::Var y;
    for (int l = 1; l <= depth; ++l) {
        const DeformLayerVars& layer = layers.at(l - 1);
        ad::Var h = ad::add_colwise(ad::matmul(layer.Wh, z), layer.bh);
        z = ad::mul(encode(l), h);
        ad::Var out = ad::add_colwise(ad::matmul(layer.Wo, z), layer.bo);
        y = (l == 1) ? out : ad::add(y, out);
    }
    return y;
}

inline std::vector<DeformLayerVars> constant_layers(ad::Tape& tape, const PartDeformMLP& mlp)
{
    std::vector<DeformLayerVars> out;
    for (const DeformLayer& l : mlp.layers) {
        out.push_back({tape.constant(l.Wh), tape.constant(l.bh), tape.constant(l.Wo), tape.constant(l.bo)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Surface feature network Q: three linear layers on a single-frequency
// encoding, tanh between, unit-normalized output.

struct FeatureMLP {
    double omega = 2.0;
    Matrix directions; // width x 3
    Eigen::VectorXd phases;
    Matrix W1, b1, W2, b2, W3, b3;

    [[nodiscard]] int width() const { return static_cast<int>(directions.rows()); }
    [[nodiscard]] int dim() const { return static_cast<int>(W3.rows()); }
};

inline FeatureMLP make_feature_mlp(int width, int dim, double omega, std::mt19937_64& rng)
{
    FeatureMLP f;
    f.omega = omega;
    f.directions = random_directions(width, rng);
    f.phases = alternating_phases(width);
    const double bound = 1.0 / std::sqrt(static_cast<double>(width));
    f.W1 = uniform_matrix(width, width, bound, rng);
    f.b1 = uniform_matrix(width, 1, bound, rng);
    f.W2 = uniform_matrix(width, width, bound, rng);
    f.b2 = uniform_matrix(width, 1, bound, rng);
    f.W3 = uniform_matrix(dim, width, bound, rng);
    f.b3 = uniform_matrix(dim, 1, bound, rng);
    return f;
}

inline Matrix feature_encoding(const FeatureMLP& f, const Points3& X)
{
    Matrix a = f.omega * f.directions * X;
    a.colwise() += f.phases;
    return a.array().sin().matrix();
}

// d x n features, one unit column per input point.
inline Matrix query_feature(const FeatureMLP& f, const Points3& X)
{
    Matrix h = f.W1 * feature_encoding(f, X);
    h.colwise() += f.b1.col(0);
    h = h.array().tanh().matrix();
    Matrix h2 = f.W2 * h;
    h2.colwise() += f.b2.col(0);
    h2 = h2.array().tanh().matrix();
    Matrix out = f.W3 * h2;
    out.colwise() += f.b3.col(0);
    Eigen::RowVectorXd n = out.colwise().norm().array().max(1e-12).matrix();
    return out.array().rowwise() / n.array();
}

inline Eigen::VectorXd query_feature(const FeatureMLP& f, const Vec3& x)
{
    Points3 X(3, 1);
    X.col(0) = x;
    return query_feature(f, X).col(0);
}

struct FeatureVars {
    ad::Var W1, b1, W2, b2, W3, b3;
};

inline FeatureVars feature_parameters(ad::Tape& tape, const FeatureMLP& f)
{
    return {tape.parameter(f.W1), tape.parameter(f.b1), tape.parameter(f.W2),
            tape.parameter(f.b2), tape.parameter(f.W3), tape.parameter(f.b3)};
}

inline ad::Var query_feature_ad(ad::Tape& tape, const Matrix& encoding, const FeatureVars& v)
{
    ad::Var h = ad::tanh(ad::add_colwise(ad::matmul(v.W1, tape.constant(encoding)), v.b1));
    h = ad::tanh(ad::add_colwise(ad::matmul(v.W2, h), v.b2));
    return ad::normalize_cols(ad::add_colwise(ad::matmul(v.W3, h), v.b3));
}

// Adam regression of Q onto unit targets (d x n) at points X (3 x n).
// Returns the final mean squared error.
inline double fit_feature_mlp(FeatureMLP& f, const Points3& X, const Matrix& targets, int steps, double lr)
{
    if (X.cols() == 0) {
        return 0.0;
    }
    const Matrix enc = feature_encoding(f, X);
    std::array<Matrix*, 6> params = {&f.W1, &f.b1, &f.W2, &f.b2, &f.W3, &f.b3};
    std::array<Matrix, 6> m1, m2;
    for (std::size_t k = 0; k < params.size(); ++k) {
        m1[k] = Matrix::Zero(params[k]->rows(), params[k]->cols());
        m2[k] = m1[k];
    }
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double last = 0.0;
    for (int s = 1; s <= steps; ++s) {
        ad::Tape tape;
        FeatureVars v = feature_parameters(tape, f);
        ad::Var q = query_feature_ad(tape, enc, v);
        ad::Var loss = ad::scale(ad::sum(ad::square(ad::sub(q, tape.constant(targets)))), 1.0 / X.cols());
        last = loss.scalar();
        tape.backward(loss);
        const std::array<ad::Var, 6> vars = {v.W1, v.b1, v.W2, v.b2, v.W3, v.b3};
        const double c1 = 1.0 - std::pow(b1, s);
        const double c2 = 1.0 - std::pow(b2, s);
        for (std::size_t k = 0; k < params.size(); ++k) {
            const Matrix g = tape.grad(vars[k]);
            m1[k] = b1 * m1[k] + (1.0 - b1) * g;
            m2[k] = b2 * m2[k] + (1.0 - b2) * g.cwiseProduct(g);
            *params[k] -= (lr * (m1[k] / c1).array() / ((m2[k] / c2).array().sqrt() + eps)).matrix();
        }
    }
    return last;
}

// ---------------------------------------------------------------------------
// Checkpoints: "HLPM1", u32 entry count, then per entry u32 name length,
// name bytes, u32 rows, u32 cols, rows*cols little-endian f64 column-major.

using NamedMatrices = std::map<std::string, Matrix>;

namespace checkpoint_io {

inline constexpr std::array<char, 5> kMagic = {'H', 'L', 'P', 'M', '1'};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) {
        out.put(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

inline std::uint32_t get_u32(std::istream& in)
{
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        const int c = in.get();
        if (c == EOF) {
            throw ValidationError("checkpoint: truncated");
        }
        v |= static_cast<std::uint32_t>(c & 0xff) << (8 * i);
    }
    return v;
}

inline void put_f64(std::ostream& out, double d)
{
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    for (int i = 0; i < 8; ++i) {
        out.put(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
}

inline double get_f64(std::istream& in)
{
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
        const int c = in.get();
        if (c == EOF) {
            throw ValidationError("checkpoint: truncated");
        }
        bits |= static_cast<std::uint64_t>(c & 0xff) << (8 * i);
    }
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

} // namespace detail

inline void write(std::ostream& out, const NamedMatrices& entries)
{
    out.write(kMagic.data(), kMagic.size());
    detail::put_u32(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, m] : entries) {
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_u32(out, static_cast<std::uint32_t>(m.rows()));
        detail::put_u32(out, static_cast<std::uint32_t>(m.cols()));
        for (Eigen::Index k = 0; k < m.size(); ++k) {
            detail::put_f64(out, m.data()[k]);
        }
    }
}

inline NamedMatrices read(std::istream& in)
{
    std::array<char, 5> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) {
        throw ValidationError("checkpoint: bad header (expected HLPM1)");
    }
    NamedMatrices out;
    const std::uint32_t n = detail::get_u32(in);
    for (std::uint32_t e = 0; e < n; ++e) {
        std::string name(detail::get_u32(in), '\0');
        in.read(name.data(), static_cast<std::streamsize>(name.size()));
        const std::uint32_t rows = detail::get_u32(in);
        const std::uint32_t cols = detail::get_u32(in);
        Matrix m(rows, cols);
        for (Eigen::Index k = 0; k < m.size(); ++k) {
            m.data()[k] = detail::get_f64(in);
        }
        out.emplace(std::move(name), std::move(m));
    }
    return out;
}

inline void save(const std::filesystem::path& path, const NamedMatrices& entries)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write checkpoint " + path.string());
    }
    write(out, entries);
    if (!out) {
        throw IoError("short write on " + path.string());
    }
}

inline NamedMatrices load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open checkpoint " + path.string());
    }
    return read(in);
}

} // namespace checkpoint_io

inline NamedMatrices to_named(const PartDeformMLP& mlp)
{
    NamedMatrices out;
    out["omegas"] = Eigen::Map<const Eigen::VectorXd>(mlp.omegas.data(), static_cast<Eigen::Index>(mlp.omegas.size()));
    out["shared_depth"] = Matrix::Constant(1, 1, mlp.shared_depth);
    for (std::size_t i = 0; i < mlp.directions.size(); ++i) {
        out["dir" + std::to_string(i)] = mlp.directions[i];
        out["phase" + std::to_string(i)] = mlp.phases[i];
    }
    for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
        const std::string p = "L" + std::to_string(l + 1) + "/";
        out[p + "Wh"] = mlp.layers[l].Wh;
        out[p + "bh"] = mlp.layers[l].bh;
        out[p + "Wo"] = mlp.layers[l].Wo;
        out[p + "bo"] = mlp.layers[l].bo;
    }
    return out;
}

inline PartDeformMLP deform_mlp_from_named(const NamedMatrices& in)
{
    auto get = [&](const std::string& k) -> const Matrix& {
        auto it = in.find(k);
        if (it == in.end()) {
            throw ValidationError("checkpoint: missing entry '" + k + "'");
        }
        return it->second;
    };
    PartDeformMLP mlp;
    const Matrix& om = get("omegas");
    mlp.omegas.assign(om.data(), om.data() + om.size());
    mlp.shared_depth = static_cast<int>(get("shared_depth")(0, 0));
    for (std::size_t i = 0; i < mlp.omegas.size(); ++i) {
        mlp.directions.push_back(get("dir" + std::to_string(i)));
        mlp.phases.push_back(get("phase" + std::to_string(i)).col(0));
    }
    for (std::size_t l = 1; l < mlp.omegas.size(); ++l) {
        const std::string p = "L" + std::to_string(l) + "/";
        mlp.layers.push_back({get(p + "Wh"), get(p + "bh"), get(p + "Wo"), get(p + "bo")});
    }
    return mlp;
}

} // namespace artshape
