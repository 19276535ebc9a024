#include "artshape/diff.hpp"
#include "artshape/geometry.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace artshape;
using ad::Matrix;
using ad::Tape;
using ad::Var;

namespace {

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

Matrix random_matrix(std::mt19937_64& rng, int r, int c, double lo = -1.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(r, c);
    for (Eigen::Index k = 0; k < m.size(); ++k) {
        m(k) = u(rng);
    }
    return m;
}

// A random expression DAG over two 3x3 inputs; `choice` picks the op at
// each of a few levels so different seeds exercise different mixes.
Var random_dag(const std::vector<Var>& in, std::mt19937_64& rng)
{
    std::vector<Var> pool = in;
    std::uniform_int_distribution<int> op(0, 6);
    for (int level = 0; level < 6; ++level) {
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        const Var a = pool[pick(rng)];
        const Var b = pool[pick(rng)];
        switch (op(rng)) {
        case 0: pool.push_back(ad::add(a, b)); break;
        case 1: pool.push_back(ad::mul(a, b)); break;
        case 2: pool.push_back(ad::matmul(a, b)); break;
        case 3: pool.push_back(ad::sin(a)); break;
        case 4: pool.push_back(ad::cos(ad::scale(a, 0.5))); break;
        case 5: pool.push_back(ad::exp(ad::scale(a, 0.3))); break;
        default: pool.push_back(ad::sub(a, ad::tanh(b))); break;
        }
    }
    return ad::sum(pool.back());
}

} // namespace

TEST(Backward, SquareAtThree)
{
    Tape t;
    Var x = t.parameter(scalar(3.0));
    Var y = ad::mul(x, x);
    t.backward(y);
    EXPECT_DOUBLE_EQ(t.grad(x)(0, 0), 6.0);
}

TEST(Backward, ProductAtTwoFive)
{
    Tape t;
    Var x = t.parameter(scalar(2.0));
    Var y = t.parameter(scalar(5.0));
    t.backward(ad::mul(x, y));
    EXPECT_DOUBLE_EQ(t.grad(x)(0, 0), 5.0);
    EXPECT_DOUBLE_EQ(t.grad(y)(0, 0), 2.0);
}

TEST(Backward, NonScalarOutputThrows)
{
    Tape t;
    Var x = t.parameter(Matrix::Ones(2, 2));
    EXPECT_THROW(t.backward(ad::sin(x)), std::invalid_argument);
}

TEST(Backward, UnusedParameterGetsZero)
{
    Tape t;
    Var x = t.parameter(scalar(1.5));
    Var unused = t.parameter(Matrix::Ones(2, 3));
    t.backward(ad::exp(x));
    EXPECT_EQ(t.grad(unused), Matrix::Zero(2, 3));
}

TEST(Backward, SinHadamardChainMatchesCentralDifferences)
{
    std::mt19937_64 rng(7);
    const std::vector<Matrix> point = {random_matrix(rng, 3, 4), random_matrix(rng, 3, 4)};
    auto f = [](Tape&, const std::vector<Var>& v) {
        Var h = ad::mul(ad::sin(v[0]), v[1]);
        h = ad::mul(ad::sin(ad::mul(h, v[0])), ad::cos(v[1]));
        return ad::sum(ad::mul(h, h));
    };
    const auto report = ad::check_gradients(f, point, 1e-5, 1e-5);
    EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(CheckGradients, LinearFunctionIsExactToRoundoff)
{
    const Matrix c = (Matrix(2, 2) << 1.5, -2.0, 0.25, 3.0).finished();
    auto f = [c](Tape& t, const std::vector<Var>& v) { return ad::sum(ad::mul(t.constant(c), v[0])); };
    const auto report = ad::check_gradients(f, {Matrix::Ones(2, 2)}, 1e-3, 1e-9);
    EXPECT_TRUE(report.passed);
    EXPECT_LT(report.max_rel_error, 1e-9);
}

TEST(CheckGradients, ConstantFunctionHasZeroGradients)
{
    auto f = [](Tape& t, const std::vector<Var>& v) { return ad::add(ad::scale(ad::sum(v[0]), 0.0), t.scalar_constant(4.0)); };
    const auto report = ad::check_gradients(f, {Matrix::Ones(3, 2)}, 1e-4, 1e-8);
    EXPECT_TRUE(report.passed);
    for (const auto& e : report.entries) {
        EXPECT_EQ(e.analytic, 0.0);
        EXPECT_EQ(e.numeric, 0.0);
    }
}

TEST(CheckGradients, NonFiniteValueNamesTheParameter)
{
    // log-like blowup: pow(x, -1) at a point whose perturbation hits zero.
    auto f = [](Tape&, const std::vector<Var>& v) { return ad::sum(ad::mul(v[0], ad::pow(v[1], -1.0))); };
    const auto report = ad::check_gradients(f, {Matrix::Ones(1, 1), scalar(1e-4)}, 1e-4, 1e-4);
    EXPECT_FALSE(report.passed);
    EXPECT_NE(report.failure.find("parameter 1"), std::string::npos) << report.failure;
}

TEST(Ops, EverySupportedKindMatchesFiniteDifferences)
{
    std::mt19937_64 rng(11);
    const Matrix a = random_matrix(rng, 3, 3, 0.2, 1.0);
    const Matrix b = random_matrix(rng, 3, 3, -1.0, 1.0);
    auto f = [](Tape&, const std::vector<Var>& v) {
        Var x = v[0];
        Var y = v[1];
        Var s = ad::add(ad::mul(x, y), ad::matmul(x, y));
        s = ad::add(s, ad::add(ad::sin(y), ad::cos(x)));
        s = ad::add(s, ad::exp(ad::scale(y, 0.5)));
        s = ad::add(s, ad::pow(x, 1.5));
        s = ad::add(s, ad::clamp(y, -0.9, 0.9));
        Var t = ad::add(ad::sum(s), ad::mean(s));
        t = ad::add(t, ad::softmin(s, 0.3));
        return ad::add(t, ad::norm(s));
    };
    const auto report = ad::check_gradients(f, {a, b}, 1e-6, 1e-5);
    EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(Ops, SoftminApproachesMinimum)
{
    Tape t;
    Var x = t.parameter((Matrix(1, 4) << 3.0, 1.0, 2.0, 5.0).finished());
    EXPECT_NEAR(ad::softmin(x, 1e-3).scalar(), 1.0, 1e-9);
    Var s = ad::softmin(x, 1.0);
    EXPECT_LT(s.scalar(), 1.0);
    t.backward(s);
    EXPECT_NEAR(t.grad(x).sum(), 1.0, 1e-12);
}

TEST(Ops, ClampSubgradientIsZeroOutside)
{
    Tape t;
    Var x = t.parameter((Matrix(1, 3) << -2.0, 0.5, 2.0).finished());
    t.backward(ad::sum(ad::clamp(x, -1.0, 1.0)));
    EXPECT_EQ(t.grad(x), (Matrix(1, 3) << 0.0, 1.0, 0.0).finished());
}

TEST(Ops, NormAtOriginHasFiniteZeroGradient)
{
    Tape t;
    Var x = t.parameter(Matrix::Zero(3, 1));
    t.backward(ad::norm(x));
    EXPECT_EQ(t.grad(x), Matrix::Zero(3, 1));
}

TEST(Ops, RodriguesGradientMatchesFiniteDifferences)
{
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix w = random_matrix(rng, 3, 1, -2.0, 2.0);
        const Matrix p = random_matrix(rng, 3, 5);
        auto f = [p](Tape& t, const std::vector<Var>& v) {
            Var R = rodrigues(v[0]);
            Var q = ad::matmul(R, t.constant(p));
            return ad::sum(ad::mul(ad::sin(q), q));
        };
        const auto report = ad::check_gradients(f, {w}, 1e-6, 1e-5);
        EXPECT_TRUE(report.passed) << "trial " << trial << ": " << report.max_rel_error;
    }
}

TEST(Ops, RodriguesValueMatchesClosedFormAndIsOrthonormal)
{
    Tape t;
    Var w = t.parameter((Matrix(3, 1) << 0.0, 0.0, std::numbers::pi / 2).finished());
    const Matrix R = rodrigues(w).value();
    const Matrix expected = (Matrix(3, 3) << 0, -1, 0, 1, 0, 0, 0, 0, 1).finished();
    EXPECT_LT((R - expected).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((R.transpose() * R - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((R - rodrigues(Vec3(0, 0, std::numbers::pi / 2))).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Properties, GradientOfSumIsSumOfGradients)
{
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        std::mt19937_64 init(seed);
        const Matrix a = random_matrix(init, 3, 3);
        const Matrix b = random_matrix(init, 3, 3);
        auto grads = [&](int which) {
            Tape t;
            std::vector<Var> in = {t.parameter(a), t.parameter(b)};
            std::mt19937_64 r1(seed * 2 + 1);
            std::mt19937_64 r2(seed * 2 + 2);
            Var out;
            if (which == 0) {
                out = random_dag(in, r1);
            } else if (which == 1) {
                out = random_dag(in, r2);
            } else {
                out = ad::add(random_dag(in, r1), random_dag(in, r2));
            }
            t.backward(out);
            return std::make_pair(t.grad(in[0]), t.grad(in[1]));
        };
        const auto g1 = grads(0);
        const auto g2 = grads(1);
        const auto g12 = grads(2);
        EXPECT_LT((g12.first - g1.first - g2.first).cwiseAbs().maxCoeff(), 1e-9) << "seed " << seed;
        EXPECT_LT((g12.second - g1.second - g2.second).cwiseAbs().maxCoeff(), 1e-9) << "seed " << seed;
        EXPECT_TRUE(g12.first.allFinite());
    }
}

TEST(Properties, BackwardIsRepeatableBitForBit)
{
    std::mt19937_64 rng(5);
    Tape t;
    std::vector<Var> in = {t.parameter(random_matrix(rng, 3, 3)), t.parameter(random_matrix(rng, 3, 3))};
    Var out = random_dag(in, rng);
    t.backward(out);
    const Matrix first = t.grad(in[0]);
    t.backward(out);
    EXPECT_EQ(t.grad(in[0]), first);
}

TEST(Properties, TapeIsTopologicallyOrdered)
{
    std::mt19937_64 rng(9);
    Tape t;
    std::vector<Var> in = {t.parameter(random_matrix(rng, 3, 3)), t.parameter(random_matrix(rng, 3, 3))};
    Var out = random_dag(in, rng);
    EXPECT_EQ(static_cast<std::size_t>(out.id()), t.size() - 1);
    for (std::size_t id = 0; id < t.size(); ++id) {
        for (int input : t.node(static_cast<int>(id)).inputs) {
            EXPECT_LT(input, static_cast<int>(id));
        }
    }
}
