#pragma once

// Reverse-mode differentiation over dense double matrices.
//
// A Tape records every operation of a forward pass (define-by-run). Nodes hold
// their forward value and, after backward(), the gradient of the scalar output
// with respect to that value. Operations that would be slow as a chain of
// primitives (rasterization, Chamfer, mesh regularizers) are registered as
// custom nodes with a hand-written backward.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace artshape::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

enum class OpKind {
    Parameter,
    Constant,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    MatMul,
    Sin,
    Cos,
    Exp,
    Tanh,
    Power,
    Sum,
    Mean,
    SoftMin,
    Clamp,
    Norm,
    Broadcast,
    Slice,
    Concat,
    Transpose,
    Custom,
};

class Tape;

// Lightweight handle to a tape node.
class Var {
public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    [[nodiscard]] int id() const { return id_; }
    [[nodiscard]] Tape* tape() const { return tape_; }
    [[nodiscard]] bool valid() const { return tape_ != nullptr && id_ >= 0; }
    [[nodiscard]] const Matrix& value() const;
    [[nodiscard]] Index rows() const { return value().rows(); }
    [[nodiscard]] Index cols() const { return value().cols(); }
    [[nodiscard]] double scalar() const { return value()(0, 0); }

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

// Gradients of the inputs a custom backward may write into. Entries are null
// for inputs that do not require a gradient.
using InputGrads = std::span<Matrix* const>;
using BackwardFn = std::function<void(const Matrix& out_grad, InputGrads in_grads)>;

class Tape {
public:
    struct Node {
        OpKind kind = OpKind::Constant;
        Matrix value;
        Matrix grad;
        std::vector<int> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        std::string name;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var parameter(Matrix value, std::string name = {})
    {
        Node n;
        n.kind = OpKind::Parameter;
        n.value = std::move(value);
        n.requires_grad = true;
        n.name = std::move(name);
        nodes_.push_back(std::move(n));
        params_.push_back(static_cast<int>(nodes_.size()) - 1);
        return {this, static_cast<int>(nodes_.size()) - 1};
    }

    Var constant(Matrix value)
    {
        Node n;
        n.kind = OpKind::Constant;
        n.value = std::move(value);
        nodes_.push_back(std::move(n));
        return {this, static_cast<int>(nodes_.size()) - 1};
    }

    Var scalar_constant(double v) { return constant(Matrix::Constant(1, 1, v)); }

    // Registers an operation. The backward is dropped when no input needs a
    // gradient, so frozen sub-graphs cost nothing in the reverse pass.
    Var record(OpKind kind, Matrix value, std::vector<int> inputs, BackwardFn backward)
    {
        Node n;
        n.kind = kind;
        n.value = std::move(value);
        for (int in : inputs) {
            if (in < 0 || in >= static_cast<int>(nodes_.size())) {
                throw std::invalid_argument("tape: input node does not precede its consumer");
            }
            n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
        }
        n.inputs = std::move(inputs);
        if (n.requires_grad) {
            n.backward = std::move(backward);
        }
        nodes_.push_back(std::move(n));
        return {this, static_cast<int>(nodes_.size()) - 1};
    }

    [[nodiscard]] const Node& node(int id) const { return nodes_.at(id); }
    [[nodiscard]] std::size_t size() const { return nodes_.size(); }
    [[nodiscard]] const std::vector<int>& parameters() const { return params_; }
    [[nodiscard]] bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }

    // Reverse sweep from a scalar output. Gradients of every node are
    // overwritten; parameters that do not influence the output get zeros.
    void backward(Var output)
    {
        if (output.tape() != this) {
            throw std::invalid_argument("backward: output belongs to another tape");
        }
        const Matrix& out = nodes_.at(output.id()).value;
        if (out.rows() != 1 || out.cols() != 1) {
            throw std::invalid_argument("backward: output must be a scalar node, got " +
                                        std::to_string(out.rows()) + "x" + std::to_string(out.cols()));
        }
        for (auto& n : nodes_) {
            n.grad.resize(0, 0);
        }
        nodes_[output.id()].grad = Matrix::Ones(1, 1);
        std::vector<Matrix*> in_grads;
        for (int id = output.id(); id >= 0; --id) {
            Node& n = nodes_[id];
            if (!n.requires_grad || n.grad.size() == 0 || !n.backward) {
                continue;
            }
            in_grads.assign(n.inputs.size(), nullptr);
            for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                Node& in = nodes_[n.inputs[k]];
                if (!in.requires_grad) {
                    continue;
                }
                if (in.grad.size() == 0) {
                    in.grad = Matrix::Zero(in.value.rows(), in.value.cols());
                }
                in_grads[k] = &in.grad;
            }
            n.backward(n.grad, in_grads);
        }
        for (int p : params_) {
            if (nodes_[p].grad.size() == 0) {
                nodes_[p].grad = Matrix::Zero(nodes_[p].value.rows(), nodes_[p].value.cols());
            }
        }
    }

    // Gradient of the last backward() output with respect to v.
    [[nodiscard]] Matrix grad(Var v) const
    {
        const Node& n = nodes_.at(v.id());
        if (n.grad.size() == 0) {
            return Matrix::Zero(n.value.rows(), n.value.cols());
        }
        return n.grad;
    }

private:
    std::vector<Node> nodes_;
    std::vector<int> params_;
};

inline const Matrix& Var::value() const { return tape_->node(id_).value; }

namespace detail {

inline Tape& tape_of(Var a)
{
    if (!a.valid()) {
        throw std::invalid_argument("ad: operation on an empty Var");
    }
    return *a.tape();
}

inline Tape& tape_of(Var a, Var b)
{
    if (a.tape() != b.tape()) {
        throw std::invalid_argument("ad: operands live on different tapes");
    }
    return tape_of(a);
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op)
{
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                    std::to_string(b.cols()));
    }
}

inline void accumulate(Matrix* g, const Matrix& d)
{
    if (g != nullptr) {
        *g += d;
    }
}

} // namespace detail

inline Var add(Var a, Var b)
{
    detail::require_same_shape(a.value(), b.value(), "add");
    return detail::tape_of(a, b).record(OpKind::Add, a.value() + b.value(), {a.id(), b.id()},
                                        [](const Matrix& g, InputGrads in) {
                                            detail::accumulate(in[0], g);
                                            detail::accumulate(in[1], g);
                                        });
}

inline Var sub(Var a, Var b)
{
    detail::require_same_shape(a.value(), b.value(), "sub");
    return detail::tape_of(a, b).record(OpKind::Sub, a.value() - b.value(), {a.id(), b.id()},
                                        [](const Matrix& g, InputGrads in) {
                                            detail::accumulate(in[0], g);
                                            if (in[1] != nullptr) {
                                                *in[1] -= g;
                                            }
                                        });
}

// Hadamard product.
inline Var mul(Var a, Var b)
{
    detail::require_same_shape(a.value(), b.value(), "mul");
    Matrix av = a.value();
    Matrix bv = b.value();
    Matrix out = av.cwiseProduct(bv);
    return detail::tape_of(a, b).record(OpKind::Mul, std::move(out), {a.id(), b.id()},
                                        [av = std::move(av), bv = std::move(bv)](const Matrix& g, InputGrads in) {
                                            if (in[0] != nullptr) {
                                                *in[0] += g.cwiseProduct(bv);
                                            }
                                            if (in[1] != nullptr) {
                                                *in[1] += g.cwiseProduct(av);
                                            }
                                        });
}

inline Var scale(Var a, double s)
{
    return detail::tape_of(a).record(OpKind::Scale, a.value() * s, {a.id()},
                                     [s](const Matrix& g, InputGrads in) { detail::accumulate(in[0], g * s); });
}

inline Var add_scalar(Var a, double s)
{
    return detail::tape_of(a).record(OpKind::AddScalar, (a.value().array() + s).matrix(), {a.id()},
                                     [](const Matrix& g, InputGrads in) { detail::accumulate(in[0], g); });
}

inline Var neg(Var a) { return scale(a, -1.0); }

inline Var matmul(Var a, Var b)
{
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: inner dimensions differ");
    }
    Matrix av = a.value();
    Matrix bv = b.value();
    Matrix out = av * bv;
    const bool need_a = detail::tape_of(a, b).requires_grad(a);
    const bool need_b = a.tape()->requires_grad(b);
    // Only keep the operand the reverse pass needs.
    return a.tape()->record(OpKind::MatMul, std::move(out), {a.id(), b.id()},
                            [av = need_b ? std::move(av) : Matrix(), bv = need_a ? std::move(bv) : Matrix()](
                                const Matrix& g, InputGrads in) {
                                if (in[0] != nullptr) {
                                    in[0]->noalias() += g * bv.transpose();
                                }
                                if (in[1] != nullptr) {
                                    in[1]->noalias() += av.transpose() * g;
                                }
                            });
}

inline Var sin(Var a)
{
    Matrix c = a.value().array().cos().matrix();
    return detail::tape_of(a).record(OpKind::Sin, a.value().array().sin().matrix(), {a.id()},
                                     [c = std::move(c)](const Matrix& g, InputGrads in) {
                                         detail::accumulate(in[0], g.cwiseProduct(c));
                                     });
}

inline Var cos(Var a)
{
    Matrix s = a.value().array().sin().matrix();
    return detail::tape_of(a).record(OpKind::Cos, a.value().array().cos().matrix(), {a.id()},
                                     [s = std::move(s)](const Matrix& g, InputGrads in) {
                                         detail::accumulate(in[0], -g.cwiseProduct(s));
                                     });
}

inline Var exp(Var a)
{
    Matrix e = a.value().array().exp().matrix();
    Matrix out = e;
    return detail::tape_of(a).record(OpKind::Exp, std::move(out), {a.id()},
                                     [e = std::move(e)](const Matrix& g, InputGrads in) {
                                         detail::accumulate(in[0], g.cwiseProduct(e));
                                     });
}

inline Var tanh(Var a)
{
    Matrix t = a.value().array().tanh().matrix();
    Matrix out = t;
    return detail::tape_of(a).record(OpKind::Tanh, std::move(out), {a.id()},
                                     [t = std::move(t)](const Matrix& g, InputGrads in) {
                                         detail::accumulate(in[0],
                                                            (g.array() * (1.0 - t.array().square())).matrix());
                                     });
}

// Elementwise power with a constant exponent. d/dx x^p is taken as zero at
// x = 0 when p < 1 (declared singularity).
inline Var pow(Var a, double p)
{
    Matrix av = a.value();
    Matrix out = av.array().pow(p).matrix();
    return detail::tape_of(a).record(OpKind::Power, std::move(out), {a.id()},
                                     [av = std::move(av), p](const Matrix& g, InputGrads in) {
                                         if (in[0] == nullptr) {
                                             return;
                                         }
                                         Matrix d = (p * av.array().pow(p - 1.0)).matrix();
                                         for (Index k = 0; k < d.size(); ++k) {
                                             if (!std::isfinite(d(k))) {
                                                 d(k) = 0.0;
                                             }
                                         }
                                         *in[0] += g.cwiseProduct(d);
                                     });
}

inline Var square(Var a) { return mul(a, a); }

inline Var sum(Var a)
{
    return detail::tape_of(a).record(OpKind::Sum, Matrix::Constant(1, 1, a.value().sum()), {a.id()},
                                     [](const Matrix& g, InputGrads in) {
                                         if (in[0] != nullptr) {
                                             in[0]->array() += g(0, 0);
                                         }
                                     });
}

inline Var mean(Var a)
{
    const double n = static_cast<double>(a.value().size());
    if (n == 0) {
        throw std::invalid_argument("mean: empty operand");
    }
    return detail::tape_of(a).record(OpKind::Mean, Matrix::Constant(1, 1, a.value().sum() / n), {a.id()},
                                     [n](const Matrix& g, InputGrads in) {
                                         if (in[0] != nullptr) {
                                             in[0]->array() += g(0, 0) / n;
                                         }
                                     });
}

// Smooth minimum over all entries: -tau * log(sum(exp(-x / tau))).
inline Var softmin(Var a, double tau)
{
    if (tau <= 0) {
        throw std::invalid_argument("softmin: temperature must be positive");
    }
    const Matrix& x = a.value();
    const double lo = x.minCoeff();
    Matrix w = (-(x.array() - lo) / tau).exp().matrix();
    const double z = w.sum();
    const double out = lo - tau * std::log(z);
    w /= z;
    return detail::tape_of(a).record(OpKind::SoftMin, Matrix::Constant(1, 1, out), {a.id()},
                                     [w = std::move(w)](const Matrix& g, InputGrads in) {
                                         detail::accumulate(in[0], w * g(0, 0));
                                     });
}

// Clamp with subgradient: zero outside (lo, hi), identity inside.
inline Var clamp(Var a, double lo, double hi)
{
    Matrix x = a.value();
    Matrix out = x.cwiseMax(lo).cwiseMin(hi);
    return detail::tape_of(a).record(OpKind::Clamp, std::move(out), {a.id()},
                                     [x = std::move(x), lo, hi](const Matrix& g, InputGrads in) {
                                         if (in[0] == nullptr) {
                                             return;
                                         }
                                         for (Index k = 0; k < x.size(); ++k) {
                                             if (x(k) > lo && x(k) < hi) {
                                                 (*in[0])(k) += g(k);
                                             }
                                         }
                                     });
}

// Frobenius norm. Zero gradient at the origin.
inline Var norm(Var a)
{
    Matrix x = a.value();
    const double n = x.norm();
    return detail::tape_of(a).record(OpKind::Norm, Matrix::Constant(1, 1, n), {a.id()},
                                     [x = std::move(x), n](const Matrix& g, InputGrads in) {
                                         if (in[0] != nullptr && n > 0) {
                                             *in[0] += x * (g(0, 0) / n);
                                         }
                                     });
}

// Squared Frobenius norm (sum of squares), cheaper than square(norm(a)).
inline Var squared_norm(Var a)
{
    Matrix x = a.value();
    const double n2 = x.squaredNorm();
    return detail::tape_of(a).record(OpKind::Norm, Matrix::Constant(1, 1, n2), {a.id()},
                                     [x = std::move(x)](const Matrix& g, InputGrads in) {
                                         detail::accumulate(in[0], x * (2.0 * g(0, 0)));
                                     });
}

// m (r x c) + column vector b (r x 1) added to every column.
inline Var add_colwise(Var m, Var b)
{
    if (b.cols() != 1 || b.rows() != m.rows()) {
        throw std::invalid_argument("add_colwise: bias must be a column with matching rows");
    }
    Matrix out = m.value().colwise() + b.value().col(0);
    return detail::tape_of(m, b).record(OpKind::Broadcast, std::move(out), {m.id(), b.id()},
                                        [](const Matrix& g, InputGrads in) {
                                            detail::accumulate(in[0], g);
                                            if (in[1] != nullptr) {
                                                *in[1] += g.rowwise().sum();
                                            }
                                        });
}

// Scalar (1x1) times matrix.
inline Var scalar_mul(Var s, Var m)
{
    if (s.rows() != 1 || s.cols() != 1) {
        throw std::invalid_argument("scalar_mul: first operand must be 1x1");
    }
    const double sv = s.scalar();
    Matrix mv = m.value();
    Matrix out = mv * sv;
    return detail::tape_of(s, m).record(OpKind::Broadcast, std::move(out), {s.id(), m.id()},
                                        [sv, mv = std::move(mv)](const Matrix& g, InputGrads in) {
                                            if (in[0] != nullptr) {
                                                (*in[0])(0, 0) += g.cwiseProduct(mv).sum();
                                            }
                                            detail::accumulate(in[1], g * sv);
                                        });
}

inline Var block(Var a, Index row, Index col, Index rows, Index cols)
{
    if (row < 0 || col < 0 || row + rows > a.rows() || col + cols > a.cols()) {
        throw std::out_of_range("block: out of range");
    }
    return detail::tape_of(a).record(OpKind::Slice, a.value().block(row, col, rows, cols), {a.id()},
                                     [row, col, rows, cols](const Matrix& g, InputGrads in) {
                                         if (in[0] != nullptr) {
                                             in[0]->block(row, col, rows, cols) += g;
                                         }
                                     });
}

inline Var col(Var a, Index c) { return block(a, 0, c, a.rows(), 1); }

// Selects columns by index (repeats allowed).
inline Var gather_cols(Var a, std::vector<Index> idx)
{
    Matrix out(a.rows(), static_cast<Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
        out.col(static_cast<Index>(k)) = a.value().col(idx[k]);
    }
    return detail::tape_of(a).record(OpKind::Slice, std::move(out), {a.id()},
                                     [idx = std::move(idx)](const Matrix& g, InputGrads in) {
                                         if (in[0] == nullptr) {
                                             return;
                                         }
                                         for (std::size_t k = 0; k < idx.size(); ++k) {
                                             in[0]->col(idx[k]) += g.col(static_cast<Index>(k));
                                         }
                                     });
}

inline Var concat_cols(const std::vector<Var>& parts)
{
    if (parts.empty()) {
        throw std::invalid_argument("concat_cols: nothing to concatenate");
    }
    Tape& t = detail::tape_of(parts.front());
    const Index r = parts.front().rows();
    Index total = 0;
    std::vector<int> ids;
    std::vector<Index> offsets;
    for (const Var& p : parts) {
        detail::tape_of(parts.front(), p);
        if (p.rows() != r) {
            throw std::invalid_argument("concat_cols: row counts differ");
        }
        offsets.push_back(total);
        total += p.cols();
        ids.push_back(p.id());
    }
    Matrix out(r, total);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        out.middleCols(offsets[k], parts[k].cols()) = parts[k].value();
    }
    std::vector<Index> widths;
    for (const Var& p : parts) {
        widths.push_back(p.cols());
    }
    return t.record(OpKind::Concat, std::move(out), std::move(ids),
                    [offsets = std::move(offsets), widths = std::move(widths)](const Matrix& g, InputGrads in) {
                        for (std::size_t k = 0; k < in.size(); ++k) {
                            if (in[k] != nullptr) {
                                *in[k] += g.middleCols(offsets[k], widths[k]);
                            }
                        }
                    });
}

inline Var concat_rows(const std::vector<Var>& parts)
{
    if (parts.empty()) {
        throw std::invalid_argument("concat_rows: nothing to concatenate");
    }
    Tape& t = detail::tape_of(parts.front());
    const Index c = parts.front().cols();
    Index total = 0;
    std::vector<int> ids;
    std::vector<Index> offsets;
    std::vector<Index> heights;
    for (const Var& p : parts) {
        detail::tape_of(parts.front(), p);
        if (p.cols() != c) {
            throw std::invalid_argument("concat_rows: column counts differ");
        }
        offsets.push_back(total);
        heights.push_back(p.rows());
        total += p.rows();
        ids.push_back(p.id());
    }
    Matrix out(total, c);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        out.middleRows(offsets[k], heights[k]) = parts[k].value();
    }
    return t.record(OpKind::Concat, std::move(out), std::move(ids),
                    [offsets = std::move(offsets), heights = std::move(heights)](const Matrix& g, InputGrads in) {
                        for (std::size_t k = 0; k < in.size(); ++k) {
                            if (in[k] != nullptr) {
                                *in[k] += g.middleRows(offsets[k], heights[k]);
                            }
                        }
                    });
}

inline Var transpose(Var a)
{
    return detail::tape_of(a).record(OpKind::Transpose, a.value().transpose(), {a.id()},
                                     [](const Matrix& g, InputGrads in) {
                                         if (in[0] != nullptr) {
                                             *in[0] += g.transpose();
                                         }
                                     });
}

// Normalizes every column to unit L2 norm.
inline Var normalize_cols(Var a, double eps = 1e-12)
{
    Matrix x = a.value();
    Eigen::RowVectorXd n = x.colwise().norm().array().max(eps).matrix();
    Matrix u = x.array().rowwise() / n.array();
    Matrix out = u;
    return detail::tape_of(a).record(OpKind::Custom, std::move(out), {a.id()},
                                     [u = std::move(u), n = std::move(n)](const Matrix& g, InputGrads in) {
                                         if (in[0] == nullptr) {
                                             return;
                                         }
                                         // d(x/|x|) = (I - u u^T) / |x|
                                         Eigen::RowVectorXd dots = (g.cwiseProduct(u)).colwise().sum();
                                         Matrix d = g - u * dots.asDiagonal();
                                         *in[0] += d * n.cwiseInverse().asDiagonal();
                                     });
}

// Registers an arbitrary operation with a hand-written reverse rule.
inline Var custom(const std::vector<Var>& inputs, Matrix value, BackwardFn backward)
{
    if (inputs.empty()) {
        throw std::invalid_argument("custom: at least one input required");
    }
    std::vector<int> ids;
    for (const Var& v : inputs) {
        detail::tape_of(inputs.front(), v);
        ids.push_back(v.id());
    }
    return inputs.front().tape()->record(OpKind::Custom, std::move(value), std::move(ids), std::move(backward));
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

// ---------------------------------------------------------------------------
// Finite-difference verification.

struct GradientCheckEntry {
    std::size_t parameter = 0;
    Index element = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradientReport {
    bool passed = false;
    double max_rel_error = 0.0;
    std::vector<GradientCheckEntry> entries;
    // Set when a non-finite function value was met; names parameter/element.
    std::string failure;
};

using ScalarFunction = std::function<Var(Tape&, const std::vector<Var>&)>;

// Compares reverse-mode gradients with central differences at `point`.
// Relative error is |a - n| / max(|a|, |n|, abs_floor); the floor keeps
// exact zeros from dividing by round-off.
inline GradientReport check_gradients(const ScalarFunction& f, const std::vector<Matrix>& point, double step,
                                      double tol, double abs_floor = 1e-6)
{
    GradientReport report;
    std::vector<Matrix> analytic;
    {
        Tape tape;
        std::vector<Var> vars;
        for (const Matrix& p : point) {
            vars.push_back(tape.parameter(p));
        }
        Var out = f(tape, vars);
        if (!std::isfinite(out.scalar())) {
            report.failure = "non-finite value at the evaluation point";
            return report;
        }
        tape.backward(out);
        for (const Var& v : vars) {
            analytic.push_back(tape.grad(v));
        }
    }
    auto evaluate = [&](const std::vector<Matrix>& pt) {
        Tape tape;
        std::vector<Var> vars;
        for (const Matrix& p : pt) {
            vars.push_back(tape.constant(p));
        }
        return f(tape, vars).scalar();
    };
    std::vector<Matrix> probe = point;
    for (std::size_t p = 0; p < point.size(); ++p) {
        for (Index e = 0; e < point[p].size(); ++e) {
            const double x0 = point[p](e);
            probe[p](e) = x0 + step;
            const double fp = evaluate(probe);
            probe[p](e) = x0 - step;
            const double fm = evaluate(probe);
            probe[p](e) = x0;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                report.failure = "non-finite value perturbing parameter " + std::to_string(p) + " element " +
                                 std::to_string(e);
                return report;
            }
            GradientCheckEntry entry;
            entry.parameter = p;
            entry.element = e;
            entry.analytic = analytic[p](e);
            entry.numeric = (fp - fm) / (2.0 * step);
            const double denom = std::max({std::abs(entry.analytic), std::abs(entry.numeric), abs_floor});
            entry.rel_error = std::abs(entry.analytic - entry.numeric) / denom;
            report.max_rel_error = std::max(report.max_rel_error, entry.rel_error);
            report.entries.push_back(entry);
        }
    }
    report.passed = report.max_rel_error < tol;
    return report;
}

} // namespace artshape::ad
