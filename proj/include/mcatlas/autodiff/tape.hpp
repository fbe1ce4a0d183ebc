#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mcatlas/errors.hpp"

namespace mcatlas::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Handle to a node on a Tape. Only meaningful for the tape that issued it.
struct Var {
    std::int32_t id = -1;
    [[nodiscard]] bool valid() const noexcept { return id >= 0; }
};

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------
//
// Dense-matrix reverse-mode tape. Every op evaluates eagerly and appends a
// node holding its value and a closure that pushes the output adjoint back to
// its inputs. Nodes are appended in evaluation order, so a reverse sweep over
// the node list is a valid topological order.
//
// Parameters are leaves tagged with a slot index; backprop() returns one
// adjoint per slot. Constants never receive adjoints and subgraphs built only
// from constants are skipped during the reverse sweep.

class Tape {
public:
    using Backward = std::function<void(Tape&, const Matrix& adjoint)>;

    Tape() { nodes_.reserve(1024); }

    Var constant(Matrix value) { return push("constant", std::move(value), {}, false, -1); }

    Var parameter(std::size_t slot, Matrix value)
    {
        return push("parameter", std::move(value), {}, true, static_cast<std::int32_t>(slot));
    }

    [[nodiscard]] const Matrix& value(Var v) const { return node(v).value; }

    [[nodiscard]] double scalar(Var v) const
    {
        const auto& m = node(v).value;
        if (m.rows() != 1 || m.cols() != 1) {
            throw ShapeMismatch("scalar(): node is " + shape_str(m));
        }
        return m(0, 0);
    }

    /// Adjoint left on a node by the last backprop(); empty if none reached it.
    [[nodiscard]] const Matrix& adjoint(Var v) const { return node(v).adjoint; }

    [[nodiscard]] bool needs_grad(Var v) const { return node(v).needs_grad; }

    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

    void clear() { nodes_.clear(); }

    /// Append an op node. `needs_grad` should be true iff any input needs it.
    Var record(std::string_view op, Matrix value, Backward backward, bool needs_grad)
    {
        return push(op, std::move(value), std::move(backward), needs_grad, -1);
    }

    template <class Expr>
    void accumulate(Var v, const Expr& adj)
    {
        auto& n = nodes_[static_cast<std::size_t>(v.id)];
        if (!n.needs_grad) {
            return;
        }
        if (n.adjoint.size() == 0) {
            n.adjoint = adj;
        } else {
            n.adjoint += adj;
        }
    }

    /// Reverse accumulation from a scalar node. Returns one adjoint per
    /// parameter slot; slots never registered on this tape come back empty,
    /// registered-but-unreached slots come back as exact zeros.
    std::vector<Matrix> backprop(Var loss, std::size_t num_slots, double seed = 1.0)
    {
        if (!loss.valid() || static_cast<std::size_t>(loss.id) >= nodes_.size()) {
            throw InvalidTape("backprop(): loss handle does not belong to this tape");
        }
        const auto& lv = node(loss).value;
        if (lv.rows() != 1 || lv.cols() != 1) {
            throw InvalidTape("backprop(): tape does not terminate in a scalar (got " +
                              shape_str(lv) + ")");
        }
        for (auto& n : nodes_) {
            n.adjoint.resize(0, 0);
        }
        nodes_[static_cast<std::size_t>(loss.id)].adjoint = Matrix::Constant(1, 1, seed);

        for (auto i = static_cast<std::int64_t>(loss.id); i >= 0; --i) {
            auto& n = nodes_[static_cast<std::size_t>(i)];
            if (!n.backward || n.adjoint.size() == 0 || !n.needs_grad) {
                continue;
            }
            n.backward(*this, n.adjoint);
        }

        std::vector<Matrix> grads(num_slots);
        for (const auto& n : nodes_) {
            if (n.slot < 0) {
                continue;
            }
            const auto s = static_cast<std::size_t>(n.slot);
            if (s >= num_slots) {
                throw InvalidTape("backprop(): parameter slot out of range");
            }
            if (grads[s].size() == 0) {
                grads[s] = Matrix::Zero(n.value.rows(), n.value.cols());
            }
            if (n.adjoint.size() != 0) {
                grads[s] += n.adjoint;
            }
        }
        return grads;
    }

    // -----------------------------------------------------------------------
    // Primitive ops
    // -----------------------------------------------------------------------

    Var matmul(Var a, Var b)
    {
        const auto& A = value(a);
        const auto& B = value(b);
        check_inner(A, B, "matmul");
        Matrix out = A * B;
        return record("matmul", std::move(out), [a, b](Tape& t, const Matrix& g) {
            if (t.needs_grad(a)) t.accumulate(a, g * t.value(b).transpose());
            if (t.needs_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
        }, any_grad(a, b));
    }

    /// Matrix product computed column by column, so each output column is a
    /// function of its input column alone (bit-identical under column
    /// permutation of `b`).
    Var matmul_colwise(Var a, Var b)
    {
        const auto& A = value(a);
        const auto& B = value(b);
        check_inner(A, B, "matmul_colwise");
        Matrix out(A.rows(), B.cols());
        for (Index j = 0; j < B.cols(); ++j) {
            out.col(j).noalias() = A * B.col(j);
        }
        return record("matmul_colwise", std::move(out), [a, b](Tape& t, const Matrix& g) {
            if (t.needs_grad(a)) t.accumulate(a, g * t.value(b).transpose());
            if (t.needs_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
        }, any_grad(a, b));
    }

    Var add(Var a, Var b)
    {
        check_same(value(a), value(b), "add");
        Matrix out = value(a) + value(b);
        return record("add", std::move(out), [a, b](Tape& t, const Matrix& g) {
            t.accumulate(a, g);
            t.accumulate(b, g);
        }, any_grad(a, b));
    }

    Var sub(Var a, Var b)
    {
        check_same(value(a), value(b), "sub");
        Matrix out = value(a) - value(b);
        return record("sub", std::move(out), [a, b](Tape& t, const Matrix& g) {
            t.accumulate(a, g);
            if (t.needs_grad(b)) t.accumulate(b, -g);
        }, any_grad(a, b));
    }

    /// a + col·1ᵀ, `col` is rows(a)×1.
    Var add_colwise(Var a, Var col)
    {
        const auto& A = value(a);
        const auto& c = value(col);
        if (c.cols() != 1 || c.rows() != A.rows()) {
            throw ShapeMismatch("add_colwise: " + shape_str(A) + " + " + shape_str(c));
        }
        Matrix out = A.colwise() + c.col(0);
        return record("add_colwise", std::move(out), [a, col](Tape& t, const Matrix& g) {
            t.accumulate(a, g);
            if (t.needs_grad(col)) t.accumulate(col, g.rowwise().sum());
        }, any_grad(a, col));
    }

    /// col·1ᵀ with `n` columns.
    Var repeat_cols(Var col, Index n)
    {
        const auto& c = value(col);
        if (c.cols() != 1) {
            throw ShapeMismatch("repeat_cols: expected a column, got " + shape_str(c));
        }
        Matrix out = c.replicate(1, n);
        return record("repeat_cols", std::move(out), [col](Tape& t, const Matrix& g) {
            t.accumulate(col, g.rowwise().sum());
        }, needs_grad(col));
    }

    Var hadamard(Var a, Var b)
    {
        check_same(value(a), value(b), "hadamard");
        Matrix out = value(a).cwiseProduct(value(b));
        return record("hadamard", std::move(out), [a, b](Tape& t, const Matrix& g) {
            if (t.needs_grad(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
            if (t.needs_grad(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
        }, any_grad(a, b));
    }

    Var scale(Var a, double s)
    {
        Matrix out = value(a) * s;
        return record("scale", std::move(out), [a, s](Tape& t, const Matrix& g) {
            t.accumulate(a, g * s);
        }, needs_grad(a));
    }

    Var square(Var a)
    {
        Matrix out = value(a).array().square().matrix();
        return record("square", std::move(out), [a](Tape& t, const Matrix& g) {
            t.accumulate(a, (2.0 * g.array() * t.value(a).array()).matrix());
        }, needs_grad(a));
    }

    struct SoftplusVars {
        Var value;
        Var slope;  ///< σ(x), the derivative of softplus
    };

    /// ln(1+eˣ), evaluated as max(x,0) + ln(1+e^{−|x|}).
    Var softplus(Var a) { return softplus_with_slope(a).value; }

    /// softplus(x) and σ(x) from one exponential. The softplus node's
    /// backward reads the slope node, whose own backward uses σ' = σ(1−σ).
    SoftplusVars softplus_with_slope(Var a)
    {
        Matrix sp, sig;
        softplus_sigmoid(value(a), sp, sig);
        const Var slope = record_sigmoid(a, std::move(sig));
        const Var out = record("softplus", std::move(sp), [a, slope](Tape& t, const Matrix& g) {
            t.accumulate(a, g.cwiseProduct(t.value(slope)));
        }, needs_grad(a));
        return {out, slope};
    }

    Var sigmoid(Var a)
    {
        Matrix sp, sig;
        softplus_sigmoid(value(a), sp, sig);
        return record_sigmoid(a, std::move(sig));
    }

    /// Sum of all entries, 1×1.
    Var sum(Var a)
    {
        Matrix out = Matrix::Constant(1, 1, value(a).sum());
        return record("sum", std::move(out), [a](Tape& t, const Matrix& g) {
            const auto& A = t.value(a);
            t.accumulate(a, Matrix::Constant(A.rows(), A.cols(), g(0, 0)));
        }, needs_grad(a));
    }

    Var mean(Var a)
    {
        const auto n = static_cast<double>(value(a).size());
        if (n == 0) {
            throw EmptyInput("mean of an empty matrix");
        }
        return scale(sum(a), 1.0 / n);
    }

    /// 1×n row of column sums.
    Var colsum(Var a)
    {
        Matrix out = value(a).colwise().sum();
        return record("colsum", std::move(out), [a](Tape& t, const Matrix& g) {
            const auto rows = t.value(a).rows();
            t.accumulate(a, g.replicate(rows, 1));
        }, needs_grad(a));
    }

    Var cols(Var a, Index start, Index n)
    {
        const auto& A = value(a);
        if (start < 0 || n < 0 || start + n > A.cols()) {
            throw ShapeMismatch("cols: range out of bounds for " + shape_str(A));
        }
        Matrix out = A.middleCols(start, n);
        return record("cols", std::move(out), [a, start, n](Tape& t, const Matrix& g) {
            const auto& A = t.value(a);
            Matrix full = Matrix::Zero(A.rows(), A.cols());
            full.middleCols(start, n) = g;
            t.accumulate(a, full);
        }, needs_grad(a));
    }

    /// Horizontal concatenation of equal-height blocks.
    Var hcat(std::span<const Var> parts)
    {
        if (parts.empty()) {
            throw EmptyInput("hcat of zero blocks");
        }
        const auto rows = value(parts[0]).rows();
        Index total = 0;
        bool grad = false;
        for (auto p : parts) {
            if (value(p).rows() != rows) {
                throw ShapeMismatch("hcat: row count mismatch");
            }
            total += value(p).cols();
            grad = grad || needs_grad(p);
        }
        Matrix out(rows, total);
        Index off = 0;
        for (auto p : parts) {
            out.middleCols(off, value(p).cols()) = value(p);
            off += value(p).cols();
        }
        std::vector<Var> ids(parts.begin(), parts.end());
        return record("hcat", std::move(out), [ids = std::move(ids)](Tape& t, const Matrix& g) {
            Index off = 0;
            for (auto p : ids) {
                const auto c = t.value(p).cols();
                if (t.needs_grad(p)) t.accumulate(p, g.middleCols(off, c));
                off += c;
            }
        }, grad);
    }

    /// Row-wise max over columns (rows×1). Ties resolve to the lowest column.
    Var rowmax(Var a)
    {
        const auto& A = value(a);
        if (A.cols() == 0) {
            throw EmptyInput("rowmax over zero columns");
        }
        Matrix out(A.rows(), 1);
        std::vector<Index> arg(static_cast<std::size_t>(A.rows()));
        for (Index r = 0; r < A.rows(); ++r) {
            Index best = 0;
            for (Index c = 1; c < A.cols(); ++c) {
                if (A(r, c) > A(r, best)) {
                    best = c;
                }
            }
            arg[static_cast<std::size_t>(r)] = best;
            out(r, 0) = A(r, best);
        }
        return record("rowmax", std::move(out), [a, arg = std::move(arg)](Tape& t, const Matrix& g) {
            const auto& A = t.value(a);
            Matrix full = Matrix::Zero(A.rows(), A.cols());
            for (Index r = 0; r < A.rows(); ++r) {
                full(r, arg[static_cast<std::size_t>(r)]) = g(r, 0);
            }
            t.accumulate(a, full);
        }, needs_grad(a));
    }

    static double softplus_scalar(double x) noexcept
    {
        return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    }

    static double sigmoid_scalar(double x) noexcept
    {
        if (x >= 0.0) {
            return 1.0 / (1.0 + std::exp(-x));
        }
        const double e = std::exp(x);
        return e / (1.0 + e);
    }

    /// Vectorised softplus and sigmoid. ln(1+e) uses u = 1+e,
    /// ln(1+e) = ln(u)·e/(u−1), which keeps full relative accuracy for small e.
    static void softplus_sigmoid(const Matrix& x, Matrix& sp, Matrix& sig)
    {
        const auto X = x.array();
        const Eigen::ArrayXXd e = (-X.abs()).exp();
        const Eigen::ArrayXXd u = 1.0 + e;
        const Eigen::ArrayXXd l1p = (u == 1.0).select(e, u.log() * e / (u - 1.0));
        sp = (X.max(0.0) + l1p).matrix();
        sig = (X >= 0.0).select(1.0 / u, e / u).matrix();
    }

private:
    Var record_sigmoid(Var a, Matrix sig)
    {
        auto self = Var{static_cast<std::int32_t>(nodes_.size())};
        return record("sigmoid", std::move(sig), [a, self](Tape& t, const Matrix& g) {
            const auto& s = t.value(self).array();
            t.accumulate(a, (g.array() * s * (1.0 - s)).matrix());
        }, needs_grad(a));
    }

    struct Node {
        Matrix value;
        Matrix adjoint;
        Backward backward;
        std::int32_t slot = -1;
        bool needs_grad = false;
    };

    Var push(std::string_view op, Matrix value, Backward backward, bool needs_grad,
             std::int32_t slot)
    {
        if (!value.allFinite()) {
            throw NonFiniteValue(std::string(op), nodes_.size());
        }
        nodes_.push_back(Node{std::move(value), Matrix{}, std::move(backward), slot, needs_grad});
        return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
    }

    [[nodiscard]] const Node& node(Var v) const
    {
        if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size()) {
            throw InvalidTape("invalid Var handle");
        }
        return nodes_[static_cast<std::size_t>(v.id)];
    }

    [[nodiscard]] bool any_grad(Var a, Var b) const { return needs_grad(a) || needs_grad(b); }

    static std::string shape_str(const Matrix& m)
    {
        return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
    }

    static void check_same(const Matrix& a, const Matrix& b, const char* op)
    {
        if (a.rows() != b.rows() || a.cols() != b.cols()) {
            throw ShapeMismatch(std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
        }
    }

    static void check_inner(const Matrix& a, const Matrix& b, const char* op)
    {
        if (a.cols() != b.rows()) {
            throw ShapeMismatch(std::string(op) + ": " + shape_str(a) + " * " + shape_str(b));
        }
    }

    std::vector<Node> nodes_;
};

}  // namespace mcatlas::ad
