#pragma once

#include <Eigen/Dense>

#include "mcatlas/autodiff/tape.hpp"

namespace mcatlas::ad {

/// 3×2 Jacobian [∂φ/∂u, ∂φ/∂v] of a UV→3D map.
using Jacobian3x2 = Eigen::Matrix<double, 3, 2>;

// ---------------------------------------------------------------------------
// Forward-mode duals recorded on the tape
// ---------------------------------------------------------------------------
//
// A batch of dual numbers with two tangent directions (∂/∂u, ∂/∂v). Each of
// value/du/dv is a rows×S node; column s is one sample. Propagating the
// tangents through tape ops means the reverse sweep differentiates the
// tangent arithmetic itself (reverse-over-forward), which is what gives
// gradients of losses built from Jacobian entries.
//
// du/dv may be left invalid for value-only evaluation.

struct DualVar {
    Var value;
    Var du;
    Var dv;

    [[nodiscard]] bool has_tangents() const noexcept { return du.valid() && dv.valid(); }
};

/// W·x + b with tangents W·dx.
inline DualVar affine(Tape& t, Var weight, Var bias, const DualVar& x)
{
    DualVar y;
    y.value = t.add_colwise(t.matmul(weight, x.value), bias);
    if (x.has_tangents()) {
        y.du = t.matmul(weight, x.du);
        y.dv = t.matmul(weight, x.dv);
    }
    return y;
}

/// softplus(x) with tangents σ(x)⊙dx.
inline DualVar softplus(Tape& t, const DualVar& x)
{
    DualVar y;
    const auto sp = t.softplus_with_slope(x.value);
    y.value = sp.value;
    if (x.has_tangents()) {
        const Var slope = sp.slope;
        y.du = t.hadamard(slope, x.du);
        y.dv = t.hadamard(slope, x.dv);
    }
    return y;
}

/// Column s of a 3×S dual batch as a Jacobian.
inline Jacobian3x2 jacobian_at(const Tape& t, const DualVar& x, Index s)
{
    Jacobian3x2 j;
    j.col(0) = t.value(x.du).col(s);
    j.col(1) = t.value(x.dv).col(s);
    return j;
}

// ---------------------------------------------------------------------------
// Evaluated dual batch (no tape)
// ---------------------------------------------------------------------------

struct DualBatch {
    Matrix value;
    Matrix du;
    Matrix dv;

    [[nodiscard]] Index size() const noexcept { return value.cols(); }

    [[nodiscard]] Jacobian3x2 jacobian(Index s) const
    {
        Jacobian3x2 j;
        j.col(0) = du.col(s);
        j.col(1) = dv.col(s);
        return j;
    }
};

inline DualBatch evaluate(const Tape& t, const DualVar& x)
{
    DualBatch b;
    b.value = t.value(x.value);
    if (x.has_tangents()) {
        b.du = t.value(x.du);
        b.dv = t.value(x.dv);
    }
    return b;
}

}  // namespace mcatlas::ad
