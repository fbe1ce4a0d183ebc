#pragma once

#include <array>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mcatlas/autodiff/dual.hpp"
#include "mcatlas/autodiff/tape.hpp"
#include "mcatlas/errors.hpp"
#include "mcatlas/model.hpp"
#include "mcatlas/nn_search.hpp"
#include "mcatlas/sampling.hpp"
#include "mcatlas/types.hpp"

namespace mcatlas {

using MetricTensor2x2 = Eigen::Matrix2d;

/// First fundamental form g = JᵀJ.
inline MetricTensor2x2 metric_tensor(const Jacobian3x2& j)
{
    return j.transpose() * j;
}

// ---------------------------------------------------------------------------
// Chamfer distance
// ---------------------------------------------------------------------------

/// Symmetric Chamfer distance: mean squared NN distance from `mapped` to
/// `target` plus the same from `target` to `mapped`.
inline double chamfer(const PointCloud& mapped, const PointCloud& target)
{
    if (mapped.cols() == 0 || target.cols() == 0) {
        throw EmptyInput("chamfer: empty point set");
    }
    const PointIndex to_target(target);
    const PointIndex to_mapped(mapped);
    double a = 0.0;
    for (Eigen::Index i = 0; i < mapped.cols(); ++i) {
        a += to_target.nearest(mapped.col(i)).sq_dist;
    }
    double b = 0.0;
    for (Eigen::Index j = 0; j < target.cols(); ++j) {
        b += to_mapped.nearest(target.col(j)).sq_dist;
    }
    return a / static_cast<double>(mapped.cols()) + b / static_cast<double>(target.cols());
}

/// Chamfer distance on the tape; `mapped` is a 3×N node, the target is data.
/// Nearest-neighbour assignments are piecewise constant and enter the
/// gradient as constants.
inline Var chamfer(Tape& t, Var mapped, const PointCloud& target)
{
    const Matrix& X = t.value(mapped);
    if (X.rows() != 3) {
        throw ShapeMismatch("chamfer: mapped points must be 3×N");
    }
    if (X.cols() == 0 || target.cols() == 0) {
        throw EmptyInput("chamfer: empty point set");
    }
    const PointCloud mapped_pts = X;
    const PointIndex to_target(target);
    const PointIndex to_mapped(mapped_pts);
    const auto N = static_cast<double>(X.cols());
    const auto M = static_cast<double>(target.cols());

    std::vector<std::size_t> nn_of_mapped(static_cast<std::size_t>(X.cols()));
    std::vector<std::size_t> nn_of_target(static_cast<std::size_t>(target.cols()));
    double a = 0.0;
    for (Eigen::Index i = 0; i < X.cols(); ++i) {
        const auto r = to_target.nearest(mapped_pts.col(i));
        nn_of_mapped[static_cast<std::size_t>(i)] = r.index;
        a += r.sq_dist;
    }
    double b = 0.0;
    for (Eigen::Index j = 0; j < target.cols(); ++j) {
        const auto r = to_mapped.nearest(target.col(j));
        nn_of_target[static_cast<std::size_t>(j)] = r.index;
        b += r.sq_dist;
    }
    Matrix out = Matrix::Constant(1, 1, a / N + b / M);
    return t.record(
        "chamfer", std::move(out),
        [mapped, target, N, M, nm = std::move(nn_of_mapped), nt = std::move(nn_of_target)](
            Tape& tp, const Matrix& g) {
            const Matrix& Xv = tp.value(mapped);
            Matrix grad(3, Xv.cols());
            for (Eigen::Index i = 0; i < Xv.cols(); ++i) {
                const auto q = static_cast<Eigen::Index>(nm[static_cast<std::size_t>(i)]);
                grad.col(i) = (2.0 / N) * (Xv.col(i) - target.col(q));
            }
            for (Eigen::Index j = 0; j < target.cols(); ++j) {
                const auto i = static_cast<Eigen::Index>(nt[static_cast<std::size_t>(j)]);
                grad.col(i) += (2.0 / M) * (Xv.col(i) - target.col(j));
            }
            tp.accumulate(mapped, g(0, 0) * grad);
        },
        t.needs_grad(mapped));
}

// ---------------------------------------------------------------------------
// Metric consistency
// ---------------------------------------------------------------------------

/// Mean over samples of ‖g_a − g_b‖²_F. Both lists must come from the same
/// UV samples and patches, in the same order.
inline double metric_consistency(std::span<const Jacobian3x2> a, std::span<const Jacobian3x2> b)
{
    if (a.size() != b.size()) {
        throw ShapeMismatch("metric_consistency: Jacobian lists differ in length");
    }
    if (a.empty()) {
        throw EmptyInput("metric_consistency: no samples");
    }
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        acc += (metric_tensor(a[k]) - metric_tensor(b[k])).squaredNorm();
    }
    return acc / static_cast<double>(a.size());
}

/// Tape version over two 3×N dual batches evaluated at the same UV samples.
/// Built from primitive ops so gradients flow into the tangent arithmetic.
inline Var metric_consistency(Tape& t, const DualVar& a, const DualVar& b)
{
    if (!a.has_tangents() || !b.has_tangents()) {
        throw InvalidArgument("metric_consistency: tangents were not propagated");
    }
    const auto& av = t.value(a.du);
    const auto& bv = t.value(b.du);
    if (av.cols() != bv.cols() || av.rows() != bv.rows()) {
        throw ShapeMismatch("metric_consistency: sample counts differ");
    }
    auto entries = [&t](const DualVar& x) {
        const Var g11 = t.colsum(t.hadamard(x.du, x.du));
        const Var g12 = t.colsum(t.hadamard(x.du, x.dv));
        const Var g22 = t.colsum(t.hadamard(x.dv, x.dv));
        return std::array<Var, 3>{g11, g12, g22};
    };
    const auto ga = entries(a);
    const auto gb = entries(b);
    const Var d11 = t.square(t.sub(ga[0], gb[0]));
    const Var d12 = t.square(t.sub(ga[1], gb[1]));
    const Var d22 = t.square(t.sub(ga[2], gb[2]));
    // off-diagonal entry appears twice in the Frobenius norm
    const Var per_sample = t.add(t.add(d11, t.scale(d12, 2.0)), d22);
    return t.mean(per_sample);
}

// ---------------------------------------------------------------------------
// Rigid equivariance
// ---------------------------------------------------------------------------

/// Regression targets R·P_k(φ_k(p)) + T: the nearest input point to each
/// mapped point, moved by the transform.
inline PointCloud rigid_targets(const PointCloud& mapped, const PointCloud& cloud,
                                const RigidTransform& tf)
{
    const PointIndex index(cloud);
    PointCloud nearest(3, mapped.cols());
    for (Eigen::Index i = 0; i < mapped.cols(); ++i) {
        nearest.col(i) = cloud.col(static_cast<Eigen::Index>(index.nearest(mapped.col(i)).index));
    }
    return tf.apply(nearest);
}

/// Mean squared distance between fixed targets and the augmented branch.
inline Var rigid_term(Tape& t, Var mapped_augmented, const PointCloud& targets)
{
    const auto& X = t.value(mapped_augmented);
    if (X.rows() != 3 || X.cols() != targets.cols()) {
        throw ShapeMismatch("rigid_term: target/mapping size mismatch");
    }
    const Var diff = t.sub(t.constant(Matrix(targets)), mapped_augmented);
    return t.scale(t.sum(t.square(diff)), 1.0 / static_cast<double>(X.cols()));
}

/// Plain evaluation for one frame: (1/O)·Σ_o mean_p ‖R_o·P_k(φ_k(p)) + T_o − φ_k^o(p)‖².
inline double rigid_loss(const AtlasModel& m, const PointCloud& cloud,
                         std::span<const RigidTransform> transforms, const UvSet& uv)
{
    if (transforms.empty()) {
        throw EmptyInput("rigid_loss: no transforms");
    }
    if (cloud.cols() == 0) {
        throw EmptyInput("rigid_loss: empty cloud");
    }
    const auto base = map_points(m, encode(m, cloud), uv).points;
    double acc = 0.0;
    for (const auto& tf : transforms) {
        const auto targets = rigid_targets(base, cloud, tf);
        const auto moved = map_points(m, encode(m, PointCloud(tf.apply(cloud))), uv).points;
        acc += (targets - moved).colwise().squaredNorm().mean();
    }
    return acc / static_cast<double>(transforms.size());
}

// ---------------------------------------------------------------------------
// Complete loss
// ---------------------------------------------------------------------------

struct LossWeights {
    double alpha_mc = 0.1;
    double alpha_rg = 0.1;
};

/// Terms of one loss evaluation. A term whose weight is zero (or, for the
/// rigid term, that has no augmentations) is not evaluated and reported as 0.
struct LossBreakdown {
    double l_fit = 0.0;
    double l_metric = 0.0;
    double l_rigid = 0.0;
    double total = 0.0;
    double alpha_mc = 0.0;
    double alpha_rg = 0.0;
};

/// l_fit + α_mc·l_metric + α_rg·l_rigid, in that evaluation order.
inline LossBreakdown combine(double l_fit, double l_metric, double l_rigid, const LossWeights& w)
{
    LossBreakdown b;
    b.l_fit = l_fit;
    b.l_metric = l_metric;
    b.l_rigid = l_rigid;
    b.alpha_mc = w.alpha_mc;
    b.alpha_rg = w.alpha_rg;
    b.total = l_fit + l_metric * w.alpha_mc + l_rigid * w.alpha_rg;
    return b;
}

/// One optimisation batch. `frames` lists the distinct frames touched by
/// `pairs` in ascending order; `clouds[k]` and `transforms[k]` belong to
/// `frames[k]`. `uv` is shared by every frame and patch.
struct TrainingBatch {
    std::vector<FramePair> pairs;
    std::vector<std::size_t> frames;
    std::vector<PointCloud> clouds;
    std::vector<RigidTransform> transforms;  // empty: rigid term disabled
    UvSet uv;

    [[nodiscard]] std::size_t slot_of(std::size_t frame) const
    {
        for (std::size_t k = 0; k < frames.size(); ++k) {
            if (frames[k] == frame) return k;
        }
        throw InvalidArgument("TrainingBatch: pair references a frame not in the batch");
    }
};

struct RecordedLoss {
    Var total;
    LossBreakdown breakdown;
};

/// Records the complete loss on `t`. l_fit is averaged over the distinct
/// frames, l_metric over pairs, l_rigid over the augmented frames.
inline RecordedLoss total_loss(Tape& t, const AtlasModel& m, const ModelVars& vars,
                               const TrainingBatch& batch, const LossWeights& w)
{
    if (batch.frames.empty() || batch.clouds.size() != batch.frames.size()) {
        throw EmptyInput("total_loss: batch has no frames");
    }
    if (!batch.transforms.empty() && batch.transforms.size() != batch.frames.size()) {
        throw ShapeMismatch("total_loss: one transform per frame expected");
    }
    const bool use_metric = w.alpha_mc != 0.0 && !batch.pairs.empty();
    const bool use_rigid = w.alpha_rg != 0.0 && !batch.transforms.empty();
    const std::size_t P = m.patches();

    std::vector<DualVar> frame_maps;
    std::vector<Var> fit_terms;
    frame_maps.reserve(batch.frames.size());
    for (std::size_t k = 0; k < batch.frames.size(); ++k) {
        const Var z = encode(t, m, vars, batch.clouds[k]);
        std::vector<Var> vals, dus, dvs;
        for (std::size_t p = 0; p < P; ++p) {
            const auto d = decode(t, m, vars, p, z, batch.uv, use_metric);
            vals.push_back(d.value);
            if (use_metric) {
                dus.push_back(d.du);
                dvs.push_back(d.dv);
            }
        }
        DualVar all;
        all.value = P == 1 ? vals[0] : t.hcat(vals);
        if (use_metric) {
            all.du = P == 1 ? dus[0] : t.hcat(dus);
            all.dv = P == 1 ? dvs[0] : t.hcat(dvs);
        }
        frame_maps.push_back(all);
        fit_terms.push_back(chamfer(t, all.value, batch.clouds[k]));
    }

    LossBreakdown out;
    out.alpha_mc = w.alpha_mc;
    out.alpha_rg = w.alpha_rg;

    Var l_fit = fit_terms[0];
    for (std::size_t k = 1; k < fit_terms.size(); ++k) l_fit = t.add(l_fit, fit_terms[k]);
    l_fit = t.scale(l_fit, 1.0 / static_cast<double>(fit_terms.size()));
    out.l_fit = t.scalar(l_fit);

    Var total = l_fit;
    if (use_metric) {
        Var acc;
        for (const auto& pr : batch.pairs) {
            const Var e = metric_consistency(t, frame_maps[batch.slot_of(pr.i)],
                                             frame_maps[batch.slot_of(pr.j)]);
            acc = acc.valid() ? t.add(acc, e) : e;
        }
        const Var l_metric = t.scale(acc, 1.0 / static_cast<double>(batch.pairs.size()));
        out.l_metric = t.scalar(l_metric);
        total = t.add(total, t.scale(l_metric, w.alpha_mc));
    }

    if (use_rigid) {
        Var acc;
        for (std::size_t k = 0; k < batch.frames.size(); ++k) {
            const auto& tf = batch.transforms[k];
            const PointCloud moved_cloud = tf.apply(batch.clouds[k]);
            const PointCloud targets =
                rigid_targets(t.value(frame_maps[k].value), batch.clouds[k], tf);
            const Var z_o = encode(t, m, vars, moved_cloud);
            std::vector<Var> vals;
            for (std::size_t p = 0; p < P; ++p) {
                vals.push_back(decode(t, m, vars, p, z_o, batch.uv, false).value);
            }
            const Var mapped_o = P == 1 ? vals[0] : t.hcat(vals);
            const Var e = rigid_term(t, mapped_o, targets);
            acc = acc.valid() ? t.add(acc, e) : e;
        }
        const Var l_rigid = t.scale(acc, 1.0 / static_cast<double>(batch.frames.size()));
        out.l_rigid = t.scalar(l_rigid);
        total = t.add(total, t.scale(l_rigid, w.alpha_rg));
    }

    out.total = t.scalar(total);
    return {total, out};
}

/// Loss value only.
inline LossBreakdown total_loss(const AtlasModel& m, const TrainingBatch& batch,
                                const LossWeights& w)
{
    Tape t;
    const auto vars = bind(t, m);
    return total_loss(t, m, vars, batch, w).breakdown;
}

}  // namespace mcatlas
