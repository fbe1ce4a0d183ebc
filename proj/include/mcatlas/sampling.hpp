#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mcatlas/errors.hpp"
#include "mcatlas/types.hpp"

namespace mcatlas {

// ---------------------------------------------------------------------------
// Rng
// ---------------------------------------------------------------------------
//
// Counter-based generator: draw n of a stream is a pure function of
// (seed, n), so the full state is two integers and can be checkpointed.

class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed = 0, std::uint64_t counter = 0)
        : seed_(seed), key_(mix(seed ^ 0x6a09e667f3bcc909ULL)), counter_(counter) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() { return next_u64(); }

    std::uint64_t next_u64()
    {
        ++counter_;
        return mix(key_ + counter_ * 0x9e3779b97f4a7c15ULL);
    }

    /// Uniform in [0,1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t index(std::uint64_t n)
    {
        if (n == 0) {
            throw InvalidArgument("Rng::index(0)");
        }
        // rejection keeps the draw unbiased
        const std::uint64_t limit = max() - max() % n;
        std::uint64_t x = next_u64();
        while (x >= limit) {
            x = next_u64();
        }
        return x % n;
    }

    /// Standard normal (Box–Muller, one value per call).
    double normal()
    {
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// k distinct indices from [0, n) in random order (partial Fisher–Yates).
    std::vector<std::size_t> subset(std::size_t n, std::size_t k)
    {
        k = std::min(k, n);
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) {
            idx[i] = i;
        }
        for (std::size_t i = 0; i < k; ++i) {
            const auto j = i + static_cast<std::size_t>(index(n - i));
            std::swap(idx[i], idx[j]);
        }
        idx.resize(k);
        return idx;
    }

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
    [[nodiscard]] std::uint64_t counter() const noexcept { return counter_; }

private:
    static std::uint64_t mix(std::uint64_t z)
    {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t key_;
    std::uint64_t counter_;
};

/// Seed of an independent sub-stream, e.g. model init vs. training draws.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream)
{
    Rng r(seed ^ (0xd1b54a32d192ed03ULL * (stream + 1)));
    return r.next_u64();
}

// ---------------------------------------------------------------------------
// UV sampling
// ---------------------------------------------------------------------------

inline UvSet sample_uv_uniform(std::size_t count, Rng& rng)
{
    if (count == 0) {
        throw EmptyRequest("sample_uv_uniform: zero points requested");
    }
    UvSet uv(2, static_cast<Eigen::Index>(count));
    for (Eigen::Index i = 0; i < uv.cols(); ++i) {
        uv(0, i) = rng.uniform();
        uv(1, i) = rng.uniform();
    }
    return uv;
}

/// One proposal of the regular-points relaxation, reported to an observer.
struct RelaxationMove {
    std::size_t sweep;
    std::size_t point;
    double old_distance;
    double new_distance;
    bool accepted;
};

namespace detail {

inline double nearest_other(const UvSet& pts, Eigen::Index self, const Eigen::Vector2d& at)
{
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < pts.cols(); ++j) {
        if (j == self) {
            continue;
        }
        best = std::min(best, (pts.col(j) - at).squaredNorm());
    }
    return std::sqrt(best);
}

}  // namespace detail

/// As-regular-as-possible points in [0,1]².
///
/// Starts from uniform random points and runs 250 sweeps; in each sweep every
/// point proposes a move of length `step` in a random direction and keeps it
/// only if its distance to the nearest other point strictly grows. The step
/// starts at 1/(4√M) and decays by 0.994 per sweep. Proposals are clamped to
/// the unit square before the distance test. Other points are read at their
/// current (already updated) positions.
inline UvSet regular_uv_points(std::size_t count, Rng& rng,
                               const std::function<void(const RelaxationMove&)>& observer = {})
{
    constexpr std::size_t kSweeps = 250;
    constexpr double kDecay = 0.994;

    UvSet pts = sample_uv_uniform(std::max<std::size_t>(count, 1), rng);
    if (count == 0) {
        return UvSet(2, 0);
    }
    double step = 1.0 / (4.0 * std::sqrt(static_cast<double>(count)));

    for (std::size_t sweep = 0; sweep < kSweeps; ++sweep) {
        for (Eigen::Index i = 0; i < pts.cols(); ++i) {
            const Eigen::Vector2d cur = pts.col(i);
            const double d_old = detail::nearest_other(pts, i, cur);
            const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
            Eigen::Vector2d cand = cur + step * Eigen::Vector2d(std::cos(angle), std::sin(angle));
            cand = cand.cwiseMax(0.0).cwiseMin(1.0);
            const double d_new = detail::nearest_other(pts, i, cand);
            const bool accept = d_new > d_old;
            if (accept) {
                pts.col(i) = cand;
            }
            if (observer) {
                observer({sweep, static_cast<std::size_t>(i), d_old, d_new, accept});
            }
        }
        step *= kDecay;
    }
    return pts;
}

/// Smallest pairwise distance of a point set (infinity for fewer than 2).
inline double min_pairwise_distance(const UvSet& pts)
{
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < pts.cols(); ++i) {
        for (Eigen::Index j = i + 1; j < pts.cols(); ++j) {
            best = std::min(best, (pts.col(i) - pts.col(j)).squaredNorm());
        }
    }
    return std::sqrt(best);
}

// ---------------------------------------------------------------------------
// Frame pairs and the progressive window
// ---------------------------------------------------------------------------

/// Inclusive range of frame indices.
struct FrameRange {
    std::size_t first = 0;
    std::size_t last = 0;

    [[nodiscard]] std::size_t length() const noexcept { return last - first + 1; }
    [[nodiscard]] bool contains(std::size_t k) const noexcept { return k >= first && k <= last; }
    bool operator==(const FrameRange&) const = default;
};

struct PairSamplerConfig {
    std::size_t delta = 1;  ///< time window: pairs satisfy |i−j| ≤ delta
    std::size_t frames = 2;
    std::size_t batch_pairs = 4;
};

struct FramePair {
    std::size_t i = 0;
    std::size_t j = 0;
    bool operator==(const FramePair&) const = default;
};

/// Uniform draw over unordered pairs {i,j} ⊂ window with 0 < |i−j| ≤ delta.
/// Returned with i < j.
inline FramePair sample_pair(const PairSamplerConfig& cfg, FrameRange window, Rng& rng)
{
    if (window.last < window.first || window.length() < 2) {
        throw WindowTooSmall("sample_pair: window holds fewer than two frames");
    }
    if (cfg.delta == 0) {
        throw InvalidArgument("sample_pair: delta must be >= 1");
    }
    const std::size_t len = window.length();
    const std::size_t max_gap = std::min(cfg.delta, len - 1);
    std::size_t total = 0;
    for (std::size_t d = 1; d <= max_gap; ++d) {
        total += len - d;
    }
    auto r = static_cast<std::size_t>(rng.index(total));
    for (std::size_t d = 1; d <= max_gap; ++d) {
        if (r < len - d) {
            return {window.first + r, window.first + r + d};
        }
        r -= len - d;
    }
    throw InvalidArgument("sample_pair: unreachable");
}

struct ProgressiveSchedule {
    std::size_t i_init = 30000;
    std::size_t i_end = 150000;
    std::size_t frames = 1;
};

/// Training window at iteration `iter`: the 5 middle frames before i_init,
/// the full sequence from i_end on, and in between one extra frame per side
/// every ⌊(i_end − i_init)/⌈(K−5)/2⌉⌋ iterations.
inline FrameRange progressive_window(std::size_t iter, const ProgressiveSchedule& s)
{
    if (s.frames == 0) {
        throw InvalidArgument("progressive_window: empty sequence");
    }
    const auto K = static_cast<std::int64_t>(s.frames);
    const FrameRange full{0, s.frames - 1};
    if (iter >= s.i_end || K <= 5) {
        return full;
    }
    const std::int64_t mid = K / 2;
    std::int64_t grow = 0;
    if (iter >= s.i_init) {
        const std::int64_t needed = (K - 5 + 1) / 2;
        const auto span = static_cast<std::int64_t>(s.i_end - s.i_init);
        const std::int64_t interval = std::max<std::int64_t>(span / needed, 1);
        grow = std::min(static_cast<std::int64_t>(iter - s.i_init) / interval, needed);
    }
    const std::int64_t lo = std::max<std::int64_t>(mid - 2 - grow, 0);
    const std::int64_t hi = std::min<std::int64_t>(mid + 2 + grow, K - 1);
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// ---------------------------------------------------------------------------
// Rigid transforms
// ---------------------------------------------------------------------------

struct RigidTransform {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    /// R·x + T applied to every column.
    [[nodiscard]] Eigen::Matrix3Xd apply(const Eigen::Matrix3Xd& pts) const
    {
        return (rotation * pts).colwise() + translation;
    }
};

inline Eigen::Matrix3d axis_angle(const Eigen::Vector3d& axis, double angle)
{
    return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

/// Uniform axis on S², angle uniform in [0,π], T uniform in the cube
/// [−max_translation, max_translation]³.
inline RigidTransform random_rigid(Rng& rng, double max_translation = 0.25)
{
    const double z = rng.uniform(-1.0, 1.0);
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const Eigen::Vector3d axis(r * std::cos(phi), r * std::sin(phi), z);
    const double angle = rng.uniform(0.0, std::numbers::pi);

    RigidTransform out;
    out.rotation = axis_angle(axis, angle);
    for (int k = 0; k < 3; ++k) {
        out.translation[k] = rng.uniform(-max_translation, max_translation);
    }
    return out;
}

/// Rotation angle of R in [0,π].
inline double rotation_angle(const Eigen::Matrix3d& r)
{
    const double c = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
    return std::acos(c);
}

}  // namespace mcatlas
