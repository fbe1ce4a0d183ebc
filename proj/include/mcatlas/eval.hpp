#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "mcatlas/data.hpp"
#include "mcatlas/errors.hpp"
#include "mcatlas/losses.hpp"
#include "mcatlas/model.hpp"
#include "mcatlas/nn_search.hpp"
#include "mcatlas/sampling.hpp"

namespace mcatlas {

// ---------------------------------------------------------------------------
// Atlases
// ---------------------------------------------------------------------------

/// A set of maps Ω → R³, one per patch, evaluated in batches.
class Atlas {
public:
    virtual ~Atlas() = default;
    [[nodiscard]] virtual std::size_t patches() const = 0;
    [[nodiscard]] virtual PointCloud map(std::size_t patch, const UvSet& uv) const = 0;
    [[nodiscard]] virtual std::vector<Jacobian3x2> jacobians(std::size_t patch, const UvSet& uv) const = 0;
};

/// A trained model conditioned on one latent code.
class ModelAtlas final : public Atlas {
public:
    ModelAtlas(const AtlasModel& model, LatentCode z) : model_(&model), z_(std::move(z)) {}

    [[nodiscard]] std::size_t patches() const override { return model_->patches(); }

    [[nodiscard]] PointCloud map(std::size_t patch, const UvSet& uv) const override
    {
        return decode_batch(*model_, patch, z_, uv, false).value;
    }

    [[nodiscard]] std::vector<Jacobian3x2> jacobians(std::size_t patch, const UvSet& uv) const override
    {
        const auto d = decode_batch(*model_, patch, z_, uv, true);
        std::vector<Jacobian3x2> out;
        for (Eigen::Index s = 0; s < d.size(); ++s) out.push_back(d.jacobian(s));
        return out;
    }

    [[nodiscard]] const LatentCode& latent() const noexcept { return z_; }

private:
    const AtlasModel* model_;
    LatentCode z_;
};

/// Ground-truth single-patch map of a synthetic frame.
class SheetAtlas final : public Atlas {
public:
    explicit SheetAtlas(SheetFrameMap map) : map_(map) {}

    [[nodiscard]] std::size_t patches() const override { return 1; }

    [[nodiscard]] PointCloud map(std::size_t, const UvSet& uv) const override
    {
        PointCloud out(3, uv.cols());
        for (Eigen::Index i = 0; i < uv.cols(); ++i) out.col(i) = map_.map(uv.col(i));
        return out;
    }

    [[nodiscard]] std::vector<Jacobian3x2> jacobians(std::size_t, const UvSet& uv) const override
    {
        std::vector<Jacobian3x2> out;
        for (Eigen::Index i = 0; i < uv.cols(); ++i) out.push_back(map_.jacobian(uv.col(i)));
        return out;
    }

private:
    SheetFrameMap map_;
};

// ---------------------------------------------------------------------------
// Patch areas
// ---------------------------------------------------------------------------

struct PatchAreaReport {
    std::vector<double> area;
    std::vector<bool> collapsed;

    [[nodiscard]] std::size_t active() const
    {
        return static_cast<std::size_t>(std::count(collapsed.begin(), collapsed.end(), false));
    }
};

/// Area element √det g averaged over `uv` (Ω has unit area).
inline double patch_area(const Atlas& a, std::size_t patch, const UvSet& uv)
{
    double sum = 0.0;
    for (const auto& j : a.jacobians(patch, uv)) {
        sum += std::sqrt(std::max(metric_tensor(j).determinant(), 0.0));
    }
    return sum / static_cast<double>(uv.cols());
}

/// A patch is collapsed when its area is below 1/1000 of the mean patch
/// area, or exactly zero.
inline PatchAreaReport patch_areas(const Atlas& a, const UvSet& uv)
{
    if (uv.cols() < 16) throw InvalidArgument("patch_areas: need at least 16 UV samples");
    PatchAreaReport r;
    for (std::size_t p = 0; p < a.patches(); ++p) r.area.push_back(patch_area(a, p, uv));
    const double mean =
        std::accumulate(r.area.begin(), r.area.end(), 0.0) / static_cast<double>(r.area.size());
    for (double x : r.area) r.collapsed.push_back(x == 0.0 || x < mean / 1000.0);
    return r;
}

inline PatchAreaReport patch_areas(const Atlas& a, std::size_t samples, Rng& rng)
{
    return patch_areas(a, sample_uv_uniform(samples, rng));
}

// ---------------------------------------------------------------------------
// Inverse map
// ---------------------------------------------------------------------------

/// UV sample counts per patch: `total` spread over the non-collapsed patches,
/// the remainder going to the lowest indices.
inline std::vector<std::size_t> eval_allocation(const PatchAreaReport& areas, std::size_t total)
{
    std::vector<std::size_t> active;
    for (std::size_t p = 0; p < areas.collapsed.size(); ++p) {
        if (!areas.collapsed[p]) active.push_back(p);
    }
    if (active.empty()) throw DegenerateAtlas("every patch is collapsed");
    std::vector<std::size_t> counts(areas.collapsed.size(), 0);
    for (std::size_t r = 0; r < active.size(); ++r) {
        counts[active[r]] = total / active.size() + (r < total % active.size() ? 1 : 0);
    }
    return counts;
}

struct UvLocation {
    std::size_t patch = 0;
    Eigen::Vector2d uv = Eigen::Vector2d::Zero();
};

/// Dense image of an atlas: point s is φ_patch(uv) for the stored (patch, uv),
/// in patch-major order, so nearest-point ties resolve to the lowest
/// (patch, sample).
class InverseMap {
public:
    InverseMap(const Atlas& a, const PatchAreaReport& areas, std::size_t n_eval, Rng& rng)
    {
        const auto counts = eval_allocation(areas, n_eval);
        std::vector<PointCloud> parts;
        Eigen::Index total = 0;
        for (std::size_t p = 0; p < counts.size(); ++p) {
            if (counts[p] == 0) continue;
            const UvSet uv = regular_uv_points(counts[p], rng);
            parts.push_back(a.map(p, uv));
            for (Eigen::Index s = 0; s < uv.cols(); ++s) locations_.push_back({p, uv.col(s)});
            total += uv.cols();
        }
        PointCloud pts(3, total);
        Eigen::Index at = 0;
        for (const auto& part : parts) {
            pts.middleCols(at, part.cols()) = part;
            at += part.cols();
        }
        index_ = std::make_unique<PointIndex>(pts);
    }

    [[nodiscard]] const PointCloud& points() const { return index_->points(); }
    [[nodiscard]] const std::vector<UvLocation>& locations() const { return locations_; }

    [[nodiscard]] UvLocation locate(const Vec3& q) const
    {
        return locations_[index_->nearest(q).index];
    }

private:
    std::unique_ptr<PointIndex> index_;
    std::vector<UvLocation> locations_;
};

/// (patch, uv) of the image point nearest to `query`.
inline UvLocation inverse_map(const Atlas& a, const PatchAreaReport& areas, const Vec3& query,
                              std::size_t n_eval, Rng& rng)
{
    return InverseMap(a, areas, n_eval, rng).locate(query);
}

/// Maps each source through the inverse of `source_map`'s atlas, then
/// through `target` at the same (patch, uv), then to the nearest point of
/// `target_cloud`.
inline PointCloud correspond(const InverseMap& source_map, const Atlas& target,
                             const PointIndex& target_cloud, const PointCloud& sources)
{
    const auto N = sources.cols();
    std::vector<std::vector<Eigen::Index>> members(target.patches());
    std::vector<UvLocation> loc(static_cast<std::size_t>(N));
    for (Eigen::Index i = 0; i < N; ++i) {
        loc[static_cast<std::size_t>(i)] = source_map.locate(sources.col(i));
        members[loc[static_cast<std::size_t>(i)].patch].push_back(i);
    }
    PointCloud out(3, N);
    for (std::size_t p = 0; p < members.size(); ++p) {
        if (members[p].empty()) continue;
        UvSet uv(2, static_cast<Eigen::Index>(members[p].size()));
        for (std::size_t s = 0; s < members[p].size(); ++s) {
            uv.col(static_cast<Eigen::Index>(s)) = loc[static_cast<std::size_t>(members[p][s])].uv;
        }
        const PointCloud mapped = target.map(p, uv);
        for (std::size_t s = 0; s < members[p].size(); ++s) {
            const auto hit = target_cloud.nearest(mapped.col(static_cast<Eigen::Index>(s)));
            out.col(members[p][s]) = target_cloud.points().col(static_cast<Eigen::Index>(hit.index));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct CorrespondenceSet {
    PointCloud sources;
    PointCloud predicted;
    PointCloud truth;

    [[nodiscard]] Eigen::Index size() const noexcept { return predicted.cols(); }
};

inline void check(const CorrespondenceSet& c)
{
    if (c.predicted.cols() == 0) throw EmptyInput("metrics: no correspondences");
    if (c.truth.cols() != c.predicted.cols()) throw ShapeMismatch("metrics: prediction/truth count");
}

inline constexpr double kSl2Scale = 1e4;

/// Mean squared correspondence error (raw, unit-cube units²).
inline double metric_sL2(const CorrespondenceSet& c)
{
    check(c);
    return (c.predicted - c.truth).colwise().squaredNorm().mean();
}

/// Percentage of (i, j) with ‖q_i − q_j‖² < ‖f(p_i) − q_i‖².
inline double metric_rank(const CorrespondenceSet& c)
{
    check(c);
    const auto N = c.size();
    std::size_t count = 0;
    for (Eigen::Index i = 0; i < N; ++i) {
        const double e = (c.predicted.col(i) - c.truth.col(i)).squaredNorm();
        for (Eigen::Index j = 0; j < N; ++j) {
            if ((c.truth.col(i) - c.truth.col(j)).squaredNorm() < e) ++count;
        }
    }
    return 100.0 * static_cast<double>(count) / (static_cast<double>(N) * static_cast<double>(N));
}

/// Area under the fraction-correct curve over squared-error thresholds
/// t_k = k·d_max/(thresholds−1), trapezoid rule, normalised by d_max, in %.
inline double metric_pck_auc(const CorrespondenceSet& c, double d_max = 0.02,
                             std::size_t thresholds = 100)
{
    check(c);
    if (thresholds < 2 || !(d_max > 0.0)) throw InvalidArgument("metric_pck_auc: bad threshold grid");
    std::vector<double> err(static_cast<std::size_t>(c.size()));
    for (Eigen::Index i = 0; i < c.size(); ++i) {
        err[static_cast<std::size_t>(i)] = (c.predicted.col(i) - c.truth.col(i)).squaredNorm();
    }
    std::sort(err.begin(), err.end());
    const auto pck = [&](double t) {
        const auto n = std::upper_bound(err.begin(), err.end(), t) - err.begin();
        return static_cast<double>(n) / static_cast<double>(err.size());
    };
    const double h = d_max / static_cast<double>(thresholds - 1);
    double area = 0.0;  // in units of h
    double prev = pck(0.0);
    for (std::size_t k = 1; k < thresholds; ++k) {
        const double t = k + 1 == thresholds ? d_max : h * static_cast<double>(k);
        const double cur = pck(t);
        area += 0.5 * (prev + cur);
        prev = cur;
    }
    return 100.0 * area / static_cast<double>(thresholds - 1);
}

// ---------------------------------------------------------------------------
// Sequence evaluation
// ---------------------------------------------------------------------------

struct EvalConfig {
    std::size_t pairs = 100;
    std::size_t n_eval = 1024;
    std::size_t area_samples = 1024;
    double d_max = 0.02;
    std::size_t thresholds = 100;
    std::uint64_t seed = 0;

    bool operator==(const EvalConfig&) const = default;
};

inline EvalConfig desk_eval() { return EvalConfig{}; }

inline EvalConfig paper_eval()
{
    EvalConfig c;
    c.n_eval = 3125;
    return c;
}

struct PairRow {
    std::size_t source = 0;  // frame whose points are mapped
    std::size_t target = 0;  // frame they are mapped onto
    double sl2_raw = 0.0;
    double rank = 0.0;
    double auc = 0.0;

    [[nodiscard]] double sl2() const { return sl2_raw * kSl2Scale; }
};

struct Stat {
    double mean = 0.0;
    double std = 0.0;  // population
};

inline Stat stat_of(const std::vector<double>& xs)
{
    Stat s;
    if (xs.empty()) return s;
    s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(var / static_cast<double>(xs.size()));
    return s;
}

inline std::string mean_pm_std(const Stat& s, int decimals = 2)
{
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.*f±%.*f", decimals, s.mean, decimals, s.std);
    return buf;
}

struct EvalReport {
    std::vector<PairRow> rows;
    Stat sl2;      // ×10⁴
    Stat sl2_raw;
    Stat rank;
    Stat auc;
    double cd = 0.0;                       // mean over frames
    std::vector<double> frame_cd;
    std::vector<std::size_t> collapsed;    // collapsed patch count per frame
};

/// Every frame's atlas, its patch areas and its dense image.
struct FrameAtlases {
    std::vector<std::unique_ptr<Atlas>> atlas;
    std::vector<PatchAreaReport> areas;
    std::vector<std::unique_ptr<InverseMap>> inverse;
};

/// Areas and inverse maps for given per-frame atlases. Frame k draws from
/// its own stream, so frames are independent of each other.
inline FrameAtlases prepare_frame_atlases(std::vector<std::unique_ptr<Atlas>> atlases,
                                          const EvalConfig& cfg)
{
    FrameAtlases out;
    out.atlas = std::move(atlases);
    for (std::size_t k = 0; k < out.atlas.size(); ++k) {
        Rng rng(derive_seed(cfg.seed, 100 + k));
        out.areas.push_back(patch_areas(*out.atlas[k], cfg.area_samples, rng));
        out.inverse.push_back(std::make_unique<InverseMap>(*out.atlas[k], out.areas.back(),
                                                           cfg.n_eval, rng));
    }
    return out;
}

inline FrameAtlases build_frame_atlases(const AtlasModel& model, const Sequence& seq,
                                        const EvalConfig& cfg)
{
    std::vector<std::unique_ptr<Atlas>> atlases;
    for (const auto& f : seq.frames) atlases.push_back(std::make_unique<ModelAtlas>(model, encode(model, f)));
    return prepare_frame_atlases(std::move(atlases), cfg);
}

/// Ordered pairs (source, target), source ≠ target, uniform over all frames.
inline std::vector<std::pair<std::size_t, std::size_t>> draw_eval_pairs(std::size_t frames,
                                                                        std::size_t count, Rng& rng)
{
    if (count == 0) throw EmptyRequest("evaluation needs at least one pair");
    if (frames < 2) throw InvalidArgument("evaluation needs at least two frames");
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t n = 0; n < count; ++n) {
        const auto s = static_cast<std::size_t>(rng.index(frames));
        auto t = static_cast<std::size_t>(rng.index(frames - 1));
        if (t >= s) ++t;
        out.emplace_back(s, t);
    }
    return out;
}

/// Metrics of prepared per-frame atlases against a labeled sequence.
inline EvalReport evaluate(const FrameAtlases& fa, const Sequence& seq, const EvalConfig& cfg)
{
    if (!seq.labeled) throw LabelMismatch("evaluation needs a sequence with correspondence labels");
    check_labels(seq);
    if (fa.atlas.size() != seq.size()) throw ShapeMismatch("evaluate: one atlas per frame expected");
    Rng rng(derive_seed(cfg.seed, 3));
    const auto pairs = draw_eval_pairs(seq.size(), cfg.pairs, rng);

    EvalReport r;
    std::vector<std::unique_ptr<PointIndex>> clouds;
    for (std::size_t k = 0; k < seq.size(); ++k) {
        clouds.push_back(std::make_unique<PointIndex>(seq.frames[k]));
        r.frame_cd.push_back(chamfer(fa.inverse[k]->points(), seq.frames[k]));
        r.collapsed.push_back(fa.areas[k].collapsed.size() - fa.areas[k].active());
    }
    r.cd = std::accumulate(r.frame_cd.begin(), r.frame_cd.end(), 0.0) /
           static_cast<double>(r.frame_cd.size());

    std::vector<double> sl2, sl2_raw, rank, auc;
    for (const auto& [s, t] : pairs) {
        CorrespondenceSet c;
        c.sources = seq.frames[s];
        c.truth = seq.frames[t];
        c.predicted = correspond(*fa.inverse[s], *fa.atlas[t], *clouds[t], c.sources);
        PairRow row{s, t, metric_sL2(c), metric_rank(c), metric_pck_auc(c, cfg.d_max, cfg.thresholds)};
        sl2.push_back(row.sl2());
        sl2_raw.push_back(row.sl2_raw);
        rank.push_back(row.rank);
        auc.push_back(row.auc);
        r.rows.push_back(row);
    }
    r.sl2 = stat_of(sl2);
    r.sl2_raw = stat_of(sl2_raw);
    r.rank = stat_of(rank);
    r.auc = stat_of(auc);
    return r;
}

inline EvalReport evaluate(const AtlasModel& model, const Sequence& seq, const EvalConfig& cfg)
{
    if (!seq.labeled) throw LabelMismatch("evaluation needs a sequence with correspondence labels");
    return evaluate(build_frame_atlases(model, seq, cfg), seq, cfg);
}

/// `pair_i` is the source frame, `pair_j` the frame it is mapped onto;
/// m_sL2 in ×10⁴ units.
inline std::string report_csv(const EvalReport& r)
{
    std::string out = "pair_i,pair_j,m_sL2,m_r,m_auc\n";
    char buf[160];
    for (const auto& row : r.rows) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g\n", row.source, row.target,
                      row.sl2(), row.rank, row.auc);
        out += buf;
    }
    return out;
}

inline nlohmann::json report_json(const EvalReport& r)
{
    const auto stat = [](const Stat& s) {
        return nlohmann::json{{"mean", s.mean}, {"std", s.std}, {"formatted", mean_pm_std(s)}};
    };
    return {{"pairs", r.rows.size()},
            {"m_sL2", stat(r.sl2)},
            {"m_sL2_raw", {{"mean", r.sl2_raw.mean}, {"std", r.sl2_raw.std}}},
            {"m_r", stat(r.rank)},
            {"m_auc", stat(r.auc)},
            {"cd", r.cd},
            {"frame_cd", r.frame_cd},
            {"collapsed_patches", r.collapsed}};
}

}  // namespace mcatlas
