#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "mcatlas/autodiff/dual.hpp"
#include "mcatlas/errors.hpp"
#include "mcatlas/io.hpp"
#include "mcatlas/sampling.hpp"
#include "mcatlas/types.hpp"

namespace mcatlas {

// ---------------------------------------------------------------------------
// Sequence
// ---------------------------------------------------------------------------

/// p ↦ scale·p + translation.
struct NormalizationTransform {
    double scale = 1.0;
    Vec3 translation = Vec3::Zero();

    [[nodiscard]] PointCloud apply(const PointCloud& p) const
    {
        return (scale * p).colwise() + translation;
    }

    [[nodiscard]] PointCloud invert(const PointCloud& p) const
    {
        return (p.colwise() - translation) / scale;
    }

    /// this ∘ inner
    [[nodiscard]] NormalizationTransform after(const NormalizationTransform& inner) const
    {
        return {scale * inner.scale, scale * inner.translation + translation};
    }
};

/// K point clouds. In a labeled sequence column i of every frame is the same
/// material point.
struct Sequence {
    std::string name;
    std::vector<PointCloud> frames;
    bool labeled = false;
    NormalizationTransform normalization;
    nlohmann::json metadata = nlohmann::json::object();

    [[nodiscard]] std::size_t size() const noexcept { return frames.size(); }
};

inline void check_labels(const Sequence& s)
{
    if (!s.labeled || s.frames.empty()) return;
    const auto n = s.frames.front().cols();
    for (std::size_t k = 1; k < s.frames.size(); ++k) {
        if (s.frames[k].cols() != n) {
            throw LabelMismatch("labeled sequence: frame " + std::to_string(k) + " has " +
                                std::to_string(s.frames[k].cols()) + " points, frame 0 has " +
                                std::to_string(n));
        }
    }
}

// ---------------------------------------------------------------------------
// Surface sampling
// ---------------------------------------------------------------------------

inline double triangle_area(const Mesh& m, const Triangle& t)
{
    const Vec3 a = m.vertices.col(t[0]);
    const Vec3 b = m.vertices.col(t[1]);
    const Vec3 c = m.vertices.col(t[2]);
    return 0.5 * (b - a).cross(c - a).norm();
}

/// Area-weighted triangle choice, uniform point inside via the square-root
/// barycentric trick.
inline PointCloud sample_surface(const Mesh& m, std::size_t n, Rng& rng)
{
    std::vector<double> cdf;
    cdf.reserve(m.triangles.size());
    double total = 0.0;
    for (const auto& t : m.triangles) {
        for (auto v : t) {
            if (static_cast<Eigen::Index>(v) >= m.vertices.cols()) throw DegenerateMesh("triangle index out of range");
        }
        const double a = triangle_area(m, t);
        if (!std::isfinite(a)) throw DegenerateMesh("non-finite triangle area");
        total += a;
        cdf.push_back(total);
    }
    if (!(total > 0.0)) {
        throw DegenerateMesh("mesh has zero surface area");
    }
    PointCloud out(3, static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const double r = rng.uniform() * total;
        auto it = std::upper_bound(cdf.begin(), cdf.end(), r);
        if (it == cdf.end()) --it;
        const auto& t = m.triangles[static_cast<std::size_t>(it - cdf.begin())];
        const double s = std::sqrt(rng.uniform());
        const double r2 = rng.uniform();
        const double wa = 1.0 - s, wb = s * (1.0 - r2), wc = s * r2;
        out.col(static_cast<Eigen::Index>(i)) = wa * m.vertices.col(t[0]) +
                                                wb * m.vertices.col(t[1]) +
                                                wc * m.vertices.col(t[2]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// Uniform scale + translation fitting frame 0's bounding box into [0,1]³,
/// applied to every frame. Later frames may leave the cube.
inline Sequence normalize_unit_cube(const Sequence& seq)
{
    if (seq.frames.empty() || seq.frames[0].cols() == 0) {
        throw EmptyInput("normalize_unit_cube: first frame is empty");
    }
    const Vec3 lo = seq.frames[0].rowwise().minCoeff();
    const Vec3 hi = seq.frames[0].rowwise().maxCoeff();
    const double extent = (hi - lo).maxCoeff();
    if (!(extent > 0.0)) {
        throw DegenerateMesh("normalize_unit_cube: first frame is a single point");
    }
    NormalizationTransform tf;
    tf.scale = 1.0 / extent;
    tf.translation = -lo * tf.scale;

    Sequence out = seq;
    for (auto& f : out.frames) f = tf.apply(f);
    out.normalization = tf.after(seq.normalization);
    return out;
}

inline Sequence denormalize(const Sequence& seq)
{
    Sequence out = seq;
    for (auto& f : out.frames) f = seq.normalization.invert(f);
    out.normalization = {};
    return out;
}

/// i.i.d. N(0, σ²) per coordinate.
inline Sequence add_noise(const Sequence& seq, double sigma, Rng& rng)
{
    Sequence out = seq;
    if (sigma == 0.0) return out;
    for (auto& f : out.frames) {
        for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] += sigma * rng.normal();
    }
    return out;
}

/// Frame k rotated by k/(K−1)·max_angle about `axis` through frame 0's centroid.
inline Sequence apply_progressive_rotation(const Sequence& seq, double max_angle,
                                           const Vec3& axis = Vec3::UnitY())
{
    Sequence out = seq;
    if (seq.frames.size() < 2) return out;
    const Vec3 c = seq.frames[0].rowwise().mean();
    const double K1 = static_cast<double>(seq.frames.size() - 1);
    for (std::size_t k = 0; k < out.frames.size(); ++k) {
        const Eigen::Matrix3d r = axis_angle(axis, static_cast<double>(k) / K1 * max_angle);
        out.frames[k] = (r * (seq.frames[k].colwise() - c)).colwise() + c;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic isometric sequences
// ---------------------------------------------------------------------------
//
// The unit square (s,t) rolled onto a cylinder of curvature κ around an axis
// parallel to t, centred on s = 1/2:
//
//     θ = κ(s − ½),   x = ½ + sin θ / κ,   y = t,   z = (1 − cos θ) / κ
//
// Arc length along s is preserved, so every frame is an isometric image of
// the square and g = I everywhere.

/// Closed-form ground-truth map of one synthetic frame:
/// uv ↦ scale·(R·(bend_κ(uv) − c) + c) + offset.
struct SheetFrameMap {
    double curvature = 0.0;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Vec3 center = Vec3::Zero();
    double scale = 1.0;
    Vec3 offset = Vec3::Zero();

    [[nodiscard]] Vec3 bend(const Eigen::Vector2d& uv) const
    {
        if (curvature == 0.0) return {uv.x(), uv.y(), 0.0};
        const double th = curvature * (uv.x() - 0.5);
        return {0.5 + std::sin(th) / curvature, uv.y(), (1.0 - std::cos(th)) / curvature};
    }

    [[nodiscard]] Vec3 map(const Eigen::Vector2d& uv) const
    {
        return scale * (rotation * (bend(uv) - center) + center) + offset;
    }

    [[nodiscard]] ad::Jacobian3x2 jacobian(const Eigen::Vector2d& uv) const
    {
        const double th = curvature * (uv.x() - 0.5);
        ad::Jacobian3x2 j;
        j.col(0) = Vec3(std::cos(th), 0.0, std::sin(th));
        j.col(1) = Vec3(0.0, 1.0, 0.0);
        return scale * rotation * j;
    }
};

struct SyntheticSequence {
    Sequence sequence;
    UvSet material;                    // material coordinates of the labeled points
    std::vector<SheetFrameMap> maps;   // one per frame
};

enum class SynthKind { sheet, cylinder, rotating_sheet };

inline SynthKind parse_synth_kind(const std::string& s)
{
    if (s == "sheet") return SynthKind::sheet;
    if (s == "cylinder") return SynthKind::cylinder;
    if (s == "rotating-sheet") return SynthKind::rotating_sheet;
    throw ConfigError("unknown synthetic kind '" + s + "' (sheet|cylinder|rotating-sheet)");
}

inline std::string to_string(SynthKind k)
{
    switch (k) {
        case SynthKind::sheet: return "sheet";
        case SynthKind::cylinder: return "cylinder";
        case SynthKind::rotating_sheet: return "rotating-sheet";
    }
    return "sheet";
}

namespace detail {

inline SyntheticSequence bend_family(std::size_t frames, std::size_t points, double kappa_first,
                                     double kappa_last, Rng& rng)
{
    SyntheticSequence out;
    out.material = sample_uv_uniform(points, rng);
    out.sequence.labeled = true;
    for (std::size_t k = 0; k < frames; ++k) {
        const double a = frames > 1 ? static_cast<double>(k) / static_cast<double>(frames - 1) : 0.0;
        SheetFrameMap m;
        m.curvature = kappa_first + a * (kappa_last - kappa_first);
        PointCloud f(3, out.material.cols());
        for (Eigen::Index i = 0; i < f.cols(); ++i) f.col(i) = m.bend(out.material.col(i));
        out.sequence.frames.push_back(std::move(f));
        out.maps.push_back(m);
    }
    return out;
}

}  // namespace detail

/// Sheet rolled from flat (κ = 0) to κ = max_curvature over K frames.
inline SyntheticSequence synth_bending_sheet(std::size_t frames, std::size_t points,
                                             double max_curvature, Rng& rng)
{
    if (frames < 5) throw InvalidArgument("synth_bending_sheet: need at least 5 frames");
    auto s = detail::bend_family(frames, points, 0.0, max_curvature, rng);
    s.sequence.name = "sheet";
    return s;
}

/// Half-cylinder curling towards a closed tube (κ from π to 1.8π).
inline SyntheticSequence synth_bending_cylinder(std::size_t frames, std::size_t points, Rng& rng)
{
    if (frames < 5) throw InvalidArgument("synth_bending_cylinder: need at least 5 frames");
    auto s = detail::bend_family(frames, points, std::numbers::pi, 1.8 * std::numbers::pi, rng);
    s.sequence.name = "cylinder";
    return s;
}

/// Bending sheet additionally turned about the vertical (y) axis through
/// frame 0's centroid, up to `max_angle` at the last frame.
inline SyntheticSequence synth_rotating_sheet(std::size_t frames, std::size_t points,
                                              double max_curvature, double max_angle, Rng& rng)
{
    auto s = synth_bending_sheet(frames, points, max_curvature, rng);
    const Vec3 c = s.sequence.frames[0].rowwise().mean();
    s.sequence = apply_progressive_rotation(s.sequence, max_angle, Vec3::UnitY());
    const double K1 = static_cast<double>(frames - 1);
    for (std::size_t k = 0; k < frames; ++k) {
        s.maps[k].rotation = axis_angle(Vec3::UnitY(), static_cast<double>(k) / K1 * max_angle);
        s.maps[k].center = c;
    }
    s.sequence.name = "rotating-sheet";
    return s;
}

struct SynthOptions {
    SynthKind kind = SynthKind::sheet;
    std::size_t frames = 10;
    std::size_t points = 512;
    double max_curvature = std::numbers::pi;
    double max_angle = std::numbers::pi;
    double noise = 0.0;
    std::uint64_t seed = 0;
};

/// Generator entry point used by the CLI; records its options in metadata.
/// Ground-truth maps are not adjusted for noise.
inline SyntheticSequence synthesize(const SynthOptions& o)
{
    Rng rng(o.seed);
    SyntheticSequence s;
    switch (o.kind) {
        case SynthKind::sheet: s = synth_bending_sheet(o.frames, o.points, o.max_curvature, rng); break;
        case SynthKind::cylinder: s = synth_bending_cylinder(o.frames, o.points, rng); break;
        case SynthKind::rotating_sheet:
            s = synth_rotating_sheet(o.frames, o.points, o.max_curvature, o.max_angle, rng);
            break;
    }
    if (o.noise > 0.0) s.sequence = add_noise(s.sequence, o.noise, rng);
    s.sequence.metadata = {{"kind", to_string(o.kind)},  {"frames", o.frames},
                           {"points", o.points},         {"max_curvature", o.max_curvature},
                           {"max_angle", o.max_angle},   {"noise", o.noise},
                           {"seed", o.seed}};
    return s;
}

// ---------------------------------------------------------------------------
// Sequence directories
// ---------------------------------------------------------------------------
//
//   <dir>/meta.json          name, frame/point counts, labeled flag,
//                            normalization {scale, translation}, metadata
//   <dir>/frames/NNN.ply     binary little-endian PLY, double x/y/z

struct LoadOptions {
    /// Frames holding triangles are surface-sampled to this many points.
    std::optional<std::size_t> sample_meshes;
    std::uint64_t seed = 0;
};

inline void save_sequence(const Sequence& seq, const std::filesystem::path& dir)
{
    namespace fs = std::filesystem;
    fs::create_directories(dir / "frames");
    const std::size_t width = std::max<std::size_t>(3, std::to_string(seq.size()).size());
    for (std::size_t k = 0; k < seq.size(); ++k) {
        std::string idx = std::to_string(k);
        idx.insert(0, width - idx.size(), '0');
        PlyData d;
        d.vertices = seq.frames[k];
        save_ply(d, dir / "frames" / (idx + ".ply"));
    }
    nlohmann::json meta = {
        {"name", seq.name},
        {"frames", seq.size()},
        {"points", seq.frames.empty() ? 0 : seq.frames[0].cols()},
        {"labeled", seq.labeled},
        {"normalization",
         {{"scale", seq.normalization.scale},
          {"translation",
           {seq.normalization.translation.x(), seq.normalization.translation.y(),
            seq.normalization.translation.z()}}}},
        {"metadata", seq.metadata}};
    detail::write_file(dir / "meta.json", meta.dump(2) + "\n");
}

/// Frames are every .ply/.obj in <dir>/frames (or <dir> itself), in natural
/// filename order.
inline Sequence load_sequence(const std::filesystem::path& dir, const LoadOptions& opt = {})
{
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) {
        throw IoError("sequence directory '" + dir.string() + "' does not exist");
    }
    const fs::path frame_dir = fs::is_directory(dir / "frames") ? dir / "frames" : dir;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(frame_dir)) {
        if (!e.is_regular_file()) continue;
        const auto ext = e.path().extension().string();
        if (ext == ".ply" || ext == ".obj" || ext == ".PLY" || ext == ".OBJ") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
        return natural_less(a.filename().string(), b.filename().string());
    });
    if (files.empty()) {
        throw IoError("no .ply/.obj frames in '" + frame_dir.string() + "'");
    }

    Sequence seq;
    seq.name = dir.filename().string();
    if (fs::exists(dir / "meta.json")) {
        try {
            const auto meta = nlohmann::json::parse(detail::read_file(dir / "meta.json"));
            seq.name = meta.value("name", seq.name);
            seq.labeled = meta.value("labeled", false);
            if (meta.contains("normalization")) {
                const auto& n = meta["normalization"];
                seq.normalization.scale = n.value("scale", 1.0);
                if (n.contains("translation")) {
                    for (int k = 0; k < 3; ++k) seq.normalization.translation[k] = n["translation"][k];
                }
            }
            if (meta.contains("metadata")) seq.metadata = meta["metadata"];
        } catch (const nlohmann::json::exception& e) {
            throw ParseError((dir / "meta.json").string(), "json", e.what());
        }
    }

    Rng rng(opt.seed);
    for (const auto& f : files) {
        Mesh m = load_mesh(f);
        if (opt.sample_meshes && !m.triangles.empty()) {
            seq.frames.push_back(sample_surface(m, *opt.sample_meshes, rng));
        } else {
            seq.frames.push_back(std::move(m.vertices));
        }
    }
    check_labels(seq);
    return seq;
}

}  // namespace mcatlas
