#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "mcatlas/errors.hpp"
#include "mcatlas/eval.hpp"
#include "mcatlas/io.hpp"

namespace mcatlas {

// ---------------------------------------------------------------------------
// Patch grids
// ---------------------------------------------------------------------------

/// G×G UV grid, row-major in v then u: sample (i, j) sits at
/// (i/(G−1), j/(G−1)) and has index j·G + i.
inline UvSet uv_grid(std::size_t G)
{
    if (G < 2) throw InvalidArgument("uv_grid: G must be >= 2");
    UvSet uv(2, static_cast<Eigen::Index>(G * G));
    const double h = 1.0 / static_cast<double>(G - 1);
    for (std::size_t j = 0; j < G; ++j) {
        for (std::size_t i = 0; i < G; ++i) {
            uv.col(static_cast<Eigen::Index>(j * G + i)) << static_cast<double>(i) * h,
                static_cast<double>(j) * h;
        }
    }
    return uv;
}

struct PatchGridMesh {
    std::vector<std::size_t> patches;  // exported patch indices
    PointCloud vertices;               // G² per exported patch, in that order
    UvSet texcoords;
    std::vector<Triangle> triangles;
};

/// Two triangles per grid cell for every non-collapsed patch.
inline PatchGridMesh patch_grid_mesh(const Atlas& a, const PatchAreaReport& areas, std::size_t G)
{
    const UvSet uv = uv_grid(G);
    PatchGridMesh m;
    for (std::size_t p = 0; p < a.patches(); ++p) {
        if (p < areas.collapsed.size() && areas.collapsed[p]) continue;
        m.patches.push_back(p);
    }
    const auto per = uv.cols();
    const auto n = static_cast<Eigen::Index>(m.patches.size()) * per;
    m.vertices.resize(3, n);
    m.texcoords.resize(2, n);
    for (std::size_t k = 0; k < m.patches.size(); ++k) {
        const auto base = static_cast<Eigen::Index>(k) * per;
        m.vertices.middleCols(base, per) = a.map(m.patches[k], uv);
        m.texcoords.middleCols(base, per) = uv;
        for (std::size_t j = 0; j + 1 < G; ++j) {
            for (std::size_t i = 0; i + 1 < G; ++i) {
                const auto v00 = static_cast<std::uint32_t>(base) + static_cast<std::uint32_t>(j * G + i);
                const auto v10 = v00 + 1;
                const auto v01 = v00 + static_cast<std::uint32_t>(G);
                const auto v11 = v01 + 1;
                m.triangles.push_back({v00, v10, v11});
                m.triangles.push_back({v00, v11, v01});
            }
        }
    }
    return m;
}

inline constexpr const char* kTextureFile = "checker.ppm";
inline constexpr const char* kMaterialFile = "atlas.mtl";

/// 8×8 checkerboard with a hue ramp across u, as a binary PPM.
inline std::string checkerboard_ppm(std::size_t size = 256, std::size_t squares = 8)
{
    std::string out = "P6\n" + std::to_string(size) + " " + std::to_string(size) + "\n255\n";
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const bool dark = ((x * squares / size) + (y * squares / size)) % 2 == 1;
            const double u = static_cast<double>(x) / static_cast<double>(size - 1);
            const double base = dark ? 0.35 : 1.0;
            out += static_cast<char>(static_cast<unsigned char>(255.0 * base * (0.6 + 0.4 * u)));
            out += static_cast<char>(static_cast<unsigned char>(255.0 * base * 0.8));
            out += static_cast<char>(static_cast<unsigned char>(255.0 * base * (1.0 - 0.4 * u)));
        }
    }
    return out;
}

inline std::string material_mtl()
{
    return std::string("newmtl checker\nKa 1 1 1\nKd 1 1 1\nmap_Kd ") + kTextureFile + "\n";
}

/// OBJ text with `v`, `vt` and `f v/vt` records, one group per patch.
inline std::string format_patch_obj(const PatchGridMesh& m)
{
    std::string out = std::string("mtllib ") + kMaterialFile + "\nusemtl checker\n";
    char buf[128];
    for (Eigen::Index i = 0; i < m.vertices.cols(); ++i) {
        std::snprintf(buf, sizeof buf, "v %.17g %.17g %.17g\n", m.vertices(0, i), m.vertices(1, i),
                      m.vertices(2, i));
        out += buf;
    }
    for (Eigen::Index i = 0; i < m.texcoords.cols(); ++i) {
        std::snprintf(buf, sizeof buf, "vt %.17g %.17g\n", m.texcoords(0, i), m.texcoords(1, i));
        out += buf;
    }
    const std::size_t per_patch = m.patches.empty() ? 0 : m.triangles.size() / m.patches.size();
    for (std::size_t t = 0; t < m.triangles.size(); ++t) {
        if (per_patch && t % per_patch == 0) out += "g patch" + std::to_string(m.patches[t / per_patch]) + "\n";
        const auto& tri = m.triangles[t];
        std::snprintf(buf, sizeof buf, "f %lld/%lld %lld/%lld %lld/%lld\n",
                      tri[0] + 1LL, tri[0] + 1LL, tri[1] + 1LL, tri[1] + 1LL, tri[2] + 1LL, tri[2] + 1LL);
        out += buf;
    }
    return out;
}

/// Writes `path` (OBJ) plus the shared material and texture beside it.
inline PatchGridMesh export_frame(const Atlas& a, const PatchAreaReport& areas, std::size_t G,
                                  const std::filesystem::path& path)
{
    auto mesh = patch_grid_mesh(a, areas, G);
    const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    detail::write_file(path, format_patch_obj(mesh));
    detail::write_file(dir / kMaterialFile, material_mtl());
    detail::write_file(dir / kTextureFile, checkerboard_ppm());
    return mesh;
}

// ---------------------------------------------------------------------------
// Correspondence colours
// ---------------------------------------------------------------------------

/// HSV → RGB with s, v in [0,1] and h in [0,1).
inline std::array<std::uint8_t, 3> hsv_rgb(double h, double s, double v)
{
    h = h - std::floor(h);
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    const double m = v - c;
    const auto q = [](double t) {
        return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(t, 0.0, 1.0)));
    };
    return {q(r + m), q(g + m), q(b + m)};
}

/// Fixed colour of a source position: hue from x, saturation from y,
/// value from z (unit-cube coordinates, clamped).
inline std::array<std::uint8_t, 3> position_color(const Vec3& p)
{
    const auto c01 = [](double t) { return std::clamp(t, 0.0, 1.0); };
    return hsv_rgb(0.85 * c01(p.x()), 0.45 + 0.55 * c01(p.y()), 0.55 + 0.45 * c01(p.z()));
}

/// 2N vertices: the sources, then the predictions, both coloured by the
/// source position. `error` is ‖f(p) − q‖ on both copies.
inline PlyData correspondence_ply(const CorrespondenceSet& c)
{
    check(c);
    const auto N = c.size();
    PlyData d;
    d.vertices.resize(3, 2 * N);
    d.vertices.leftCols(N) = c.sources;
    d.vertices.rightCols(N) = c.predicted;
    d.colors.resize(static_cast<std::size_t>(2 * N));
    std::vector<double> err(static_cast<std::size_t>(2 * N));
    for (Eigen::Index i = 0; i < N; ++i) {
        const auto a = static_cast<std::size_t>(i);
        const auto b = static_cast<std::size_t>(N + i);
        d.colors[a] = d.colors[b] = position_color(c.sources.col(i));
        err[a] = err[b] = (c.predicted.col(i) - c.truth.col(i)).norm();
    }
    d.scalars["error"] = std::move(err);
    return d;
}

inline void export_correspondence_colors(const CorrespondenceSet& c, const std::filesystem::path& path)
{
    save_ply(correspondence_ply(c), path);
}

}  // namespace mcatlas
