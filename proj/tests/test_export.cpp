#include <catch_amalgamated.hpp>

#include <sstream>

#include "mcatlas/export.hpp"
#include "support.hpp"

using namespace mcatlas;
namespace fs = std::filesystem;

namespace {

PatchAreaReport all_active(std::size_t patches)
{
    return {std::vector<double>(patches, 1.0), std::vector<bool>(patches, false)};
}

std::vector<std::string> lines_starting(const std::string& text, const std::string& prefix)
{
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) {
        if (l.starts_with(prefix)) out.push_back(l);
    }
    return out;
}

}  // namespace

TEST_CASE("uv grid layout")
{
    const auto uv = uv_grid(3);
    REQUIRE(uv.cols() == 9);
    CHECK(uv.col(0) == Eigen::Vector2d(0, 0));
    CHECK(uv.col(1) == Eigen::Vector2d(0.5, 0));
    CHECK(uv.col(5) == Eigen::Vector2d(1, 0.5));
    CHECK(uv.col(8) == Eigen::Vector2d(1, 1));
    CHECK_THROWS_AS(uv_grid(1), InvalidArgument);
}

TEST_CASE("G = 2 grid of the identity patch")
{
    const auto m = support::identity_model();
    const ModelAtlas a(m, support::latent({0.0}));
    const auto mesh = patch_grid_mesh(a, all_active(1), 2);
    REQUIRE(mesh.vertices.cols() == 4);
    CHECK(mesh.triangles.size() == 2);
    CHECK(mesh.vertices.col(0) == Vec3(0, 0, 0));
    CHECK(mesh.vertices.col(1) == Vec3(1, 0, 0));
    CHECK(mesh.vertices.col(2) == Vec3(0, 1, 0));
    CHECK(mesh.vertices.col(3) == Vec3(1, 1, 0));
    // the two triangles tile the unit square with consistent +z orientation
    double area = 0.0;
    Mesh flat{mesh.vertices, mesh.triangles};
    for (const auto& t : mesh.triangles) {
        area += triangle_area(flat, t);
        const Vec3 n = (flat.vertices.col(t[1]) - flat.vertices.col(t[0]))
                           .cross(flat.vertices.col(t[2]) - flat.vertices.col(t[0]));
        CHECK(n.z() > 0.0);
    }
    CHECK(area == 1.0);
}

TEST_CASE("grid vertex (i, j) of patch p is the decoder at (i, j)/(G-1)")
{
    const auto m = AtlasModel::initialized(support::small_config(3), 4);
    const auto z = support::latent({0.3, -0.2, 0.9});
    const ModelAtlas a(m, z);
    const std::size_t G = 5;
    PatchAreaReport areas = all_active(3);
    areas.collapsed[1] = true;
    const auto mesh = patch_grid_mesh(a, areas, G);
    CHECK(mesh.patches == std::vector<std::size_t>{0, 2});
    REQUIRE(mesh.vertices.cols() == static_cast<Eigen::Index>(2 * G * G));
    CHECK(mesh.triangles.size() == 2 * 2 * (G - 1) * (G - 1));
    for (std::size_t k = 0; k < 2; ++k) {
        for (std::size_t j = 0; j < G; ++j) {
            for (std::size_t i = 0; i < G; ++i) {
                const auto col = static_cast<Eigen::Index>(k * G * G + j * G + i);
                const Eigen::Vector2d uv(static_cast<double>(i) / (G - 1), static_cast<double>(j) / (G - 1));
                CHECK((mesh.vertices.col(col) - forward(m, mesh.patches[k], uv, z)).cwiseAbs().maxCoeff() <
                      1e-14);
                CHECK(mesh.texcoords.col(col) == uv);
            }
        }
    }
    for (const auto& t : mesh.triangles) {
        for (auto v : t) CHECK(v < mesh.vertices.cols());
    }
}

TEST_CASE("texture coordinates are identical across frames")
{
    const auto m = AtlasModel::initialized(support::small_config(2), 8);
    const ModelAtlas f0(m, support::latent({0.1, 0.2, 0.3}));
    const ModelAtlas f1(m, support::latent({-1.0, 0.5, 2.0}));
    const auto a = format_patch_obj(patch_grid_mesh(f0, all_active(2), 6));
    const auto b = format_patch_obj(patch_grid_mesh(f1, all_active(2), 6));
    CHECK(lines_starting(a, "vt ") == lines_starting(b, "vt "));
    CHECK(lines_starting(a, "f ") == lines_starting(b, "f "));
    CHECK(lines_starting(a, "v ") != lines_starting(b, "v "));
    CHECK(lines_starting(a, "g ") == std::vector<std::string>{"g patch0", "g patch1"});
}

TEST_CASE("exported frames parse back to the same mesh")
{
    const auto dir = support::temp_dir("export_frame");
    const auto m = AtlasModel::initialized(support::small_config(2), 9);
    const ModelAtlas a(m, support::latent({0.5, 0.5, -0.5}));
    const auto mesh = export_frame(a, all_active(2), 4, dir / "frame_000.obj");
    const auto back = load_mesh(dir / "frame_000.obj");
    CHECK(back.vertices == mesh.vertices);
    CHECK(back.triangles == mesh.triangles);
    CHECK(fs::exists(dir / kMaterialFile));
    CHECK(detail::read_file(dir / kTextureFile).starts_with("P6\n256 256\n255\n"));
    CHECK(detail::read_file(dir / kTextureFile).size() == std::string("P6\n256 256\n255\n").size() + 256 * 256 * 3);
}

TEST_CASE("hsv conversion")
{
    using C = std::array<std::uint8_t, 3>;
    CHECK(hsv_rgb(0.0, 1.0, 1.0) == C{255, 0, 0});
    CHECK(hsv_rgb(1.0 / 3.0, 1.0, 1.0) == C{0, 255, 0});
    CHECK(hsv_rgb(2.0 / 3.0, 1.0, 1.0) == C{0, 0, 255});
    CHECK(hsv_rgb(0.5, 0.0, 0.5) == C{128, 128, 128});
    CHECK(hsv_rgb(1.0, 1.0, 1.0) == hsv_rgb(0.0, 1.0, 1.0));
}

TEST_CASE("correspondence colours follow the source and carry the error")
{
    Rng rng(2);
    CorrespondenceSet c;
    c.sources = support::random_cloud(25, rng);
    c.truth = support::random_cloud(25, rng);
    c.predicted = support::random_cloud(25, rng);
    const auto d = correspondence_ply(c);
    REQUIRE(d.vertices.cols() == 50);
    REQUIRE(d.colors.size() == 50);
    const auto& err = d.scalars.at("error");
    for (Eigen::Index i = 0; i < 25; ++i) {
        const auto a = static_cast<std::size_t>(i), b = static_cast<std::size_t>(i + 25);
        CHECK(d.vertices.col(i) == c.sources.col(i));
        CHECK(d.vertices.col(i + 25) == c.predicted.col(i));
        CHECK(d.colors[a] == position_color(c.sources.col(i)));
        CHECK(d.colors[b] == d.colors[a]);
        const double dx = c.predicted(0, i) - c.truth(0, i);
        const double dy = c.predicted(1, i) - c.truth(1, i);
        const double dz = c.predicted(2, i) - c.truth(2, i);
        const double e = std::sqrt(dx * dx + dy * dy + dz * dz);
        CHECK(std::abs(err[a] - e) < 1e-15);
        CHECK(err[b] == err[a]);
    }

    const auto dir = support::temp_dir("export_corr");
    export_correspondence_colors(c, dir / "corr.ply");
    const auto back = load_ply(dir / "corr.ply");
    CHECK(back.vertices == d.vertices);
    CHECK(back.colors == d.colors);
    CHECK(back.scalars == d.scalars);

    c.truth.resize(3, 3);
    CHECK_THROWS_AS(correspondence_ply(c), ShapeMismatch);
}

TEST_CASE("distinct source positions get distinct colours")
{
    CHECK(position_color(Vec3(0, 0, 0)) != position_color(Vec3(1, 0, 0)));
    CHECK(position_color(Vec3(0.5, 0, 0)) != position_color(Vec3(0.5, 1, 0)));
    CHECK(position_color(Vec3(0.5, 0.5, 0)) != position_color(Vec3(0.5, 0.5, 1)));
    CHECK(position_color(Vec3(-3, 2, 9)) == position_color(Vec3(0, 1, 1)));
}
