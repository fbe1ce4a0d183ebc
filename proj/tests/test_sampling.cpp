#include <catch_amalgamated.hpp>

#include <algorithm>
#include <map>
#include <numbers>
#include <set>

#include "mcatlas/sampling.hpp"

using namespace mcatlas;

TEST_CASE("rng streams are reproducible and counter-addressable")
{
    Rng a(5), b(5);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(5, 100);
    CHECK(c.next_u64() == a.next_u64());
    CHECK(derive_seed(1, 0) != derive_seed(1, 1));
    CHECK(derive_seed(1, 0) != derive_seed(2, 0));
    CHECK(derive_seed(9, 3) == derive_seed(9, 3));
}

TEST_CASE("rng index is unbiased over a small range")
{
    Rng r(11);
    std::map<std::uint64_t, int> hist;
    const int n = 60000;
    for (int i = 0; i < n; ++i) ++hist[r.index(6)];
    REQUIRE(hist.size() == 6);
    for (const auto& [k, c] : hist) {
        CHECK(k < 6);
        CHECK(std::abs(c - n / 6) < 4 * std::sqrt(n / 6.0));
    }
}

TEST_CASE("subset draws distinct indices")
{
    Rng r(2);
    const auto s = r.subset(50, 20);
    CHECK(s.size() == 20);
    CHECK(std::set<std::size_t>(s.begin(), s.end()).size() == 20);
    CHECK(*std::max_element(s.begin(), s.end()) < 50);
}

TEST_CASE("uniform UV samples")
{
    Rng r(1);
    const auto one = sample_uv_uniform(1, r);
    CHECK(one.cols() == 1);
    CHECK(one.minCoeff() >= 0.0);
    CHECK(one.maxCoeff() <= 1.0);

    Rng a(3), b(3);
    CHECK(sample_uv_uniform(10, a) == sample_uv_uniform(10, b));

    Rng big(4);
    const auto uv = sample_uv_uniform(100000, big);
    const Eigen::Vector2d mean = uv.rowwise().mean();
    CHECK(std::abs(mean.x() - 0.5) < 0.01);
    CHECK(std::abs(mean.y() - 0.5) < 0.01);

    CHECK_THROWS_AS(sample_uv_uniform(0, r), EmptyRequest);
}

TEST_CASE("regular points: single point never moves")
{
    Rng a(6), b(6);
    std::size_t accepted = 0;
    const auto pts = regular_uv_points(1, a, [&](const RelaxationMove& m) { accepted += m.accepted; });
    CHECK(pts == sample_uv_uniform(1, b));
    CHECK(accepted == 0);
}

TEST_CASE("regular points: two points drift apart")
{
    Rng a(8), b(8);
    const auto initial = sample_uv_uniform(2, b);
    const auto pts = regular_uv_points(2, a);
    CHECK(min_pairwise_distance(pts) >= min_pairwise_distance(initial));
}

TEST_CASE("regular points beat uniform draws on minimum spacing")
{
    Rng rng(21);
    const auto reg = regular_uv_points(100, rng);
    CHECK(reg.minCoeff() >= 0.0);
    CHECK(reg.maxCoeff() <= 1.0);
    std::vector<double> baseline;
    for (int k = 0; k < 20; ++k) baseline.push_back(min_pairwise_distance(sample_uv_uniform(100, rng)));
    std::sort(baseline.begin(), baseline.end());
    const double median = 0.5 * (baseline[9] + baseline[10]);
    CHECK(min_pairwise_distance(reg) >= 2.0 * median);
}

TEST_CASE("regular points: accepted moves never shrink the NN distance")
{
    Rng rng(4);
    std::size_t moves = 0, accepted = 0, violations = 0;
    std::size_t last_sweep = 0;
    (void)regular_uv_points(40, rng, [&](const RelaxationMove& m) {
        ++moves;
        last_sweep = m.sweep;
        if (m.accepted) {
            ++accepted;
            if (!(m.new_distance > m.old_distance)) ++violations;
        } else if (m.new_distance > m.old_distance) {
            ++violations;
        }
    });
    CHECK(moves == 250 * 40);
    CHECK(last_sweep == 249);
    CHECK(accepted > 0);
    CHECK(violations == 0);
}

TEST_CASE("regular points are a pure function of the seed")
{
    Rng a(13), b(13);
    CHECK(regular_uv_points(30, a) == regular_uv_points(30, b));
}

TEST_CASE("sample_pair: forced pair on a two-frame window")
{
    Rng r(1);
    for (int i = 0; i < 50; ++i) CHECK(sample_pair({1, 2, 4}, {0, 1}, r) == FramePair{0, 1});
}

TEST_CASE("sample_pair: adjacent pairs are uniform over the window")
{
    Rng r(17);
    std::map<std::size_t, int> hist;
    const int n = 10000;
    for (int k = 0; k < n; ++k) {
        const auto p = sample_pair({1, 10, 4}, {0, 9}, r);
        REQUIRE(p.j == p.i + 1);
        ++hist[p.i];
    }
    REQUIRE(hist.size() == 9);
    const double expected = n / 9.0;
    const double sigma = std::sqrt(n * (1.0 / 9.0) * (8.0 / 9.0));
    double chi2 = 0.0;
    for (const auto& [i, c] : hist) {
        CHECK(std::abs(c - expected) < 3.0 * sigma);
        chi2 += (c - expected) * (c - expected) / expected;
    }
    // 8 degrees of freedom: mean 8, std 4
    CHECK(chi2 < 8.0 + 3.0 * 4.0);
}

TEST_CASE("sample_pair respects delta and never returns i == j")
{
    Rng r(3);
    for (std::size_t delta = 1; delta <= 6; ++delta) {
        for (int k = 0; k < 2000; ++k) {
            const auto p = sample_pair({delta, 10, 4}, {2, 8}, r);
            CHECK(p.i < p.j);
            CHECK(p.j - p.i <= delta);
            CHECK(p.i >= 2);
            CHECK(p.j <= 8);
        }
    }
}

TEST_CASE("sample_pair with delta K-1 covers every unordered pair uniformly")
{
    Rng r(5);
    std::map<std::pair<std::size_t, std::size_t>, int> hist;
    const int n = 45000;
    for (int k = 0; k < n; ++k) {
        const auto p = sample_pair({9, 10, 4}, {0, 9}, r);
        ++hist[{p.i, p.j}];
    }
    REQUIRE(hist.size() == 45);
    for (const auto& [pr, c] : hist) CHECK(std::abs(c - 1000) < 4 * std::sqrt(1000.0));
}

TEST_CASE("sample_pair errors")
{
    Rng r(1);
    CHECK_THROWS_AS(sample_pair({1, 10, 4}, {3, 3}, r), WindowTooSmall);
    CHECK_THROWS_AS(sample_pair({0, 10, 4}, {0, 9}, r), InvalidArgument);
}

TEST_CASE("progressive window examples")
{
    CHECK(progressive_window(0, {30000, 150000, 51}) == FrameRange{23, 27});
    for (std::size_t K : {1u, 2u, 5u, 6u, 9u, 10u, 51u}) {
        CHECK(progressive_window(150000, {30000, 150000, K}) == FrameRange{0, K - 1});
    }
    CHECK(progressive_window((100 + 900) / 2, {100, 900, 9}).length() == 7);
    CHECK(progressive_window(99, {100, 900, 9}) == FrameRange{2, 6});
    CHECK(progressive_window(0, {100, 900, 4}) == FrameRange{0, 3});
}

TEST_CASE("progressive window is monotone in the iteration")
{
    Rng r(99);
    for (int probe = 0; probe < 10000; ++probe) {
        const std::size_t K = 1 + r.index(60);
        const std::size_t i_init = r.index(1000);
        const std::size_t i_end = i_init + 1 + r.index(2000);
        const ProgressiveSchedule s{i_init, i_end, K};
        std::size_t a = r.index(4000), b = r.index(4000);
        if (a > b) std::swap(a, b);
        const auto wa = progressive_window(a, s);
        const auto wb = progressive_window(b, s);
        CHECK((wb.first <= wa.first && wa.last <= wb.last));
        CHECK(wa.last < K);
        CHECK(wa.length() >= std::min<std::size_t>(K, 5));
    }
}

TEST_CASE("random rigid transforms")
{
    Rng r(31);
    CHECK(axis_angle(Eigen::Vector3d(0.3, -1, 2), 0.0).isIdentity(0.0));
    double angle_sum = 0.0;
    const int n = 10000;
    for (int k = 0; k < n; ++k) {
        const auto tf = random_rigid(r);
        CHECK((tf.rotation.transpose() * tf.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <
              1e-12);
        CHECK(tf.rotation.determinant() == Catch::Approx(1.0).margin(1e-12));
        CHECK(tf.translation.cwiseAbs().maxCoeff() <= 0.25);
        angle_sum += rotation_angle(tf.rotation);
    }
    CHECK(std::abs(angle_sum / n - std::numbers::pi / 2) < 0.02 * std::numbers::pi / 2);
}
