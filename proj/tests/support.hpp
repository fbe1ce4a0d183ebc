#pragma once

// Shared fixtures and independent reference implementations for the tests.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mcatlas/losses.hpp"
#include "mcatlas/model.hpp"
#include "mcatlas/sampling.hpp"

namespace support {

using namespace mcatlas;

/// Relative error with a floor on the denominator.
inline double rel_err(double a, double b, double floor = 1e-6)
{
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline Matrix& block(AtlasModel& m, const std::string& name)
{
    return m.params()[m.slot_of(name)].value;
}

/// One patch, no hidden layers: φ(u,v) = W·[u, v, z] + b with z ∈ R^1.
inline AtlasModel affine_model(const Eigen::Matrix<double, 3, 2>& w_uv,
                               const Eigen::Vector3d& bias = Eigen::Vector3d::Zero())
{
    ModelConfig c;
    c.patches = 1;
    c.latent_dim = 1;
    c.encoder_widths = {4};
    c.decoder_widths = {};
    AtlasModel m = AtlasModel::initialized(c, 1);
    Matrix w = Matrix::Zero(3, 3);
    w.leftCols(2) = w_uv;
    block(m, "decoder.0.out.weight") = w;
    block(m, "decoder.0.out.bias") = bias;
    return m;
}

inline AtlasModel identity_model()
{
    Eigen::Matrix<double, 3, 2> w;
    w << 1, 0, 0, 1, 0, 0;
    return affine_model(w);
}

inline ModelConfig small_config(std::size_t patches = 2)
{
    ModelConfig c;
    c.patches = patches;
    c.latent_dim = 3;
    c.encoder_widths = {5, 4};
    c.decoder_widths = {6, 5};
    return c;
}

inline LatentCode latent(std::initializer_list<double> xs)
{
    LatentCode z(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) z(i++) = x;
    return z;
}

// ---------------------------------------------------------------------------
// Straight-line scalar re-implementations
// ---------------------------------------------------------------------------

inline double ref_softplus(double x) { return std::log(1.0 + std::exp(x)); }

/// y = W·x + b, element by element.
inline std::vector<double> ref_affine(const Matrix& w, const Matrix& b, const std::vector<double>& x)
{
    std::vector<double> y(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
        double acc = b(r, 0);
        for (Eigen::Index c = 0; c < w.cols(); ++c) acc += w(r, c) * x[static_cast<std::size_t>(c)];
        y[static_cast<std::size_t>(r)] = acc;
    }
    return y;
}

inline std::vector<double> ref_decoder(const AtlasModel& m, std::size_t patch, double u, double v,
                                       const LatentCode& z)
{
    std::vector<double> x = {u, v};
    for (Eigen::Index i = 0; i < z.size(); ++i) x.push_back(z(i));
    const std::string pre = "decoder." + std::to_string(patch) + ".";
    const auto& widths = m.config().decoder_widths;
    for (std::size_t l = 0; l <= widths.size(); ++l) {
        const std::string name = l < widths.size() ? pre + std::to_string(l) : pre + "out";
        x = ref_affine(m.params()[m.slot_of(name + ".weight")].value,
                       m.params()[m.slot_of(name + ".bias")].value, x);
        if (l < widths.size()) {
            for (auto& e : x) e = ref_softplus(e);
        }
    }
    return x;
}

inline std::vector<double> ref_encoder(const AtlasModel& m, const PointCloud& cloud)
{
    const auto& widths = m.config().encoder_widths;
    std::vector<double> pooled(widths.back(), -std::numeric_limits<double>::infinity());
    for (Eigen::Index i = 0; i < cloud.cols(); ++i) {
        std::vector<double> h = {cloud(0, i), cloud(1, i), cloud(2, i)};
        for (std::size_t l = 0; l < widths.size(); ++l) {
            const std::string name = "encoder." + std::to_string(l);
            h = ref_affine(m.params()[m.slot_of(name + ".weight")].value,
                           m.params()[m.slot_of(name + ".bias")].value, h);
            for (auto& e : h) e = ref_softplus(e);
        }
        for (std::size_t k = 0; k < h.size(); ++k) pooled[k] = std::max(pooled[k], h[k]);
    }
    return ref_affine(m.params()[m.slot_of("encoder.proj.weight")].value,
                      m.params()[m.slot_of("encoder.proj.bias")].value, pooled);
}

/// Central difference of φ at (u, v), step h.
inline Jacobian3x2 fd_jacobian(const AtlasModel& m, std::size_t patch, const Eigen::Vector2d& p,
                               const LatentCode& z, double h = 1e-4)
{
    Jacobian3x2 j;
    for (int k = 0; k < 2; ++k) {
        Eigen::Vector2d a = p, b = p;
        a(k) += h;
        b(k) -= h;
        j.col(k) = (forward(m, patch, a, z) - forward(m, patch, b, z)) / (2.0 * h);
    }
    return j;
}

/// Gradient of a scalar tape function of several matrix leaves, checked
/// entrywise against central differences. Returns the worst relative error.
using TapeFn = std::function<Var(Tape&, const std::vector<Var>&)>;

inline double worst_grad_error(const TapeFn& f, std::vector<Matrix> inputs, double h = 1e-5)
{
    const auto eval = [&](const std::vector<Matrix>& xs) {
        Tape t;
        std::vector<Var> vs;
        for (std::size_t i = 0; i < xs.size(); ++i) vs.push_back(t.parameter(i, xs[i]));
        return t.scalar(f(t, vs));
    };
    Tape t;
    std::vector<Var> vs;
    for (std::size_t i = 0; i < inputs.size(); ++i) vs.push_back(t.parameter(i, inputs[i]));
    const auto grads = t.backprop(f(t, vs), inputs.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (Eigen::Index k = 0; k < inputs[i].size(); ++k) {
            auto plus = inputs, minus = inputs;
            plus[i].data()[k] += h;
            minus[i].data()[k] -= h;
            const double fd = (eval(plus) - eval(minus)) / (2.0 * h);
            worst = std::max(worst, rel_err(grads[i].data()[k], fd));
        }
    }
    return worst;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double lo = -1.0,
                            double hi = 1.0)
{
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
    return m;
}

inline PointCloud random_cloud(std::size_t n, Rng& rng, double lo = 0.0, double hi = 1.0)
{
    PointCloud c(3, static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = rng.uniform(lo, hi);
    return c;
}

inline std::filesystem::path temp_dir(const std::string& name)
{
    auto dir = std::filesystem::temp_directory_path() / ("mcatlas_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace support
