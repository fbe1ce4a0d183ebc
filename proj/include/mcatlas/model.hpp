#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mcatlas/autodiff/dual.hpp"
#include "mcatlas/autodiff/tape.hpp"
#include "mcatlas/errors.hpp"
#include "mcatlas/sampling.hpp"
#include "mcatlas/types.hpp"

namespace mcatlas {

using ad::DualBatch;
using ad::DualVar;
using ad::Jacobian3x2;
using ad::Matrix;
using ad::Tape;
using ad::Var;

// ---------------------------------------------------------------------------
// ModelConfig
// ---------------------------------------------------------------------------

struct ModelConfig {
    std::size_t patches = 10;
    std::size_t latent_dim = 64;
    std::vector<std::size_t> encoder_widths = {64, 128};   // shared per-point MLP
    std::vector<std::size_t> decoder_widths = {128, 128, 128};

    bool operator==(const ModelConfig&) const = default;
};

inline void validate(const ModelConfig& c)
{
    if (c.patches == 0) throw ConfigError("model: patches must be >= 1");
    if (c.latent_dim == 0) throw ConfigError("model: latent_dim must be >= 1");
    if (c.encoder_widths.empty()) throw ConfigError("model: encoder needs at least one layer");
    for (auto w : c.encoder_widths) if (w == 0) throw ConfigError("model: zero encoder width");
    for (auto w : c.decoder_widths) if (w == 0) throw ConfigError("model: zero decoder width");
}

struct ParamBlock {
    std::string name;
    Matrix value;
};

// ---------------------------------------------------------------------------
// AtlasModel
// ---------------------------------------------------------------------------
//
// Parameters live in one flat list of named blocks. The slot order is
//
//   encoder.<l>.weight / .bias          per-point MLP layers
//   encoder.proj.weight / .bias         max-pooled features -> latent
//   decoder.<p>.<l>.weight / .bias      hidden layers of patch p
//   decoder.<p>.out.weight / .bias      last hidden -> R^3
//
// The first decoder layer takes [u, v, z] (2 + C inputs). Hidden layers use
// Softplus, the output layer is linear. With no hidden widths a decoder is a
// single affine map.

class AtlasModel {
public:
    AtlasModel() = default;

    explicit AtlasModel(ModelConfig config) : config_(std::move(config))
    {
        validate(config_);
        build_layout();
    }

    /// Uniform init in ±1/√fan_in for weights and biases.
    static AtlasModel initialized(const ModelConfig& config, std::uint64_t seed)
    {
        AtlasModel m(config);
        Rng rng(seed);
        for (auto& b : m.params_) {
            const bool is_bias = b.value.cols() == 1 && b.name.ends_with(".bias");
            const auto fan_in = is_bias ? m.fan_in_of_bias(b.name) : b.value.cols();
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (Eigen::Index k = 0; k < b.value.size(); ++k) {
                b.value.data()[k] = rng.uniform(-bound, bound);
            }
        }
        return m;
    }

    [[nodiscard]] const ModelConfig& config() const noexcept { return config_; }
    [[nodiscard]] std::size_t patches() const noexcept { return config_.patches; }
    [[nodiscard]] std::size_t latent_dim() const noexcept { return config_.latent_dim; }

    [[nodiscard]] std::vector<ParamBlock>& params() noexcept { return params_; }
    [[nodiscard]] const std::vector<ParamBlock>& params() const noexcept { return params_; }

    [[nodiscard]] std::size_t parameter_count() const
    {
        std::size_t n = 0;
        for (const auto& b : params_) n += static_cast<std::size_t>(b.value.size());
        return n;
    }

    [[nodiscard]] std::size_t slot_of(const std::string& name) const
    {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (params_[i].name == name) return i;
        }
        throw InvalidArgument("no parameter named '" + name + "'");
    }

    // slot of weight for encoder layer l; layer == encoder_widths.size() is the projection
    [[nodiscard]] std::size_t encoder_slot(std::size_t layer) const { return 2 * layer; }

    // slot of weight for decoder p layer l; layer == decoder_widths.size() is the output layer
    [[nodiscard]] std::size_t decoder_slot(std::size_t patch, std::size_t layer) const
    {
        const std::size_t enc = 2 * (config_.encoder_widths.size() + 1);
        const std::size_t per_patch = 2 * (config_.decoder_widths.size() + 1);
        return enc + patch * per_patch + 2 * layer;
    }

    bool operator==(const AtlasModel& o) const
    {
        if (!(config_ == o.config_) || params_.size() != o.params_.size()) return false;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (params_[i].name != o.params_[i].name) return false;
            if (params_[i].value.rows() != o.params_[i].value.rows() ||
                params_[i].value.cols() != o.params_[i].value.cols()) return false;
            if (params_[i].value != o.params_[i].value) return false;
        }
        return true;
    }

private:
    void add(std::string name, Eigen::Index rows, Eigen::Index cols)
    {
        params_.push_back({std::move(name), Matrix::Zero(rows, cols)});
    }

    void build_layout()
    {
        params_.clear();
        const auto C = static_cast<Eigen::Index>(config_.latent_dim);
        Eigen::Index in = 3;
        for (std::size_t l = 0; l < config_.encoder_widths.size(); ++l) {
            const auto w = static_cast<Eigen::Index>(config_.encoder_widths[l]);
            add("encoder." + std::to_string(l) + ".weight", w, in);
            add("encoder." + std::to_string(l) + ".bias", w, 1);
            in = w;
        }
        add("encoder.proj.weight", C, in);
        add("encoder.proj.bias", C, 1);

        for (std::size_t p = 0; p < config_.patches; ++p) {
            const std::string pre = "decoder." + std::to_string(p) + ".";
            in = 2 + C;
            for (std::size_t l = 0; l < config_.decoder_widths.size(); ++l) {
                const auto w = static_cast<Eigen::Index>(config_.decoder_widths[l]);
                add(pre + std::to_string(l) + ".weight", w, in);
                add(pre + std::to_string(l) + ".bias", w, 1);
                in = w;
            }
            add(pre + "out.weight", 3, in);
            add(pre + "out.bias", 3, 1);
        }
    }

    [[nodiscard]] Eigen::Index fan_in_of_bias(const std::string& bias_name) const
    {
        const auto stem = bias_name.substr(0, bias_name.size() - 4);  // drop "bias"
        for (const auto& b : params_) {
            if (b.name == stem + "weight") return b.value.cols();
        }
        return 1;
    }

    ModelConfig config_;
    std::vector<ParamBlock> params_;
};

// ---------------------------------------------------------------------------
// Tape-level network evaluation
// ---------------------------------------------------------------------------

/// Every parameter registered as a tape leaf, indexed by slot.
using ModelVars = std::vector<Var>;

inline ModelVars bind(Tape& t, const AtlasModel& m)
{
    ModelVars vars;
    vars.reserve(m.params().size());
    for (std::size_t s = 0; s < m.params().size(); ++s) {
        vars.push_back(t.parameter(s, m.params()[s].value));
    }
    return vars;
}

/// Latent code (C×1) of a cloud: shared per-point MLP, coordinatewise max
/// pool, linear projection. Each point's features depend on that point alone,
/// so the result is invariant to point order.
inline Var encode(Tape& t, const AtlasModel& m, const ModelVars& vars, const PointCloud& cloud)
{
    if (cloud.cols() == 0) {
        throw EmptyInput("encode: empty point cloud");
    }
    Var h = t.constant(Matrix(cloud));
    for (std::size_t l = 0; l < m.config().encoder_widths.size(); ++l) {
        const auto s = m.encoder_slot(l);
        h = t.softplus(t.add_colwise(t.matmul_colwise(vars[s], h), vars[s + 1]));
    }
    const Var pooled = t.rowmax(h);
    const auto s = m.encoder_slot(m.config().encoder_widths.size());
    return t.add(t.matmul(vars[s], pooled), vars[s + 1]);
}

/// Patch decoder evaluated at every column of `uv`: returns a 3×S dual batch
/// (value plus ∂/∂u, ∂/∂v when `with_tangents`).
inline DualVar decode(Tape& t, const AtlasModel& m, const ModelVars& vars, std::size_t patch,
                      Var z, const UvSet& uv, bool with_tangents = true)
{
    if (patch >= m.patches()) {
        throw InvalidArgument("decode: patch index out of range");
    }
    if (uv.cols() == 0) {
        throw EmptyInput("decode: no UV samples");
    }
    const auto S = uv.cols();
    const auto C = static_cast<Eigen::Index>(m.latent_dim());
    const std::size_t layers = m.config().decoder_widths.size() + 1;

    // First layer: W = [W_uv | W_z]; the latent part is shared by all samples.
    const auto s0 = m.decoder_slot(patch, 0);
    const Var w_uv = t.cols(vars[s0], 0, 2);
    const Var w_z = t.cols(vars[s0], 2, C);
    const Var shift = t.add(t.matmul(w_z, z), vars[s0 + 1]);

    DualVar h;
    h.value = t.add_colwise(t.matmul(w_uv, t.constant(Matrix(uv))), shift);
    if (with_tangents) {
        h.du = t.repeat_cols(t.cols(w_uv, 0, 1), S);
        h.dv = t.repeat_cols(t.cols(w_uv, 1, 1), S);
    }
    for (std::size_t l = 1; l < layers; ++l) {
        h = ad::softplus(t, h);
        const auto s = m.decoder_slot(patch, l);
        h = ad::affine(t, vars[s], vars[s + 1], h);
    }
    return h;
}

// ---------------------------------------------------------------------------
// Plain evaluation (no gradients needed by the caller)
// ---------------------------------------------------------------------------

inline LatentCode encode(const AtlasModel& m, const PointCloud& cloud)
{
    Tape t;
    const auto vars = bind(t, m);
    return t.value(encode(t, m, vars, cloud)).col(0);
}

/// One patch over a batch of UV points.
inline DualBatch decode_batch(const AtlasModel& m, std::size_t patch, const LatentCode& z,
                              const UvSet& uv, bool with_tangents = true)
{
    if (patch >= m.patches()) {
        throw InvalidArgument("decode: patch index out of range");
    }
    if (z.size() != static_cast<Eigen::Index>(m.latent_dim())) {
        throw ShapeMismatch("decode: latent has wrong dimension");
    }
    Tape t;
    ModelVars vars(m.params().size());
    const auto first = m.decoder_slot(patch, 0);
    const auto last = m.decoder_slot(patch, m.config().decoder_widths.size()) + 1;
    for (auto s = first; s <= last; ++s) {
        vars[s] = t.parameter(s, m.params()[s].value);
    }
    const Var zv = t.constant(Matrix(z));
    return ad::evaluate(t, decode(t, m, vars, patch, zv, uv, with_tangents));
}

inline Vec3 forward(const AtlasModel& m, std::size_t patch, const Eigen::Vector2d& p,
                    const LatentCode& z)
{
    UvSet uv(2, 1);
    uv.col(0) = p;
    return decode_batch(m, patch, z, uv, false).value.col(0);
}

inline Jacobian3x2 jacobian_uv(const AtlasModel& m, std::size_t patch, const Eigen::Vector2d& p,
                               const LatentCode& z)
{
    UvSet uv(2, 1);
    uv.col(0) = p;
    return decode_batch(m, patch, z, uv, true).jacobian(0);
}

/// Image of every UV point under every patch. Column patch·|uv| + s holds
/// patch `patch` applied to uv column s.
struct MappedPoints {
    PointCloud points;
    std::vector<std::size_t> patch;
};

inline MappedPoints map_points(const AtlasModel& m, const LatentCode& z, const UvSet& uv)
{
    const auto S = uv.cols();
    MappedPoints out;
    out.points.resize(3, S * static_cast<Eigen::Index>(m.patches()));
    out.patch.reserve(static_cast<std::size_t>(out.points.cols()));
    for (std::size_t p = 0; p < m.patches(); ++p) {
        const auto b = decode_batch(m, p, z, uv, false);
        out.points.middleCols(static_cast<Eigen::Index>(p) * S, S) = b.value;
        out.patch.insert(out.patch.end(), static_cast<std::size_t>(S), p);
    }
    return out;
}

struct PatchJacobians {
    std::vector<Jacobian3x2> jacobians;
    std::vector<std::size_t> patch;
};

/// Same layout as map_points.
inline PatchJacobians jacobians(const AtlasModel& m, const LatentCode& z, const UvSet& uv)
{
    PatchJacobians out;
    for (std::size_t p = 0; p < m.patches(); ++p) {
        const auto b = decode_batch(m, p, z, uv, true);
        for (Eigen::Index s = 0; s < b.size(); ++s) {
            out.jacobians.push_back(b.jacobian(s));
            out.patch.push_back(p);
        }
    }
    return out;
}

}  // namespace mcatlas
