#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mcatlas/data.hpp"
#include "mcatlas/errors.hpp"
#include "mcatlas/losses.hpp"
#include "mcatlas/model.hpp"
#include "mcatlas/sampling.hpp"

namespace mcatlas {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class PairStrategy { adjacent, random };

inline PairStrategy parse_pair_strategy(const std::string& s)
{
    if (s == "adjacent") return PairStrategy::adjacent;
    if (s == "random") return PairStrategy::random;
    throw ConfigError("unknown pair strategy '" + s + "' (adjacent|random)");
}

inline std::string to_string(PairStrategy s)
{
    return s == PairStrategy::adjacent ? "adjacent" : "random";
}

struct TrainConfig {
    std::size_t iterations = 200000;
    double lr = 1e-3;
    std::size_t batch_pairs = 4;
    double alpha_mc = 0.1;
    double alpha_rg = 0.1;
    std::size_t delta = 1;
    PairStrategy pair_strategy = PairStrategy::adjacent;
    std::size_t uv_samples = 2500;     // total over all patches
    std::size_t cloud_samples = 2500;
    std::size_t i_init = 30000;
    std::size_t i_end = 150000;
    std::uint64_t seed = 0;
    bool rigid = true;
    bool progressive = true;
    bool resample_per_iteration = false;
    std::size_t log_interval = 100;
    std::size_t checkpoint_interval = 0;  // 0: only at the end
    std::string preset = "paper";
    ModelConfig model;

    bool operator==(const TrainConfig&) const = default;
};

inline TrainConfig paper_preset()
{
    return TrainConfig{};
}

/// Scaled-down schedule and network for a single CPU core.
inline TrainConfig desk_preset()
{
    TrainConfig c;
    c.preset = "desk";
    c.iterations = 4000;
    c.i_init = 600;
    c.i_end = 3000;
    c.uv_samples = 250;
    c.cloud_samples = 250;
    c.resample_per_iteration = true;
    c.log_interval = 50;
    c.model.latent_dim = 32;
    c.model.encoder_widths = {32, 64};
    c.model.decoder_widths = {64, 64, 64};
    return c;
}

inline TrainConfig preset(const std::string& name)
{
    if (name == "paper") return paper_preset();
    if (name == "desk") return desk_preset();
    throw ConfigError("unknown preset '" + name + "' (desk|paper)");
}

/// Pair window actually used: the random strategy admits every pair.
inline std::size_t effective_delta(const TrainConfig& c, std::size_t frames)
{
    if (c.pair_strategy == PairStrategy::random) return std::max<std::size_t>(frames, 2) - 1;
    return c.delta;
}

inline std::size_t uv_per_patch(const TrainConfig& c)
{
    return (c.uv_samples + c.model.patches - 1) / c.model.patches;
}

inline void validate(const TrainConfig& c)
{
    validate(c.model);
    if (!(c.lr > 0.0)) throw ConfigError("lr must be > 0");
    if (c.batch_pairs == 0) throw ConfigError("batch_pairs must be >= 1");
    if (c.delta == 0) throw ConfigError("delta must be >= 1");
    if (c.uv_samples == 0) throw ConfigError("uv_samples must be >= 1");
    if (c.cloud_samples == 0) throw ConfigError("cloud_samples must be >= 1");
    if (c.alpha_mc < 0.0 || c.alpha_rg < 0.0) throw ConfigError("loss weights must be >= 0");
    if (c.log_interval == 0) throw ConfigError("log_interval must be >= 1");
    if (c.progressive && c.iterations > 0 &&
        !(0 < c.i_init && c.i_init < c.i_end && c.i_end <= c.iterations)) {
        throw ConfigError("progressive schedule needs 0 < i_init < i_end <= iterations");
    }
}

// ---------------------------------------------------------------------------
// Learning rate and Adam
// ---------------------------------------------------------------------------

/// base, base/10 from 80% of `total`, base/100 from 90%.
inline double lr_schedule(std::size_t iter, std::size_t total, double base_lr)
{
    if (iter * 10 < total * 8) return base_lr;
    if (iter * 10 < total * 9) return base_lr / 10.0;
    return base_lr / 100.0;
}

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t step = 0;
    std::vector<Matrix> m;
    std::vector<Matrix> v;

    bool operator==(const AdamState& o) const
    {
        return beta1 == o.beta1 && beta2 == o.beta2 && eps == o.eps && step == o.step &&
               m == o.m && v == o.v;
    }
};

inline AdamState adam_init(const std::vector<ParamBlock>& params)
{
    AdamState s;
    for (const auto& p : params) {
        s.m.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
        s.v.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    }
    return s;
}

/// One bias-corrected Adam update. An empty gradient counts as zero. Nothing
/// is modified if any gradient is non-finite.
inline void adam_step(std::vector<ParamBlock>& params, const std::vector<Matrix>& grads,
                      AdamState& s, double lr)
{
    if (grads.size() != params.size() || s.m.size() != params.size()) {
        throw ShapeMismatch("adam_step: gradient / state count mismatch");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].size() != 0 && !grads[i].allFinite()) {
            throw NonFiniteGradient(params[i].name);
        }
    }
    ++s.step;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].size() == 0) {
            s.m[i] *= s.beta1;
            s.v[i] *= s.beta2;
        } else {
            s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grads[i];
            s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * grads[i].cwiseAbs2();
        }
        const auto mhat = (s.m[i] / c1).array();
        const auto vhat = (s.v[i] / c2).array();
        params[i].value.array() -= lr * mhat / (vhat.sqrt() + s.eps);
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct HistoryEntry {
    std::size_t iter = 0;
    LossBreakdown loss;
    double lr = 0.0;

    bool operator==(const HistoryEntry& o) const
    {
        return iter == o.iter && lr == o.lr && loss.l_fit == o.loss.l_fit &&
               loss.l_metric == o.loss.l_metric && loss.l_rigid == o.loss.l_rigid &&
               loss.total == o.loss.total;
    }
};

/// Everything needed to continue a run exactly where it stopped.
struct TrainState {
    AtlasModel model;
    AdamState adam;
    std::uint64_t rng_counter = 0;
    std::size_t iteration = 0;  // next iteration to run
    std::vector<HistoryEntry> history;
};

struct TrainCallbacks {
    std::function<void(const HistoryEntry&)> on_log;
    /// Called every checkpoint_interval iterations with the state after it.
    std::function<void(const TrainState&)> on_checkpoint;
};

inline std::string history_csv(const std::vector<HistoryEntry>& h)
{
    std::string out = "iter,l_fit,l_metric,l_rigid,total,lr\n";
    char buf[256];
    for (const auto& e : h) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", e.iter, e.loss.l_fit,
                      e.loss.l_metric, e.loss.l_rigid, e.loss.total, e.lr);
        out += buf;
    }
    return out;
}

inline TrainState initial_state(const TrainConfig& cfg)
{
    TrainState s;
    s.model = AtlasModel::initialized(cfg.model, derive_seed(cfg.seed, 0));
    s.adam = adam_init(s.model.params());
    return s;
}

namespace detail {

inline PointCloud gather(const PointCloud& cloud, const std::vector<std::size_t>& idx)
{
    PointCloud out(3, static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        out.col(static_cast<Eigen::Index>(i)) = cloud.col(static_cast<Eigen::Index>(idx[i]));
    }
    return out;
}

}  // namespace detail

/// Builds the batch for `iter`. Draw order from `rng`: batch_pairs pairs,
/// the UV set, one point subset per distinct frame (ascending, only when
/// resampling), one rigid transform per distinct frame (only when the rigid
/// term is on).
inline TrainingBatch draw_batch(const Sequence& seq, const TrainConfig& cfg, std::size_t iter,
                                const std::vector<PointCloud>& fixed_clouds, Rng& rng)
{
    const std::size_t K = seq.size();
    const FrameRange window = cfg.progressive
                                  ? progressive_window(iter, {cfg.i_init, cfg.i_end, K})
                                  : FrameRange{0, K - 1};
    const PairSamplerConfig pcfg{effective_delta(cfg, K), K, cfg.batch_pairs};

    TrainingBatch b;
    for (std::size_t n = 0; n < cfg.batch_pairs; ++n) b.pairs.push_back(sample_pair(pcfg, window, rng));
    for (const auto& p : b.pairs) {
        b.frames.push_back(p.i);
        b.frames.push_back(p.j);
    }
    std::sort(b.frames.begin(), b.frames.end());
    b.frames.erase(std::unique(b.frames.begin(), b.frames.end()), b.frames.end());

    b.uv = sample_uv_uniform(uv_per_patch(cfg), rng);
    for (auto f : b.frames) {
        const auto& cloud = seq.frames[f];
        const auto n = static_cast<std::size_t>(cloud.cols());
        if (cfg.resample_per_iteration && n > cfg.cloud_samples) {
            b.clouds.push_back(detail::gather(cloud, rng.subset(n, cfg.cloud_samples)));
        } else {
            b.clouds.push_back(fixed_clouds[f]);
        }
    }
    if (cfg.rigid && cfg.alpha_rg != 0.0) {
        for (std::size_t k = 0; k < b.frames.size(); ++k) b.transforms.push_back(random_rigid(rng));
    }
    return b;
}

/// Per-frame clouds used when not resampling: frames larger than
/// cloud_samples are cut to one fixed subset drawn from a dedicated stream.
inline std::vector<PointCloud> fixed_clouds(const Sequence& seq, const TrainConfig& cfg)
{
    Rng rng(derive_seed(cfg.seed, 2));
    std::vector<PointCloud> out;
    for (const auto& f : seq.frames) {
        const auto n = static_cast<std::size_t>(f.cols());
        out.push_back(n > cfg.cloud_samples ? detail::gather(f, rng.subset(n, cfg.cloud_samples)) : f);
    }
    return out;
}

/// Runs iterations [state.iteration, cfg.iterations). Pass a previously
/// returned state to resume; the result is identical to an uninterrupted run.
inline TrainState train(const Sequence& seq, const TrainConfig& cfg, const TrainCallbacks& cb = {},
                        std::optional<TrainState> resume = std::nullopt)
{
    validate(cfg);
    if (seq.size() < 2) throw InvalidArgument("train: sequence needs at least 2 frames");
    for (const auto& f : seq.frames) {
        if (f.cols() == 0) throw EmptyInput("train: empty frame");
    }
    TrainState st = resume ? std::move(*resume) : initial_state(cfg);
    if (!(st.model.config() == cfg.model)) {
        throw ConfigError("train: resumed model does not match the configured architecture");
    }

    const auto clouds = fixed_clouds(seq, cfg);
    Rng rng(derive_seed(cfg.seed, 1), st.rng_counter);
    const LossWeights w{cfg.alpha_mc, cfg.alpha_rg};
    const std::size_t slots = st.model.params().size();

    for (std::size_t iter = st.iteration; iter < cfg.iterations; ++iter) {
        const TrainingBatch batch = draw_batch(seq, cfg, iter, clouds, rng);
        Tape t;
        const auto vars = bind(t, st.model);
        const auto rec = total_loss(t, st.model, vars, batch, w);
        const auto grads = t.backprop(rec.total, slots);
        const double lr = lr_schedule(iter, cfg.iterations, cfg.lr);
        adam_step(st.model.params(), grads, st.adam, lr);

        st.iteration = iter + 1;
        st.rng_counter = rng.counter();
        if (iter % cfg.log_interval == 0 || iter + 1 == cfg.iterations) {
            st.history.push_back({iter, rec.breakdown, lr});
            if (cb.on_log) cb.on_log(st.history.back());
        }
        if (cb.on_checkpoint && cfg.checkpoint_interval > 0 &&
            st.iteration % cfg.checkpoint_interval == 0 && st.iteration < cfg.iterations) {
            cb.on_checkpoint(st);
        }
    }
    return st;
}

}  // namespace mcatlas
