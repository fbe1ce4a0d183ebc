#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mcatlas/checkpoint.hpp"
#include "mcatlas/config.hpp"
#include "mcatlas/data.hpp"
#include "mcatlas/errors.hpp"
#include "mcatlas/eval.hpp"
#include "mcatlas/export.hpp"
#include "mcatlas/trainer.hpp"

namespace mcatlas::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kConfig = 2, kData = 3, kNumerical = 4 };

inline constexpr const char* kCheckpointName = "checkpoint.bin";

// ---------------------------------------------------------------------------
// Config plumbing
// ---------------------------------------------------------------------------

/// Options shared by train, eval and tune-delta: a config file, one flag per
/// config key (underscores become dashes) and the two negated switches.
struct ConfigOptions {
    std::string file;
    std::map<std::string, std::string> flags;
    bool no_rigid = false;
    bool no_progressive = false;

    void attach(CLI::App& app)
    {
        app.add_option("--config", file, "key = value config file");
        for (const auto& [key, value] : to_key_values(RunConfig{})) {
            std::string flag = "--" + key;
            std::replace(flag.begin(), flag.end(), '_', '-');
            app.add_option(flag, flags[key], "config key " + key);
        }
        app.add_flag("--no-rigid", no_rigid, "disable the rigid-equivariance term");
        app.add_flag("--no-progressive", no_progressive, "train on every frame from the start");
    }

    /// File values, overridden by flags.
    [[nodiscard]] KeyValues collect() const
    {
        KeyValues kv;
        if (!file.empty()) {
            try {
                kv = load_key_values(file);
            } catch (const IoError& e) {
                throw ConfigError(e.what());
            }
        }
        for (const auto& [k, v] : flags) {
            if (!v.empty()) kv[k] = v;
        }
        if (no_rigid) kv["rigid"] = "false";
        if (no_progressive) kv["progressive"] = "false";
        return kv;
    }
};

inline void write_resolved(const RunConfig& c, const fs::path& dir)
{
    detail::write_file(dir / "config.resolved", format_config(c));
}

inline Sequence load_for_run(const fs::path& dir, const RunConfig& c)
{
    Sequence s = load_sequence(dir);
    return c.normalize ? normalize_unit_cube(s) : s;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string kind = "sheet";
    std::size_t frames = 10;
    std::size_t points = 512;
    double max_curvature = std::numbers::pi;
    double max_angle_deg = 180.0;
    double noise = 0.0;
    std::uint64_t seed = 0;
    std::string out;
};

inline int cmd_synth(const SynthArgs& a)
{
    SynthOptions o;
    o.kind = parse_synth_kind(a.kind);
    o.frames = a.frames;
    o.points = a.points;
    o.max_curvature = a.max_curvature;
    o.max_angle = a.max_angle_deg * std::numbers::pi / 180.0;
    o.noise = a.noise;
    o.seed = a.seed;
    const auto s = synthesize(o);
    save_sequence(s.sequence, a.out);
    std::cerr << "wrote " << s.sequence.size() << " frames of " << a.points << " points to " << a.out
              << "\n";
    return kOk;
}

struct TrainArgs {
    std::string seq;
    std::string out;
    bool resume = false;
    bool quiet = false;
};

inline int cmd_train(const TrainArgs& a, const KeyValues& kv)
{
    const fs::path out(a.out);
    const fs::path ckpt = out / kCheckpointName;
    RunConfig cfg = resolve(kv);
    std::optional<TrainState> resume;
    if (a.resume && fs::exists(ckpt)) {
        auto c = load_checkpoint(ckpt);
        cfg = c.config;
        resume = std::move(c.state);
        if (!a.quiet) std::cerr << "resuming at iteration " << resume->iteration << "\n";
    }
    fs::create_directories(out);
    write_resolved(cfg, out);
    const Sequence seq = load_for_run(a.seq, cfg);

    TrainCallbacks cb;
    if (!a.quiet) {
        cb.on_log = [&](const HistoryEntry& e) {
            std::fprintf(stderr, "iter %7zu  total %.6f  fit %.6f  metric %.6f  rigid %.6f  lr %g\n",
                         e.iter, e.loss.total, e.loss.l_fit, e.loss.l_metric, e.loss.l_rigid, e.lr);
        };
    }
    cb.on_checkpoint = [&](const TrainState& s) {
        save_checkpoint({cfg, s}, ckpt);
        detail::write_file(out / "history.csv", history_csv(s.history));
    };
    const TrainState final_state = train(seq, cfg.train, cb, std::move(resume));
    save_checkpoint({cfg, final_state}, ckpt);
    detail::write_file(out / "history.csv", history_csv(final_state.history));
    return kOk;
}

struct EvalArgs {
    std::string checkpoint;
    std::string seq;
    std::string out;
};

/// Evaluation settings come from the checkpoint, then the given overrides.
inline RunConfig eval_config(const RunConfig& from_checkpoint, const KeyValues& overrides)
{
    KeyValues kv = to_key_values(from_checkpoint);
    for (const auto& [k, v] : overrides) kv[k] = v;
    return resolve(kv);
}

inline int cmd_eval(const EvalArgs& a, const KeyValues& overrides)
{
    const auto c = load_checkpoint(a.checkpoint);
    const RunConfig cfg = eval_config(c.config, overrides);
    const fs::path out(a.out);
    fs::create_directories(out);
    write_resolved(cfg, out);
    const Sequence seq = load_for_run(a.seq, cfg);
    const EvalReport r = evaluate(c.state.model, seq, cfg.eval);
    detail::write_file(out / "eval.csv", report_csv(r));
    detail::write_file(out / "summary.json", report_json(r).dump(2) + "\n");
    std::cout << "m_sL2 " << mean_pm_std(r.sl2) << "  m_r " << mean_pm_std(r.rank) << "  m_AUC "
              << mean_pm_std(r.auc) << "  CD " << r.cd << "\n";
    return kOk;
}

struct ExportArgs {
    std::string checkpoint;
    std::string seq;
    std::string out;
    std::vector<std::size_t> frames;
};

inline std::string frame_stem(std::size_t k)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%03zu", k);
    return buf;
}

inline int cmd_export(const ExportArgs& a, const KeyValues& overrides)
{
    const auto c = load_checkpoint(a.checkpoint);
    const RunConfig cfg = eval_config(c.config, overrides);
    const fs::path out(a.out);
    fs::create_directories(out);
    write_resolved(cfg, out);
    const Sequence seq = load_for_run(a.seq, cfg);
    std::vector<std::size_t> frames = a.frames;
    if (frames.empty()) {
        for (std::size_t k = 0; k < seq.size(); ++k) frames.push_back(k);
    }
    for (auto k : frames) {
        if (k >= seq.size()) throw ConfigError("frame " + std::to_string(k) + " out of range");
    }
    const auto fa = build_frame_atlases(c.state.model, seq, cfg.eval);
    for (auto k : frames) {
        export_frame(*fa.atlas[k], fa.areas[k], cfg.grid, out / (frame_stem(k) + ".obj"));
    }
    if (seq.labeled) {
        const auto src = frames.front();
        for (auto k : frames) {
            if (k == src) continue;
            CorrespondenceSet cs;
            cs.sources = seq.frames[src];
            cs.truth = seq.frames[k];
            cs.predicted = correspond(*fa.inverse[src], *fa.atlas[k], PointIndex(seq.frames[k]),
                                      cs.sources);
            export_correspondence_colors(
                cs, out / ("corr_" + frame_stem(src).substr(6) + "_to_" + frame_stem(k).substr(6) + ".ply"));
        }
    }
    return kOk;
}

struct TuneArgs {
    std::string seq;
    std::string out;
    std::size_t delta_min = 1;
    std::size_t delta_max = 6;
};

/// Trains and evaluates once per δ on the validation sequence; the lowest
/// mean m_sL2 wins (ties: smaller δ).
inline int cmd_tune_delta(const TuneArgs& a, const KeyValues& kv)
{
    const fs::path out(a.out);
    fs::create_directories(out);
    RunConfig base = resolve(kv);
    write_resolved(base, out);
    const Sequence seq = load_for_run(a.seq, base);
    std::string csv = "delta,m_sL2,m_r,m_auc\n";
    std::size_t best = a.delta_min;
    double best_sl2 = std::numeric_limits<double>::infinity();
    for (std::size_t d = a.delta_min; d <= a.delta_max; ++d) {
        RunConfig c = base;
        c.train.delta = d;
        const auto st = train(seq, c.train);
        const auto r = evaluate(st.model, seq, c.eval);
        char buf[160];
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", d, r.sl2.mean, r.rank.mean, r.auc.mean);
        csv += buf;
        std::cerr << "delta " << d << ": m_sL2 " << mean_pm_std(r.sl2) << "\n";
        if (r.sl2.mean < best_sl2) {
            best_sl2 = r.sl2.mean;
            best = d;
        }
    }
    detail::write_file(out / "delta_sweep.csv", csv);
    detail::write_file(out / "best_delta.txt", std::to_string(best) + "\n");
    std::cout << "selected delta = " << best << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// Maps library errors onto exit codes.
template <class F>
int guarded(F&& f)
{
    try {
        return f();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kNumerical;
    } catch (const DegenerateAtlas& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kNumerical;
    } catch (const InvalidArgument& e) {
        std::cerr << "invalid argument: " << e.what() << "\n";
        return kConfig;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    }
}

inline int run(int argc, const char* const* argv)
{
    CLI::App app{"Temporally consistent surface reconstruction with multi-patch atlases"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "generate a labeled synthetic sequence");
    s->add_option("kind", synth.kind, "sheet | cylinder | rotating-sheet")->required();
    s->add_option("--frames,-K", synth.frames, "number of frames");
    s->add_option("--points,-n", synth.points, "points per frame");
    s->add_option("--max-curvature", synth.max_curvature, "final curvature of the sheet");
    s->add_option("--max-angle", synth.max_angle_deg, "final rotation in degrees (rotating-sheet)");
    s->add_option("--noise", synth.noise, "Gaussian noise sigma");
    s->add_option("--seed", synth.seed, "random seed");
    s->add_option("--out,-o", synth.out, "output sequence directory")->required();

    TrainArgs train_args;
    ConfigOptions train_cfg;
    auto* t = app.add_subcommand("train", "fit an atlas model to a sequence");
    t->add_option("seq", train_args.seq, "sequence directory")->required();
    t->add_option("--out,-o", train_args.out, "run directory")->required();
    t->add_flag("--resume", train_args.resume, "continue from the run directory's checkpoint");
    t->add_flag("--quiet,-q", train_args.quiet, "no progress output");
    train_cfg.attach(*t);

    EvalArgs eval_args;
    ConfigOptions eval_cfg;
    auto* e = app.add_subcommand("eval", "correspondence metrics on a labeled sequence");
    e->add_option("checkpoint", eval_args.checkpoint, "checkpoint file")->required();
    e->add_option("seq", eval_args.seq, "sequence directory")->required();
    e->add_option("--out,-o", eval_args.out, "report directory")->required();
    eval_cfg.attach(*e);
    e->add_option("--pairs,-M", eval_cfg.flags["eval_pairs"], "number of evaluation pairs");

    ExportArgs export_args;
    ConfigOptions export_cfg;
    auto* x = app.add_subcommand("export", "write patch meshes and correspondence colours");
    x->add_option("checkpoint", export_args.checkpoint, "checkpoint file")->required();
    x->add_option("seq", export_args.seq, "sequence directory")->required();
    x->add_option("--out,-o", export_args.out, "output directory")->required();
    x->add_option("--frames", export_args.frames, "frames to export (default: all)")->delimiter(',');
    export_cfg.attach(*x);

    TuneArgs tune_args;
    ConfigOptions tune_cfg;
    auto* d = app.add_subcommand("tune-delta", "pick the pair window on a validation sequence");
    d->add_option("seq", tune_args.seq, "validation sequence directory")->required();
    d->add_option("--out,-o", tune_args.out, "output directory")->required();
    d->add_option("--delta-min", tune_args.delta_min, "smallest delta tried");
    d->add_option("--delta-max", tune_args.delta_max, "largest delta tried");
    tune_cfg.attach(*d);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? kOk : kConfig;
    }

    return guarded([&] {
        if (*s) return cmd_synth(synth);
        if (*t) return cmd_train(train_args, train_cfg.collect());
        if (*e) return cmd_eval(eval_args, eval_cfg.collect());
        if (*x) return cmd_export(export_args, export_cfg.collect());
        return cmd_tune_delta(tune_args, tune_cfg.collect());
    });
}

}  // namespace mcatlas::cli
