#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mcatlas/errors.hpp"
#include "mcatlas/eval.hpp"
#include "mcatlas/io.hpp"
#include "mcatlas/trainer.hpp"

namespace mcatlas {

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------
//
// Plain-text `key = value` lines, `#` starts a comment. Every field below has
// exactly one key; anything else is rejected.

struct RunConfig {
    TrainConfig train = paper_preset();
    EvalConfig eval = paper_eval();
    std::size_t grid = 32;      // export: UV grid resolution per patch
    bool normalize = true;      // fit frame 0 into the unit cube on load

    bool operator==(const RunConfig&) const = default;
};

using KeyValues = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v)
{
    std::uint64_t out = 0;
    const auto* end = v.data() + v.size();
    const auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc{} || p != end) throw ConfigError("'" + key + "': expected a non-negative integer, got '" + v + "'");
    return out;
}

inline double to_real(const std::string& key, const std::string& v)
{
    double out = 0.0;
    const auto* end = v.data() + v.size();
    const auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc{} || p != end) throw ConfigError("'" + key + "': expected a number, got '" + v + "'");
    return out;
}

inline bool to_bool(const std::string& key, const std::string& v)
{
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("'" + key + "': expected true/false, got '" + v + "'");
}

inline std::vector<std::size_t> to_widths(const std::string& key, const std::string& v)
{
    std::vector<std::size_t> out;
    if (v.empty() || v == "none") return out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_uint(key, trim(item)));
    return out;
}

inline std::string real_str(double x)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline std::string widths_str(const std::vector<std::size_t>& w)
{
    if (w.empty()) return "none";
    std::string out;
    for (std::size_t i = 0; i < w.size(); ++i) out += (i ? "," : "") + std::to_string(w[i]);
    return out;
}

}  // namespace detail

inline KeyValues parse_key_values(const std::string& text, const std::string& origin = "config")
{
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        }
        kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
    }
    return kv;
}

inline KeyValues to_key_values(const RunConfig& c)
{
    using detail::real_str;
    const auto& t = c.train;
    const auto& e = c.eval;
    return {
        {"preset", t.preset},
        {"iterations", std::to_string(t.iterations)},
        {"lr", real_str(t.lr)},
        {"batch_pairs", std::to_string(t.batch_pairs)},
        {"alpha_mc", real_str(t.alpha_mc)},
        {"alpha_rg", real_str(t.alpha_rg)},
        {"delta", std::to_string(t.delta)},
        {"pair_strategy", to_string(t.pair_strategy)},
        {"uv_samples", std::to_string(t.uv_samples)},
        {"cloud_samples", std::to_string(t.cloud_samples)},
        {"i_init", std::to_string(t.i_init)},
        {"i_end", std::to_string(t.i_end)},
        {"seed", std::to_string(t.seed)},
        {"rigid", t.rigid ? "true" : "false"},
        {"progressive", t.progressive ? "true" : "false"},
        {"resample_per_iteration", t.resample_per_iteration ? "true" : "false"},
        {"log_interval", std::to_string(t.log_interval)},
        {"checkpoint_interval", std::to_string(t.checkpoint_interval)},
        {"patches", std::to_string(t.model.patches)},
        {"latent_dim", std::to_string(t.model.latent_dim)},
        {"encoder_widths", detail::widths_str(t.model.encoder_widths)},
        {"decoder_widths", detail::widths_str(t.model.decoder_widths)},
        {"eval_pairs", std::to_string(e.pairs)},
        {"n_eval", std::to_string(e.n_eval)},
        {"area_samples", std::to_string(e.area_samples)},
        {"d_max", real_str(e.d_max)},
        {"thresholds", std::to_string(e.thresholds)},
        {"eval_seed", std::to_string(e.seed)},
        {"grid", std::to_string(c.grid)},
        {"normalize", c.normalize ? "true" : "false"},
    };
}

inline void set_key(RunConfig& c, const std::string& key, const std::string& v)
{
    using namespace detail;
    auto& t = c.train;
    auto& e = c.eval;
    if (key == "preset") t.preset = v;
    else if (key == "iterations") t.iterations = to_uint(key, v);
    else if (key == "lr") t.lr = to_real(key, v);
    else if (key == "batch_pairs") t.batch_pairs = to_uint(key, v);
    else if (key == "alpha_mc") t.alpha_mc = to_real(key, v);
    else if (key == "alpha_rg") t.alpha_rg = to_real(key, v);
    else if (key == "delta") t.delta = to_uint(key, v);
    else if (key == "pair_strategy") t.pair_strategy = parse_pair_strategy(v);
    else if (key == "uv_samples") t.uv_samples = to_uint(key, v);
    else if (key == "cloud_samples") t.cloud_samples = to_uint(key, v);
    else if (key == "i_init") t.i_init = to_uint(key, v);
    else if (key == "i_end") t.i_end = to_uint(key, v);
    else if (key == "seed") t.seed = to_uint(key, v);
    else if (key == "rigid") t.rigid = to_bool(key, v);
    else if (key == "progressive") t.progressive = to_bool(key, v);
    else if (key == "resample_per_iteration") t.resample_per_iteration = to_bool(key, v);
    else if (key == "log_interval") t.log_interval = to_uint(key, v);
    else if (key == "checkpoint_interval") t.checkpoint_interval = to_uint(key, v);
    else if (key == "patches") t.model.patches = to_uint(key, v);
    else if (key == "latent_dim") t.model.latent_dim = to_uint(key, v);
    else if (key == "encoder_widths") t.model.encoder_widths = to_widths(key, v);
    else if (key == "decoder_widths") t.model.decoder_widths = to_widths(key, v);
    else if (key == "eval_pairs") e.pairs = to_uint(key, v);
    else if (key == "n_eval") e.n_eval = to_uint(key, v);
    else if (key == "area_samples") e.area_samples = to_uint(key, v);
    else if (key == "d_max") e.d_max = to_real(key, v);
    else if (key == "thresholds") e.thresholds = to_uint(key, v);
    else if (key == "eval_seed") e.seed = to_uint(key, v);
    else if (key == "grid") c.grid = to_uint(key, v);
    else if (key == "normalize") c.normalize = to_bool(key, v);
    else throw ConfigError("unknown config key '" + key + "'");
}

/// Starts from the named preset (paper when absent), then applies every other
/// key. When `iterations` is given without `i_init`/`i_end`, both are rescaled
/// to 15% / 75% of it.
inline RunConfig resolve(const KeyValues& kv)
{
    RunConfig c;
    const auto p = kv.find("preset");
    const std::string name = p == kv.end() ? "paper" : p->second;
    c.train = preset(name);
    c.eval = name == "desk" ? desk_eval() : paper_eval();
    for (const auto& [k, v] : kv) {
        if (k != "preset") set_key(c, k, v);
    }
    if (kv.count("iterations") && !kv.count("i_init") && !kv.count("i_end")) {
        c.train.i_init = std::max<std::size_t>(c.train.iterations * 15 / 100, 1);
        c.train.i_end = std::max(c.train.iterations * 75 / 100, c.train.i_init + 1);
    }
    validate(c.train);
    return c;
}

inline std::string format_config(const RunConfig& c)
{
    std::string out;
    for (const auto& [k, v] : to_key_values(c)) out += k + " = " + v + "\n";
    return out;
}

inline KeyValues load_key_values(const std::filesystem::path& path)
{
    return parse_key_values(detail::read_file(path), path.string());
}

}  // namespace mcatlas
