#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "mcatlas/config.hpp"
#include "mcatlas/errors.hpp"
#include "mcatlas/io.hpp"
#include "mcatlas/model.hpp"
#include "mcatlas/trainer.hpp"

namespace mcatlas {

// ---------------------------------------------------------------------------
// Checkpoint file
// ---------------------------------------------------------------------------
//
// All integers and doubles little-endian.
//
//   char[8]   "MCATLAS\0"
//   u32       format version (1)
//   u64 + N   config text (key = value lines, see config.hpp)
//   u64 + N   state text: iteration, rng_counter, adam_step
//   u32       section count
//   sections: u32 name length, name bytes, u64 rows, u64 cols,
//             rows·cols doubles in column-major order
//
// Section names: "param/<block>" for every model block, "adam.m/<block>" and
// "adam.v/<block>" for the optimizer moments, and "history" (one row per log
// entry: iter, l_fit, l_metric, l_rigid, total, lr).

inline constexpr char kCheckpointMagic[8] = {'M', 'C', 'A', 'T', 'L', 'A', 'S', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

struct Checkpoint {
    RunConfig config;
    TrainState state;
};

namespace detail {

class Writer {
public:
    template <class T>
    void pod(const T& x)
    {
        const auto* p = reinterpret_cast<const char*>(&x);
        bytes.append(p, sizeof(T));
    }

    void text(const std::string& s)
    {
        pod(static_cast<std::uint64_t>(s.size()));
        bytes += s;
    }

    void section(const std::string& name, const Matrix& m)
    {
        pod(static_cast<std::uint32_t>(name.size()));
        bytes += name;
        pod(static_cast<std::uint64_t>(m.rows()));
        pod(static_cast<std::uint64_t>(m.cols()));
        bytes.append(reinterpret_cast<const char*>(m.data()),
                     static_cast<std::size_t>(m.size()) * sizeof(double));
    }

    std::string bytes;
};

class Reader {
public:
    Reader(const std::string& bytes, std::string file) : b_(bytes), file_(std::move(file)) {}

    template <class T>
    T pod()
    {
        need(sizeof(T));
        T x;
        std::memcpy(&x, b_.data() + at_, sizeof(T));
        at_ += sizeof(T);
        return x;
    }

    std::string raw(std::size_t n)
    {
        need(n);
        std::string s = b_.substr(at_, n);
        at_ += n;
        return s;
    }

    std::string text() { return raw(static_cast<std::size_t>(pod<std::uint64_t>())); }

    std::pair<std::string, Matrix> section()
    {
        const auto len = pod<std::uint32_t>();
        std::string name = raw(len);
        const auto rows = pod<std::uint64_t>();
        const auto cols = pod<std::uint64_t>();
        if (rows > (1u << 30) || cols > (1u << 30)) fail("implausible section shape");
        Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        const auto n = static_cast<std::size_t>(rows * cols) * sizeof(double);
        need(n);
        std::memcpy(m.data(), b_.data() + at_, n);
        at_ += n;
        return {std::move(name), std::move(m)};
    }

    [[nodiscard]] bool done() const { return at_ == b_.size(); }

    [[noreturn]] void fail(const std::string& what) const
    {
        throw ParseError(file_, "offset " + std::to_string(at_), what);
    }

private:
    void need(std::size_t n) const
    {
        if (at_ + n > b_.size()) fail("truncated checkpoint");
    }

    const std::string& b_;
    std::string file_;
    std::size_t at_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c)
{
    detail::Writer w;
    w.bytes.append(kCheckpointMagic, sizeof kCheckpointMagic);
    w.pod(kCheckpointVersion);
    w.text(format_config(c.config));
    const auto& s = c.state;
    w.text("iteration = " + std::to_string(s.iteration) + "\nrng_counter = " +
           std::to_string(s.rng_counter) + "\nadam_step = " + std::to_string(s.adam.step) + "\n");

    const auto& params = s.model.params();
    const bool with_adam = s.adam.m.size() == params.size();
    const auto count = params.size() * (with_adam ? 3 : 1) + 1;
    w.pod(static_cast<std::uint32_t>(count));
    for (const auto& p : params) w.section("param/" + p.name, p.value);
    if (with_adam) {
        for (std::size_t i = 0; i < params.size(); ++i) w.section("adam.m/" + params[i].name, s.adam.m[i]);
        for (std::size_t i = 0; i < params.size(); ++i) w.section("adam.v/" + params[i].name, s.adam.v[i]);
    }
    Matrix h(static_cast<Eigen::Index>(s.history.size()), 6);
    for (std::size_t r = 0; r < s.history.size(); ++r) {
        const auto& e = s.history[r];
        h.row(static_cast<Eigen::Index>(r)) << static_cast<double>(e.iter), e.loss.l_fit,
            e.loss.l_metric, e.loss.l_rigid, e.loss.total, e.lr;
    }
    w.section("history", h);
    return std::move(w.bytes);
}

inline Checkpoint parse_checkpoint(const std::string& bytes, const std::string& file = "checkpoint")
{
    detail::Reader r(bytes, file);
    if (r.raw(sizeof kCheckpointMagic) != std::string(kCheckpointMagic, sizeof kCheckpointMagic)) {
        r.fail("not a checkpoint (bad magic)");
    }
    if (const auto v = r.pod<std::uint32_t>(); v != kCheckpointVersion) {
        r.fail("unsupported checkpoint version " + std::to_string(v));
    }
    Checkpoint c;
    try {
        c.config = resolve(parse_key_values(r.text(), file));
    } catch (const ConfigError& e) {
        r.fail(std::string("bad config block: ") + e.what());
    }
    const auto state = parse_key_values(r.text(), file);
    const auto get = [&](const char* k) -> std::uint64_t {
        const auto it = state.find(k);
        if (it == state.end()) r.fail(std::string("state block lacks ") + k);
        return detail::to_uint(k, it->second);
    };
    auto& s = c.state;
    s.iteration = get("iteration");
    s.rng_counter = get("rng_counter");
    s.model = AtlasModel(c.config.train.model);
    s.adam = adam_init(s.model.params());
    s.adam.step = get("adam_step");

    const auto n = r.pod<std::uint32_t>();
    std::vector<bool> seen(s.model.params().size(), false);
    for (std::uint32_t k = 0; k < n; ++k) {
        auto [name, m] = r.section();
        if (name == "history") {
            if (m.cols() != 6 && m.size() != 0) r.fail("history section must have 6 columns");
            for (Eigen::Index row = 0; row < m.rows(); ++row) {
                HistoryEntry e;
                e.iter = static_cast<std::size_t>(m(row, 0));
                e.loss = combine(m(row, 1), m(row, 2), m(row, 3),
                                 {c.config.train.alpha_mc, c.config.train.alpha_rg});
                e.loss.total = m(row, 4);
                e.lr = m(row, 5);
                s.history.push_back(e);
            }
            continue;
        }
        const auto slash = name.find('/');
        if (slash == std::string::npos) r.fail("unknown section '" + name + "'");
        const auto kind = name.substr(0, slash);
        std::size_t slot = 0;
        try {
            slot = s.model.slot_of(name.substr(slash + 1));
        } catch (const InvalidArgument&) {
            r.fail("section '" + name + "' names no model block");
        }
        Matrix* dst = nullptr;
        if (kind == "param") {
            dst = &s.model.params()[slot].value;
            seen[slot] = true;
        } else if (kind == "adam.m") {
            dst = &s.adam.m[slot];
        } else if (kind == "adam.v") {
            dst = &s.adam.v[slot];
        } else {
            r.fail("unknown section '" + name + "'");
        }
        if (dst->rows() != m.rows() || dst->cols() != m.cols()) {
            r.fail("section '" + name + "' has the wrong shape");
        }
        *dst = std::move(m);
    }
    for (std::size_t i = 0; i < seen.size(); ++i) {
        if (!seen[i]) r.fail("missing parameter block '" + s.model.params()[i].name + "'");
    }
    if (!r.done()) r.fail("trailing bytes");
    return c;
}

/// Written to a temporary file and renamed, so an interrupted save leaves
/// the previous checkpoint intact.
inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path)
{
    auto tmp = path;
    tmp += ".tmp";
    detail::write_file(tmp, serialize_checkpoint(c));
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place at '" + path.string() + "': " + ec.message());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    return parse_checkpoint(detail::read_file(path), path.string());
}

}  // namespace mcatlas
