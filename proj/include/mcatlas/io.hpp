#pragma once

#include <array>
#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mcatlas/errors.hpp"
#include "mcatlas/types.hpp"

namespace mcatlas {

static_assert(std::endian::native == std::endian::little,
              "binary PLY I/O assumes a little-endian host");

using Triangle = std::array<std::uint32_t, 3>;

struct Mesh {
    PointCloud vertices;
    std::vector<Triangle> triangles;

    [[nodiscard]] std::size_t vertex_count() const { return static_cast<std::size_t>(vertices.cols()); }
};

/// Vertex data of a PLY file. Properties other than x/y/z and red/green/blue
/// are kept by name as doubles.
struct PlyData {
    PointCloud vertices;
    std::vector<Triangle> triangles;
    std::vector<std::array<std::uint8_t, 3>> colors;
    std::map<std::string, std::vector<double>> scalars;
};

enum class PlyFormat { ascii, binary };

namespace detail {

inline std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write '" + path.string() + "'");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("short write to '" + path.string() + "'");
    }
}

// Resolves OBJ face references "i", "i/t", "i//n", "i/t/n"; negatives are relative.
inline std::uint32_t obj_index(const std::string& tok, std::size_t nverts, const std::string& file,
                               std::size_t line)
{
    const auto slash = tok.find('/');
    const std::string head = tok.substr(0, slash);
    long long idx = 0;
    try {
        std::size_t used = 0;
        idx = std::stoll(head, &used);
        if (used != head.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
        throw ParseError(file, "line " + std::to_string(line), "bad face index '" + tok + "'");
    }
    if (idx < 0) idx = static_cast<long long>(nverts) + idx + 1;
    if (idx < 1 || idx > static_cast<long long>(nverts)) {
        throw ParseError(file, "line " + std::to_string(line),
                         "face index " + head + " out of range");
    }
    return static_cast<std::uint32_t>(idx - 1);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// OBJ
// ---------------------------------------------------------------------------

/// Reads `v` and `f` records; polygons are fan-triangulated, everything else
/// is ignored. Faces may reference vertices defined later in the file.
inline Mesh parse_obj(const std::string& text, const std::string& file = "<obj>")
{
    std::vector<Vec3> verts;
    struct RawFace {
        std::vector<std::string> refs;
        std::size_t line;
    };
    std::vector<RawFace> faces;

    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag) || tag[0] == '#') continue;
        if (tag == "v") {
            Vec3 p;
            if (!(ls >> p.x() >> p.y() >> p.z())) {
                throw ParseError(file, "line " + std::to_string(lineno), "vertex needs 3 coordinates");
            }
            verts.push_back(p);
        } else if (tag == "f") {
            RawFace f{{}, lineno};
            std::string tok;
            while (ls >> tok) f.refs.push_back(tok);
            if (f.refs.size() < 3) {
                throw ParseError(file, "line " + std::to_string(lineno), "face needs 3+ vertices");
            }
            faces.push_back(std::move(f));
        }
    }

    Mesh m;
    m.vertices.resize(3, static_cast<Eigen::Index>(verts.size()));
    for (std::size_t i = 0; i < verts.size(); ++i) {
        m.vertices.col(static_cast<Eigen::Index>(i)) = verts[i];
    }
    for (const auto& f : faces) {
        std::vector<std::uint32_t> idx;
        for (const auto& r : f.refs) idx.push_back(detail::obj_index(r, verts.size(), file, f.line));
        for (std::size_t k = 1; k + 1 < idx.size(); ++k) {
            m.triangles.push_back({idx[0], idx[k], idx[k + 1]});
        }
    }
    return m;
}

inline std::string format_obj(const Mesh& m)
{
    std::ostringstream out;
    out.precision(17);
    for (Eigen::Index i = 0; i < m.vertices.cols(); ++i) {
        out << "v " << m.vertices(0, i) << ' ' << m.vertices(1, i) << ' ' << m.vertices(2, i) << '\n';
    }
    for (const auto& t : m.triangles) {
        out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// PLY
// ---------------------------------------------------------------------------

namespace detail {

enum class PlyType { i8, u8, i16, u16, i32, u32, f32, f64 };

inline PlyType ply_type(const std::string& name, const std::string& file)
{
    static const std::map<std::string, PlyType> table = {
        {"char", PlyType::i8},    {"int8", PlyType::i8},     {"uchar", PlyType::u8},
        {"uint8", PlyType::u8},   {"short", PlyType::i16},   {"int16", PlyType::i16},
        {"ushort", PlyType::u16}, {"uint16", PlyType::u16},  {"int", PlyType::i32},
        {"int32", PlyType::i32},  {"uint", PlyType::u32},    {"uint32", PlyType::u32},
        {"float", PlyType::f32},  {"float32", PlyType::f32}, {"double", PlyType::f64},
        {"float64", PlyType::f64}};
    const auto it = table.find(name);
    if (it == table.end()) {
        throw ParseError(file, "header", "unknown PLY type '" + name + "'");
    }
    return it->second;
}

inline std::size_t ply_size(PlyType t)
{
    switch (t) {
        case PlyType::i8:
        case PlyType::u8: return 1;
        case PlyType::i16:
        case PlyType::u16: return 2;
        case PlyType::i32:
        case PlyType::u32:
        case PlyType::f32: return 4;
        case PlyType::f64: return 8;
    }
    return 0;
}

template <class T>
double load_as(const char* p)
{
    T v;
    std::memcpy(&v, p, sizeof(T));
    return static_cast<double>(v);
}

inline double ply_load(PlyType t, const char* p)
{
    switch (t) {
        case PlyType::i8: return load_as<std::int8_t>(p);
        case PlyType::u8: return load_as<std::uint8_t>(p);
        case PlyType::i16: return load_as<std::int16_t>(p);
        case PlyType::u16: return load_as<std::uint16_t>(p);
        case PlyType::i32: return load_as<std::int32_t>(p);
        case PlyType::u32: return load_as<std::uint32_t>(p);
        case PlyType::f32: return load_as<float>(p);
        case PlyType::f64: return load_as<double>(p);
    }
    return 0.0;
}

struct PlyProperty {
    std::string name;
    PlyType type = PlyType::f64;
    bool is_list = false;
    PlyType count_type = PlyType::u8;
};

struct PlyElement {
    std::string name;
    std::size_t count = 0;
    std::vector<PlyProperty> props;
};

// Sequential reader over either encoding.
class PlyCursor {
public:
    PlyCursor(const std::string& data, std::size_t pos, bool binary, std::string file)
        : data_(data), pos_(pos), binary_(binary), file_(std::move(file)) {}

    double next(PlyType t)
    {
        if (binary_) {
            const auto n = ply_size(t);
            if (pos_ + n > data_.size()) {
                throw ParseError(file_, "offset " + std::to_string(pos_), "unexpected end of data");
            }
            const double v = ply_load(t, data_.data() + pos_);
            pos_ += n;
            return v;
        }
        while (pos_ < data_.size() && std::isspace(static_cast<unsigned char>(data_[pos_]))) {
            if (data_[pos_] == '\n') ++line_;
            ++pos_;
        }
        const auto start = pos_;
        while (pos_ < data_.size() && !std::isspace(static_cast<unsigned char>(data_[pos_]))) ++pos_;
        if (start == pos_) {
            throw ParseError(file_, "line " + std::to_string(line_), "unexpected end of data");
        }
        const std::string tok = data_.substr(start, pos_ - start);
        try {
            std::size_t used = 0;
            const double v = std::stod(tok, &used);
            if (used != tok.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ParseError(file_, "line " + std::to_string(line_), "bad number '" + tok + "'");
        }
    }

    void set_line(std::size_t l) { line_ = l; }

private:
    const std::string& data_;
    std::size_t pos_;
    bool binary_;
    std::string file_;
    std::size_t line_ = 1;
};

}  // namespace detail

inline PlyData parse_ply(const std::string& data, const std::string& file = "<ply>")
{
    using namespace detail;
    const auto header_end = data.find("end_header");
    if (data.rfind("ply", 0) != 0 || header_end == std::string::npos) {
        throw ParseError(file, "line 1", "not a PLY file");
    }
    auto body = data.find('\n', header_end);
    if (body == std::string::npos) {
        throw ParseError(file, "header", "missing newline after end_header");
    }
    ++body;

    std::istringstream hs(data.substr(0, header_end));
    std::string line;
    std::size_t lineno = 0;
    bool binary = false;
    bool have_format = false;
    std::vector<PlyElement> elements;
    while (std::getline(hs, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string kw;
        if (!(ls >> kw)) continue;
        const std::string where = "line " + std::to_string(lineno);
        if (kw == "ply" || kw == "comment" || kw == "obj_info") continue;
        if (kw == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt == "ascii") {
                binary = false;
            } else if (fmt == "binary_little_endian") {
                binary = true;
            } else {
                throw ParseError(file, where, "unsupported PLY format '" + fmt + "'");
            }
            have_format = true;
        } else if (kw == "element") {
            PlyElement e;
            if (!(ls >> e.name >> e.count)) throw ParseError(file, where, "bad element line");
            elements.push_back(std::move(e));
        } else if (kw == "property") {
            if (elements.empty()) throw ParseError(file, where, "property before element");
            PlyProperty p;
            std::string t;
            ls >> t;
            if (t == "list") {
                std::string ct, it;
                ls >> ct >> it >> p.name;
                p.is_list = true;
                p.count_type = ply_type(ct, file);
                p.type = ply_type(it, file);
            } else {
                p.type = ply_type(t, file);
                ls >> p.name;
            }
            if (p.name.empty()) throw ParseError(file, where, "property without a name");
            elements.back().props.push_back(std::move(p));
        } else {
            throw ParseError(file, where, "unknown header keyword '" + kw + "'");
        }
    }
    if (!have_format) throw ParseError(file, "header", "missing format line");

    PlyData out;
    PlyCursor cur(data, body, binary, file);
    cur.set_line(lineno + 2);
    for (const auto& e : elements) {
        if (e.name == "vertex") {
            out.vertices.resize(3, static_cast<Eigen::Index>(e.count));
            bool has_color = false;
            for (const auto& p : e.props) {
                if (p.name == "red") has_color = true;
            }
            if (has_color) out.colors.resize(e.count);
            for (std::size_t i = 0; i < e.count; ++i) {
                const auto c = static_cast<Eigen::Index>(i);
                for (const auto& p : e.props) {
                    if (p.is_list) {
                        const auto n = static_cast<std::size_t>(cur.next(p.count_type));
                        for (std::size_t k = 0; k < n; ++k) cur.next(p.type);
                        continue;
                    }
                    const double v = cur.next(p.type);
                    if (p.name == "x") out.vertices(0, c) = v;
                    else if (p.name == "y") out.vertices(1, c) = v;
                    else if (p.name == "z") out.vertices(2, c) = v;
                    else if (p.name == "red") out.colors[i][0] = static_cast<std::uint8_t>(v);
                    else if (p.name == "green") out.colors[i][1] = static_cast<std::uint8_t>(v);
                    else if (p.name == "blue") out.colors[i][2] = static_cast<std::uint8_t>(v);
                    else out.scalars[p.name].push_back(v);
                }
            }
        } else {
            const bool is_face = e.name == "face";
            for (std::size_t i = 0; i < e.count; ++i) {
                for (const auto& p : e.props) {
                    if (!p.is_list) {
                        cur.next(p.type);
                        continue;
                    }
                    const auto n = static_cast<std::size_t>(cur.next(p.count_type));
                    std::vector<std::uint32_t> idx(n);
                    for (auto& v : idx) v = static_cast<std::uint32_t>(cur.next(p.type));
                    if (is_face && (p.name == "vertex_indices" || p.name == "vertex_index")) {
                        for (std::size_t k = 1; k + 1 < n; ++k) {
                            out.triangles.push_back({idx[0], idx[k], idx[k + 1]});
                        }
                    }
                }
            }
        }
    }
    const auto nv = static_cast<std::uint32_t>(out.vertices.cols());
    for (const auto& t : out.triangles) {
        for (auto v : t) {
            if (v >= nv) throw ParseError(file, "face data", "vertex index out of range");
        }
    }
    return out;
}

/// Writes doubles for coordinates and extra scalars, uchar colours, and
/// int32 triangle indices.
inline std::string format_ply(const PlyData& d, PlyFormat fmt = PlyFormat::binary)
{
    const auto n = static_cast<std::size_t>(d.vertices.cols());
    const bool colored = !d.colors.empty();
    if (colored && d.colors.size() != n) throw ShapeMismatch("format_ply: colour count mismatch");
    for (const auto& [name, vals] : d.scalars) {
        if (vals.size() != n) throw ShapeMismatch("format_ply: scalar '" + name + "' size mismatch");
    }

    std::ostringstream out;
    out << "ply\nformat " << (fmt == PlyFormat::binary ? "binary_little_endian" : "ascii")
        << " 1.0\n";
    out << "element vertex " << n << "\n";
    out << "property double x\nproperty double y\nproperty double z\n";
    if (colored) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    for (const auto& [name, _] : d.scalars) out << "property double " << name << "\n";
    if (!d.triangles.empty()) {
        out << "element face " << d.triangles.size() << "\n";
        out << "property list uchar int vertex_indices\n";
    }
    out << "end_header\n";

    if (fmt == PlyFormat::ascii) {
        out.precision(17);
        for (std::size_t i = 0; i < n; ++i) {
            const auto c = static_cast<Eigen::Index>(i);
            out << d.vertices(0, c) << ' ' << d.vertices(1, c) << ' ' << d.vertices(2, c);
            if (colored) {
                out << ' ' << int(d.colors[i][0]) << ' ' << int(d.colors[i][1]) << ' '
                    << int(d.colors[i][2]);
            }
            for (const auto& [_, vals] : d.scalars) out << ' ' << vals[i];
            out << '\n';
        }
        for (const auto& t : d.triangles) out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
        return out.str();
    }

    std::string bytes = out.str();
    auto put = [&bytes](const void* p, std::size_t k) {
        bytes.append(static_cast<const char*>(p), k);
    };
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = static_cast<Eigen::Index>(i);
        for (int k = 0; k < 3; ++k) {
            const double v = d.vertices(k, c);
            put(&v, 8);
        }
        if (colored) put(d.colors[i].data(), 3);
        for (const auto& [_, vals] : d.scalars) put(&vals[i], 8);
    }
    for (const auto& t : d.triangles) {
        const std::uint8_t three = 3;
        put(&three, 1);
        for (auto v : t) {
            const auto s = static_cast<std::int32_t>(v);
            put(&s, 4);
        }
    }
    return bytes;
}

// ---------------------------------------------------------------------------
// File-level entry points
// ---------------------------------------------------------------------------

inline Mesh load_mesh(const std::filesystem::path& path)
{
    const auto ext = path.extension().string();
    const auto text = detail::read_file(path);
    if (ext == ".obj" || ext == ".OBJ") {
        return parse_obj(text, path.string());
    }
    if (ext == ".ply" || ext == ".PLY") {
        auto d = parse_ply(text, path.string());
        return {std::move(d.vertices), std::move(d.triangles)};
    }
    throw IoError("unsupported mesh format '" + ext + "'");
}

inline void save_mesh(const Mesh& m, const std::filesystem::path& path,
                      PlyFormat fmt = PlyFormat::binary)
{
    const auto ext = path.extension().string();
    if (ext == ".obj") {
        detail::write_file(path, format_obj(m));
    } else if (ext == ".ply") {
        PlyData d;
        d.vertices = m.vertices;
        d.triangles = m.triangles;
        detail::write_file(path, format_ply(d, fmt));
    } else {
        throw IoError("unsupported mesh format '" + ext + "'");
    }
}

inline PlyData load_ply(const std::filesystem::path& path)
{
    return parse_ply(detail::read_file(path), path.string());
}

inline void save_ply(const PlyData& d, const std::filesystem::path& path,
                     PlyFormat fmt = PlyFormat::binary)
{
    detail::write_file(path, format_ply(d, fmt));
}

// ---------------------------------------------------------------------------
// Natural sort
// ---------------------------------------------------------------------------

/// "f_2" < "f_10": digit runs compare by value, everything else bytewise.
inline bool natural_less(const std::string& a, const std::string& b)
{
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        const bool da = std::isdigit(static_cast<unsigned char>(a[i])) != 0;
        const bool db = std::isdigit(static_cast<unsigned char>(b[j])) != 0;
        if (da && db) {
            auto i2 = i, j2 = j;
            while (i2 < a.size() && std::isdigit(static_cast<unsigned char>(a[i2]))) ++i2;
            while (j2 < b.size() && std::isdigit(static_cast<unsigned char>(b[j2]))) ++j2;
            auto na = a.substr(i, i2 - i), nb = b.substr(j, j2 - j);
            const auto strip = [](std::string& s) {
                const auto k = s.find_first_not_of('0');
                s = k == std::string::npos ? "0" : s.substr(k);
            };
            strip(na);
            strip(nb);
            if (na.size() != nb.size()) return na.size() < nb.size();
            if (na != nb) return na < nb;
            i = i2;
            j = j2;
        } else {
            if (a[i] != b[j]) return a[i] < b[j];
            ++i;
            ++j;
        }
    }
    return a.size() - i < b.size() - j;
}

}  // namespace mcatlas
