#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ldct/error.hpp"
#include "ldct/grid.hpp"

namespace ldct {

// ---------------------------------------------------------------------------
// Raw grid format
//
//   LDCT1
//   kind <image|sinogram|weights|mask>
//   rows <n>
//   cols <n>
//   stage <tag>
//   end
//   <rows*cols little-endian float32, row-major>
// ---------------------------------------------------------------------------

struct RawGrid {
    std::string kind;
    std::string stage = "none";
    Grid<double> values;
};

namespace detail {

inline void put_f32_le(std::ostream& out, float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    const unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                                static_cast<unsigned char>(u >> 16), static_cast<unsigned char>(u >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline float get_f32_le(const unsigned char* b) {
    const std::uint32_t u = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
                            (std::uint32_t(b[3]) << 24);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}

inline std::string trim(std::string s) {
    const auto ws = " \t\r\n";
    const auto a = s.find_first_not_of(ws);
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(ws);
    return s.substr(a, b - a + 1);
}

inline std::size_t parse_size(const std::string& v, const std::string& where) {
    std::size_t pos = 0;
    unsigned long long n = 0;
    try {
        n = std::stoull(v, &pos);
    } catch (...) {
        pos = 0;
    }
    require(pos == v.size() && !v.empty() && v[0] != '-', ErrorCategory::parse, where + ": expected a count, got '" + v + "'");
    return static_cast<std::size_t>(n);
}

} // namespace detail

inline void write_raw(std::ostream& out, const std::string& kind, const Grid<double>& g,
                      const std::string& stage = "none") {
    out << "LDCT1\nkind " << kind << "\nrows " << g.rows() << "\ncols " << g.cols() << "\nstage " << stage
        << "\nend\n";
    for (double v : g) detail::put_f32_le(out, static_cast<float>(v));
    require(static_cast<bool>(out), ErrorCategory::io, "write_raw: stream failure");
}

inline void write_raw(const std::string& path, const std::string& kind, const Grid<double>& g,
                      const std::string& stage = "none") {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorCategory::io, "cannot open " + path + " for writing");
    write_raw(out, kind, g, stage);
}

inline RawGrid read_raw(std::istream& in, const std::string& name = "<stream>") {
    static const char* keys[] = {"kind", "rows", "cols", "stage"};
    std::string line;
    int lineno = 0;
    auto next = [&](const char* expect) {
        ++lineno;
        require(static_cast<bool>(std::getline(in, line)), ErrorCategory::parse,
                name + ": line " + std::to_string(lineno) + ": header ended early, expected '" + expect + "'");
        return detail::trim(line);
    };
    require(next("LDCT1") == "LDCT1", ErrorCategory::parse,
            name + ": line 1: bad magic '" + detail::trim(line) + "', expected 'LDCT1'");
    RawGrid out;
    std::size_t rows = 0, cols = 0;
    for (const char* key : keys) {
        const std::string l = next(key);
        const auto sp = l.find(' ');
        const std::string k = l.substr(0, sp);
        const std::string v = sp == std::string::npos ? "" : detail::trim(l.substr(sp + 1));
        const std::string where = name + ": line " + std::to_string(lineno);
        require(k == key, ErrorCategory::parse, where + ": expected key '" + key + "', got '" + k + "'");
        require(!v.empty(), ErrorCategory::parse, where + ": missing value for '" + k + "'");
        if (k == "kind") out.kind = v;
        else if (k == "rows") rows = detail::parse_size(v, where);
        else if (k == "cols") cols = detail::parse_size(v, where);
        else out.stage = v;
    }
    require(next("end") == "end", ErrorCategory::parse,
            name + ": line " + std::to_string(lineno) + ": expected 'end', got '" + detail::trim(line) + "'");
    require(rows > 0 && cols > 0, ErrorCategory::parse, name + ": empty grid in header");

    const std::streamoff start = in.tellg();
    const std::size_t n = rows * cols;
    std::vector<unsigned char> buf(n * 4);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    const auto got = static_cast<std::size_t>(in.gcount());
    require(got == buf.size(), ErrorCategory::parse,
            name + ": offset " + std::to_string(start + static_cast<std::streamoff>(got)) + ": payload truncated, " +
                std::to_string(got) + " of " + std::to_string(buf.size()) + " bytes");
    out.values = Grid<double>(rows, cols);
    for (std::size_t i = 0; i < n; ++i) out.values[i] = detail::get_f32_le(&buf[4 * i]);
    return out;
}

inline RawGrid read_raw(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCategory::io, "cannot open " + path);
    return read_raw(in, path);
}

inline Image to_image(const RawGrid& r) {
    require(r.values.rows() == r.values.cols(), ErrorCategory::dimension_mismatch, "raw grid is not square");
    Image img(r.values.rows());
    std::copy(r.values.begin(), r.values.end(), img.begin());
    return img;
}

inline SinoStage parse_stage(const std::string& s) {
    for (auto st : {SinoStage::line_integral, SinoStage::counts, SinoStage::linearized, SinoStage::pvalue,
                    SinoStage::latent})
        if (s == to_string(st)) return st;
    throw Error(ErrorCategory::parse, "unknown sinogram stage '" + s + "'");
}

inline Sinogram to_sinogram(const RawGrid& r) {
    Sinogram s(r.values.rows(), r.values.cols(), parse_stage(r.stage));
    std::copy(r.values.begin(), r.values.end(), s.begin());
    return s;
}

inline void write_image(const std::string& path, const Image& img, const std::string& kind = "image") {
    write_raw(path, kind, img);
}
inline void write_sinogram(const std::string& path, const Sinogram& s) {
    write_raw(path, "sinogram", s, to_string(s.stage()));
}
inline Image read_image(const std::string& path) { return to_image(read_raw(path)); }
inline Sinogram read_sinogram(const std::string& path) { return to_sinogram(read_raw(path)); }

// ---------------------------------------------------------------------------
// CSV tables with a fixed column schema
// ---------------------------------------------------------------------------

class Table {
public:
    explicit Table(std::vector<std::string> header) : header_(std::move(header)) {
        require(!header_.empty(), ErrorCategory::invalid_argument, "table: empty header");
    }

    void add_row(std::vector<std::string> row) {
        require(row.size() == header_.size(), ErrorCategory::invalid_argument,
                "table: row has " + std::to_string(row.size()) + " cells, schema has " +
                    std::to_string(header_.size()));
        rows_.push_back(std::move(row));
    }

    const std::vector<std::string>& header() const noexcept { return header_; }
    const std::vector<std::vector<std::string>>& rows() const noexcept { return rows_; }

    void write(std::ostream& out) const {
        auto line = [&](const std::vector<std::string>& cells) {
            for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
            out << '\n';
        };
        line(header_);
        for (const auto& r : rows_) line(r);
    }

    void write(const std::string& path) const {
        std::ofstream out(path);
        require(static_cast<bool>(out), ErrorCategory::io, "cannot open " + path + " for writing");
        write(out);
    }

    static Table read(std::istream& in, const std::string& name = "<stream>") {
        std::string line;
        require(static_cast<bool>(std::getline(in, line)), ErrorCategory::parse, name + ": missing header line");
        Table t(split(detail::trim(line)));
        int lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            line = detail::trim(line);
            if (line.empty()) continue;
            auto cells = split(line);
            require(cells.size() == t.header_.size(), ErrorCategory::parse,
                    name + ": line " + std::to_string(lineno) + ": expected " + std::to_string(t.header_.size()) +
                        " columns, got " + std::to_string(cells.size()));
            t.rows_.push_back(std::move(cells));
        }
        return t;
    }

private:
    static std::vector<std::string> split(const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string cell;
        while (std::getline(ss, cell, ',')) out.push_back(detail::trim(cell));
        if (!s.empty() && s.back() == ',') out.emplace_back();
        return out;
    }

    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

inline std::string fmt(double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

// ---------------------------------------------------------------------------
// 16-bit PGM export. Values are mapped to [0, 65535] by (v - offset) * scale;
// both numbers are written as a header comment so the mapping can be undone.
// ---------------------------------------------------------------------------

struct PgmScale {
    double offset = 0.0;
    double scale = 1.0;
};

inline PgmScale write_pgm16(std::ostream& out, const Grid<double>& g) {
    const auto [lo, hi] = std::minmax_element(g.begin(), g.end());
    PgmScale s{*lo, *hi > *lo ? 65535.0 / (*hi - *lo) : 1.0};
    out.precision(17);
    out << "P5\n# ldct offset " << s.offset << " scale " << s.scale << "\n" << g.cols() << ' ' << g.rows() << "\n65535\n";
    for (double v : g) {
        const double q = std::clamp(std::round((v - s.offset) * s.scale), 0.0, 65535.0);
        const auto u = static_cast<std::uint16_t>(q);
        const char b[2] = {static_cast<char>(u >> 8), static_cast<char>(u & 0xff)};
        out.write(b, 2);
    }
    require(static_cast<bool>(out), ErrorCategory::io, "write_pgm16: stream failure");
    return s;
}

inline PgmScale write_pgm16(const std::string& path, const Grid<double>& g) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorCategory::io, "cannot open " + path + " for writing");
    return write_pgm16(out, g);
}

/// Reads a file written by write_pgm16 and undoes the recorded scaling.
inline Grid<double> read_pgm16(std::istream& in, PgmScale* scale_out = nullptr) {
    std::string magic, comment;
    std::getline(in, magic);
    require(detail::trim(magic) == "P5", ErrorCategory::parse, "pgm: line 1: expected P5");
    std::getline(in, comment);
    PgmScale s;
    {
        std::istringstream cs(comment);
        std::string hash, tag, k1, k2;
        cs >> hash >> tag >> k1 >> s.offset >> k2 >> s.scale;
        require(static_cast<bool>(cs) && tag == "ldct" && k1 == "offset" && k2 == "scale", ErrorCategory::parse,
                "pgm: line 2: missing scale comment");
    }
    std::size_t cols = 0, rows = 0, maxv = 0;
    in >> cols >> rows >> maxv;
    require(static_cast<bool>(in) && maxv == 65535, ErrorCategory::parse, "pgm: line 3-4: bad size or maxval");
    in.get();
    Grid<double> g(rows, cols);
    for (auto& v : g) {
        unsigned char b[2];
        in.read(reinterpret_cast<char*>(b), 2);
        require(in.gcount() == 2, ErrorCategory::parse, "pgm: payload truncated");
        v = static_cast<double>((b[0] << 8) | b[1]) / s.scale + s.offset;
    }
    if (scale_out) *scale_out = s;
    return g;
}

// ---------------------------------------------------------------------------
// key = value configuration files; '#' starts a comment
// ---------------------------------------------------------------------------

using KeyValues = std::map<std::string, std::string>;

inline KeyValues parse_key_values(std::istream& in, const std::string& name = "<config>") {
    KeyValues kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        require(eq != std::string::npos, ErrorCategory::parse,
                name + ": line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string k = detail::trim(line.substr(0, eq));
        require(!k.empty(), ErrorCategory::parse, name + ": line " + std::to_string(lineno) + ": empty key");
        kv[k] = detail::trim(line.substr(eq + 1));
    }
    return kv;
}

inline KeyValues read_key_values(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCategory::io, "cannot open " + path);
    return parse_key_values(in, path);
}

inline double parse_double(const std::string& v, const std::string& key) {
    std::size_t pos = 0;
    double d = 0.0;
    try {
        d = std::stod(v, &pos);
    } catch (...) {
        pos = 0;
    }
    require(pos == v.size() && !v.empty(), ErrorCategory::parse, key + ": expected a number, got '" + v + "'");
    return d;
}

inline std::vector<double> parse_double_list(const std::string& v, const std::string& key) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_double(detail::trim(item), key));
    return out;
}

} // namespace ldct
