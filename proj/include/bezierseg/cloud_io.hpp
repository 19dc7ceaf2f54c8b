#pragma once

// Annotated-cloud files. Layout of the binary format (all integers and
// floats little-endian, see docs/formats.md):
//
//   header   : magic "BZSGCLD\0", u32 version, u32 max_u, u32 max_v, u64 N, u64 K
//   coords   : f64 x[N], y[N], z[N]
//   normals  : f64 x[N], y[N], z[N]
//   uv       : f64 u[N], v[N]
//   patch_id : i32[N]
//   degrees  : i32 (m, n) per patch
//   controls : per patch, (max_u+1)(max_v+1) entries row-major, f64 x, y, z, w each
//
// The JSON variant carries the same fields and is meant for small fixtures.

#include <nlohmann/json.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "bezierseg/errors.hpp"
#include "bezierseg/synthgen.hpp"

namespace bezierseg {

inline constexpr std::uint32_t kCloudFormatVersion = 1;
inline constexpr std::array<char, 8> kCloudMagic = {'B', 'Z', 'S', 'G', 'C', 'L', 'D', '\0'};
inline constexpr int kJsonFixtureMaxPoints = 1024;

namespace detail {

class ByteWriter {
public:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        bytes_.insert(bytes_.end(), b, b + n);
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

    [[nodiscard]] const std::vector<unsigned char>& bytes() const { return bytes_; }

private:
    std::vector<unsigned char> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::vector<unsigned char> bytes) : bytes_(std::move(bytes)) {}

    // Every read names the section it belongs to so truncation is reported usefully.
    void need(std::size_t n, std::string_view section) const {
        if (pos_ + n > bytes_.size())
            throw ParseError("truncated file: missing section '" + std::string(section) + "' at byte " +
                             std::to_string(pos_));
    }
    std::uint32_t u32(std::string_view section) {
        need(4, section);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64(std::string_view section) {
        need(8, section);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    std::int32_t i32(std::string_view section) { return static_cast<std::int32_t>(u32(section)); }
    double f64(std::string_view section) { return std::bit_cast<double>(u64(section)); }
    void raw(void* out, std::size_t n, std::string_view section) {
        need(n, section);
        std::memcpy(out, bytes_.data() + pos_, n);
        pos_ += n;
    }
    [[nodiscard]] std::size_t remaining() const { return bytes_.size() - pos_; }
    [[nodiscard]] std::size_t position() const { return pos_; }

private:
    std::vector<unsigned char> bytes_;
    std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes via a sibling temporary file and rename, so readers never see a partial file.
inline void atomic_write(const std::filesystem::path& path, const void* data, std::size_t size) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
        if (!out) throw IoError("write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

inline void atomic_write(const std::filesystem::path& path, std::string_view text) {
    atomic_write(path, text.data(), text.size());
}

}  // namespace detail

inline std::vector<unsigned char> encode_binary(const AnnotatedCloud& cloud) {
    cloud.validate();
    detail::ByteWriter w;
    w.raw(kCloudMagic.data(), kCloudMagic.size());
    w.u32(kCloudFormatVersion);
    w.u32(static_cast<std::uint32_t>(cloud.layout.max_u));
    w.u32(static_cast<std::uint32_t>(cloud.layout.max_v));
    const auto n = static_cast<Eigen::Index>(cloud.num_points());
    w.u64(static_cast<std::uint64_t>(n));
    w.u64(static_cast<std::uint64_t>(cloud.num_patches()));
    for (const Matrix* m : {&cloud.coords, &cloud.normals, &cloud.uv})
        for (Eigen::Index c = 0; c < m->cols(); ++c)
            for (Eigen::Index i = 0; i < n; ++i) w.f64((*m)(i, c));
    for (int id : cloud.patch_id) w.i32(id);
    for (const auto& p : cloud.patches) {
        w.i32(p.degree.m);
        w.i32(p.degree.n);
    }
    for (const auto& p : cloud.patches)
        for (const Vec4& e : p.ctrl.entries())
            for (int j = 0; j < 4; ++j) w.f64(e[j]);
    return w.bytes();
}

inline AnnotatedCloud decode_binary(std::vector<unsigned char> bytes) {
    detail::ByteReader r(std::move(bytes));
    std::array<char, 8> magic{};
    r.raw(magic.data(), magic.size(), "header");
    if (magic != kCloudMagic) throw ParseError("not an annotated cloud file (bad magic)");
    const std::uint32_t version = r.u32("header");
    if (version != kCloudFormatVersion)
        throw VersionError("unsupported cloud format version " + std::to_string(version) + " (expected " +
                           std::to_string(kCloudFormatVersion) + ")");
    AnnotatedCloud cloud;
    cloud.layout.max_u = static_cast<int>(r.u32("header"));
    cloud.layout.max_v = static_cast<int>(r.u32("header"));
    try {
        cloud.layout.validate();
    } catch (const DomainError& e) {
        throw ParseError(std::string("header: ") + e.what());
    }
    const std::uint64_t n64 = r.u64("header");
    const std::uint64_t k64 = r.u64("header");
    // each section is size-checked before it is allocated
    if (n64 > std::numeric_limits<std::uint32_t>::max() || k64 > std::numeric_limits<std::uint32_t>::max())
        throw ParseError("header: implausible point or patch count");
    const auto n = static_cast<Eigen::Index>(n64);
    const auto k = static_cast<int>(k64);

    auto read_columns = [&](Matrix& m, Eigen::Index cols, std::string_view section) {
        r.need(static_cast<std::size_t>(n) * static_cast<std::size_t>(cols) * 8, section);
        m.resize(n, cols);
        for (Eigen::Index c = 0; c < cols; ++c)
            for (Eigen::Index i = 0; i < n; ++i) m(i, c) = r.f64(section);
    };
    read_columns(cloud.coords, 3, "coords");
    read_columns(cloud.normals, 3, "normals");
    read_columns(cloud.uv, 2, "uv");
    r.need(static_cast<std::size_t>(n) * 4, "patch_id");
    cloud.patch_id.resize(static_cast<std::size_t>(n));
    for (auto& id : cloud.patch_id) id = r.i32("patch_id");
    r.need(static_cast<std::size_t>(k) * 8, "degrees");
    std::vector<DegreePair> degrees(static_cast<std::size_t>(k));
    for (auto& d : degrees) {
        d.m = r.i32("degrees");
        d.n = r.i32("degrees");
    }
    r.need(static_cast<std::size_t>(k) * static_cast<std::size_t>(cloud.layout.grid_size()) * 32, "controls");
    for (const auto& d : degrees) {
        BezierPatch p{d, ControlGrid(cloud.layout)};
        for (Vec4& e : p.ctrl.entries())
            for (int j = 0; j < 4; ++j) e[j] = r.f64("controls");
        cloud.patches.push_back(std::move(p));
    }
    if (r.remaining() != 0)
        throw ParseError("unexpected trailing bytes after 'controls' at byte " + std::to_string(r.position()));
    try {
        cloud.validate();
    } catch (const Error& e) {
        throw ParseError(std::string("invalid cloud contents: ") + e.what());
    }
    return cloud;
}

inline nlohmann::ordered_json to_json(const AnnotatedCloud& cloud) {
    cloud.validate();
    nlohmann::ordered_json j;
    j["format"] = "bezierseg-cloud";
    j["version"] = kCloudFormatVersion;
    j["max_degree"] = {cloud.layout.max_u, cloud.layout.max_v};
    auto rows = [](const Matrix& m) {
        nlohmann::ordered_json a = nlohmann::ordered_json::array();
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            nlohmann::ordered_json row = nlohmann::ordered_json::array();
            for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(i, c));
            a.push_back(std::move(row));
        }
        return a;
    };
    j["coords"] = rows(cloud.coords);
    j["normals"] = rows(cloud.normals);
    j["uv"] = rows(cloud.uv);
    j["patch_id"] = cloud.patch_id;
    j["patches"] = nlohmann::ordered_json::array();
    for (const auto& p : cloud.patches) {
        nlohmann::ordered_json pj;
        pj["degree"] = {p.degree.m, p.degree.n};
        pj["control"] = nlohmann::ordered_json::array();
        for (const Vec4& e : p.ctrl.entries()) pj["control"].push_back({e[0], e[1], e[2], e[3]});
        j["patches"].push_back(std::move(pj));
    }
    return j;
}

inline AnnotatedCloud cloud_from_json(const nlohmann::json& j) {
    auto section = [&](const char* key) -> const nlohmann::json& {
        if (!j.contains(key)) throw ParseError(std::string("missing section '") + key + "'");
        return j.at(key);
    };
    try {
        if (section("format").get<std::string>() != "bezierseg-cloud") throw ParseError("not a bezierseg cloud");
        const auto version = section("version").get<std::uint32_t>();
        if (version != kCloudFormatVersion)
            throw VersionError("unsupported cloud format version " + std::to_string(version));
        AnnotatedCloud cloud;
        const auto& md = section("max_degree");
        cloud.layout = {md.at(0).get<int>(), md.at(1).get<int>()};
        cloud.layout.validate();
        auto read_rows = [&](const char* key, Eigen::Index cols) {
            const auto& a = section(key);
            Matrix m(static_cast<Eigen::Index>(a.size()), cols);
            for (std::size_t i = 0; i < a.size(); ++i) {
                if (a[i].size() != static_cast<std::size_t>(cols))
                    throw ParseError(std::string(key) + " row " + std::to_string(i) + " has wrong arity");
                for (Eigen::Index c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(i), c) = a[i][c].get<double>();
            }
            return m;
        };
        cloud.coords = read_rows("coords", 3);
        cloud.normals = read_rows("normals", 3);
        cloud.uv = read_rows("uv", 2);
        cloud.patch_id = section("patch_id").get<std::vector<int>>();
        for (const auto& pj : section("patches")) {
            BezierPatch p{{pj.at("degree").at(0).get<int>(), pj.at("degree").at(1).get<int>()},
                          ControlGrid(cloud.layout)};
            const auto& ctrl = pj.at("control");
            if (ctrl.size() != static_cast<std::size_t>(cloud.layout.grid_size()))
                throw ParseError("patch control grid has wrong size");
            auto entries = p.ctrl.entries();
            for (std::size_t e = 0; e < ctrl.size(); ++e)
                for (int c = 0; c < 4; ++c) entries[e][c] = ctrl[e].at(c).get<double>();
            cloud.patches.push_back(std::move(p));
        }
        cloud.validate();
        return cloud;
    } catch (const ParseError&) {
        throw;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed cloud JSON: ") + e.what());
    } catch (const Error& e) {
        throw ParseError(std::string("invalid cloud contents: ") + e.what());
    }
}

inline bool is_json_path(const std::filesystem::path& path) { return path.extension() == ".json"; }

/// Saves by extension: ".json" writes the fixture format, anything else binary.
inline void save_cloud(const AnnotatedCloud& cloud, const std::filesystem::path& path) {
    if (is_json_path(path)) {
        detail::require<ContractError>(cloud.num_points() <= kJsonFixtureMaxPoints,
                                       "JSON fixtures are limited to 1024 points; use the binary format");
        detail::atomic_write(path, to_json(cloud).dump(1));
    } else {
        const auto bytes = encode_binary(cloud);
        detail::atomic_write(path, bytes.data(), bytes.size());
    }
}

inline AnnotatedCloud load_cloud(const std::filesystem::path& path) {
    std::vector<unsigned char> bytes = detail::read_file(path);
    if (is_json_path(path)) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(bytes.begin(), bytes.end());
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError("'" + path.string() + "': " + e.what());
        }
        return cloud_from_json(j);
    }
    return decode_binary(std::move(bytes));
}

}  // namespace bezierseg
