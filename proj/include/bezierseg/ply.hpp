#pragma once

// Colored point-cloud export. Only the vertex layout written here is read
// back: x y z nx ny nz as float64, red green blue as uchar.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bezierseg/cloud_io.hpp"
#include "bezierseg/errors.hpp"

namespace bezierseg {

using Rgb = std::array<std::uint8_t, 3>;

/// Okabe-Ito colorblind-safe palette.
inline constexpr std::array<Rgb, 8> kLabelPalette = {{
    {230, 159, 0},
    {86, 180, 233},
    {0, 158, 115},
    {240, 228, 66},
    {0, 114, 178},
    {213, 94, 0},
    {204, 121, 167},
    {0, 0, 0},
}};
inline constexpr Rgb kUnlabeledGray = {128, 128, 128};

inline Rgb label_color(int label) {
    detail::require<ContractError>(label >= 0, "labels must be non-negative");
    return kLabelPalette[static_cast<std::size_t>(label) % kLabelPalette.size()];
}

enum class PlyFormat { Ascii, BinaryLittleEndian };

struct PlyCloud {
    Eigen::MatrixXd coords;
    Eigen::MatrixXd normals;
    std::vector<Rgb> colors;
};

inline std::string encode_ply(const Eigen::MatrixXd& coords, const Eigen::MatrixXd& normals,
                              const std::optional<std::vector<int>>& labels, PlyFormat format) {
    detail::require<ContractError>(coords.cols() == 3 && normals.cols() == 3 && coords.rows() == normals.rows(),
                                   "coords and normals must both be N x 3");
    detail::require<ContractError>(!labels || static_cast<Eigen::Index>(labels->size()) == coords.rows(),
                                   "labels must match point count");
    std::ostringstream out;
    out << "ply\nformat " << (format == PlyFormat::Ascii ? "ascii" : "binary_little_endian") << " 1.0\n"
        << "element vertex " << coords.rows() << "\n";
    for (const char* p : {"x", "y", "z", "nx", "ny", "nz"}) out << "property double " << p << "\n";
    out << "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
    out.precision(17);
    for (Eigen::Index i = 0; i < coords.rows(); ++i) {
        const Rgb c = labels ? label_color((*labels)[static_cast<std::size_t>(i)]) : kUnlabeledGray;
        const double v[6] = {coords(i, 0), coords(i, 1), coords(i, 2), normals(i, 0), normals(i, 1), normals(i, 2)};
        if (format == PlyFormat::Ascii) {
            for (double x : v) out << x << ' ';
            out << int(c[0]) << ' ' << int(c[1]) << ' ' << int(c[2]) << '\n';
        } else {
            out.write(reinterpret_cast<const char*>(v), sizeof v);
            out.write(reinterpret_cast<const char*>(c.data()), 3);
        }
    }
    return out.str();
}

inline void write_ply(const std::filesystem::path& path, const Eigen::MatrixXd& coords, const Eigen::MatrixXd& normals,
                      const std::optional<std::vector<int>>& labels = std::nullopt,
                      PlyFormat format = PlyFormat::BinaryLittleEndian) {
    detail::atomic_write(path, encode_ply(coords, normals, labels, format));
}

inline PlyCloud decode_ply(const std::string& data) {
    std::istringstream in(data);
    std::string line;
    auto next = [&](const char* what) {
        if (!std::getline(in, line)) throw ParseError(std::string("PLY truncated in ") + what);
    };
    next("magic");
    if (line != "ply") throw ParseError("not a PLY file");
    next("format");
    PlyFormat format;
    if (line == "format ascii 1.0")
        format = PlyFormat::Ascii;
    else if (line == "format binary_little_endian 1.0")
        format = PlyFormat::BinaryLittleEndian;
    else
        throw ParseError("unsupported PLY format line: " + line);
    next("vertex element");
    long long n = -1;
    if (std::sscanf(line.c_str(), "element vertex %lld", &n) != 1 || n < 0)
        throw ParseError("expected vertex element, got: " + line);
    const char* props[] = {"property double x",   "property double y",    "property double z",
                           "property double nx",  "property double ny",   "property double nz",
                           "property uchar red",  "property uchar green", "property uchar blue"};
    for (const char* p : props) {
        next("properties");
        if (line != p) throw ParseError(std::string("expected '") + p + "', got: " + line);
    }
    next("header end");
    if (line != "end_header") throw ParseError("expected end_header, got: " + line);

    PlyCloud cloud;
    cloud.coords.resize(n, 3);
    cloud.normals.resize(n, 3);
    cloud.colors.resize(static_cast<std::size_t>(n));
    for (long long i = 0; i < n; ++i) {
        double v[6];
        Rgb& c = cloud.colors[static_cast<std::size_t>(i)];
        if (format == PlyFormat::Ascii) {
            int r, g, b;
            for (double& x : v) in >> x;
            in >> r >> g >> b;
            if (!in) throw ParseError("PLY vertex " + std::to_string(i) + " is truncated");
            c = {static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g), static_cast<std::uint8_t>(b)};
        } else {
            in.read(reinterpret_cast<char*>(v), sizeof v);
            in.read(reinterpret_cast<char*>(c.data()), 3);
            if (!in) throw ParseError("PLY vertex " + std::to_string(i) + " is truncated");
        }
        cloud.coords.row(i) << v[0], v[1], v[2];
        cloud.normals.row(i) << v[3], v[4], v[5];
    }
    return cloud;
}

inline PlyCloud read_ply(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    return decode_ply(std::string(bytes.begin(), bytes.end()));
}

}  // namespace bezierseg
