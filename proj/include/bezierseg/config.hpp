#pragma once

// Run configuration shared by the command-line tool. A config file holds one
// `key = value` per line; `#` starts a comment. Values given as flags take
// precedence over the file, which takes precedence over the defaults.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "bezierseg/bezier.hpp"
#include "bezierseg/errors.hpp"
#include "bezierseg/fitting.hpp"
#include "bezierseg/losses.hpp"
#include "bezierseg/synthgen.hpp"

namespace bezierseg {

inline constexpr int kFullScalePointsPerModel = 8192;

struct RunConfig {
    std::uint64_t seed = 0;
    int models = 50;
    int points = 2048;  // desk scale; kFullScalePointsPerModel for full-size runs
    int patches = 8;
    int max_u = 3;
    int max_v = 3;
    bool rational = true;
    double min_normal_angle = 30.0;  // degrees
    double noise = 0.0;
    double gamma = 3.0;
    double delta_pull = 0.0;
    double delta_push = 2.0;
    int rg_neighbors = 16;
    double rg_angle = 20.0;  // degrees
    double rg_distance_factor = 3.0;
    int rg_min_cluster = kMinPointsPerPatch;
    double fit_tol = 1e-6;
    int reparam = 0;
    int threads = 0;  // 0: hardware concurrency

    [[nodiscard]] DegreeLayout layout() const { return {max_u, max_v}; }

    [[nodiscard]] EmbeddingConfig embedding() const { return {delta_pull, delta_push, gamma}; }

    [[nodiscard]] RegionGrowParams region_grow() const {
        RegionGrowParams p;
        p.neighbors = rg_neighbors;
        p.max_angle_deg = rg_angle;
        p.distance_factor = rg_distance_factor;
        p.min_cluster = rg_min_cluster;
        return p;
    }

    [[nodiscard]] ModelSpec model_spec(int index) const {
        ModelSpec s;
        s.patches = patches;
        s.points = points;
        s.seed = Rng::stream(seed, static_cast<std::uint64_t>(index)).next_u64();
        s.degree_dist = degree_imbalance(layout());
        s.rational = rational;
        s.min_normal_angle_deg = min_normal_angle;
        return s;
    }

    /// Seed of the coordinate noise added to model `index`.
    [[nodiscard]] std::uint64_t noise_seed(int index) const { return Rng::stream(model_spec(index).seed, 1).next_u64(); }

    void validate() const {
        layout().validate();
        detail::require<ContractError>(models >= 0, "models must be non-negative");
        detail::require<ContractError>(patches >= 1, "patches must be positive");
        detail::require<ContractError>(points >= patches * kMinPointsPerPatch, "too few points for the patch count");
        detail::require<ContractError>(noise >= 0.0, "noise sigma must be non-negative");
        detail::require<ContractError>(rg_neighbors >= 1 && rg_min_cluster >= 1, "region-grow sizes must be positive");
        detail::require<ContractError>(rg_angle > 0.0 && rg_angle < 90.0, "region-grow angle must be in (0, 90)");
        detail::require<ContractError>(rg_distance_factor > 0.0, "region-grow distance factor must be positive");
        detail::require<ContractError>(fit_tol >= 0.0, "fit tolerance must be non-negative");
        detail::require<ContractError>(reparam >= 0 && reparam <= 5, "reparam passes must be in 0..5");
        detail::require<ContractError>(threads >= 0, "threads must be non-negative");
        embedding().validate();
    }

    struct Key {
        const char* name;
        const char* help;
        std::function<void(RunConfig&, std::string_view)> set;
    };

    static const std::vector<Key>& keys();

    /// Assigns one key from its textual value. Unknown keys and unparsable
    /// values raise ParseError.
    void set(std::string_view key, std::string_view value) {
        for (const auto& k : keys())
            if (key == k.name) {
                k.set(*this, value);
                return;
            }
        throw ParseError("unknown config key '" + std::string(key) + "'");
    }
};

namespace detail {

template <class T>
T parse_value(std::string_view key, std::string_view text) {
    auto fail = [&] { return ParseError("bad value '" + std::string(text) + "' for " + std::string(key)); };
    if constexpr (std::is_same_v<T, bool>) {
        if (text == "true" || text == "1") return true;
        if (text == "false" || text == "0") return false;
        throw fail();
    } else if constexpr (std::is_floating_point_v<T>) {
        // from_chars for double is missing in older libstdc++
        std::string s(text);
        std::size_t used = 0;
        T v{};
        try {
            v = static_cast<T>(std::stod(s, &used));
        } catch (const std::exception&) {
            throw fail();
        }
        if (used != s.size()) throw fail();
        return v;
    } else {
        T v{};
        const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
        if (ec != std::errc{} || end != text.data() + text.size()) throw fail();
        return v;
    }
}

template <auto Member>
RunConfig::Key key(const char* name, const char* help) {
    return {name, help, [name](RunConfig& c, std::string_view v) {
                using T = std::remove_reference_t<decltype(c.*Member)>;
                c.*Member = parse_value<T>(name, v);
            }};
}

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

inline const std::vector<RunConfig::Key>& RunConfig::keys() {
    using detail::key;
    static const std::vector<Key> k = {
        key<&RunConfig::seed>("seed", "base random seed"),
        key<&RunConfig::models>("models", "number of generated models"),
        key<&RunConfig::points>("points", "points per model"),
        key<&RunConfig::patches>("patches", "patches per model"),
        key<&RunConfig::max_u>("max_u", "maximum degree in u"),
        key<&RunConfig::max_v>("max_v", "maximum degree in v"),
        key<&RunConfig::rational>("rational", "rational control weights (false: polynomial patches)"),
        key<&RunConfig::min_normal_angle>("min_normal_angle", "minimum angle between patch normals, degrees"),
        key<&RunConfig::noise>("noise", "Gaussian coordinate noise sigma"),
        key<&RunConfig::gamma>("gamma", "focal loss gamma"),
        key<&RunConfig::delta_pull>("delta_pull", "embedding pull margin"),
        key<&RunConfig::delta_push>("delta_push", "embedding push margin"),
        key<&RunConfig::rg_neighbors>("rg_neighbors", "region-grow neighbor count"),
        key<&RunConfig::rg_angle>("rg_angle", "region-grow normal threshold, degrees"),
        key<&RunConfig::rg_distance_factor>("rg_distance_factor", "region-grow edge length factor"),
        key<&RunConfig::rg_min_cluster>("rg_min_cluster", "smallest region kept unmerged"),
        key<&RunConfig::fit_tol>("fit_tol", "degree-selection rms tolerance"),
        key<&RunConfig::reparam>("reparam", "foot-point reparameterization passes (0..5)"),
        key<&RunConfig::threads>("threads", "worker threads (0: all cores)"),
    };
    return k;
}

/// Applies every `key = value` line of a config file.
inline void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    std::string line;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
        std::string_view s = line;
        if (const auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
        s = detail::trim(s);
        if (s.empty()) continue;
        const auto eq = s.find('=');
        if (eq == std::string_view::npos)
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
        try {
            cfg.set(detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)));
        } catch (const ParseError& e) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

}  // namespace bezierseg
