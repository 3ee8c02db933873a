#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "uavckm/errors.hpp"

namespace uavckm {

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    constexpr double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
    constexpr double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

    friend constexpr Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
    friend constexpr Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
    friend constexpr Vec3 operator*(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
    friend constexpr Vec3 operator*(double s, Vec3 a) { return a * s; }
    friend constexpr bool operator==(Vec3 a, Vec3 b) = default;

    double norm() const { return std::sqrt(x * x + y * y + z * z); }
    bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline double distance(Vec3 a, Vec3 b) { return (a - b).norm(); }

/// Axis-aligned box. Used both for buildings and for the world bounds.
struct Box {
    Vec3 min_corner;
    Vec3 max_corner;

    bool valid() const {
        return min_corner.x < max_corner.x && min_corner.y < max_corner.y &&
               min_corner.z < max_corner.z;
    }
    double height() const { return max_corner.z - min_corner.z; }
    Vec3 extent() const { return max_corner - min_corner; }

    /// Strict interior test.
    bool contains_interior(Vec3 p) const {
        for (int i = 0; i < 3; ++i) {
            if (!(p[i] > min_corner[i] && p[i] < max_corner[i])) return false;
        }
        return true;
    }
    /// Closed test, faces included.
    bool contains_closed(Vec3 p) const {
        for (int i = 0; i < 3; ++i) {
            if (p[i] < min_corner[i] || p[i] > max_corner[i]) return false;
        }
        return true;
    }
    Vec3 clamp(Vec3 p) const {
        return {std::clamp(p.x, min_corner.x, max_corner.x), std::clamp(p.y, min_corner.y, max_corner.y),
                std::clamp(p.z, min_corner.z, max_corner.z)};
    }
};

using Building = Box;

struct GroundUser {
    int id = 0;
    Vec3 position;
    double payload_bits = 26e6;
};

struct WorldConfig {
    Vec3 size{1000.0, 1000.0, 750.0};
    double uav_min_height = 250.0;
    double uav_max_height = 750.0;
    int building_count = 20;
    double footprint_min = 40.0;
    double footprint_max = 120.0;
    double building_height_min = 60.0;
    double building_height_max = 250.0;
    int user_count = 15;
    double user_max_height = 250.0;
    double payload_bits = 26e6;
    int max_placement_attempts = 10000;
};

struct World {
    Box bounds;
    double uav_min_height = 250.0;
    double uav_max_height = 750.0;
    double user_max_height = 250.0;
    std::vector<Building> buildings;
    std::vector<GroundUser> users;
    Vec3 uav_start;

    /// Region the UAV may occupy: full horizontal extent, restricted altitude.
    Box flight_box() const {
        return {{bounds.min_corner.x, bounds.min_corner.y, uav_min_height},
                {bounds.max_corner.x, bounds.max_corner.y, uav_max_height}};
    }
    double diagonal() const { return bounds.extent().norm(); }

    bool inside_any_building(Vec3 p) const {
        return std::any_of(buildings.begin(), buildings.end(),
                           [&](const Building& b) { return b.contains_interior(p); });
    }
};

/// Ceiling on building and user heights, from the scene description of the reference setup.
inline constexpr double kMaxObjectHeight = 250.0;

/// Throws Error(Domain) when any World invariant is violated.
inline void validate(const World& w) {
    auto fail = [](const std::string& m) { throw Error(ErrorCategory::Domain, "invalid world: " + m); };
    if (!w.bounds.valid()) fail("bounds are degenerate");
    if (!(w.uav_min_height < w.uav_max_height)) fail("uav height range is empty");
    if (w.uav_min_height < w.bounds.min_corner.z || w.uav_max_height > w.bounds.max_corner.z)
        fail("uav height range exceeds bounds");
    for (const auto& b : w.buildings) {
        if (!b.valid()) fail("building with non-positive extent");
        if (!w.bounds.contains_closed(b.min_corner) || !w.bounds.contains_closed(b.max_corner))
            fail("building outside bounds");
        if (b.max_corner.z > kMaxObjectHeight) fail("building taller than 250 m");
    }
    for (const auto& u : w.users) {
        if (!u.position.finite() || !w.bounds.contains_closed(u.position)) fail("user outside bounds");
        if (u.position.z < 0.0 || u.position.z > kMaxObjectHeight) fail("user height outside [0, 250]");
        if (u.payload_bits < 0.0) fail("negative payload");
        if (w.inside_any_building(u.position)) fail("user inside a building");
    }
    if (!w.uav_start.finite()) fail("non-finite start");
}

namespace detail {

template <class Rng>
Vec3 draw_user_position(const World& w, Rng& rng, int max_attempts) {
    std::uniform_real_distribution<double> ux(w.bounds.min_corner.x, w.bounds.max_corner.x);
    std::uniform_real_distribution<double> uy(w.bounds.min_corner.y, w.bounds.max_corner.y);
    std::uniform_real_distribution<double> uz(0.0, w.user_max_height);
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        Vec3 p{ux(rng), uy(rng), uz(rng)};
        if (!w.inside_any_building(p)) return p;
    }
    throw Error(ErrorCategory::Config, "could not place a ground user outside all buildings");
}

} // namespace detail

/// Fresh ground-user layout for an existing scene. Used on every episode reset.
template <class Rng>
std::vector<GroundUser> sample_users(const World& w, int count, double payload_bits, Rng& rng,
                                     int max_attempts = 10000) {
    std::vector<GroundUser> users;
    users.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        users.push_back({i, detail::draw_user_position(w, rng, max_attempts), payload_bits});
    }
    return users;
}

inline World generate_world(std::uint64_t seed, const WorldConfig& cfg) {
    if (cfg.building_count < 0) throw Error(ErrorCategory::Config, "building_count must be >= 0");
    if (cfg.user_count < 1) throw Error(ErrorCategory::Config, "user_count must be >= 1");
    if (!(cfg.footprint_min > 0.0 && cfg.footprint_min <= cfg.footprint_max))
        throw Error(ErrorCategory::Config, "invalid building footprint range");
    if (cfg.footprint_max > std::min(cfg.size.x, cfg.size.y))
        throw Error(ErrorCategory::Config, "building footprint larger than the world");
    if (!(cfg.building_height_min > 0.0 && cfg.building_height_min <= cfg.building_height_max))
        throw Error(ErrorCategory::Config, "invalid building height range");
    if (cfg.building_height_max > std::min(kMaxObjectHeight, cfg.uav_min_height))
        throw Error(ErrorCategory::Config, "buildings must stay below 250 m and below the minimum UAV height");
    if (cfg.user_max_height < 0.0 || cfg.user_max_height > std::min(kMaxObjectHeight, cfg.uav_min_height))
        throw Error(ErrorCategory::Config, "user_max_height must lie in [0, min(250, uav_min_height)]");

    std::mt19937_64 rng(seed);
    World w;
    w.bounds = {{0.0, 0.0, 0.0}, cfg.size};
    w.uav_min_height = cfg.uav_min_height;
    w.uav_max_height = cfg.uav_max_height;
    w.user_max_height = cfg.user_max_height;
    w.uav_start = {0.0, 0.0, cfg.uav_min_height};

    std::uniform_real_distribution<double> foot(cfg.footprint_min, cfg.footprint_max);
    std::uniform_real_distribution<double> height(cfg.building_height_min, cfg.building_height_max);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < cfg.building_count; ++i) {
        const double wx = foot(rng);
        const double wy = foot(rng);
        const double h = height(rng);
        const double x0 = unit(rng) * (cfg.size.x - wx);
        const double y0 = unit(rng) * (cfg.size.y - wy);
        w.buildings.push_back({{x0, y0, 0.0}, {x0 + wx, y0 + wy, h}});
    }
    w.users = sample_users(w, cfg.user_count, cfg.payload_bits, rng, cfg.max_placement_attempts);
    validate(w);
    return w;
}

/// True iff the open segment (a, b) passes through the interior of `box`.
/// Slab test over open parameter intervals, so grazing a face or an edge does not count.
inline bool segment_hits_box(Vec3 a, Vec3 b, const Box& box) {
    double t_enter = 0.0;
    double t_exit = 1.0;
    for (int i = 0; i < 3; ++i) {
        const double d = b[i] - a[i];
        if (d == 0.0) {
            if (!(a[i] > box.min_corner[i] && a[i] < box.max_corner[i])) return false;
            continue;
        }
        double t0 = (box.min_corner[i] - a[i]) / d;
        double t1 = (box.max_corner[i] - a[i]) / d;
        if (t0 > t1) std::swap(t0, t1);
        t_enter = std::max(t_enter, t0);
        t_exit = std::min(t_exit, t1);
        if (!(t_enter < t_exit)) return false;
    }
    return t_enter < t_exit;
}

inline bool segment_blocked(Vec3 a, Vec3 b, std::span<const Building> buildings) {
    return std::any_of(buildings.begin(), buildings.end(),
                       [&](const Building& box) { return segment_hits_box(a, b, box); });
}

inline bool segment_blocked(Vec3 a, Vec3 b, const World& world) {
    return segment_blocked(a, b, std::span<const Building>(world.buildings));
}

} // namespace uavckm
