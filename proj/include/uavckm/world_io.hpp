#pragma once

#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "uavckm/errors.hpp"
#include "uavckm/geometry.hpp"

// World documents:
// {
//   "format": "uavckm-world", "version": 1,
//   "bounds": {"min": [x,y,z], "max": [x,y,z]},
//   "uav_height_range": [min, max],
//   "user_max_height": h,
//   "uav_start": [x,y,z],
//   "buildings": [{"min": [..], "max": [..]}, ...],
//   "users": [{"id": i, "position": [..], "payload_bits": b}, ...]
// }

namespace uavckm {

inline constexpr int kWorldFormatVersion = 1;

inline void to_json(nlohmann::json& j, const Vec3& v) { j = nlohmann::json::array({v.x, v.y, v.z}); }

inline void from_json(const nlohmann::json& j, Vec3& v) {
    if (!j.is_array() || j.size() != 3) throw Error(ErrorCategory::Format, "expected a 3-element coordinate array");
    v = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline void to_json(nlohmann::json& j, const Box& b) { j = {{"min", b.min_corner}, {"max", b.max_corner}}; }

inline void from_json(const nlohmann::json& j, Box& b) {
    b.min_corner = j.at("min").get<Vec3>();
    b.max_corner = j.at("max").get<Vec3>();
}

inline void to_json(nlohmann::json& j, const GroundUser& u) {
    j = {{"id", u.id}, {"position", u.position}, {"payload_bits", u.payload_bits}};
}

inline void from_json(const nlohmann::json& j, GroundUser& u) {
    u.id = j.at("id").get<int>();
    u.position = j.at("position").get<Vec3>();
    u.payload_bits = j.at("payload_bits").get<double>();
}

inline void to_json(nlohmann::json& j, const World& w) {
    j = {{"format", "uavckm-world"},
         {"version", kWorldFormatVersion},
         {"bounds", w.bounds},
         {"uav_height_range", {w.uav_min_height, w.uav_max_height}},
         {"user_max_height", w.user_max_height},
         {"uav_start", w.uav_start},
         {"buildings", w.buildings},
         {"users", w.users}};
}

inline void from_json(const nlohmann::json& j, World& w) {
    if (j.value("format", std::string{}) != "uavckm-world")
        throw Error(ErrorCategory::Format, "not a world document");
    if (j.at("version").get<int>() != kWorldFormatVersion)
        throw Error(ErrorCategory::Format, "unsupported world document version");
    w.bounds = j.at("bounds").get<Box>();
    const auto& range = j.at("uav_height_range");
    w.uav_min_height = range.at(0).get<double>();
    w.uav_max_height = range.at(1).get<double>();
    w.user_max_height = j.at("user_max_height").get<double>();
    w.uav_start = j.at("uav_start").get<Vec3>();
    w.buildings = j.at("buildings").get<std::vector<Building>>();
    w.users = j.at("users").get<std::vector<GroundUser>>();
}

inline void save_world(const World& w, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCategory::Io, "cannot write " + path);
    out << nlohmann::json(w).dump(2) << '\n';
}

inline World load_world(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCategory::Io, "cannot open " + path);
    World w;
    try {
        w = nlohmann::json::parse(in).get<World>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCategory::Format, path + ": " + e.what());
    }
    validate(w);
    return w;
}

} // namespace uavckm
