#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "traj/errors.hpp"
#include "traj/events.hpp"
#include "traj/simgen.hpp"

namespace traj {

inline constexpr int kRouteFormatVersion = 1;
inline constexpr const char* kRouteFormatName = "traj-route";

inline std::string truth_path_for(const std::string& route_path) {
    return route_path + ".truth";
}

namespace detail {

using nlohmann::json;

inline json segment_to_json(const Segment& seg) {
    return std::visit(
        [](const auto& s) -> json {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, StraightSegment>) {
                return {{"kind", "straight"}, {"length", s.length_m}, {"speed", s.speed_mps}};
            } else if constexpr (std::is_same_v<T, TurnSegment>) {
                return {{"kind", "turn"}, {"radius", s.radius_m}, {"angle", s.angle_rad},
                        {"speed", s.speed_mps}};
            } else if constexpr (std::is_same_v<T, RoundaboutSegment>) {
                return {{"kind", "roundabout"}, {"radius", s.radius_m},
                        {"revolutions", s.revolutions}, {"speed", s.speed_mps}};
            } else if constexpr (std::is_same_v<T, StopSegment>) {
                return {{"kind", "stop"}, {"duration", s.duration_s}};
            } else {
                return {{"kind", "accelerate"}, {"from", s.from_mps}, {"to", s.to_mps},
                        {"duration", s.duration_s}};
            }
        },
        seg);
}

inline Segment segment_from_json(const json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "straight") {
        return StraightSegment{j.at("length").get<double>(), j.at("speed").get<double>()};
    }
    if (kind == "turn") {
        return TurnSegment{j.at("radius").get<double>(), j.at("angle").get<double>(),
                           j.at("speed").get<double>()};
    }
    if (kind == "roundabout") {
        return RoundaboutSegment{j.at("radius").get<double>(),
                                 j.at("revolutions").get<double>(),
                                 j.at("speed").get<double>()};
    }
    if (kind == "stop") {
        return StopSegment{j.at("duration").get<double>()};
    }
    if (kind == "accelerate") {
        return AccelerateSegment{j.at("from").get<double>(), j.at("to").get<double>(),
                                 j.at("duration").get<double>()};
    }
    throw InvalidInput("routefile: unknown segment kind '" + kind + "'");
}

inline json spec_to_json(const RouteSpec& spec) {
    json segs = json::array();
    for (const auto& s : spec.segments) segs.push_back(segment_to_json(s));
    const SensorConfig& sc = spec.sensors;
    return {{"segments", std::move(segs)},
            {"sensors",
             {{"gps_interval", {sc.gps_interval_min, sc.gps_interval_max}},
              {"gps_noise_sigma", sc.gps_noise_sigma},
              {"gps_dropout_prob", sc.gps_dropout_prob},
              {"imu_rate", sc.imu_rate_hz},
              {"imu_accel_noise_sigma", sc.imu_accel_noise_sigma},
              {"imu_yaw_noise_sigma", sc.imu_yaw_noise_sigma},
              {"can_rate", sc.can_rate_hz}}}};
}

inline RouteSpec spec_from_json(const json& j, std::uint64_t seed) {
    RouteSpec spec;
    spec.seed = seed;
    for (const auto& s : j.at("segments")) spec.segments.push_back(segment_from_json(s));
    const json& sc = j.at("sensors");
    spec.sensors.gps_interval_min = sc.at("gps_interval").at(0).get<double>();
    spec.sensors.gps_interval_max = sc.at("gps_interval").at(1).get<double>();
    spec.sensors.gps_noise_sigma = sc.at("gps_noise_sigma").get<double>();
    spec.sensors.gps_dropout_prob = sc.at("gps_dropout_prob").get<double>();
    spec.sensors.imu_rate_hz = sc.at("imu_rate").get<double>();
    spec.sensors.imu_accel_noise_sigma = sc.at("imu_accel_noise_sigma").get<double>();
    spec.sensors.imu_yaw_noise_sigma = sc.at("imu_yaw_noise_sigma").get<double>();
    spec.sensors.can_rate_hz = sc.at("can_rate").get<double>();
    return spec;
}

inline json event_to_json(const RawEvent& e) {
    json j{{"t", e.t}};
    switch (e.kind()) {
        case EventKind::gps:
            j["kind"] = "gps";
            j["x"] = e.gps().x;
            j["y"] = e.gps().y;
            break;
        case EventKind::imu:
            j["kind"] = "imu";
            j["ax"] = e.imu().ax;
            j["ay"] = e.imu().ay;
            j["yaw"] = e.imu().yaw;
            if (e.imu().pitch) j["pitch"] = *e.imu().pitch;
            break;
        case EventKind::can:
            j["kind"] = "can";
            j["speed"] = e.can().speed_kmh;
            break;
    }
    return j;
}

inline RawEvent event_from_json(const json& j) {
    const double t = j.at("t").get<double>();
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "gps") {
        return make_gps(t, j.at("x").get<double>(), j.at("y").get<double>());
    }
    if (kind == "imu") {
        RawEvent e = make_imu(t, j.at("ax").get<double>(), j.at("ay").get<double>(),
                              j.at("yaw").get<double>());
        if (j.contains("pitch")) {
            std::get<ImuData>(e.payload).pitch = j.at("pitch").get<double>();
        }
        return e;
    }
    if (kind == "can") {
        return make_can(t, j.at("speed").get<double>());
    }
    throw InvalidInput("routefile: unknown event kind '" + kind + "'");
}

inline json parse_line(const std::string& line, long line_number) {
    json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) {
        throw MalformedFileError("routefile: invalid JSON", line_number);
    }
    return j;
}

} // namespace detail

struct RouteFile {
    RouteSpec spec;
    std::vector<RawEvent> events;
};

/// Write a route file: one JSON header line, then one JSON line per event.
inline void write_route(const std::string& path, const RouteSpec& spec,
                        const std::vector<RawEvent>& events) {
    std::ofstream out(path);
    if (!out) throw FileError("routefile: cannot open for writing: " + path);
    nlohmann::json header{{"format", kRouteFormatName},
                          {"version", kRouteFormatVersion},
                          {"seed", spec.seed},
                          {"spec", detail::spec_to_json(spec)}};
    out << header.dump() << '\n';
    for (const auto& e : events) out << detail::event_to_json(e).dump() << '\n';
    if (!out) throw FileError("routefile: write failed: " + path);
}

inline RouteFile read_route(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileError("routefile: cannot open: " + path);

    std::string line;
    long line_number = 0;
    if (!std::getline(in, line)) {
        throw MalformedFileError("routefile: missing header line", 1);
    }
    ++line_number;
    const auto header = detail::parse_line(line, line_number);
    if (!header.is_object() || header.value("format", std::string{}) != kRouteFormatName) {
        throw MalformedFileError("routefile: not a traj-route file", line_number);
    }
    const int version = header.value("version", -1);
    if (version != kRouteFormatVersion) {
        throw VersionMismatchError("routefile: unsupported version " +
                                   std::to_string(version));
    }

    RouteFile rf;
    try {
        rf.spec = detail::spec_from_json(header.at("spec"),
                                         header.at("seed").get<std::uint64_t>());
    } catch (const nlohmann::json::exception&) {
        throw MalformedFileError("routefile: malformed header spec", line_number);
    }

    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        const auto j = detail::parse_line(line, line_number);
        try {
            rf.events.push_back(detail::event_from_json(j));
        } catch (const nlohmann::json::exception&) {
            throw MalformedFileError("routefile: malformed event", line_number);
        }
    }
    return rf;
}

/// Truth files are plain JSON lines (no header); the path convention is the
/// route path plus ".truth".
inline void write_truth(const std::string& path, const std::vector<TruthPoint>& truth) {
    std::ofstream out(path);
    if (!out) throw FileError("routefile: cannot open for writing: " + path);
    for (const auto& p : truth) {
        nlohmann::json j{{"t", p.t},   {"x", p.x},   {"y", p.y},  {"vx", p.vx},
                         {"vy", p.vy}, {"ax", p.ax}, {"ay", p.ay}, {"yaw", p.yaw}};
        out << j.dump() << '\n';
    }
    if (!out) throw FileError("routefile: write failed: " + path);
}

inline std::vector<TruthPoint> read_truth(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileError("routefile: cannot open: " + path);
    std::vector<TruthPoint> truth;
    std::string line;
    long line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        const auto j = detail::parse_line(line, line_number);
        try {
            TruthPoint p;
            p.t = j.at("t").get<double>();
            p.x = j.at("x").get<double>();
            p.y = j.at("y").get<double>();
            p.vx = j.at("vx").get<double>();
            p.vy = j.at("vy").get<double>();
            p.ax = j.at("ax").get<double>();
            p.ay = j.at("ay").get<double>();
            p.yaw = j.at("yaw").get<double>();
            truth.push_back(p);
        } catch (const nlohmann::json::exception&) {
            throw MalformedFileError("routefile: malformed truth record", line_number);
        }
    }
    return truth;
}

} // namespace traj
