#pragma once

#include <cmath>
#include <optional>
#include <variant>

#include "traj/errors.hpp"

namespace traj {

/// GPS fix, already projected to the plane and offset-removed.
struct GpsData {
    double x = 0.0; // m
    double y = 0.0; // m
};

/// Inertial sample in the vehicle frame (x forward, y left).
struct ImuData {
    double ax = 0.0;  // m/s^2
    double ay = 0.0;  // m/s^2
    double yaw = 0.0; // rad, referenced to the projected plane's +x axis
    std::optional<double> pitch; // rad, unused by the predictor
};

/// Wheel-speed reading from the vehicle bus.
struct CanData {
    double speed_kmh = 0.0;
};

enum class EventKind { gps, imu, can };

/// One timestamped sensor event. The payload variant guarantees that exactly
/// the fields of the event's kind are present.
struct RawEvent {
    double t = 0.0; // seconds
    std::variant<GpsData, ImuData, CanData> payload;

    EventKind kind() const {
        switch (payload.index()) {
            case 0: return EventKind::gps;
            case 1: return EventKind::imu;
            default: return EventKind::can;
        }
    }
    const GpsData& gps() const { return std::get<GpsData>(payload); }
    const ImuData& imu() const { return std::get<ImuData>(payload); }
    const CanData& can() const { return std::get<CanData>(payload); }

    void validate() const {
        if (!std::isfinite(t)) throw InvalidInput("event: non-finite timestamp");
    }
};

inline RawEvent make_gps(double t, double x, double y) {
    return RawEvent{t, GpsData{x, y}};
}
inline RawEvent make_imu(double t, double ax, double ay, double yaw) {
    return RawEvent{t, ImuData{ax, ay, yaw, std::nullopt}};
}
inline RawEvent make_can(double t, double speed_kmh) {
    return RawEvent{t, CanData{speed_kmh}};
}

/// Dense ground-truth sample used to score estimates against simulated routes.
struct TruthPoint {
    double t = 0.0;
    double x = 0.0;
    double y = 0.0;
    double vx = 0.0;
    double vy = 0.0;
    double ax = 0.0; // global frame
    double ay = 0.0; // global frame
    double yaw = 0.0;
};

} // namespace traj
