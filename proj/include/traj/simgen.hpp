#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <variant>
#include <vector>

#include "traj/errors.hpp"
#include "traj/events.hpp"
#include "traj/pipeline.hpp"

namespace traj {

struct StraightSegment {
    double length_m = 0.0;
    double speed_mps = 0.0;
};

/// Circular arc at constant speed; positive angle turns left.
struct TurnSegment {
    double radius_m = 0.0;
    double angle_rad = 0.0;
    double speed_mps = 0.0;
};

struct RoundaboutSegment {
    double radius_m = 0.0;
    double revolutions = 0.0;
    double speed_mps = 0.0;
};

struct StopSegment {
    double duration_s = 0.0;
};

/// Linear speed ramp along the current heading.
struct AccelerateSegment {
    double from_mps = 0.0;
    double to_mps = 0.0;
    double duration_s = 0.0;
};

using Segment = std::variant<StraightSegment, TurnSegment, RoundaboutSegment,
                             StopSegment, AccelerateSegment>;

struct SensorConfig {
    double gps_interval_min = 0.1; // s
    double gps_interval_max = 0.6; // s
    double gps_noise_sigma = 0.1;  // m
    double gps_dropout_prob = 0.0;
    double imu_rate_hz = 25.0;
    double imu_accel_noise_sigma = 0.05; // m/s^2
    double imu_yaw_noise_sigma = 0.005;  // rad
    double can_rate_hz = 10.0;

    void validate() const {
        if (!(gps_interval_min >= 0.1 && gps_interval_max <= 0.6 &&
              gps_interval_min <= gps_interval_max)) {
            throw InvalidInput("simgen: GPS interval range must lie within [0.1, 0.6] s");
        }
        if (gps_noise_sigma < 0.0 || imu_accel_noise_sigma < 0.0 ||
            imu_yaw_noise_sigma < 0.0) {
            throw InvalidInput("simgen: noise sigmas must be non-negative");
        }
        if (!(gps_dropout_prob >= 0.0 && gps_dropout_prob < 1.0)) {
            throw InvalidInput("simgen: dropout probability must be in [0, 1)");
        }
        if (!(imu_rate_hz > 0.0) || !(can_rate_hz > 0.0)) {
            throw InvalidInput("simgen: sensor rates must be positive");
        }
    }
};

struct RouteSpec {
    std::vector<Segment> segments;
    std::uint64_t seed = 0;
    SensorConfig sensors;

    void validate() const {
        if (segments.empty()) throw InvalidInput("simgen: route needs at least one segment");
        for (const auto& seg : segments) {
            std::visit(
                [](const auto& s) {
                    using T = std::decay_t<decltype(s)>;
                    if constexpr (std::is_same_v<T, StraightSegment>) {
                        if (!(s.length_m > 0.0) || !(s.speed_mps > 0.0)) {
                            throw InvalidInput("simgen: straight segment needs positive length and speed");
                        }
                    } else if constexpr (std::is_same_v<T, TurnSegment>) {
                        if (!(s.radius_m > 0.0) || s.angle_rad == 0.0 || !(s.speed_mps > 0.0)) {
                            throw InvalidInput("simgen: turn segment needs positive radius/speed and nonzero angle");
                        }
                    } else if constexpr (std::is_same_v<T, RoundaboutSegment>) {
                        if (!(s.radius_m > 0.0) || !(s.revolutions > 0.0) || !(s.speed_mps > 0.0)) {
                            throw InvalidInput("simgen: roundabout segment needs positive radius/revolutions/speed");
                        }
                    } else if constexpr (std::is_same_v<T, StopSegment>) {
                        if (!(s.duration_s > 0.0)) {
                            throw InvalidInput("simgen: stop segment needs positive duration");
                        }
                    } else {
                        if (s.from_mps < 0.0 || s.to_mps < 0.0 || !(s.duration_s > 0.0)) {
                            throw InvalidInput("simgen: accelerate segment needs non-negative speeds and positive duration");
                        }
                    }
                },
                seg);
        }
        sensors.validate();
    }
};

struct GeneratedRoute {
    std::vector<RawEvent> events; // time-sorted, all streams merged
    std::vector<TruthPoint> truth; // 1 ms resolution
    double duration = 0.0;
};

namespace detail {

/// One segment compiled into a closed-form phase starting at (x0, y0) with
/// heading h0 at route time t0.
struct Phase {
    double t0 = 0.0;
    double duration = 0.0;
    double x0 = 0.0, y0 = 0.0, h0 = 0.0;
    // Arc motion when omega != 0, otherwise straight-line motion with a
    // linear speed ramp v0 + accel * tau.
    double v0 = 0.0;
    double accel = 0.0;
    double omega = 0.0;
    double cx = 0.0, cy = 0.0; // arc center when omega != 0

    TruthPoint at(double t) const {
        const double tau = t - t0;
        TruthPoint p;
        p.t = t;
        if (omega != 0.0) {
            const double h = h0 + omega * tau;
            const double rel_x = x0 - cx;
            const double rel_y = y0 - cy;
            const double c = std::cos(omega * tau);
            const double s = std::sin(omega * tau);
            p.x = cx + c * rel_x - s * rel_y;
            p.y = cy + s * rel_x + c * rel_y;
            p.vx = v0 * std::cos(h);
            p.vy = v0 * std::sin(h);
            p.ax = -v0 * omega * std::sin(h);
            p.ay = v0 * omega * std::cos(h);
            p.yaw = h;
        } else {
            const double dist = v0 * tau + 0.5 * accel * tau * tau;
            const double c = std::cos(h0);
            const double s = std::sin(h0);
            const double v = v0 + accel * tau;
            p.x = x0 + c * dist;
            p.y = y0 + s * dist;
            p.vx = c * v;
            p.vy = s * v;
            p.ax = c * accel;
            p.ay = s * accel;
            p.yaw = h0;
        }
        return p;
    }
};

inline std::vector<Phase> compile_phases(const RouteSpec& spec) {
    std::vector<Phase> phases;
    phases.reserve(spec.segments.size());
    double t = 0.0, x = 0.0, y = 0.0, h = 0.0;
    for (const auto& seg : spec.segments) {
        Phase ph;
        ph.t0 = t;
        ph.x0 = x;
        ph.y0 = y;
        ph.h0 = h;
        std::visit(
            [&](const auto& s) {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, StraightSegment>) {
                    ph.duration = s.length_m / s.speed_mps;
                    ph.v0 = s.speed_mps;
                } else if constexpr (std::is_same_v<T, TurnSegment>) {
                    ph.duration = std::abs(s.angle_rad) * s.radius_m / s.speed_mps;
                    ph.v0 = s.speed_mps;
                    ph.omega = (s.angle_rad > 0.0 ? 1.0 : -1.0) * s.speed_mps / s.radius_m;
                    const double side = s.angle_rad > 0.0 ? 1.0 : -1.0;
                    ph.cx = x - side * s.radius_m * std::sin(h);
                    ph.cy = y + side * s.radius_m * std::cos(h);
                } else if constexpr (std::is_same_v<T, RoundaboutSegment>) {
                    const double angle = s.revolutions * 2.0 * std::numbers::pi;
                    ph.duration = angle * s.radius_m / s.speed_mps;
                    ph.v0 = s.speed_mps;
                    ph.omega = s.speed_mps / s.radius_m;
                    ph.cx = x - s.radius_m * std::sin(h);
                    ph.cy = y + s.radius_m * std::cos(h);
                } else if constexpr (std::is_same_v<T, StopSegment>) {
                    ph.duration = s.duration_s;
                } else {
                    ph.duration = s.duration_s;
                    ph.v0 = s.from_mps;
                    ph.accel = (s.to_mps - s.from_mps) / s.duration_s;
                }
            },
            seg);
        const TruthPoint end = ph.at(ph.t0 + ph.duration);
        t += ph.duration;
        x = end.x;
        y = end.y;
        h = end.yaw;
        phases.push_back(ph);
    }
    return phases;
}

inline const Phase& phase_at(const std::vector<Phase>& phases, double t) {
    auto it = std::upper_bound(phases.begin(), phases.end(), t,
                               [](double v, const Phase& p) { return v < p.t0; });
    if (it != phases.begin()) --it;
    return *it;
}

} // namespace detail

/// Exact kinematic state of the route at any time (no sensor noise).
inline TruthPoint truth_at(const std::vector<detail::Phase>& phases, double t) {
    return detail::phase_at(phases, t).at(t);
}

/// Generate the sensor event streams and dense ground truth for a route.
/// Fully deterministic for a given spec (seed included); the three sensor
/// streams draw from independent seeded generators and are merged stably.
inline GeneratedRoute generate(const RouteSpec& spec) {
    spec.validate();
    const auto phases = detail::compile_phases(spec);
    const double duration = phases.back().t0 + phases.back().duration;

    GeneratedRoute out;
    out.duration = duration;

    // Ground truth at 1 ms, times generated from the index.
    const auto truth_count = static_cast<std::size_t>(std::floor(duration / 1e-3)) + 1;
    out.truth.reserve(truth_count);
    for (std::size_t i = 0; i < truth_count; ++i) {
        out.truth.push_back(truth_at(phases, static_cast<double>(i) * 1e-3));
    }

    const SensorConfig& sc = spec.sensors;
    std::vector<RawEvent> gps, imu, can;

    {
        std::mt19937_64 rng(spec.seed ^ 0x9E3779B97F4A7C15ULL);
        std::uniform_real_distribution<double> interval(sc.gps_interval_min,
                                                        sc.gps_interval_max);
        std::normal_distribution<double> noise(0.0, sc.gps_noise_sigma);
        std::bernoulli_distribution drop(sc.gps_dropout_prob);
        for (double t = 0.0; t <= duration; t += interval(rng)) {
            const TruthPoint p = truth_at(phases, t);
            const double nx = sc.gps_noise_sigma > 0.0 ? noise(rng) : 0.0;
            const double ny = sc.gps_noise_sigma > 0.0 ? noise(rng) : 0.0;
            const bool dropped = sc.gps_dropout_prob > 0.0 && drop(rng);
            if (!dropped) gps.push_back(make_gps(t, p.x + nx, p.y + ny));
        }
    }
    {
        std::mt19937_64 rng(spec.seed ^ 0xC2B2AE3D27D4EB4FULL);
        std::normal_distribution<double> accel_noise(0.0, sc.imu_accel_noise_sigma);
        std::normal_distribution<double> yaw_noise(0.0, sc.imu_yaw_noise_sigma);
        for (std::size_t i = 0;; ++i) {
            const double t = static_cast<double>(i) / sc.imu_rate_hz;
            if (t > duration) break;
            const TruthPoint p = truth_at(phases, t);
            // Vehicle frame = global acceleration rotated by -yaw.
            const double c = std::cos(p.yaw);
            const double s = std::sin(p.yaw);
            double ax_v = c * p.ax + s * p.ay;
            double ay_v = -s * p.ax + c * p.ay;
            double yaw = p.yaw;
            if (sc.imu_accel_noise_sigma > 0.0) {
                ax_v += accel_noise(rng);
                ay_v += accel_noise(rng);
            }
            if (sc.imu_yaw_noise_sigma > 0.0) yaw += yaw_noise(rng);
            imu.push_back(make_imu(t, ax_v, ay_v, yaw));
        }
    }
    for (std::size_t i = 0;; ++i) {
        const double t = static_cast<double>(i) / sc.can_rate_hz;
        if (t > duration) break;
        const TruthPoint p = truth_at(phases, t);
        can.push_back(make_can(t, std::hypot(p.vx, p.vy) * 3.6));
    }

    out.events.reserve(gps.size() + imu.size() + can.size());
    out.events.insert(out.events.end(), gps.begin(), gps.end());
    out.events.insert(out.events.end(), imu.begin(), imu.end());
    out.events.insert(out.events.end(), can.begin(), can.end());
    std::stable_sort(out.events.begin(), out.events.end(),
                     [](const RawEvent& a, const RawEvent& b) { return a.t < b.t; });
    return out;
}

/// Compiled phases for callers that need exact truth at arbitrary times.
inline std::vector<detail::Phase> compile_route(const RouteSpec& spec) {
    spec.validate();
    return detail::compile_phases(spec);
}

} // namespace traj
