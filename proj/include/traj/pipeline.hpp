#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "traj/errors.hpp"
#include "traj/events.hpp"
#include "traj/geodesy.hpp"
#include "traj/polyfit.hpp"

namespace traj {

inline constexpr double kGridStep = 0.2;        // s, uniform frame spacing
inline constexpr int kWindowFrames = 8;         // frames per sequence
inline constexpr double kWarmupSeconds = 2.0;   // initial noisy data discarded
inline constexpr double kTurnYawRate = 0.05;    // rad/s, turn annotation
inline constexpr double kTurnLateralAccel = 0.5; // m/s^2, turn annotation
inline constexpr double kImuMaxGap = 0.5;       // s, bracketing IMU samples

/// Uniform-grid frame before feature extraction: absolute position from the
/// cubic fit plus vehicle-frame IMU values interpolated to the grid time.
struct GridFrame {
    double t = 0.0;
    double x = 0.0;
    double y = 0.0;
    double ax_v = 0.0; // vehicle frame
    double ay_v = 0.0; // vehicle frame
    double yaw = 0.0;
};

/// One network input frame: delta position, global-frame acceleration, yaw
/// and the in-sequence timestamp feature.
struct SyncedFrame {
    double t = 0.0;          // absolute grid time
    double dx = 0.0;         // m, displacement since previous grid frame
    double dy = 0.0;         // m
    double ax_g = 0.0;       // m/s^2, global frame
    double ay_g = 0.0;       // m/s^2, global frame
    double yaw = 0.0;        // rad
    double ts_feature = 0.0; // s since sequence start

    std::array<double, 6> features() const {
        return {dx, dy, ax_g, ay_g, yaw, ts_feature};
    }
};

inline constexpr int kFeatureCount = 6;

enum class SeqLabel { straight, turn };

inline const char* to_string(SeqLabel l) {
    return l == SeqLabel::turn ? "turn" : "straight";
}

/// Eight uniform frames plus the ground-truth frame 200 ms after the last.
/// `anchor` is the absolute grid position of the first frame so the window's
/// absolute track can be reconstructed from the deltas.
struct Sequence {
    std::vector<SyncedFrame> frames;
    SyncedFrame target;
    SeqLabel label = SeqLabel::straight;
    PlanePoint anchor{0.0, 0.0};
    double t0 = 0.0;   // absolute time of the first frame
    std::string route; // source route identifier, used for train/val splits

    void validate() const {
        if (frames.size() != static_cast<std::size_t>(kWindowFrames)) {
            throw InvalidInput("pipeline: sequence must hold exactly 8 frames");
        }
    }
};

/// Absolute grid positions of a sequence window (anchor plus delta cumsum).
inline std::vector<PlanePoint> sequence_positions(const Sequence& seq) {
    std::vector<PlanePoint> out;
    out.reserve(seq.frames.size());
    double x = seq.anchor.x;
    double y = seq.anchor.y;
    for (const auto& f : seq.frames) {
        x += f.dx;
        y += f.dy;
        out.push_back(PlanePoint{x, y});
    }
    return out;
}

/// Rotate a vehicle-frame vector into the global frame (column convention,
/// positive yaw = counterclockwise).
inline std::pair<double, double> rotate_to_global(double ax_v, double ay_v, double yaw) {
    if (!std::isfinite(yaw)) throw InvalidInput("pipeline: non-finite yaw");
    const double c = std::cos(yaw);
    const double s = std::sin(yaw);
    return {c * ax_v - s * ay_v, s * ax_v + c * ay_v};
}

/// Drop all events before the warmup horizon (sensor start-up noise).
inline std::vector<RawEvent> discard_warmup(std::span<const RawEvent> events,
                                            double warmup = kWarmupSeconds) {
    std::vector<RawEvent> out;
    out.reserve(events.size());
    for (const auto& e : events) {
        if (!(e.t < warmup)) out.push_back(e);
    }
    return out;
}

namespace detail {

struct GpsSample {
    double t;
    PlanePoint p;
};

struct ImuSample {
    double t;
    double ax, ay, yaw;
};

template <class S>
void require_sorted(const std::vector<S>& stream, const char* name) {
    for (std::size_t i = 1; i < stream.size(); ++i) {
        if (stream[i].t < stream[i - 1].t) {
            throw InvalidInput(std::string("pipeline: ") + name +
                               " stream is not time-sorted");
        }
    }
}

/// Pick the contiguous GPS index range [lo, hi) closest to grid time g,
/// growing outward from the bracketing samples until the fit window holds at
/// least `min_count` samples spanning at least `min_span` seconds.
inline std::pair<std::size_t, std::size_t> fit_window(const std::vector<GpsSample>& gps,
                                                      double g, std::size_t min_count,
                                                      double min_span) {
    auto right = static_cast<std::size_t>(
        std::lower_bound(gps.begin(), gps.end(), g,
                         [](const GpsSample& s, double v) { return s.t < v; }) -
        gps.begin());
    std::size_t lo = right;
    std::size_t hi = right;
    auto span = [&] { return hi > lo ? gps[hi - 1].t - gps[lo].t : 0.0; };
    while (hi - lo < min_count || span() < min_span) {
        const bool can_left = lo > 0;
        const bool can_right = hi < gps.size();
        if (!can_left && !can_right) {
            throw InsufficientCoverageError(
                "pipeline: cannot populate a 2 s fit window around grid time");
        }
        if (!can_right ||
            (can_left && g - gps[lo - 1].t <= gps[hi].t - g)) {
            --lo;
        } else {
            ++hi;
        }
    }
    return {lo, hi};
}

inline ImuSample imu_at(const std::vector<ImuSample>& imu, double g) {
    if (imu.empty()) {
        throw SensorGapError("pipeline: no IMU samples available");
    }
    auto right = static_cast<std::size_t>(
        std::lower_bound(imu.begin(), imu.end(), g,
                         [](const ImuSample& s, double v) { return s.t < v; }) -
        imu.begin());
    if (right == 0) right = 1;
    if (right == imu.size()) right = imu.size() - 1;
    const ImuSample& a = imu[right - 1];
    const ImuSample& b = imu[right];
    if (b.t - a.t > kImuMaxGap) {
        throw SensorGapError("pipeline: bracketing IMU samples more than 0.5 s apart");
    }
    const double w = b.t == a.t ? 0.0 : (g - a.t) / (b.t - a.t);
    return ImuSample{g, a.ax + w * (b.ax - a.ax), a.ay + w * (b.ay - a.ay),
                     a.yaw + w * (b.yaw - a.yaw)};
}

} // namespace detail

/// Resample asynchronous sensor events onto the uniform grid. Positions come
/// from a cubic least-squares fit over the nearest >= 10 GPS samples spanning
/// >= 2 s around each grid time; IMU values are interpolated linearly between
/// the bracketing samples. Grid times are whole multiples of `grid_step`,
/// generated from the index (never accumulated).
inline std::vector<GridFrame> resample(std::span<const RawEvent> events,
                                       double grid_step = kGridStep,
                                       const LbfgsConfig& cfg = {}) {
    if (!(grid_step > 0.0)) throw InvalidInput("pipeline: grid step must be positive");

    std::vector<detail::GpsSample> gps;
    std::vector<detail::ImuSample> imu;
    for (const auto& e : events) {
        e.validate();
        if (e.kind() == EventKind::gps) {
            gps.push_back({e.t, PlanePoint{e.gps().x, e.gps().y}});
        } else if (e.kind() == EventKind::imu) {
            const auto& d = e.imu();
            imu.push_back({e.t, d.ax, d.ay, d.yaw});
        }
    }
    detail::require_sorted(gps, "gps");
    detail::require_sorted(imu, "imu");

    constexpr std::size_t kMinFitSamples = 10;
    constexpr double kMinFitSpan = 2.0;
    if (gps.size() < kMinFitSamples || gps.back().t - gps.front().t < kMinFitSpan) {
        throw InsufficientCoverageError(
            "pipeline: GPS stream too short for a 2 s / 10-sample fit window");
    }
    if (imu.size() < 2) {
        throw SensorGapError("pipeline: need at least two IMU samples to bracket");
    }

    const double t_lo = std::max(gps.front().t, imu.front().t);
    const double t_hi = std::min(gps.back().t, imu.back().t);
    const auto k_lo = static_cast<long>(std::ceil(t_lo / grid_step - 1e-9));
    const auto k_hi = static_cast<long>(std::floor(t_hi / grid_step + 1e-9));

    std::vector<GridFrame> out;
    if (k_hi < k_lo) return out;
    out.reserve(static_cast<std::size_t>(k_hi - k_lo + 1));

    std::vector<double> times;
    std::vector<PlanePoint> points;
    for (long k = k_lo; k <= k_hi; ++k) {
        const double g = static_cast<double>(k) * grid_step;
        const auto [lo, hi] = detail::fit_window(gps, g, kMinFitSamples, kMinFitSpan);
        times.clear();
        points.clear();
        for (std::size_t i = lo; i < hi; ++i) {
            times.push_back(gps[i].t);
            points.push_back(gps[i].p);
        }
        const XyFit fit = fit_xy(times, points, cfg);
        const auto m = detail::imu_at(imu, g);

        GridFrame f;
        f.t = g;
        f.x = fit.evaluate_x(g);
        f.y = fit.evaluate_y(g);
        f.ax_v = m.ax;
        f.ay_v = m.ay;
        f.yaw = m.yaw;
        out.push_back(f);
    }
    return out;
}

/// Label a window of grid frames: turn when the yaw rate between consecutive
/// frames exceeds 0.05 rad/s or any vehicle-frame lateral acceleration
/// exceeds 0.5 m/s^2 (both strictly), straight otherwise.
inline SeqLabel annotate(std::span<const GridFrame> window) {
    if (window.size() < 2) throw InvalidInput("pipeline: annotate needs >= 2 frames");
    for (std::size_t i = 0; i < window.size(); ++i) {
        if (std::abs(window[i].ay_v) > kTurnLateralAccel) return SeqLabel::turn;
        if (i + 1 < window.size()) {
            const double dt = window[i + 1].t - window[i].t;
            if (std::abs(window[i + 1].yaw - window[i].yaw) / dt > kTurnYawRate) {
                return SeqLabel::turn;
            }
        }
    }
    return SeqLabel::straight;
}

/// Cut 8-frame windows plus a one-frame target from the grid. Delta features
/// are successive position differences with the first frame forced to (0, 0);
/// accelerations are rotated into the global frame. Returns max(0, N - 8)
/// sequences for stride 1.
inline std::vector<Sequence> build_sequences(std::span<const GridFrame> frames,
                                             int window = kWindowFrames,
                                             int stride = 1) {
    if (window < 2) throw InvalidInput("pipeline: window must be at least 2");
    if (stride < 1) throw InvalidInput("pipeline: stride must be at least 1");

    std::vector<Sequence> out;
    const auto n = static_cast<long>(frames.size());
    for (long s = 0; s + window + 1 <= n; s += stride) {
        Sequence seq;
        seq.anchor = PlanePoint{frames[static_cast<std::size_t>(s)].x,
                                frames[static_cast<std::size_t>(s)].y};
        seq.t0 = frames[static_cast<std::size_t>(s)].t;
        seq.frames.reserve(static_cast<std::size_t>(window));

        auto make_frame = [&](long i) {
            const GridFrame& g = frames[static_cast<std::size_t>(i)];
            SyncedFrame f;
            f.t = g.t;
            if (i > s) {
                const GridFrame& prev = frames[static_cast<std::size_t>(i - 1)];
                f.dx = g.x - prev.x;
                f.dy = g.y - prev.y;
            }
            const auto [ax_g, ay_g] = rotate_to_global(g.ax_v, g.ay_v, g.yaw);
            f.ax_g = ax_g;
            f.ay_g = ay_g;
            f.yaw = g.yaw;
            f.ts_feature = i == s ? 0.0 : g.t - seq.t0;
            return f;
        };

        for (long i = s; i < s + window; ++i) seq.frames.push_back(make_frame(i));
        seq.target = make_frame(s + window);
        seq.label = annotate(frames.subspan(static_cast<std::size_t>(s),
                                            static_cast<std::size_t>(window)));
        out.push_back(std::move(seq));
    }
    return out;
}

/// Duplicate turn sequences (whole rounds, appended in original order) until
/// they make up at least half of the dataset. Never removes or alters a
/// sequence; inputs without turns are returned unchanged.
inline std::vector<Sequence> balance(std::vector<Sequence> sequences) {
    std::size_t turns = 0;
    for (const auto& s : sequences) {
        if (s.label == SeqLabel::turn) ++turns;
    }
    const std::size_t straights = sequences.size() - turns;
    if (turns == 0 || turns >= straights) return sequences;

    // Smallest number of appended rounds r with turns * (1 + r) >= straights.
    const std::size_t rounds = (straights + turns - 1) / turns - 1;
    std::vector<Sequence> turn_seqs;
    turn_seqs.reserve(turns);
    for (const auto& s : sequences) {
        if (s.label == SeqLabel::turn) turn_seqs.push_back(s);
    }
    sequences.reserve(sequences.size() + rounds * turns);
    for (std::size_t r = 0; r < rounds; ++r) {
        for (const auto& s : turn_seqs) sequences.push_back(s);
    }
    return sequences;
}

} // namespace traj
