#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "traj/errors.hpp"
#include "traj/events.hpp"
#include "traj/nn.hpp"
#include "traj/pipeline.hpp"
#include "traj/polyfit.hpp"

namespace traj {

struct RuntimeConfig {
    double tick_period = 0.05;    // s, advisory cadence for stream drivers
    double dropout_grace = 0.7;   // s past a due grid frame before coasting
    double imu_stale_after = 0.5; // s without IMU before erroring
    double stop_speed_kmh = 0.15; // strict-below threshold for stop detection
    int degraded_after = 10;      // consecutive dropouts before flagging
    std::size_t min_fit_samples = 10;
    double min_fit_span = 2.0; // s
    LbfgsConfig fit;

    void validate() const {
        if (!(tick_period > 0.0) || !(dropout_grace > 0.0) ||
            !(imu_stale_after > 0.0) || !(stop_speed_kmh > 0.0)) {
            throw InvalidInput("runtime: config durations must be positive");
        }
        if (degraded_after < 1 || min_fit_samples < 4 || !(min_fit_span > 0.0)) {
            throw InvalidInput("runtime: invalid coverage configuration");
        }
        fit.validate();
    }
};

enum class RuntimeMode { normal, coasting, stopped };

enum class EstimateSource { interpolated, predicted_coast, frozen_stop };

inline const char* to_string(RuntimeMode m) {
    switch (m) {
    case RuntimeMode::coasting: return "coasting";
    case RuntimeMode::stopped: return "stopped";
    default: return "normal";
    }
}

inline const char* to_string(EstimateSource s) {
    switch (s) {
    case EstimateSource::predicted_coast: return "predicted-coast";
    case EstimateSource::frozen_stop: return "frozen-stop";
    default: return "interpolated";
    }
}

struct PositionEstimate {
    double t = 0.0;
    double x = 0.0;
    double y = 0.0;
    EstimateSource source = EstimateSource::interpolated;
    double latency_ms = 0.0;
    bool degraded = false;
};

/// Wall-clock cost of the three estimation stages for one tick.
struct StageTimings {
    double regression_ms = 0.0;    // grid-frame fits over raw GPS
    double network_ms = 0.0;       // recurrent forward passes
    double interpolation_ms = 0.0; // 9-point cubic plus evaluation
    double total_ms = 0.0;
};

/// One frame of the rolling grid window with its absolute position.
struct WindowFrame {
    double t = 0.0;
    long k = 0; // grid index; t == k * kGridStep
    PlanePoint pos;
    double ax_g = 0.0;
    double ay_g = 0.0;
    double yaw = 0.0;
};

/// Live forecaster: ingests raw sensor events, maintains the rolling 8-frame
/// window, substitutes predicted frames through GPS dropouts, freezes while
/// the vehicle is stopped, and answers position queries by interpolating a
/// cubic between the window and the 200 ms-ahead network prediction.
class Runtime {
public:
    explicit Runtime(ModelParams params, RuntimeConfig cfg = {})
        : params_(std::move(params)), cfg_(cfg) {
        cfg_.validate();
        params_.config.validate();
    }

    /// Advance to `now`, consuming the events that arrived since the last
    /// tick (time-sorted). Always returns exactly one estimate once warm.
    PositionEstimate tick(double now, std::span<const RawEvent> events) {
        const auto t0 = Clock::now();
        timings_ = StageTimings{};

        ingest(events);

        PositionEstimate est;
        est.t = now;
        if (mode_ == RuntimeMode::stopped) {
            if (!anchor_.has_value()) {
                throw WarmingUpError("runtime: stopped before any position was known");
            }
            est.x = anchor_->x;
            est.y = anchor_->y;
            est.source = EstimateSource::frozen_stop;
        } else {
            advance_grid(now);
            if (window_.size() < static_cast<std::size_t>(kWindowFrames)) {
                throw WarmingUpError("runtime: window holds " +
                                     std::to_string(window_.size()) + " of 8 frames");
            }
            if (imu_.empty() || now - imu_.back().t > cfg_.imu_stale_after) {
                throw SensorGapError("runtime: newest IMU sample is stale");
            }
            refresh_prediction();
            refresh_fit();
            {
                const auto s = Clock::now();
                est.x = fit_->evaluate_x(now);
                est.y = fit_->evaluate_y(now);
                timings_.interpolation_ms += ms_since(s);
            }
            est.source = mode_ == RuntimeMode::coasting ? EstimateSource::predicted_coast
                                                        : EstimateSource::interpolated;
            est.degraded = dropout_count_ >= cfg_.degraded_after;
        }

        timings_.total_ms = ms_since(t0);
        est.latency_ms = timings_.total_ms;
        last_estimate_ = PlanePoint{est.x, est.y};
        return est;
    }

    /// Substitute one overdue grid frame from the previous prediction plus
    /// live IMU data (GPS dropout handling). Normally driven by tick().
    void handle_dropout() {
        if (mode_ == RuntimeMode::stopped) {
            throw InvalidInput("runtime: dropout handling is undefined while stopped");
        }
        if (window_.size() < static_cast<std::size_t>(kWindowFrames)) {
            throw NoPriorPredictionError(
                "runtime: GPS lost before the window ever warmed");
        }
        refresh_prediction();

        const long k = window_.back().k + 1;
        const double g = static_cast<double>(k) * kGridStep;
        WindowFrame f = frame_from_imu(k, g);
        f.pos = PlanePoint{window_.back().pos.x + prediction_->delta.x,
                           window_.back().pos.y + prediction_->delta.y};
        push_frame(f);
        ++dropout_count_;
        mode_ = RuntimeMode::coasting;
    }

    /// Apply the CAN speed threshold: strictly below 0.15 km/h freezes the
    /// estimate at the current anchor; at or above it a stopped runtime
    /// resumes and re-warms its window from fresh fixes only.
    void handle_stop(double can_speed_kmh) {
        if (can_speed_kmh < cfg_.stop_speed_kmh) {
            if (mode_ != RuntimeMode::stopped) {
                mode_ = RuntimeMode::stopped;
                if (!window_.empty()) {
                    anchor_ = window_.back().pos;
                } else if (last_estimate_.has_value()) {
                    anchor_ = last_estimate_;
                } else if (!gps_.empty()) {
                    anchor_ = gps_.back().p;
                }
            }
            return;
        }
        if (mode_ == RuntimeMode::stopped) {
            // Pre-stop frames would bias the cubic, so the window restarts
            // from scratch; estimates resume once it re-warms.
            mode_ = RuntimeMode::normal;
            window_.clear();
            ++window_version_;
            prediction_.reset();
            fit_.reset();
            dropout_count_ = 0;
            const double resume_t = last_can_t_.value_or(newest_event_t_);
            next_grid_k_ = static_cast<long>(std::ceil(resume_t / kGridStep - 1e-9));
            grid_started_ = true;
        }
    }

    RuntimeMode mode() const { return mode_; }
    int dropout_count() const { return dropout_count_; }
    bool warm() const { return window_.size() == static_cast<std::size_t>(kWindowFrames); }
    const std::deque<WindowFrame>& window() const { return window_; }
    const StageTimings& last_timings() const { return timings_; }

private:
    using Clock = std::chrono::steady_clock;

    static double ms_since(Clock::time_point start) {
        return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    }

    struct Prediction {
        PlanePoint delta;     // predicted displacement over the next 0.2 s
        long from_k;          // grid index of the window end it was made from
    };

    void ingest(std::span<const RawEvent> events) {
        for (const auto& e : events) {
            e.validate();
            if (e.t < newest_event_t_ - 1e-9) {
                throw InvalidInput("runtime: events must arrive time-sorted");
            }
            newest_event_t_ = std::max(newest_event_t_, e.t);
            switch (e.kind()) {
            case EventKind::gps:
                gps_.push_back({e.t, PlanePoint{e.gps().x, e.gps().y}});
                break;
            case EventKind::imu: {
                const auto& d = e.imu();
                imu_.push_back({e.t, d.ax, d.ay, d.yaw});
                break;
            }
            case EventKind::can:
                last_can_t_ = e.t;
                handle_stop(e.can().speed_kmh);
                break;
            }
        }
        trim(gps_);
        trim(imu_);
    }

    template <class S>
    void trim(std::vector<S>& buf) {
        // Trailing fits need min_fit_span seconds of history, but at sparse
        // fix cadences the sample-count floor binds first: keep enough time
        // for min_fit_samples fixes arriving up to 0.6 s apart.
        const double keep =
            cfg_.min_fit_span + 0.6 * static_cast<double>(cfg_.min_fit_samples + 2);
        if (buf.size() > 1 && buf.back().t - buf.front().t > 2.0 * keep) {
            const double cutoff = buf.back().t - keep;
            const auto it = std::lower_bound(
                buf.begin(), buf.end(), cutoff,
                [](const S& s, double v) { return s.t < v; });
            buf.erase(buf.begin(), it);
        }
    }

    WindowFrame frame_from_imu(long k, double g) const {
        const auto m = detail::imu_at(imu_, g);
        const auto [ax_g, ay_g] = rotate_to_global(m.ax, m.ay, m.yaw);
        WindowFrame f;
        f.t = g;
        f.k = k;
        f.ax_g = ax_g;
        f.ay_g = ay_g;
        f.yaw = m.yaw;
        return f;
    }

    void push_frame(const WindowFrame& f) {
        window_.push_back(f);
        if (window_.size() > static_cast<std::size_t>(kWindowFrames)) {
            window_.pop_front();
        }
        ++window_version_;
    }

    /// Build every grid frame that is due: from fresh fixes when GPS covers
    /// the grid time, from the previous prediction once a frame is overdue
    /// by more than the grace period.
    void advance_grid(double now) {
        if (!grid_started_) {
            if (gps_.empty()) return;
            next_grid_k_ =
                static_cast<long>(std::ceil(gps_.front().t / kGridStep - 1e-9));
            grid_started_ = true;
        }
        while (true) {
            const double g = static_cast<double>(next_grid_k_) * kGridStep;
            const bool imu_covers = !imu_.empty() && imu_.back().t >= g;
            if (!gps_.empty() && gps_.back().t >= g && imu_covers) {
                const auto s = Clock::now();
                std::optional<XyFit> fit;
                try {
                    const auto [lo, hi] = detail::fit_window(
                        gps_, g, cfg_.min_fit_samples, cfg_.min_fit_span);
                    std::vector<double> times;
                    std::vector<PlanePoint> pts;
                    times.reserve(hi - lo);
                    pts.reserve(hi - lo);
                    for (std::size_t i = lo; i < hi; ++i) {
                        times.push_back(gps_[i].t);
                        pts.push_back(gps_[i].p);
                    }
                    fit = fit_xy(times, pts, cfg_.fit);
                } catch (const InsufficientCoverageError&) {
                    // Not enough fix history for a trustworthy fit. Fall
                    // through: a frame overdue past the grace period is
                    // substituted below rather than stalling the grid.
                }
                timings_.regression_ms += ms_since(s);
                if (fit.has_value()) {
                    WindowFrame f = frame_from_imu(next_grid_k_, g);
                    f.pos = PlanePoint{fit->evaluate_x(g), fit->evaluate_y(g)};
                    push_frame(f);
                    if (mode_ == RuntimeMode::coasting) mode_ = RuntimeMode::normal;
                    dropout_count_ = 0;
                    ++next_grid_k_;
                    continue;
                }
            }
            if (now - g > cfg_.dropout_grace && imu_covers && warm()) {
                handle_dropout();
                ++next_grid_k_;
                continue;
            }
            break;
        }
    }

    std::vector<SyncedFrame> synced_window() const {
        std::vector<SyncedFrame> frames;
        frames.reserve(window_.size());
        for (std::size_t j = 0; j < window_.size(); ++j) {
            const WindowFrame& w = window_[j];
            SyncedFrame f;
            f.t = w.t;
            f.dx = j == 0 ? 0.0 : w.pos.x - window_[j - 1].pos.x;
            f.dy = j == 0 ? 0.0 : w.pos.y - window_[j - 1].pos.y;
            f.ax_g = w.ax_g;
            f.ay_g = w.ay_g;
            f.yaw = w.yaw;
            f.ts_feature = j == 0 ? 0.0 : w.t - window_.front().t;
            frames.push_back(f);
        }
        return frames;
    }

    /// Run the network once per window state; reuses the cached prediction
    /// when the window has not advanced.
    void refresh_prediction() {
        if (prediction_.has_value() && prediction_->from_k == window_.back().k) return;
        const auto s = Clock::now();
        const auto features = predict_future(params_, synced_window());
        prediction_ = Prediction{PlanePoint{features[0], features[1]}, window_.back().k};
        timings_.network_ms += ms_since(s);
    }

    /// Cubic through the 8 window positions plus the predicted point.
    void refresh_fit() {
        if (fit_.has_value() && fit_version_ == window_version_) return;
        const auto s = Clock::now();
        std::vector<double> times;
        std::vector<PlanePoint> pts;
        times.reserve(window_.size() + 1);
        pts.reserve(window_.size() + 1);
        for (const auto& w : window_) {
            times.push_back(w.t);
            pts.push_back(w.pos);
        }
        times.push_back(window_.back().t + kGridStep);
        pts.push_back(PlanePoint{window_.back().pos.x + prediction_->delta.x,
                                 window_.back().pos.y + prediction_->delta.y});
        fit_ = fit_xy(times, pts, cfg_.fit);
        fit_version_ = window_version_;
        timings_.interpolation_ms += ms_since(s);
    }

    ModelParams params_;
    RuntimeConfig cfg_;

    std::vector<detail::GpsSample> gps_;
    std::vector<detail::ImuSample> imu_;
    std::optional<double> last_can_t_;
    double newest_event_t_ = -std::numeric_limits<double>::infinity();

    std::deque<WindowFrame> window_;
    std::uint64_t window_version_ = 0;
    bool grid_started_ = false;
    long next_grid_k_ = 0;

    std::optional<Prediction> prediction_;
    std::optional<XyFit> fit_;
    std::uint64_t fit_version_ = 0;

    RuntimeMode mode_ = RuntimeMode::normal;
    int dropout_count_ = 0;
    std::optional<PlanePoint> anchor_;
    std::optional<PlanePoint> last_estimate_;
    StageTimings timings_;
};

struct LatencyStats {
    double p50_ms = 0.0;
    double p95_ms = 0.0;
    double max_ms = 0.0;
};

struct LatencyReport {
    LatencyStats regression;
    LatencyStats network;
    LatencyStats interpolation;
    LatencyStats total;
    int ticks = 0;
};

namespace detail {

inline double percentile(std::vector<double> v, double q) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const auto idx = static_cast<std::size_t>(
        std::llround(q * static_cast<double>(v.size() - 1)));
    return v[idx];
}

inline LatencyStats stats_of(const std::vector<double>& v) {
    LatencyStats s;
    s.p50_ms = percentile(v, 0.5);
    s.p95_ms = percentile(v, 0.95);
    s.max_ms = v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
    return s;
}

} // namespace detail

/// Benchmark per-stage tick latency on a live-like synthetic drive (steady
/// circular motion, fixes at grid cadence so every measured tick performs
/// regression, network, and interpolation work).
inline LatencyReport measure_latency(const ModelParams& params, int ticks,
                                     const RuntimeConfig& cfg = {}) {
    if (ticks < 1) throw InvalidInput("runtime: tick count must be positive");
    Runtime rt(params, cfg);

    const double radius = 60.0;
    const double speed = 10.0;
    const double omega = speed / radius;
    const int imu_rate = 25;

    long imu_next = 0;
    long can_next = 0;
    auto events_until = [&](double t_hi, long fix_k) {
        std::vector<RawEvent> ev;
        while (static_cast<double>(imu_next) / imu_rate <= t_hi) {
            const double t = static_cast<double>(imu_next) / imu_rate;
            const double yaw = omega * t;
            // Vehicle frame on a circle: purely lateral acceleration.
            ev.push_back(make_imu(t, 0.0, speed * omega, yaw));
            ++imu_next;
        }
        while (static_cast<double>(can_next) / 2.0 <= t_hi) {
            ev.push_back(make_can(static_cast<double>(can_next) / 2.0, speed * 3.6));
            ++can_next;
        }
        const double ft = static_cast<double>(fix_k) * kGridStep;
        const double a = omega * ft;
        ev.push_back(make_gps(ft, radius * std::sin(a), radius * (1.0 - std::cos(a))));
        std::stable_sort(ev.begin(), ev.end(),
                         [](const RawEvent& x, const RawEvent& y) { return x.t < y.t; });
        return ev;
    };

    std::vector<double> regression, network, interpolation, total;
    regression.reserve(static_cast<std::size_t>(ticks));
    network.reserve(static_cast<std::size_t>(ticks));
    interpolation.reserve(static_cast<std::size_t>(ticks));
    total.reserve(static_cast<std::size_t>(ticks));

    const int warm_ticks = 30;
    for (int k = 1; k <= warm_ticks + ticks; ++k) {
        const double now = static_cast<double>(k) * kGridStep;
        const auto ev = events_until(now, k);
        try {
            rt.tick(now, ev);
        } catch (const WarmingUpError&) {
            continue;
        }
        if (k > warm_ticks) {
            const StageTimings& t = rt.last_timings();
            regression.push_back(t.regression_ms);
            network.push_back(t.network_ms);
            interpolation.push_back(t.interpolation_ms);
            total.push_back(t.total_ms);
        }
    }

    LatencyReport report;
    report.regression = detail::stats_of(regression);
    report.network = detail::stats_of(network);
    report.interpolation = detail::stats_of(interpolation);
    report.total = detail::stats_of(total);
    report.ticks = static_cast<int>(total.size());
    return report;
}

} // namespace traj
