#pragma once

#include <cmath>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "traj/errors.hpp"
#include "traj/routefile.hpp"
#include "traj/runtime.hpp"

namespace traj {

/// Live mode: reads route-format event lines (a leading header line is
/// tolerated and skipped) and emits one JSON line per tick. Estimates carry
/// status "ok"; before the window warms or during an IMU gap the tick still
/// produces a line, with the blocking status instead of a position.
inline void run_stream(std::istream& in, std::ostream& out, ModelParams params,
                       RuntimeConfig cfg = {}) {
    Runtime rt(std::move(params), cfg);

    std::vector<RawEvent> pending;
    bool started = false;
    long tick_k = 0; // tick times generated from the index, never accumulated

    auto do_tick = [&](double now) {
        nlohmann::json j;
        j["t"] = now;
        try {
            const PositionEstimate est = rt.tick(now, pending);
            j["status"] = "ok";
            j["x"] = est.x;
            j["y"] = est.y;
            j["source"] = to_string(est.source);
            j["latency_ms"] = est.latency_ms;
            j["degraded"] = est.degraded;
        } catch (const WarmingUpError&) {
            j["status"] = "warming-up";
        } catch (const SensorGapError&) {
            j["status"] = "sensor-gap";
        }
        pending.clear(); // tick ingests events before it can throw
        out << j.dump() << '\n';
    };

    std::string line;
    long line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        const nlohmann::json j = detail::parse_line(line, line_number);
        if (j.contains("format")) continue; // route-file header passthrough
        const RawEvent e = detail::event_from_json(j);
        if (!started) {
            tick_k = static_cast<long>(std::floor(e.t / cfg.tick_period)) + 1;
            started = true;
        }
        while (e.t > static_cast<double>(tick_k) * cfg.tick_period) {
            do_tick(static_cast<double>(tick_k) * cfg.tick_period);
            ++tick_k;
        }
        pending.push_back(e);
    }
    if (started && !pending.empty()) {
        do_tick(static_cast<double>(tick_k) * cfg.tick_period);
    }
}

} // namespace traj
