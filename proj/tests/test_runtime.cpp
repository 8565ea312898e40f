#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "traj/runtime.hpp"

namespace {

// Small network whose output is identically zero, so predictions denormalize
// to exactly stats.mean. Lets tests pin the predicted displacement per step.
traj::ModelParams constant_predictor(double dx, double dy) {
    traj::ModelConfig cfg;
    cfg.encoder_hidden1 = 8;
    cfg.encoder_hidden2 = 8;
    cfg.lstm_hidden = 8;
    cfg.decoder_hidden = 8;
    traj::ModelParams p = traj::init_params(cfg, 1);
    p.visit([](const char*, auto& tensor) { tensor.setZero(); });
    p.stats.mean[0] = dx;
    p.stats.mean[1] = dy;
    return p;
}

// Calls make(i * step) for every multiple of `step` in (t_lo, t_hi]. Both
// bounds are nudged identically so consecutive half-open intervals chain
// without re-emitting a boundary sample even when t_lo sits a few ulp off
// a multiple (tick times accumulate).
void emit_at(double step, double t_lo, double t_hi, auto make) {
    const long lo = static_cast<long>(std::floor((t_lo + 1e-9) / step));
    const long hi = static_cast<long>(std::floor((t_hi + 1e-9) / step));
    for (long i = lo + 1; i <= hi; ++i) make(static_cast<double>(i) * step);
}

// Events for a constant-velocity straight drive over (t_lo, t_hi]: GPS fixes
// at every 0.2 s grid multiple, IMU at 25 Hz (zero acceleration), CAN at 2 Hz.
std::vector<traj::RawEvent> line_events(double t_lo, double t_hi, double vx,
                                        double vy, bool with_gps = true) {
    const double yaw = std::atan2(vy, vx);
    const double speed_kmh = std::hypot(vx, vy) * 3.6;
    std::vector<traj::RawEvent> ev;
    if (with_gps) {
        emit_at(traj::kGridStep, t_lo, t_hi,
                [&](double t) { ev.push_back(traj::make_gps(t, vx * t, vy * t)); });
    }
    emit_at(0.04, t_lo, t_hi,
            [&](double t) { ev.push_back(traj::make_imu(t, 0.0, 0.0, yaw)); });
    emit_at(0.5, t_lo, t_hi,
            [&](double t) { ev.push_back(traj::make_can(t, speed_kmh)); });
    std::stable_sort(ev.begin(), ev.end(),
                     [](const traj::RawEvent& a, const traj::RawEvent& b) {
                         return a.t < b.t;
                     });
    return ev;
}

// Drive the runtime along the line until it emits its first estimate;
// returns the time of the last tick issued.
double warm_up(traj::Runtime& rt, double vx, double vy, double until = 6.0) {
    double prev = 0.0;
    for (double now = 0.2; now <= until + 1e-9; now += 0.2) {
        try {
            rt.tick(now, line_events(prev, now, vx, vy));
            return now;
        } catch (const traj::WarmingUpError&) {
            prev = now;
        }
    }
    FAIL("runtime never warmed up");
    return 0.0;
}

void check_window_uniform(const traj::Runtime& rt) {
    const auto& w = rt.window();
    REQUIRE(w.size() == 8);
    for (std::size_t i = 1; i < w.size(); ++i) {
        CHECK(w[i].k == w[i - 1].k + 1);
        CHECK(w[i].t - w[i - 1].t == Catch::Approx(traj::kGridStep).margin(1e-9));
    }
}

} // namespace

TEST_CASE("runtime warms up before emitting estimates", "[runtime]") {
    traj::Runtime rt(constant_predictor(1.0, 0.0));

    CHECK_FALSE(rt.warm());
    CHECK_THROWS_AS(rt.tick(0.3, std::vector<traj::RawEvent>{}), traj::WarmingUpError);

    // A couple of fixes is not enough coverage for even one grid frame.
    const auto few = line_events(0.0, 0.6, 5.0, 0.0);
    CHECK_THROWS_AS(rt.tick(0.6, few), traj::WarmingUpError);
    CHECK_FALSE(rt.warm());

    double now = 0.6;
    bool emitted = false;
    for (; now <= 6.0 && !emitted; now += 0.2) {
        try {
            rt.tick(now + 0.2, line_events(now, now + 0.2, 5.0, 0.0));
            emitted = true;
        } catch (const traj::WarmingUpError&) {
        }
    }
    REQUIRE(emitted);
    CHECK(rt.warm());
    check_window_uniform(rt);
}

TEST_CASE("runtime tracks a noiseless straight drive", "[runtime]") {
    const double vx = 5.0;
    const double true_dx = vx * traj::kGridStep;
    traj::Runtime rt(constant_predictor(true_dx, 0.0));

    double prev = warm_up(rt, vx, 0.0);
    double max_err = 0.0;
    double max_step = 0.0;
    bool have_last = false;
    double last_x = 0.0;
    const double t_end = prev + 3.0;
    for (double now = prev + 0.05; now <= t_end + 1e-9; now += 0.05) {
        const auto est = rt.tick(now, line_events(prev, now, vx, 0.0));
        prev = now;
        CHECK(est.source == traj::EstimateSource::interpolated);
        CHECK_FALSE(est.degraded);
        max_err = std::max({max_err, std::abs(est.x - vx * now), std::abs(est.y)});
        if (have_last) max_step = std::max(max_step, std::abs(est.x - last_x));
        last_x = est.x;
        have_last = true;
    }
    CHECK(max_err < 1e-3);
    // Continuity: consecutive 50 ms estimates bounded by v_max * 0.05 + 0.5 m.
    CHECK(max_step <= vx * 0.05 + 0.5);
    CHECK(rt.mode() == traj::RuntimeMode::normal);
    check_window_uniform(rt);
}

TEST_CASE("runtime coasts through a total GPS dropout", "[runtime]") {
    const double vx = 5.0;
    const double true_dx = vx * traj::kGridStep;
    traj::Runtime rt(constant_predictor(true_dx, 0.0));
    double prev = warm_up(rt, vx, 0.0);

    SECTION("every tick still yields exactly one estimate and frames chain exactly") {
        int estimates = 0;
        int ticks = 0;
        bool saw_degraded = false;
        double back_x = rt.window().back().pos.x;
        long back_k = rt.window().back().k;
        const double t_end = prev + 4.0;
        for (double now = prev + 0.05; now <= t_end + 1e-9; now += 0.05) {
            const auto est =
                rt.tick(now, line_events(prev, now, vx, 0.0, /*with_gps=*/false));
            prev = now;
            ++ticks;
            ++estimates;
            saw_degraded = saw_degraded || est.degraded;
            const auto& back = rt.window().back();
            if (back.k != back_k) {
                // Substituted frame: displacement is the prediction, exactly.
                CHECK(back.k == back_k + 1);
                CHECK(back.pos.x == back_x + true_dx);
                CHECK(back.pos.y == 0.0);
                back_k = back.k;
                back_x = back.pos.x;
            }
        }
        CHECK(estimates == ticks);
        CHECK(rt.mode() == traj::RuntimeMode::coasting);
        CHECK(rt.dropout_count() >= 10);
        CHECK(saw_degraded);
        check_window_uniform(rt);

        // Estimates during the dropout carry the coasting source.
        const auto est =
            rt.tick(prev + 0.05, line_events(prev, prev + 0.05, vx, 0.0, false));
        CHECK(est.source == traj::EstimateSource::predicted_coast);
        CHECK(est.degraded);
    }

    SECTION("GPS return restores normal mode and resets the dropout counter") {
        const double drop_end = prev + 1.5;
        for (double now = prev + 0.05; now <= drop_end + 1e-9; now += 0.05) {
            rt.tick(now, line_events(prev, now, vx, 0.0, false));
            prev = now;
        }
        REQUIRE(rt.mode() == traj::RuntimeMode::coasting);
        REQUIRE(rt.dropout_count() > 0);

        double max_err = 0.0;
        const double return_end = prev + 2.0;
        for (double now = prev + 0.05; now <= return_end + 1e-9; now += 0.05) {
            const auto est = rt.tick(now, line_events(prev, now, vx, 0.0));
            prev = now;
            max_err = std::max(max_err, std::abs(est.x - vx * now));
        }
        CHECK(rt.mode() == traj::RuntimeMode::normal);
        CHECK(rt.dropout_count() == 0);
        CHECK(max_err < 0.1);
        check_window_uniform(rt);
    }
}

TEST_CASE("runtime freezes bitwise while stopped and re-warms on resume", "[runtime]") {
    const double vx = 5.0;
    traj::Runtime rt(constant_predictor(vx * traj::kGridStep, 0.0));
    double prev = warm_up(rt, vx, 0.0);
    const double stop_t = prev + 0.05;
    const double stop_x = vx * prev; // vehicle halts where it was

    // Decelerate to rest: a single CAN reading below threshold stops the runtime.
    std::vector<traj::RawEvent> ev = {traj::make_imu(stop_t, 0.0, 0.0, 0.0),
                                      traj::make_can(stop_t, 0.1)};
    auto est = rt.tick(stop_t, ev);
    REQUIRE(rt.mode() == traj::RuntimeMode::stopped);
    CHECK(est.source == traj::EstimateSource::frozen_stop);
    const double frozen_x = est.x;
    const double frozen_y = est.y;

    // 35 s of stationary ticks with fixes and IMU flowing: bitwise-identical
    // estimates throughout.
    prev = stop_t;
    int checked = 0;
    for (double now = stop_t + 0.05; now <= stop_t + 35.0 + 1e-9; now += 0.05) {
        std::vector<traj::RawEvent> stopped;
        emit_at(0.2, prev, now, [&](double t) {
            stopped.push_back(traj::make_gps(t, stop_x + 1e-3 * std::sin(3.0 * t), 0.0));
        });
        stopped.push_back(traj::make_imu(now, 0.0, 0.0, 0.0));
        if (checked % 10 == 0) stopped.push_back(traj::make_can(now, 0.0));
        est = rt.tick(now, stopped);
        prev = now;
        REQUIRE(est.x == frozen_x);
        REQUIRE(est.y == frozen_y);
        REQUIRE(est.source == traj::EstimateSource::frozen_stop);
        ++checked;
    }
    CHECK(checked > 600);

    // Resume: the window must re-warm from fresh fixes before estimates flow.
    const double resume_t = prev + 0.05;
    std::vector<traj::RawEvent> resume = {traj::make_imu(resume_t, 0.0, 0.0, 0.0),
                                          traj::make_can(resume_t, 18.0)};
    CHECK_THROWS_AS(rt.tick(resume_t, resume), traj::WarmingUpError);
    CHECK(rt.mode() == traj::RuntimeMode::normal);

    // Vehicle pulls away at vx again from the stop point.
    prev = resume_t;
    bool emitted = false;
    double first_x = 0.0;
    for (double now = resume_t + 0.2; now <= resume_t + 6.0 + 1e-9; now += 0.2) {
        std::vector<traj::RawEvent> moving;
        emit_at(0.2, prev, now, [&](double t) {
            moving.push_back(traj::make_gps(t, stop_x + vx * (t - resume_t), 0.0));
        });
        moving.push_back(traj::make_imu(now, 0.0, 0.0, 0.0));
        moving.push_back(traj::make_can(now, 18.0));
        try {
            est = rt.tick(now, moving);
            if (!emitted) first_x = est.x;
            emitted = true;
        } catch (const traj::WarmingUpError&) {
            CHECK_FALSE(emitted); // warming errors only before the first estimate
        }
        prev = now;
    }
    REQUIRE(emitted);
    CHECK(est.source == traj::EstimateSource::interpolated);
    check_window_uniform(rt);
    // Post-resume frames all sit ahead of the stop point.
    CHECK(first_x >= stop_x - 0.5);
}

TEST_CASE("runtime stop threshold is strict", "[runtime]") {
    traj::Runtime rt(constant_predictor(1.0, 0.0));
    rt.handle_stop(0.15); // exactly at threshold: still moving
    CHECK(rt.mode() == traj::RuntimeMode::normal);
    rt.handle_stop(0.1499);
    CHECK(rt.mode() == traj::RuntimeMode::stopped);
    rt.handle_stop(0.15); // resumes
    CHECK(rt.mode() == traj::RuntimeMode::normal);
}

TEST_CASE("runtime raises on stale IMU after warmup", "[runtime]") {
    const double vx = 5.0;
    traj::Runtime rt(constant_predictor(vx * traj::kGridStep, 0.0));
    double prev = warm_up(rt, vx, 0.0);

    // GPS keeps flowing but the IMU stream dies: past 0.5 s the tick errors.
    std::vector<traj::RawEvent> gps_only;
    emit_at(0.2, prev, prev + 0.8,
            [&](double t) { gps_only.push_back(traj::make_gps(t, vx * t, 0.0)); });
    CHECK_THROWS_AS(rt.tick(prev + 0.8, gps_only), traj::SensorGapError);
}

TEST_CASE("runtime dropout handling requires history", "[runtime]") {
    traj::Runtime rt(constant_predictor(1.0, 0.0));

    SECTION("cold start") {
        CHECK_THROWS_AS(rt.handle_dropout(), traj::NoPriorPredictionError);
    }
    SECTION("undefined while stopped") {
        rt.handle_stop(0.0);
        CHECK_THROWS_AS(rt.handle_dropout(), traj::InvalidInput);
    }
    SECTION("out-of-order events are rejected") {
        std::vector<traj::RawEvent> ev = {traj::make_imu(2.0, 0.0, 0.0, 0.0),
                                          traj::make_imu(1.0, 0.0, 0.0, 0.0)};
        CHECK_THROWS_AS(rt.tick(2.0, ev), traj::InvalidInput);
    }
}

TEST_CASE("runtime stop before any fix cannot anchor", "[runtime]") {
    traj::Runtime rt(constant_predictor(1.0, 0.0));
    std::vector<traj::RawEvent> ev = {traj::make_can(0.1, 0.0)};
    CHECK_THROWS_AS(rt.tick(0.1, ev), traj::WarmingUpError);

    // With at least one fix the stop anchors to it.
    traj::Runtime rt2(constant_predictor(1.0, 0.0));
    std::vector<traj::RawEvent> ev2 = {traj::make_gps(0.05, 12.0, -3.0),
                                       traj::make_can(0.1, 0.0)};
    const auto est = rt2.tick(0.1, ev2);
    CHECK(est.x == 12.0);
    CHECK(est.y == -3.0);
    CHECK(est.source == traj::EstimateSource::frozen_stop);
}

TEST_CASE("latency benchmark reports ordered per-stage percentiles", "[runtime]") {
    traj::ModelConfig cfg;
    cfg.encoder_hidden1 = 8;
    cfg.encoder_hidden2 = 16;
    cfg.lstm_hidden = 16;
    cfg.decoder_hidden = 8;
    const auto params = traj::init_params(cfg, 5);

    const auto report = traj::measure_latency(params, 40);
    CHECK(report.ticks == 40);
    for (const auto* s :
         {&report.regression, &report.network, &report.interpolation, &report.total}) {
        CHECK(s->p50_ms <= s->p95_ms);
        CHECK(s->p95_ms <= s->max_ms);
    }
    // Full-work ticks: every stage does real work, and the total dominates.
    CHECK(report.regression.p50_ms > 0.0);
    CHECK(report.network.p50_ms > 0.0);
    CHECK(report.interpolation.p50_ms > 0.0);
    CHECK(report.total.p50_ms >=
          std::max({report.regression.p50_ms, report.network.p50_ms,
                    report.interpolation.p50_ms}));

    CHECK_THROWS_AS(traj::measure_latency(params, 0), traj::InvalidInput);
}
