#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <vector>

#include "traj/errors.hpp"
#include "traj/pipeline.hpp"

namespace traj {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;

/// Constant-acceleration filter over [x, y, vx, vy, ax, ay].
struct KalmanState {
    Vector6d mean = Vector6d::Zero();
    Matrix6d covariance = Matrix6d::Identity();
};

struct KalmanConfig {
    double q = 0.5;        // white-noise jerk spectral density
    double r_pos = 0.01;   // position measurement variance, m^2
    double r_acc = 0.04;   // acceleration measurement variance, (m/s^2)^2
    double p0_scale = 1e6; // initial covariance scale

    void validate() const {
        if (!(q > 0.0) || !(r_pos > 0.0) || !(r_acc > 0.0) || !(p0_scale > 0.0)) {
            throw InvalidInput("kalman: config entries must be positive");
        }
    }
};

/// Position fix with optionally fused acceleration.
struct KalmanMeasurement {
    double x = 0.0;
    double y = 0.0;
    std::optional<Eigen::Vector2d> accel;
};

namespace detail {

inline Matrix6d transition(double dt) {
    Matrix6d f = Matrix6d::Identity();
    f(0, 2) = dt;
    f(1, 3) = dt;
    f(0, 4) = 0.5 * dt * dt;
    f(1, 5) = 0.5 * dt * dt;
    f(2, 4) = dt;
    f(3, 5) = dt;
    return f;
}

/// White-noise-jerk process covariance; the per-axis (pos, vel, acc) block
/// is q * [[dt^5/20, dt^4/8, dt^3/6], [dt^4/8, dt^3/3, dt^2/2],
/// [dt^3/6, dt^2/2, dt]].
inline Matrix6d process_noise(double dt, double q) {
    const double d2 = dt * dt;
    const double d3 = d2 * dt;
    const double d4 = d3 * dt;
    const double d5 = d4 * dt;
    Eigen::Matrix3d block;
    block << d5 / 20.0, d4 / 8.0, d3 / 6.0, //
        d4 / 8.0, d3 / 3.0, d2 / 2.0,       //
        d3 / 6.0, d2 / 2.0, dt;
    block *= q;

    Matrix6d out = Matrix6d::Zero();
    for (int axis = 0; axis < 2; ++axis) {
        const int idx[3] = {axis, 2 + axis, 4 + axis};
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) out(idx[i], idx[j]) = block(i, j);
        }
    }
    return out;
}

} // namespace detail

/// Propagate the state dt seconds forward under constant acceleration.
inline KalmanState kf_predict(const KalmanState& state, double dt, const KalmanConfig& cfg) {
    cfg.validate();
    if (!(dt > 0.0)) throw InvalidInput("kalman: dt must be positive");
    const Matrix6d f = detail::transition(dt);
    KalmanState out;
    out.mean = f * state.mean;
    out.covariance = f * state.covariance * f.transpose() + detail::process_noise(dt, cfg.q);
    out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
    return out;
}

/// Innovation update in Joseph form (keeps the covariance symmetric PSD
/// even with a large dynamic range between prior and measurement noise).
inline KalmanState kf_update(const KalmanState& state, const KalmanMeasurement& z,
                             const KalmanConfig& cfg) {
    cfg.validate();
    const int rows = z.accel.has_value() ? 4 : 2;
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(rows, 6);
    h(0, 0) = 1.0;
    h(1, 1) = 1.0;
    Eigen::VectorXd meas(rows);
    meas[0] = z.x;
    meas[1] = z.y;
    Eigen::VectorXd r_diag(rows);
    r_diag[0] = cfg.r_pos;
    r_diag[1] = cfg.r_pos;
    if (z.accel.has_value()) {
        h(2, 4) = 1.0;
        h(3, 5) = 1.0;
        meas[2] = (*z.accel)[0];
        meas[3] = (*z.accel)[1];
        r_diag[2] = cfg.r_acc;
        r_diag[3] = cfg.r_acc;
    }
    const Eigen::MatrixXd r = r_diag.asDiagonal();

    const Eigen::VectorXd innovation = meas - h * state.mean;
    const Eigen::MatrixXd s = h * state.covariance * h.transpose() + r;
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(s);
    if (!lu.isInvertible()) {
        throw SingularInnovationError("kalman: innovation covariance is singular");
    }
    const Eigen::MatrixXd s_inv = lu.inverse();
    if (!s_inv.allFinite()) {
        throw SingularInnovationError("kalman: innovation covariance is singular");
    }
    const Eigen::MatrixXd gain = state.covariance * h.transpose() * s_inv;

    KalmanState out;
    out.mean = state.mean + gain * innovation;
    const Matrix6d ikh = Matrix6d::Identity() - gain * h;
    out.covariance =
        ikh * state.covariance * ikh.transpose() + gain * r * gain.transpose();
    out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
    return out;
}

/// Baseline forecast over one 8-frame window: positions are rebuilt from the
/// window's deltas (starting at the origin, so the result is exactly
/// translation-equivariant), the filter consumes every frame's position and
/// global-frame acceleration, and one final 0.2 s predict step yields the
/// displacement of the forecast point from the last frame.
inline PlanePoint kf_forecast_window(const std::vector<SyncedFrame>& frames,
                                     const KalmanConfig& cfg,
                                     double lead_s = kGridStep) {
    cfg.validate();
    if (frames.size() != static_cast<std::size_t>(kWindowFrames)) {
        throw InvalidInput("kalman: forecast needs exactly 8 frames");
    }
    if (!(lead_s > 0.0)) throw InvalidInput("kalman: lead must be positive");

    std::vector<PlanePoint> pos;
    pos.reserve(frames.size());
    double x = 0.0, y = 0.0;
    for (const auto& f : frames) {
        x += f.dx;
        y += f.dy;
        pos.push_back(PlanePoint{x, y});
    }

    KalmanState state;
    state.covariance = Matrix6d::Identity() * cfg.p0_scale;

    auto measurement = [&](std::size_t i) {
        KalmanMeasurement z;
        z.x = pos[i].x;
        z.y = pos[i].y;
        z.accel = Eigen::Vector2d(frames[i].ax_g, frames[i].ay_g);
        return z;
    };

    state = kf_update(state, measurement(0), cfg);
    for (std::size_t i = 1; i < frames.size(); ++i) {
        state = kf_predict(state, kGridStep, cfg);
        state = kf_update(state, measurement(i), cfg);
    }
    state = kf_predict(state, lead_s, cfg);

    return PlanePoint{state.mean[0] - pos.back().x, state.mean[1] - pos.back().y};
}

} // namespace traj
