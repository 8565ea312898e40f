#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "traj/errors.hpp"
#include "traj/geodesy.hpp"
#include "traj/lbfgs.hpp"

namespace traj {

/// Coefficients of one cubic, position(t) = theta0 + theta1 t + theta2 t^2 + theta3 t^3.
struct PolyCoeffs {
    double theta0 = 0.0;
    double theta1 = 0.0;
    double theta2 = 0.0;
    double theta3 = 0.0;
};

/// Horner evaluation of the cubic at time t.
inline double evaluate(const PolyCoeffs& c, double t) {
    return c.theta0 + t * (c.theta1 + t * (c.theta2 + t * c.theta3));
}

/// A scalar series on rebased time: strictly increasing, first sample at t = 0.
struct TimedSeries {
    std::vector<double> times;
    std::vector<double> values;

    void validate() const {
        if (times.size() != values.size()) {
            throw InvalidInput("polyfit: times/values length mismatch");
        }
        if (times.size() < 4) {
            throw InvalidInput("polyfit: a cubic fit needs at least 4 samples");
        }
        if (times.front() != 0.0) {
            throw InvalidInput("polyfit: series must be rebased to start at t = 0");
        }
        for (std::size_t i = 0; i < times.size(); ++i) {
            if (!std::isfinite(times[i]) || !std::isfinite(values[i])) {
                throw InvalidInput("polyfit: non-finite sample");
            }
            if (i > 0 && !(times[i] > times[i - 1])) {
                throw InvalidInput("polyfit: times must be strictly increasing");
            }
        }
    }
};

/// L-BFGS hyperparameters for cubic fitting. Defaults are tuned for the
/// 4-variable convex objective used here and are deliberately strict.
struct LbfgsConfig {
    int memory = 10;
    int max_iters = 100;
    double grad_tol = 1e-8;
    double sufficient_decrease = 1e-4;
    double backtrack_factor = 0.5;

    void validate() const {
        if (memory < 1 || grad_tol <= 0.0 ||
            backtrack_factor <= 0.0 || backtrack_factor >= 1.0) {
            throw InvalidInput("polyfit: invalid L-BFGS configuration");
        }
    }
};

/// fit_lbfgs failed to reach grad_tol within max_iters. Carries the best
/// iterate so callers that can tolerate a looser fit may still use it.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, const PolyCoeffs& best_coeffs,
                     double grad_norm)
        : Error(what), best(best_coeffs), achieved_grad_norm(grad_norm) {}
    PolyCoeffs best;
    double achieved_grad_norm;
};

namespace detail {

inline Eigen::MatrixXd vandermonde(const std::vector<double>& times) {
    Eigen::MatrixXd v(static_cast<Eigen::Index>(times.size()), 4);
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
        const double t = times[static_cast<std::size_t>(i)];
        v(i, 0) = 1.0;
        v(i, 1) = t;
        v(i, 2) = t * t;
        v(i, 3) = t * t * t;
    }
    return v;
}

inline std::size_t distinct_count(const std::vector<double>& sorted_times) {
    std::size_t n = sorted_times.empty() ? 0 : 1;
    for (std::size_t i = 1; i < sorted_times.size(); ++i) {
        if (sorted_times[i] != sorted_times[i - 1]) ++n;
    }
    return n;
}

} // namespace detail

/// Mean squared residual of the cubic on the series. This is the objective
/// both fitting routes minimize; the mean (not sum) keeps grad_tol meaningful
/// across series lengths.
inline double objective(const PolyCoeffs& c, const TimedSeries& s) {
    double acc = 0.0;
    for (std::size_t i = 0; i < s.times.size(); ++i) {
        const double r = evaluate(c, s.times[i]) - s.values[i];
        acc += r * r;
    }
    return acc / static_cast<double>(s.times.size());
}

/// Exact least-squares minimizer via column-pivoted QR of the 4-column
/// Vandermonde matrix. Used as the independent oracle for fit_lbfgs.
inline PolyCoeffs fit_closed_form(const TimedSeries& series) {
    series.validate();
    if (detail::distinct_count(series.times) < 4) {
        throw RankDeficientError("polyfit: fewer than 4 distinct times");
    }
    const Eigen::MatrixXd v = detail::vandermonde(series.times);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(v);
    if (qr.rank() < 4) {
        throw RankDeficientError("polyfit: Vandermonde system numerically rank deficient");
    }
    const Eigen::VectorXd b =
        Eigen::Map<const Eigen::VectorXd>(series.values.data(),
                                          static_cast<Eigen::Index>(series.values.size()));
    const Eigen::Vector4d theta = qr.solve(b);
    return PolyCoeffs{theta[0], theta[1], theta[2], theta[3]};
}

/// Fit the cubic by minimizing the mean squared residual with L-BFGS.
/// The result matches the closed-form optimum to within the gradient
/// tolerance; throws ConvergenceError (carrying the best iterate) otherwise.
inline PolyCoeffs fit_lbfgs(const TimedSeries& series, const LbfgsConfig& cfg = {}) {
    series.validate();
    cfg.validate();
    if (detail::distinct_count(series.times) < 2) {
        throw InvalidInput("polyfit: degenerate series (all times identical)");
    }

    const auto n = static_cast<double>(series.times.size());
    auto fg = [&](const Eigen::VectorXd& theta, Eigen::VectorXd& grad) {
        grad.setZero();
        double acc = 0.0;
        for (std::size_t i = 0; i < series.times.size(); ++i) {
            const double t = series.times[i];
            const double t2 = t * t;
            const double r = theta[0] + theta[1] * t + theta[2] * t2 +
                             theta[3] * t2 * t - series.values[i];
            acc += r * r;
            const double w = 2.0 * r / n;
            grad[0] += w;
            grad[1] += w * t;
            grad[2] += w * t2;
            grad[3] += w * t2 * t;
        }
        return acc / n;
    };

    lbfgs::Options opt;
    opt.memory = cfg.memory;
    opt.max_iters = cfg.max_iters;
    opt.grad_tol = cfg.grad_tol;
    opt.sufficient_decrease = cfg.sufficient_decrease;
    opt.backtrack_factor = cfg.backtrack_factor;
    // One residual evaluation cancels terms of the data's magnitude, so the
    // objective carries rounding noise proportional to mean(value^2).
    double mean_sq = 0.0;
    for (double v : series.values) mean_sq += v * v;
    mean_sq /= n;
    opt.fx_noise_abs = 16.0 * std::numeric_limits<double>::epsilon() * mean_sq;

    const auto result = lbfgs::minimize(fg, Eigen::VectorXd::Zero(4), opt);
    const PolyCoeffs coeffs{result.x[0], result.x[1], result.x[2], result.x[3]};
    if (!result.converged) {
        throw ConvergenceError("polyfit: L-BFGS did not reach grad_tol within max_iters",
                               coeffs, result.grad_norm);
    }
    return coeffs;
}

/// One cubic per axis over a rebased time window. evaluate_* take absolute
/// times and apply the stored base internally.
struct XyFit {
    PolyCoeffs x;
    PolyCoeffs y;
    double t_base = 0.0;

    double evaluate_x(double t) const { return evaluate(x, t - t_base); }
    double evaluate_y(double t) const { return evaluate(y, t - t_base); }
};

/// Fit independent cubics to the x and y tracks of a planar trajectory.
/// Times may start anywhere; the window is rebased so the fit sees t = 0
/// first, and the base is returned for evaluation queries.
inline XyFit fit_xy(std::span<const double> times, std::span<const PlanePoint> points,
                    const LbfgsConfig& cfg = {}) {
    if (times.size() != points.size()) {
        throw InvalidInput("polyfit: times/points length mismatch");
    }
    if (times.size() < 4) {
        throw InvalidInput("polyfit: fit_xy needs at least 4 samples");
    }
    XyFit fit;
    fit.t_base = times.front();

    TimedSeries sx, sy;
    sx.times.reserve(times.size());
    sx.values.reserve(times.size());
    sy.values.reserve(times.size());
    for (std::size_t i = 0; i < times.size(); ++i) {
        sx.times.push_back(i == 0 ? 0.0 : times[i] - fit.t_base);
        sx.values.push_back(points[i].x);
        sy.values.push_back(points[i].y);
    }
    sy.times = sx.times;

    fit.x = fit_lbfgs(sx, cfg);
    fit.y = fit_lbfgs(sy, cfg);
    return fit;
}

} // namespace traj
