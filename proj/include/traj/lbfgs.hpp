#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <utility>

namespace traj::lbfgs {

/// Options for the limited-memory BFGS minimizer.
struct Options {
    int memory = 10;                   // stored correction pairs
    int max_iters = 100;
    double grad_tol = 1e-8;            // stop when ||g||_2 <= grad_tol
    double sufficient_decrease = 1e-4; // Armijo constant
    double backtrack_factor = 0.5;     // step shrink per backtrack round
    int max_line_search = 60;
    // Absolute noise floor of one objective evaluation, if the caller can
    // bound it (e.g. eps * data magnitude for least squares). Used only to
    // recognise end-game steps whose true decrease is unresolvable.
    double fx_noise_abs = 0.0;
};

struct Result {
    Eigen::VectorXd x;     // best iterate seen
    double fx = 0.0;       // objective at x
    double grad_norm = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Minimize a smooth function with L-BFGS and a backtracking Armijo line
/// search. `fg` evaluates the objective at x and fills the gradient:
///   double fg(const Eigen::VectorXd& x, Eigen::VectorXd& grad)
/// The two-loop recursion uses the standard gamma = s.y / y.y scaling of the
/// initial inverse-Hessian approximation. Pairs with non-positive curvature
/// are skipped so the approximation stays positive definite.
template <class F>
Result minimize(F&& fg, Eigen::VectorXd x0, const Options& opt = {}) {
    const auto n = x0.size();
    Eigen::VectorXd x = std::move(x0);
    Eigen::VectorXd grad(n), grad_new(n), x_new(n), direction(n);

    double fx = fg(x, grad);

    Result best;
    best.x = x;
    best.fx = fx;
    best.grad_norm = grad.norm();

    std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> pairs; // (s, y)
    std::deque<double> rho;

    constexpr int kStallBudget = 5;
    int stall_budget = kStallBudget;
    int iter = 0;
    for (; iter < opt.max_iters; ++iter) {
        const double gnorm = grad.norm();
        if (gnorm < best.grad_norm) {
            best.x = x;
            best.fx = fx;
            best.grad_norm = gnorm;
        }
        if (gnorm <= opt.grad_tol) {
            best.converged = true;
            break;
        }

        // Two-loop recursion: direction = -H * grad.
        direction = -grad;
        Eigen::VectorXd alpha(static_cast<Eigen::Index>(pairs.size()));
        for (int i = static_cast<int>(pairs.size()) - 1; i >= 0; --i) {
            alpha[i] = rho[i] * pairs[i].first.dot(direction);
            direction -= alpha[i] * pairs[i].second;
        }
        if (!pairs.empty()) {
            const auto& [s, y] = pairs.back();
            direction *= s.dot(y) / y.dot(y);
        }
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const double beta = rho[i] * pairs[i].second.dot(direction);
            direction += (alpha[static_cast<Eigen::Index>(i)] - beta) * pairs[i].first;
        }

        double dir_deriv = grad.dot(direction);
        if (dir_deriv >= 0.0) {
            // Not a descent direction (stale curvature); fall back to steepest descent.
            direction = -grad;
            dir_deriv = -gnorm * gnorm;
        }

        // Backtracking Armijo search. Near the minimizer the true decrease
        // of the objective can drop below what double evaluation resolves;
        // Armijo then rejects productive quasi-Newton steps. When the
        // predicted decrease is already sub-representable, accept a bounded
        // number of steps that leave the objective unchanged to within
        // rounding and let the gradient test decide convergence.
        const double fx_noise =
            std::max(opt.fx_noise_abs,
                     32.0 * std::numeric_limits<double>::epsilon() * std::abs(fx));
        double step = 1.0;
        double fx_new = fx;
        bool accepted = false;
        bool certified = false;
        for (int ls = 0; ls < opt.max_line_search; ++ls) {
            x_new = x + step * direction;
            fx_new = fg(x_new, grad_new);
            if (fx_new <= fx + opt.sufficient_decrease * step * dir_deriv) {
                accepted = true;
                certified = true;
                break;
            }
            if (stall_budget > 0 &&
                std::abs(opt.sufficient_decrease * step * dir_deriv) <= fx_noise &&
                fx_new <= fx + fx_noise) {
                accepted = true;
                break;
            }
            step *= opt.backtrack_factor;
        }
        if (!accepted) {
            break; // no further progress representable
        }
        if (certified) {
            stall_budget = kStallBudget;
        } else {
            --stall_budget;
        }

        Eigen::VectorXd s = x_new - x;
        Eigen::VectorXd y = grad_new - grad;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            pairs.emplace_back(std::move(s), std::move(y));
            rho.push_back(1.0 / sy);
            if (static_cast<int>(pairs.size()) > opt.memory) {
                pairs.pop_front();
                rho.pop_front();
            }
        }

        x.swap(x_new);
        grad.swap(grad_new);
        fx = fx_new;
    }

    const double gnorm = grad.norm();
    if (gnorm < best.grad_norm) {
        best.x = x;
        best.fx = fx;
        best.grad_norm = gnorm;
    }
    if (best.grad_norm <= opt.grad_tol) {
        best.converged = true;
    }
    best.iterations = iter;
    return best;
}

} // namespace traj::lbfgs
