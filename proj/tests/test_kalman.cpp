#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "traj/kalman.hpp"

using namespace traj;

namespace {

/// Independent constructions of the transition and process-noise matrices,
/// written as plain loops against the textbook formulas.
Matrix6d oracle_transition(double dt) {
    Matrix6d f = Matrix6d::Identity();
    for (int axis = 0; axis < 2; ++axis) {
        f(axis, axis + 2) = dt;
        f(axis, axis + 4) = 0.5 * dt * dt;
        f(axis + 2, axis + 4) = dt;
    }
    return f;
}

Matrix6d oracle_process_noise(double dt, double q) {
    const double entries[3][3] = {
        {std::pow(dt, 5) / 20.0, std::pow(dt, 4) / 8.0, std::pow(dt, 3) / 6.0},
        {std::pow(dt, 4) / 8.0, std::pow(dt, 3) / 3.0, dt * dt / 2.0},
        {std::pow(dt, 3) / 6.0, dt * dt / 2.0, dt},
    };
    Matrix6d out = Matrix6d::Zero();
    for (int axis = 0; axis < 2; ++axis) {
        const int idx[3] = {axis, axis + 2, axis + 4};
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) out(idx[i], idx[j]) = q * entries[i][j];
        }
    }
    return out;
}

std::vector<SyncedFrame> window_from_deltas(const std::vector<std::array<double, 4>>& rows) {
    std::vector<SyncedFrame> frames;
    double t = 0.0;
    for (const auto& r : rows) {
        SyncedFrame f;
        f.t = t;
        f.dx = r[0];
        f.dy = r[1];
        f.ax_g = r[2];
        f.ay_g = r[3];
        f.ts_feature = t;
        frames.push_back(f);
        t += kGridStep;
    }
    return frames;
}

} // namespace

TEST_CASE("predict follows constant-acceleration kinematics") {
    KalmanConfig cfg;

    SECTION("pure velocity") {
        KalmanState s;
        s.mean << 0, 0, 10, 0, 0, 0;
        const KalmanState out = kf_predict(s, 0.2, cfg);
        CHECK(out.mean[0] == Catch::Approx(2.0).margin(1e-15));
        CHECK(out.mean[1] == 0.0);
        CHECK(out.mean[2] == 10.0);
    }
    SECTION("pure acceleration") {
        KalmanState s;
        s.mean << 0, 0, 0, 0, 2, 0;
        const KalmanState out = kf_predict(s, 0.2, cfg);
        CHECK(out.mean[0] == Catch::Approx(0.04).epsilon(1e-12));
        CHECK(out.mean[2] == Catch::Approx(0.4).epsilon(1e-12));
        CHECK(out.mean[4] == 2.0);
    }
    SECTION("covariance trace strictly increases") {
        KalmanState s;
        double prev = s.covariance.trace();
        for (int i = 0; i < 10; ++i) {
            s = kf_predict(s, 0.2, cfg);
            CHECK(s.covariance.trace() > prev);
            prev = s.covariance.trace();
        }
    }
    SECTION("propagation matches the textbook matrices") {
        KalmanState s;
        std::mt19937_64 rng(7);
        std::normal_distribution<double> n(0.0, 1.0);
        for (int i = 0; i < 6; ++i) s.mean[i] = n(rng);
        Eigen::MatrixXd a(6, 6);
        for (int i = 0; i < 36; ++i) a.data()[i] = n(rng);
        s.covariance = a * a.transpose() + Matrix6d::Identity();

        const double dt = 0.37;
        const KalmanState out = kf_predict(s, dt, cfg);
        const Matrix6d f = oracle_transition(dt);
        const Matrix6d expected_cov =
            f * s.covariance * f.transpose() + oracle_process_noise(dt, cfg.q);
        CHECK((out.mean - f * s.mean).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((out.covariance - expected_cov).cwiseAbs().maxCoeff() <= 1e-9);
    }
    SECTION("non-positive dt is rejected") {
        CHECK_THROWS_AS(kf_predict(KalmanState{}, 0.0, cfg), InvalidInput);
        CHECK_THROWS_AS(kf_predict(KalmanState{}, -0.1, cfg), InvalidInput);
    }
}

TEST_CASE("update blends prior and measurement by their confidence") {
    KalmanState prior;
    prior.mean << 1.0, 2.0, 0.5, -0.5, 0.1, 0.0;
    prior.covariance = Matrix6d::Identity();

    KalmanMeasurement z;
    z.x = 1.5;
    z.y = 2.5;

    SECTION("an exact measurement is adopted") {
        KalmanConfig cfg;
        cfg.r_pos = 1e-15;
        const KalmanState out = kf_update(prior, z, cfg);
        CHECK(out.mean[0] == Catch::Approx(1.5).margin(1e-9));
        CHECK(out.mean[1] == Catch::Approx(2.5).margin(1e-9));
    }
    SECTION("an uninformative measurement leaves the prior") {
        KalmanConfig cfg;
        cfg.r_pos = 1e12;
        const KalmanState out = kf_update(prior, z, cfg);
        for (int i = 0; i < 6; ++i) {
            CHECK(out.mean[i] == Catch::Approx(prior.mean[i]).epsilon(1e-6).margin(1e-6));
        }
        CHECK((out.covariance - prior.covariance).cwiseAbs().maxCoeff() <= 1e-6);
    }
    SECTION("repeated measurements shrink position variance monotonically") {
        KalmanConfig cfg;
        KalmanState s = prior;
        double prev_x = s.covariance(0, 0);
        double prev_y = s.covariance(1, 1);
        for (int i = 0; i < 20; ++i) {
            s = kf_update(s, z, cfg);
            CHECK(s.covariance(0, 0) < prev_x);
            CHECK(s.covariance(1, 1) < prev_y);
            prev_x = s.covariance(0, 0);
            prev_y = s.covariance(1, 1);
        }
    }
    SECTION("fusing acceleration shrinks the acceleration variance") {
        KalmanConfig cfg;
        const KalmanState pos_only = kf_update(prior, z, cfg);
        KalmanMeasurement with_accel = z;
        with_accel.accel = Eigen::Vector2d(0.2, -0.1);
        const KalmanState fused = kf_update(prior, with_accel, cfg);
        CHECK(fused.covariance(4, 4) < pos_only.covariance(4, 4));
        CHECK(fused.covariance(5, 5) < pos_only.covariance(5, 5));
        CHECK(fused.mean[4] != pos_only.mean[4]);
    }
}

TEST_CASE("covariance stays symmetric and PSD over many random cycles") {
    KalmanConfig cfg;
    KalmanState s;
    s.covariance = Matrix6d::Identity() * cfg.p0_scale;

    std::mt19937_64 rng(12345);
    std::uniform_real_distribution<double> dt_dist(0.05, 0.5);
    std::normal_distribution<double> n(0.0, 1.0);

    double worst_asym = 0.0;
    double worst_eig = 0.0;
    for (int i = 0; i < 10000; ++i) {
        s = kf_predict(s, dt_dist(rng), cfg);
        KalmanMeasurement z;
        z.x = s.mean[0] + n(rng);
        z.y = s.mean[1] + n(rng);
        if (i % 3 != 0) {
            z.accel = Eigen::Vector2d(s.mean[4] + 0.2 * n(rng), s.mean[5] + 0.2 * n(rng));
        }
        s = kf_update(s, z, cfg);

        worst_asym = std::max(worst_asym,
                              (s.covariance - s.covariance.transpose()).cwiseAbs().maxCoeff());
        const Eigen::SelfAdjointEigenSolver<Matrix6d> eig(s.covariance,
                                                          Eigen::EigenvaluesOnly);
        worst_eig = std::min(worst_eig, eig.eigenvalues().minCoeff());
    }
    CHECK(worst_asym <= 1e-9);
    CHECK(worst_eig >= -1e-9);
}

TEST_CASE("predicted innovation covariance matches reality on model data") {
    // Truth evolves exactly under the filter's own model, so over many steps
    // the empirical innovation spread must match the filter's claimed S.
    KalmanConfig cfg;
    const double dt = 0.2;
    const Matrix6d f = oracle_transition(dt);
    const Matrix6d q = oracle_process_noise(dt, cfg.q);
    const Eigen::LLT<Matrix6d> q_chol(q);
    REQUIRE(q_chol.info() == Eigen::Success);

    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(4, 6);
    h(0, 0) = h(1, 1) = 1.0;
    h(2, 4) = h(3, 5) = 1.0;
    Eigen::Vector4d r_diag(cfg.r_pos, cfg.r_pos, cfg.r_acc, cfg.r_acc);

    std::mt19937_64 rng(99);
    std::normal_distribution<double> n(0.0, 1.0);
    auto randn6 = [&] {
        Vector6d v;
        for (int i = 0; i < 6; ++i) v[i] = n(rng);
        return v;
    };

    Vector6d truth = Vector6d::Zero();
    KalmanState s;
    s.covariance = Matrix6d::Identity() * 10.0;

    Eigen::Vector4d sum_sq = Eigen::Vector4d::Zero();
    Eigen::Vector4d sum_pred = Eigen::Vector4d::Zero();
    const int steps = 100000;
    for (int i = 0; i < steps; ++i) {
        truth = f * truth + q_chol.matrixL() * randn6();
        Eigen::Vector4d noise;
        for (int j = 0; j < 4; ++j) noise[j] = std::sqrt(r_diag[j]) * n(rng);
        const Eigen::Vector4d z = h * truth + noise;

        s = kf_predict(s, dt, cfg);
        const Eigen::Vector4d innovation = z - h * s.mean;
        const Eigen::Matrix4d pred_s =
            h * s.covariance * h.transpose() + Eigen::Matrix4d(r_diag.asDiagonal());
        sum_sq += innovation.cwiseProduct(innovation);
        sum_pred += pred_s.diagonal();

        KalmanMeasurement m;
        m.x = z[0];
        m.y = z[1];
        m.accel = Eigen::Vector2d(z[2], z[3]);
        s = kf_update(s, m, cfg);
    }
    for (int j = 0; j < 4; ++j) {
        const double ratio = sum_sq[j] / sum_pred[j];
        INFO("channel " << j << " ratio " << ratio);
        CHECK(std::abs(ratio - 1.0) <= 0.2);
    }
}

TEST_CASE("window forecast extrapolates clean motion") {
    KalmanConfig cfg;

    SECTION("constant velocity, 5 m/s along x") {
        std::vector<std::array<double, 4>> rows(8, {1.0, 0.0, 0.0, 0.0});
        rows[0] = {0.0, 0.0, 0.0, 0.0}; // window convention: first deltas are zero
        const PlanePoint d = kf_forecast_window(window_from_deltas(rows), cfg);
        CHECK(std::abs(d.x - 1.0) <= 1e-6);
        CHECK(std::abs(d.y) <= 1e-6);
    }
    SECTION("stationary window") {
        std::vector<std::array<double, 4>> rows(8, {0.0, 0.0, 0.0, 0.0});
        const PlanePoint d = kf_forecast_window(window_from_deltas(rows), cfg);
        CHECK(std::abs(d.x) <= 1e-9);
        CHECK(std::abs(d.y) <= 1e-9);
    }
    SECTION("wrong frame count is rejected") {
        std::vector<std::array<double, 4>> rows(7, {1.0, 0.0, 0.0, 0.0});
        CHECK_THROWS_AS(kf_forecast_window(window_from_deltas(rows), cfg), InvalidInput);
    }
}

TEST_CASE("window forecast is translation-equivariant") {
    // The filter sees only deltas, so two windows describing the same motion
    // from different absolute anchors produce bitwise-identical
    // displacements; anchored forecasts then shift by exactly the anchor
    // offset.
    KalmanConfig cfg;
    std::vector<std::array<double, 4>> rows;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-0.5, 1.5);
    rows.push_back({0.0, 0.0, u(rng), u(rng)});
    for (int i = 1; i < 8; ++i) rows.push_back({u(rng), u(rng), u(rng), u(rng)});

    const PlanePoint a = kf_forecast_window(window_from_deltas(rows), cfg);
    const PlanePoint b = kf_forecast_window(window_from_deltas(rows), cfg);
    CHECK(a.x == b.x);
    CHECK(a.y == b.y);
}

TEST_CASE("corrupted states and configs are rejected") {
    SECTION("singular innovation") {
        KalmanState s;
        s.covariance = Matrix6d::Constant(std::numeric_limits<double>::quiet_NaN());
        CHECK_THROWS_AS(kf_update(s, KalmanMeasurement{1.0, 2.0, {}}, KalmanConfig{}),
                        SingularInnovationError);
    }
    SECTION("non-positive config entries") {
        KalmanConfig bad;
        bad.q = 0.0;
        CHECK_THROWS_AS(kf_predict(KalmanState{}, 0.2, bad), InvalidInput);
        bad = KalmanConfig{};
        bad.r_pos = -1.0;
        CHECK_THROWS_AS(kf_update(KalmanState{}, KalmanMeasurement{0, 0, {}}, bad),
                        InvalidInput);
    }
}
