#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "traj/errors.hpp"
#include "traj/kalman.hpp"
#include "traj/nn.hpp"
#include "traj/pipeline.hpp"
#include "traj/polyfit.hpp"
#include "traj/routefile.hpp"
#include "traj/runtime.hpp"
#include "traj/simgen.hpp"

namespace traj {

/// Route archetype a prediction window falls into, used for the per-type
/// error breakdown. stop_start covers stop and accelerate segments.
enum class RouteType { straight, turn, roundabout, stop_start };

inline const char* to_string(RouteType r) {
    switch (r) {
    case RouteType::turn: return "turn";
    case RouteType::roundabout: return "roundabout";
    case RouteType::stop_start: return "stop_start";
    default: return "straight";
    }
}

inline constexpr std::array<RouteType, 4> kRouteTypes = {
    RouteType::straight, RouteType::turn, RouteType::roundabout,
    RouteType::stop_start};

/// Nearest-neighbor lookup into a dense (1 ms) ground-truth trajectory.
class TruthIndex {
public:
    explicit TruthIndex(const std::vector<TruthPoint>& truth) : truth_(&truth) {
        if (truth.empty()) throw InvalidInput("evaluate: empty ground truth");
        for (std::size_t i = 1; i < truth.size(); ++i) {
            if (!(truth[i].t > truth[i - 1].t)) {
                throw InvalidInput("evaluate: ground truth must be time-sorted");
            }
        }
    }

    const TruthPoint& at(double t) const {
        const auto& truth = *truth_;
        auto it = std::lower_bound(
            truth.begin(), truth.end(), t,
            [](const TruthPoint& p, double v) { return p.t < v; });
        if (it == truth.end()) return truth.back();
        if (it == truth.begin()) return truth.front();
        const auto prev = std::prev(it);
        return (t - prev->t) <= (it->t - t) ? *prev : *it;
    }

private:
    const std::vector<TruthPoint>* truth_;
};

/// Time span of one route segment together with its archetype.
struct SegmentSpan {
    RouteType type = RouteType::straight;
    double t0 = 0.0;
    double t1 = 0.0;
};

inline std::vector<SegmentSpan> segment_spans(const RouteSpec& spec) {
    spec.validate();
    const auto phases = detail::compile_phases(spec);
    std::vector<SegmentSpan> spans;
    spans.reserve(spec.segments.size());
    for (std::size_t i = 0; i < spec.segments.size(); ++i) {
        SegmentSpan s;
        s.t0 = phases[i].t0;
        s.t1 = phases[i].t0 + phases[i].duration;
        std::visit(
            [&](const auto& seg) {
                using T = std::decay_t<decltype(seg)>;
                if constexpr (std::is_same_v<T, TurnSegment>) {
                    s.type = RouteType::turn;
                } else if constexpr (std::is_same_v<T, RoundaboutSegment>) {
                    s.type = RouteType::roundabout;
                } else if constexpr (std::is_same_v<T, StopSegment> ||
                                     std::is_same_v<T, AccelerateSegment>) {
                    s.type = RouteType::stop_start;
                } else {
                    s.type = RouteType::straight;
                }
            },
            spec.segments[i]);
        spans.push_back(s);
    }
    return spans;
}

/// Archetype of the window [t_lo, t_hi]: the most specific segment type it
/// overlaps, with precedence roundabout > turn > stop_start > straight.
inline RouteType classify_interval(const std::vector<SegmentSpan>& spans,
                                   double t_lo, double t_hi) {
    auto rank = [](RouteType t) {
        switch (t) {
        case RouteType::roundabout: return 3;
        case RouteType::turn: return 2;
        case RouteType::stop_start: return 1;
        default: return 0;
        }
    };
    RouteType best = RouteType::straight;
    for (const auto& s : spans) {
        if (s.t0 < t_hi && s.t1 > t_lo && rank(s.type) > rank(best)) best = s.type;
    }
    return best;
}

/// One window scored against ground truth: the network's 200 ms-ahead
/// position and the Kalman baseline's, both as absolute plane points.
struct SequenceScore {
    double t_eval = 0.0;
    RouteType type = RouteType::straight;
    PlanePoint truth;
    PlanePoint net;
    PlanePoint kalman;
    double net_error_m = 0.0;
    double kalman_error_m = 0.0;
    std::string route;
};

/// Score a single window at lead `horizon_s` past its last frame. At the
/// native 0.2 s lead the network's own predicted point is scored directly;
/// other leads are answered the way the live estimator would, by evaluating
/// the cubic through the window and the predicted point.
inline SequenceScore score_sequence(const ModelParams& params, const Sequence& seq,
                                    const TruthIndex& truth,
                                    const std::vector<SegmentSpan>& spans,
                                    double horizon_s = kGridStep,
                                    const KalmanConfig& kalman_cfg = {}) {
    seq.validate();
    if (!(horizon_s > 0.0)) throw InvalidInput("evaluate: horizon must be positive");

    const auto positions = sequence_positions(seq);
    const double t_last = seq.frames.back().t;

    SequenceScore score;
    score.t_eval = t_last + horizon_s;
    score.route = seq.route;
    score.type = classify_interval(spans, seq.t0, score.t_eval);

    const auto features = predict_future(params, seq.frames);
    const PlanePoint net_point{positions.back().x + features[0],
                               positions.back().y + features[1]};
    if (horizon_s == kGridStep) {
        score.net = net_point;
    } else {
        std::vector<double> times;
        std::vector<PlanePoint> pts;
        times.reserve(positions.size() + 1);
        pts.reserve(positions.size() + 1);
        for (std::size_t i = 0; i < positions.size(); ++i) {
            times.push_back(seq.frames[i].t);
            pts.push_back(positions[i]);
        }
        times.push_back(t_last + kGridStep);
        pts.push_back(net_point);
        const XyFit fit = fit_xy(times, pts);
        score.net = PlanePoint{fit.evaluate_x(score.t_eval), fit.evaluate_y(score.t_eval)};
    }

    const PlanePoint kd = kf_forecast_window(seq.frames, kalman_cfg, horizon_s);
    score.kalman = PlanePoint{positions.back().x + kd.x, positions.back().y + kd.y};

    const TruthPoint& gt = truth.at(score.t_eval);
    score.truth = PlanePoint{gt.x, gt.y};
    score.net_error_m = std::hypot(score.net.x - gt.x, score.net.y - gt.y);
    score.kalman_error_m = std::hypot(score.kalman.x - gt.x, score.kalman.y - gt.y);
    return score;
}

/// Preprocess one route exactly as the training pipeline does (warmup discard,
/// grid resampling, window extraction) and score every window.
inline std::vector<SequenceScore> score_route(const ModelParams& params,
                                              const RouteSpec& spec,
                                              const std::vector<RawEvent>& events,
                                              const std::vector<TruthPoint>& truth,
                                              const std::string& route_name,
                                              double horizon_s = kGridStep,
                                              const KalmanConfig& kalman_cfg = {}) {
    const TruthIndex index(truth);
    const auto spans = segment_spans(spec);
    const auto kept = discard_warmup(events);
    const auto grid = resample(kept);
    auto seqs = build_sequences(grid);
    std::vector<SequenceScore> scores;
    scores.reserve(seqs.size());
    for (auto& seq : seqs) {
        seq.route = route_name;
        scores.push_back(
            score_sequence(params, seq, index, spans, horizon_s, kalman_cfg));
    }
    return scores;
}

struct ErrorStats {
    int count = 0;
    double mean_cm = 0.0;
    double median_cm = 0.0;
    double p95_cm = 0.0;
};

inline ErrorStats error_stats(std::vector<double> errors_m) {
    ErrorStats s;
    s.count = static_cast<int>(errors_m.size());
    if (errors_m.empty()) return s;
    double sum = 0.0;
    for (double e : errors_m) sum += e;
    s.mean_cm = 100.0 * sum / static_cast<double>(errors_m.size());
    s.median_cm = 100.0 * detail::percentile(errors_m, 0.5);
    s.p95_cm = 100.0 * detail::percentile(errors_m, 0.95);
    return s;
}

/// Aggregated accuracy report: overall and per-route-type error statistics
/// for the network and the Kalman baseline, plus tick latency percentiles.
struct EvalReport {
    int sequences = 0;
    int routes = 0;
    double horizon_ms = 200.0;
    ErrorStats network;
    ErrorStats kalman;
    struct TypeEntry {
        RouteType type = RouteType::straight;
        ErrorStats network;
        ErrorStats kalman;
    };
    std::vector<TypeEntry> per_type; // only archetypes that occur, fixed order
    LatencyReport latency;
};

inline EvalReport aggregate_scores(const std::vector<SequenceScore>& scores,
                                   int routes, double horizon_ms,
                                   const LatencyReport& latency) {
    EvalReport r;
    r.sequences = static_cast<int>(scores.size());
    r.routes = routes;
    r.horizon_ms = horizon_ms;
    r.latency = latency;

    std::vector<double> net_all, kal_all;
    net_all.reserve(scores.size());
    kal_all.reserve(scores.size());
    for (const auto& s : scores) {
        net_all.push_back(s.net_error_m);
        kal_all.push_back(s.kalman_error_m);
    }
    r.network = error_stats(std::move(net_all));
    r.kalman = error_stats(std::move(kal_all));

    for (RouteType type : kRouteTypes) {
        std::vector<double> net, kal;
        for (const auto& s : scores) {
            if (s.type == type) {
                net.push_back(s.net_error_m);
                kal.push_back(s.kalman_error_m);
            }
        }
        if (net.empty()) continue;
        EvalReport::TypeEntry e;
        e.type = type;
        e.network = error_stats(std::move(net));
        e.kalman = error_stats(std::move(kal));
        r.per_type.push_back(e);
    }
    return r;
}

} // namespace traj
