#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "traj/errors.hpp"
#include "traj/pipeline.hpp"

namespace traj {

namespace detail {

inline nlohmann::json frame_features_json(const SyncedFrame& f) {
    const auto a = f.features();
    return nlohmann::json(a);
}

inline SyncedFrame frame_from_features(const nlohmann::json& j, double t) {
    if (!j.is_array() || j.size() != kFeatureCount) {
        throw InvalidInput("dataset: frame must hold exactly 6 features");
    }
    SyncedFrame f;
    f.t = t;
    f.dx = j.at(0).get<double>();
    f.dy = j.at(1).get<double>();
    f.ax_g = j.at(2).get<double>();
    f.ay_g = j.at(3).get<double>();
    f.yaw = j.at(4).get<double>();
    f.ts_feature = j.at(5).get<double>();
    return f;
}

} // namespace detail

/// Write sequences as JSON Lines: one object per sequence with the 8 input
/// frames, the target frame, the straight/turn label and enough bookkeeping
/// (route, t0, anchor) to reconstruct absolute positions.
inline void write_sequences(const std::string& path, const std::vector<Sequence>& seqs) {
    std::ofstream out(path);
    if (!out) throw FileError("dataset: cannot open for writing: " + path);
    for (const auto& s : seqs) {
        s.validate();
        nlohmann::json frames = nlohmann::json::array();
        for (const auto& f : s.frames) frames.push_back(detail::frame_features_json(f));
        nlohmann::json j{{"route", s.route},
                         {"label", to_string(s.label)},
                         {"t0", s.t0},
                         {"anchor", {s.anchor.x, s.anchor.y}},
                         {"frames", std::move(frames)},
                         {"target", detail::frame_features_json(s.target)}};
        out << j.dump() << '\n';
    }
    if (!out) throw FileError("dataset: write failed: " + path);
}

inline std::vector<Sequence> read_sequences(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileError("dataset: cannot open: " + path);
    std::vector<Sequence> seqs;
    std::string line;
    long line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw MalformedFileError("dataset: invalid JSON", line_number);
        }
        try {
            Sequence s;
            s.route = j.at("route").get<std::string>();
            const std::string label = j.at("label").get<std::string>();
            if (label != "straight" && label != "turn") {
                throw MalformedFileError("dataset: unknown label '" + label + "'",
                                         line_number);
            }
            s.label = label == "turn" ? SeqLabel::turn : SeqLabel::straight;
            s.t0 = j.at("t0").get<double>();
            s.anchor = PlanePoint{j.at("anchor").at(0).get<double>(),
                                  j.at("anchor").at(1).get<double>()};
            const auto& frames = j.at("frames");
            if (!frames.is_array() || frames.size() != static_cast<std::size_t>(kWindowFrames)) {
                throw MalformedFileError("dataset: sequence must hold 8 frames",
                                         line_number);
            }
            for (std::size_t i = 0; i < frames.size(); ++i) {
                s.frames.push_back(detail::frame_from_features(
                    frames.at(i), s.t0 + kGridStep * static_cast<double>(i)));
            }
            s.target = detail::frame_from_features(
                j.at("target"), s.t0 + kGridStep * static_cast<double>(kWindowFrames));
            seqs.push_back(std::move(s));
        } catch (const nlohmann::json::exception&) {
            throw MalformedFileError("dataset: malformed sequence record", line_number);
        } catch (const InvalidInput& e) {
            throw MalformedFileError(e.what(), line_number);
        }
    }
    return seqs;
}

} // namespace traj
