#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "traj/errors.hpp"
#include "traj/nn.hpp"

namespace traj {

inline constexpr std::array<char, 8> kCheckpointMagic = {'T', 'R', 'A', 'J',
                                                         'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

/// All multi-byte fields in a checkpoint are little-endian on disk.
template <class T>
void write_le(std::ostream& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes.begin(), bytes.end());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <class T>
T read_le(std::istream& in) {
    std::array<unsigned char, sizeof(T)> bytes{};
    if (!in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) {
        throw MalformedFileError("checkpoint: truncated file", 0);
    }
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes.begin(), bytes.end());
    }
    return std::bit_cast<T>(bytes);
}

inline nlohmann::json config_to_json(const ModelConfig& cfg) {
    return nlohmann::json{{"in_features", cfg.in_features},
                          {"seq_len", cfg.seq_len},
                          {"encoder_hidden1", cfg.encoder_hidden1},
                          {"encoder_hidden2", cfg.encoder_hidden2},
                          {"lstm_hidden", cfg.lstm_hidden},
                          {"lstm_layers", cfg.lstm_layers},
                          {"decoder_hidden", cfg.decoder_hidden},
                          {"leaky_slope", cfg.leaky_slope}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.in_features = j.at("in_features").get<int>();
    cfg.seq_len = j.at("seq_len").get<int>();
    cfg.encoder_hidden1 = j.at("encoder_hidden1").get<int>();
    cfg.encoder_hidden2 = j.at("encoder_hidden2").get<int>();
    cfg.lstm_hidden = j.at("lstm_hidden").get<int>();
    cfg.lstm_layers = j.at("lstm_layers").get<int>();
    cfg.decoder_hidden = j.at("decoder_hidden").get<int>();
    cfg.leaky_slope = j.at("leaky_slope").get<double>();
    return cfg;
}

} // namespace detail

/// Write model weights, config, and normalization statistics to a versioned
/// binary file. The layout is: 8-byte magic, u32 format version, u64 JSON
/// header length, the JSON header (config + stats + tensor manifest), then
/// each tensor's column-major doubles in declaration order.
inline void save_checkpoint(const std::string& path, const ModelParams& params) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FileError("checkpoint: cannot open for writing: " + path);

    nlohmann::json header;
    header["config"] = detail::config_to_json(params.config);
    header["stats"]["mean"] = std::vector<double>(
        params.stats.mean.data(), params.stats.mean.data() + params.stats.mean.size());
    header["stats"]["stddev"] = std::vector<double>(
        params.stats.stddev.data(), params.stats.stddev.data() + params.stats.stddev.size());
    nlohmann::json manifest = nlohmann::json::array();
    params.visit([&](const char* name, const auto& t) {
        manifest.push_back({{"name", name},
                            {"rows", static_cast<std::int64_t>(t.rows())},
                            {"cols", static_cast<std::int64_t>(t.cols())}});
    });
    header["tensors"] = manifest;
    const std::string header_text = header.dump();

    out.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
    detail::write_le(out, kCheckpointVersion);
    detail::write_le(out, static_cast<std::uint64_t>(header_text.size()));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    params.visit([&](const char*, const auto& t) {
        for (Eigen::Index i = 0; i < t.size(); ++i) detail::write_le(out, t.data()[i]);
    });
    if (!out) throw FileError("checkpoint: write failed: " + path);
}

/// Load a checkpoint previously written by save_checkpoint. The tensor
/// manifest must match the shapes implied by the stored config.
inline ModelParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileError("checkpoint: cannot open: " + path);

    std::array<char, 8> magic{};
    if (!in.read(magic.data(), static_cast<std::streamsize>(magic.size())) ||
        magic != kCheckpointMagic) {
        throw MalformedFileError("checkpoint: bad magic", 0);
    }
    const auto version = detail::read_le<std::uint32_t>(in);
    if (version != kCheckpointVersion) {
        throw VersionMismatchError("checkpoint: unsupported format version " +
                                   std::to_string(version));
    }
    const auto header_len = detail::read_le<std::uint64_t>(in);
    std::string header_text(header_len, '\0');
    if (!in.read(header_text.data(), static_cast<std::streamsize>(header_len))) {
        throw MalformedFileError("checkpoint: truncated header", 0);
    }

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_text);
    } catch (const nlohmann::json::exception& e) {
        throw MalformedFileError(std::string("checkpoint: invalid header: ") + e.what(), 0);
    }

    ModelParams params;
    try {
        params.config = detail::config_from_json(header.at("config"));
        params.config.validate();
        const auto mean = header.at("stats").at("mean").get<std::vector<double>>();
        const auto stddev = header.at("stats").at("stddev").get<std::vector<double>>();
        if (mean.size() != static_cast<std::size_t>(kFeatureCount) ||
            stddev.size() != static_cast<std::size_t>(kFeatureCount)) {
            throw MalformedFileError("checkpoint: bad stats length", 0);
        }
        params.stats.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), kFeatureCount);
        params.stats.stddev = Eigen::Map<const Eigen::VectorXd>(stddev.data(), kFeatureCount);
    } catch (const nlohmann::json::exception& e) {
        throw MalformedFileError(std::string("checkpoint: invalid header: ") + e.what(), 0);
    }

    // Size the tensors from the config, then verify against the manifest.
    ModelParams shaped = init_params(params.config, 0);
    shaped.stats = params.stats;
    const auto& manifest = header.at("tensors");
    std::size_t at = 0;
    bool ok = true;
    shaped.visit([&](const char* name, auto& t) {
        if (!ok) return;
        if (at >= manifest.size()) {
            ok = false;
            return;
        }
        const auto& entry = manifest[at++];
        if (entry.at("name").get<std::string>() != name ||
            entry.at("rows").get<std::int64_t>() != t.rows() ||
            entry.at("cols").get<std::int64_t>() != t.cols()) {
            ok = false;
            return;
        }
        for (Eigen::Index i = 0; i < t.size(); ++i) {
            t.data()[i] = detail::read_le<double>(in);
        }
    });
    if (!ok || at != manifest.size()) {
        throw MalformedFileError("checkpoint: tensor manifest does not match config", 0);
    }
    return shaped;
}

} // namespace traj
