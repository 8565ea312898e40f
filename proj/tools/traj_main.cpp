// Command-line entry point: simulate -> preprocess -> train -> evaluate /
// stream / bench. Reports are JSON (or flat CSV), traces are CSV; every
// source of randomness is pinned by --seed so reruns are byte-identical.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "traj/checkpoint.hpp"
#include "traj/dataset.hpp"
#include "traj/evaluate.hpp"
#include "traj/stream.hpp"
#include "traj/train.hpp"

namespace {

using nlohmann::json;

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw traj::FileError("cli: cannot open: " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) {
        throw traj::MalformedFileError("cli: invalid JSON in " + path, 0);
    }
    return j;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw traj::FileError("cli: cannot open for writing: " + path);
    out << text;
    if (!out) throw traj::FileError("cli: write failed: " + path);
}

std::string route_name_of(const std::string& path) {
    const auto slash = path.find_last_of("/\\");
    std::string name = slash == std::string::npos ? path : path.substr(slash + 1);
    const auto dot = name.find_last_of('.');
    if (dot != std::string::npos && dot > 0) name = name.substr(0, dot);
    return name;
}

// Numbers are serialized via nlohmann::json (shortest round-trip form) so
// identical inputs produce byte-identical reports.
json stats_json(const traj::ErrorStats& s) {
    return {{"count", s.count},
            {"mean_cm", s.mean_cm},
            {"median_cm", s.median_cm},
            {"p95_cm", s.p95_cm}};
}

json latency_json(const traj::LatencyReport& r) {
    auto one = [](const traj::LatencyStats& s) {
        return json{{"p50_ms", s.p50_ms}, {"p95_ms", s.p95_ms}, {"max_ms", s.max_ms}};
    };
    return {{"ticks", r.ticks},
            {"regression", one(r.regression)},
            {"network", one(r.network)},
            {"interpolation", one(r.interpolation)},
            {"total", one(r.total)}};
}

json report_json(const traj::EvalReport& r, const json& config_echo) {
    json per_type = json::object();
    for (const auto& e : r.per_type) {
        per_type[traj::to_string(e.type)] = {{"network", stats_json(e.network)},
                                             {"kalman", stats_json(e.kalman)}};
    }
    return {{"sequences", r.sequences},
            {"routes", r.routes},
            {"horizon_ms", r.horizon_ms},
            {"network", stats_json(r.network)},
            {"kalman", stats_json(r.kalman)},
            {"per_type", per_type},
            {"latency", latency_json(r.latency)},
            {"config", config_echo}};
}

// Flatten a JSON tree into "dotted.path,value" CSV rows (sorted by key, the
// object order nlohmann already maintains).
void flatten_csv(const json& j, const std::string& prefix, std::string& out) {
    if (j.is_object()) {
        for (const auto& [key, value] : j.items()) {
            flatten_csv(value, prefix.empty() ? key : prefix + "." + key, out);
        }
    } else if (j.is_array()) {
        for (std::size_t i = 0; i < j.size(); ++i) {
            flatten_csv(j[i], prefix + "." + std::to_string(i), out);
        }
    } else {
        out += prefix;
        out += ',';
        out += j.dump();
        out += '\n';
    }
}

std::string render_report(const json& j, const std::string& format) {
    if (format == "csv") {
        std::string out = "key,value\n";
        flatten_csv(j, "", out);
        return out;
    }
    return j.dump(2) + "\n";
}

traj::ModelConfig model_config_from_json(const json& j) {
    traj::ModelConfig cfg;
    if (j.contains("encoder_hidden1")) cfg.encoder_hidden1 = j.at("encoder_hidden1").get<int>();
    if (j.contains("encoder_hidden2")) cfg.encoder_hidden2 = j.at("encoder_hidden2").get<int>();
    if (j.contains("lstm_hidden")) cfg.lstm_hidden = j.at("lstm_hidden").get<int>();
    if (j.contains("lstm_layers")) cfg.lstm_layers = j.at("lstm_layers").get<int>();
    if (j.contains("decoder_hidden")) cfg.decoder_hidden = j.at("decoder_hidden").get<int>();
    return cfg;
}

traj::TrainConfig train_config_from_json(const json& j) {
    traj::TrainConfig cfg;
    if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<int>();
    if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int>();
    if (j.contains("learning_rate")) cfg.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("scheduler_factor")) cfg.scheduler_factor = j.at("scheduler_factor").get<double>();
    if (j.contains("scheduler_patience")) cfg.scheduler_patience = j.at("scheduler_patience").get<int>();
    if (j.contains("min_learning_rate")) cfg.min_learning_rate = j.at("min_learning_rate").get<double>();
    if (j.contains("val_fraction")) cfg.val_fraction = j.at("val_fraction").get<double>();
    return cfg;
}

// User spec files may omit sensor settings; route-file headers are strict.
traj::RouteSpec spec_from_user_json(const json& j, std::uint64_t seed) {
    json full = j;
    if (!full.contains("sensors")) full["sensors"] = json::object();
    const json defaults = traj::detail::spec_to_json(traj::RouteSpec{}).at("sensors");
    for (const auto& [key, value] : defaults.items()) {
        if (!full["sensors"].contains(key)) full["sensors"][key] = value;
    }
    return traj::detail::spec_from_json(full, seed);
}

int cmd_simulate(const std::string& spec_path, const std::string& out_path,
                 std::uint64_t seed) {
    const json j = read_json_file(spec_path);
    traj::RouteSpec spec = spec_from_user_json(j, seed);
    const traj::GeneratedRoute route = traj::generate(spec);
    traj::write_route(out_path, spec, route.events);
    traj::write_truth(traj::truth_path_for(out_path), route.truth);
    std::cout << json{{"route", out_path},
                      {"truth", traj::truth_path_for(out_path)},
                      {"events", route.events.size()},
                      {"duration_s", route.duration}}
                     .dump()
              << '\n';
    return 0;
}

int cmd_preprocess(const std::vector<std::string>& route_paths,
                   const std::string& out_path, bool balance_turns) {
    std::vector<traj::Sequence> all;
    for (const auto& path : route_paths) {
        const traj::RouteFile rf = traj::read_route(path);
        const auto kept = traj::discard_warmup(rf.events);
        const auto grid = traj::resample(kept);
        auto seqs = traj::build_sequences(grid);
        const std::string name = route_name_of(path);
        for (auto& s : seqs) s.route = name;
        all.insert(all.end(), seqs.begin(), seqs.end());
    }
    if (balance_turns) all = traj::balance(std::move(all));
    traj::write_sequences(out_path, all);
    std::cout << json{{"dataset", out_path},
                      {"sequences", all.size()},
                      {"routes", route_paths.size()}}
                     .dump()
              << '\n';
    return 0;
}

int cmd_train(const std::string& dataset_path, const std::string& config_path,
              const std::string& out_path, std::uint64_t seed) {
    traj::ModelConfig model_cfg;
    traj::TrainConfig train_cfg;
    if (!config_path.empty()) {
        const json j = read_json_file(config_path);
        if (j.contains("model")) model_cfg = model_config_from_json(j.at("model"));
        if (j.contains("train")) train_cfg = train_config_from_json(j.at("train"));
    }
    const auto dataset = traj::read_sequences(dataset_path);
    const traj::TrainResult result = traj::train(dataset, model_cfg, train_cfg, seed);
    traj::save_checkpoint(out_path, result.params);

    std::string csv = "epoch,train_loss,val_loss,learning_rate\n";
    for (const auto& e : result.history) {
        csv += std::to_string(e.epoch) + ',' + json(e.train_loss).dump() + ',' +
               json(e.val_loss).dump() + ',' + json(e.learning_rate).dump() + '\n';
    }
    const std::string history_path = out_path + ".history.csv";
    write_text_file(history_path, csv);

    json summary{{"checkpoint", out_path},
                 {"history", history_path},
                 {"epochs", result.history.size()},
                 {"sequences", dataset.size()}};
    if (!result.history.empty()) {
        summary["final_train_loss"] = result.history.back().train_loss;
        summary["final_val_loss"] = result.history.back().val_loss;
    }
    std::cout << summary.dump() << '\n';
    return 0;
}

int cmd_evaluate(const std::string& ckpt_path,
                 const std::vector<std::string>& route_paths,
                 const std::string& report_path, const std::string& trace_path,
                 double horizon_ms, const std::string& format, int bench_ticks) {
    const traj::ModelParams params = traj::load_checkpoint(ckpt_path);
    const double horizon_s = horizon_ms / 1000.0;

    std::vector<traj::SequenceScore> scores;
    for (const auto& path : route_paths) {
        const traj::RouteFile rf = traj::read_route(path);
        const auto truth = traj::read_truth(traj::truth_path_for(path));
        const auto route_scores =
            traj::score_route(params, rf.spec, rf.events, truth,
                              route_name_of(path), horizon_s);
        scores.insert(scores.end(), route_scores.begin(), route_scores.end());
    }

    const traj::LatencyReport latency = traj::measure_latency(params, bench_ticks);
    const traj::EvalReport report = traj::aggregate_scores(
        scores, static_cast<int>(route_paths.size()), horizon_ms, latency);

    json config_echo{{"checkpoint", ckpt_path},
                     {"routes", route_paths},
                     {"horizon_ms", horizon_ms},
                     {"bench_ticks", bench_ticks}};
    const json j = report_json(report, config_echo);
    const std::string rendered = render_report(j, format);
    if (report_path.empty()) {
        std::cout << rendered;
    } else {
        write_text_file(report_path, rendered);
        std::cout << json{{"report", report_path}, {"sequences", report.sequences}}.dump()
                  << '\n';
    }

    if (!trace_path.empty()) {
        std::string csv = "t,truth_x,truth_y,est_x,est_y,kalman_x,kalman_y\n";
        for (const auto& s : scores) {
            csv += json(s.t_eval).dump() + ',' + json(s.truth.x).dump() + ',' +
                   json(s.truth.y).dump() + ',' + json(s.net.x).dump() + ',' +
                   json(s.net.y).dump() + ',' + json(s.kalman.x).dump() + ',' +
                   json(s.kalman.y).dump() + '\n';
        }
        write_text_file(trace_path, csv);
    }
    return 0;
}

int cmd_stream(const std::string& ckpt_path, double tick_ms) {
    traj::ModelParams params = traj::load_checkpoint(ckpt_path);
    traj::RuntimeConfig cfg;
    cfg.tick_period = tick_ms / 1000.0;
    traj::run_stream(std::cin, std::cout, std::move(params), cfg);
    return 0;
}

int cmd_bench(const std::string& ckpt_path, int ticks, const std::string& format) {
    const traj::ModelParams params = traj::load_checkpoint(ckpt_path);
    const traj::LatencyReport report = traj::measure_latency(params, ticks);
    std::cout << render_report(latency_json(report), format);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"real-time vehicle position forecasting toolkit"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    std::string spec_path, out_path, dataset_path, config_path, ckpt_path;
    std::string report_path, trace_path;
    std::string format = "json";
    std::vector<std::string> route_paths;
    double horizon_ms = 200.0;
    double tick_ms = 50.0;
    int ticks = 2000;
    int bench_ticks = 256;
    bool no_balance = false;

    auto* sim = app.add_subcommand("simulate", "generate a synthetic route + truth file");
    sim->add_option("--spec", spec_path, "route spec JSON file")->required();
    sim->add_option("--out", out_path, "output route file (JSON Lines)")->required();
    sim->add_option("--seed", seed, "random seed");

    auto* pre = app.add_subcommand("preprocess", "turn route files into a training dataset");
    pre->add_option("--route", route_paths, "input route file (repeatable)")->required();
    pre->add_option("--out", out_path, "output dataset file (JSON Lines)")->required();
    pre->add_flag("--no-balance", no_balance, "skip turn-sequence balancing");

    auto* trn = app.add_subcommand("train", "train a model on a dataset");
    trn->add_option("--dataset", dataset_path, "dataset from preprocess")->required();
    trn->add_option("--config", config_path, "JSON with model{} and train{} sections");
    trn->add_option("--out", out_path, "output checkpoint path")->required();
    trn->add_option("--seed", seed, "random seed");

    auto* evl = app.add_subcommand("evaluate", "score a checkpoint against route truth");
    evl->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
    evl->add_option("--route", route_paths, "route file to score (repeatable)")->required();
    evl->add_option("--report", report_path, "write report here instead of stdout");
    evl->add_option("--trace", trace_path, "write per-window trace CSV here");
    evl->add_option("--horizon-ms", horizon_ms,
                    "prediction lead; 200 scores the network's native point");
    evl->add_option("--format", format, "report format")
        ->check(CLI::IsMember({"json", "csv"}));
    evl->add_option("--bench-ticks", bench_ticks, "ticks for the embedded latency sample");

    auto* stm = app.add_subcommand("stream", "stdin events -> stdout estimates (JSON Lines)");
    stm->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
    stm->add_option("--tick-ms", tick_ms, "tick period in milliseconds");

    auto* bch = app.add_subcommand("bench", "measure per-stage tick latency");
    bch->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
    bch->add_option("--ticks", ticks, "number of measured ticks");
    bch->add_option("--format", format, "report format")
        ->check(CLI::IsMember({"json", "csv"}));

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) return cmd_simulate(spec_path, out_path, seed);
        if (pre->parsed()) return cmd_preprocess(route_paths, out_path, !no_balance);
        if (trn->parsed()) return cmd_train(dataset_path, config_path, out_path, seed);
        if (evl->parsed()) {
            return cmd_evaluate(ckpt_path, route_paths, report_path, trace_path,
                                horizon_ms, format, bench_ticks);
        }
        if (stm->parsed()) return cmd_stream(ckpt_path, tick_ms);
        if (bch->parsed()) return cmd_bench(ckpt_path, ticks, format);
    } catch (const std::exception& e) {
        std::cerr << nlohmann::json{{"error", e.what()}}.dump() << '\n';
        return 1;
    }
    return 1;
}
