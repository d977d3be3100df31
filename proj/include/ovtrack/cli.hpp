#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ovtrack/ovtrack.hpp"

namespace ovtrack::cli {

inline constexpr const char* kToolVersion = "1.0.0";

enum ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kProtocol = 4 };

struct Streams {
    std::ostream& out;
    std::ostream& err;
};

/// One structured record per line on the error stream.
inline void log_event(std::ostream& err, const char* level, const std::string& event, json fields = json::object()) {
    json rec{{"level", level}, {"event", event}};
    for (auto& [k, v] : fields.items()) rec[k] = v;
    err << rec.dump() << '\n';
}

// ---------------------------------------------------------------------------
// Arguments
// ---------------------------------------------------------------------------

struct EngineArgs {
    std::string config;  // engine config JSON, optional
    std::vector<std::string> sets;  // key=value overrides
    std::vector<std::string> prompts;
    bool no_motion = false, no_refinement = false, no_cycle = false, no_box = false;
};

struct SimulateArgs {
    std::string scene;
    std::string output;
    std::optional<std::uint64_t> seed;
    EngineArgs engine;
};

struct TrackArgs {
    std::string manifest;
    std::string output;
    int jobs = 1;
    std::optional<std::uint64_t> seed;
    EngineArgs engine;
};

struct EvalArgs {
    std::string pred;
    std::string gt;
    std::string manifest;  // optional; enables the frame-range check
    std::string output;
    std::string protocol = "vos";
    bool class_aware = false;
    std::string label_split;  // JSON {"name": [labels...]}
    std::size_t cap = 100;
};

/// Config file, then --set overrides, then switches and prompts.
inline EngineConfig resolve_engine(const EngineArgs& a) {
    EngineConfig cfg;
    if (!a.config.empty()) {
        json j;
        try {
            j = json::parse(read_text_file(a.config));
        } catch (const json::parse_error& e) {
            throw ConfigError(a.config + ": " + e.what());
        }
        try {
            cfg = engine_config_from_json(j);
        } catch (const ConfigError& e) {
            throw ConfigError(a.config + ": " + e.what());
        }
    }
    for (const auto& s : a.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
        const std::string key = s.substr(0, eq), raw = s.substr(eq + 1);
        json value = json::parse(raw, nullptr, false);
        if (value.is_discarded()) value = raw;
        cfg = engine_config_from_json(json{{key, value}}, cfg);
    }
    if (a.no_motion) cfg.enable_motion_propagation = false;
    if (a.no_refinement) cfg.enable_refinement = false;
    if (a.no_cycle) cfg.enable_cycle_consistency = false;
    if (a.no_box) cfg.enable_box_adaptation = false;
    for (const auto& p : a.prompts) cfg.prompted_labels.push_back(p);
    cfg.validate();
    return cfg;
}

namespace detail {

inline std::filesystem::path prepare_output(const std::string& dir) {
    namespace fs = std::filesystem;
    if (dir.empty()) throw ConfigError("--output is required");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw ConfigError("output directory '" + dir + "' cannot be created");
    const fs::path probe = fs::path(dir) / ".ovtrack_write_probe";
    {
        std::ofstream f(probe);
        if (!f) throw ConfigError("output directory '" + dir + "' is not writable");
    }
    fs::remove(probe, ec);
    return fs::path(dir);
}

inline std::string absolute_string(const std::string& p) {
    return p.empty() ? p : std::filesystem::weakly_canonical(std::filesystem::absolute(p)).string();
}

inline std::uintmax_t tree_bytes(const std::filesystem::path& dir) {
    std::uintmax_t n = 0;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
        if (e.is_regular_file()) n += e.file_size();
    return n;
}

inline void write_resolved(const std::filesystem::path& dir, const std::string& command, json args) {
    json r{{"tool_version", kToolVersion}, {"command", command}, {"args", std::move(args)}};
    write_text_file(dir / "resolved_config.json", r.dump(2) + "\n");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands. Each takes fully resolved inputs.
// ---------------------------------------------------------------------------

/// Generates a scene, runs the oracle and writes a replayable manifest,
/// the GT tracks (gt.ndjson) and the resolved scene. Segment answers are
/// recorded for the given engine config and its four single-switch ablations.
inline int cmd_simulate(const sim::SceneConfig& scene, const EngineConfig& cfg, const std::string& output, Streams io) {
    const auto dir = detail::prepare_output(output);
    const sim::SceneTruth truth = sim::generate(scene);
    const sim::OracleProvider oracle(truth, scene.noise, scene.seed, scene.oracle);
    RecordingProvider<sim::OracleProvider> rec(oracle);
    std::vector<EngineConfig> variants{cfg};
    for (int k = 0; k < 4; ++k) {
        EngineConfig v = cfg;
        (k == 0 ? v.enable_motion_propagation : k == 1 ? v.enable_refinement
                                              : k == 2 ? v.enable_cycle_consistency
                                                       : v.enable_box_adaptation) = false;
        variants.push_back(v);
    }
    for (const auto& v : variants) run(rec, v);
    write_provider_records(sim::oracle_records(oracle, rec.recorded()), dir);
    write_text_file(dir / "gt.ndjson", tracks_to_ndjson(sim::ground_truth_table(truth)));
    detail::write_resolved(dir, "simulate",
                           json{{"scene", sim::scene_config_to_json(scene)},
                                {"engine", engine_config_to_json(cfg)}});
    const auto bytes = detail::tree_bytes(dir);
    log_event(io.err, "info", "simulate.done", {{"output", dir.string()}});
    io.out << json{{"objects", truth.object_count()}, {"frames", truth.frames}, {"bytes", bytes}}.dump() << '\n';
    return kOk;
}

inline int cmd_track(const std::string& manifest, const EngineConfig& cfg, const std::string& output, int jobs,
                     std::optional<std::uint64_t> seed, Streams io) {
    const auto dir = detail::prepare_output(output);
    const FileProvider provider = FileProvider::load(manifest);
    log_event(io.err, "info", "track.loaded",
              {{"manifest", manifest}, {"frames", provider.frame_count()}, {"width", provider.width()},
               {"height", provider.height()}});
    RunOptions opt;
    opt.jobs = jobs;
    const TrackSet ts = run(provider, cfg, opt);
    write_text_file(dir / "tracks.ndjson", tracks_to_ndjson(ts, provider.width(), provider.height()));
    write_text_file(dir / "summary.json", summary_json(ts).dump(2) + "\n");
    json args{{"manifest", detail::absolute_string(manifest)},
              {"engine", engine_config_to_json(cfg)},
              {"jobs", jobs}};
    args["seed"] = seed ? json(*seed) : json(nullptr);
    detail::write_resolved(dir, "track", args);
    std::size_t emitted = 0;
    for (const auto& tr : ts.tracks) emitted += !tr.history.empty() && tr.state != TrackState::Retired;
    log_event(io.err, "info", "track.done", {{"tracks", emitted}, {"merges", ts.merges.size()}});
    io.out << json{{"tracks", emitted}, {"merges", ts.merges.size()}, {"frames", provider.frame_count()}}.dump()
           << '\n';
    return kOk;
}

inline int cmd_eval(const EvalArgs& a, Streams io) {
    EvalOptions opt;
    opt.protocol = protocol_from_string(a.protocol);
    opt.class_aware = a.class_aware;
    opt.prediction_cap = a.cap;
    if (!a.label_split.empty()) {
        try {
            const json j = json::parse(read_text_file(a.label_split));
            for (const auto& [name, labels] : j.items())
                opt.label_subsets[name] = labels.get<std::set<std::string>>();
        } catch (const json::exception& e) {
            throw ConfigError(a.label_split + ": expected {\"name\": [labels...]}: " + e.what());
        }
    }
    const auto dir = detail::prepare_output(a.output);
    const TrackTable pred = read_tracks_file(a.pred);
    const TrackTable gt = read_tracks_file(a.gt);
    std::optional<int> frames;
    if (!a.manifest.empty()) {
        json m;
        try {
            m = json::parse(read_text_file(a.manifest));
            frames = m.at("frames").get<int>();
        } catch (const json::exception& e) {
            throw LoadError(a.manifest + ": " + e.what());
        }
        const int w = m.value("width", 0), h = m.value("height", 0);
        for (const auto* tab : {&pred, &gt})
            if (!tab->empty() && (tab->width != w || tab->height != h))
                throw ProtocolMismatch("track masks do not match the manifest frame size");
    }
    check_compatible(pred, gt, frames);
    const MetricReport rep = evaluate(pred, gt, opt);
    write_text_file(dir / "report.json", report_to_json(rep).dump(2) + "\n");
    write_text_file(dir / "report.csv", report_csv_header() + "\n" + report_csv_row(rep) + "\n");
    json split = json::object();
    for (const auto& [k, v] : opt.label_subsets) split[k] = v;
    detail::write_resolved(dir, "eval",
                           json{{"pred", detail::absolute_string(a.pred)},
                                {"gt", detail::absolute_string(a.gt)},
                                {"manifest", detail::absolute_string(a.manifest)},
                                {"protocol", a.protocol},
                                {"class_aware", a.class_aware},
                                {"cap", a.cap},
                                {"label_split", split}});
    auto pct = [](const std::optional<double>& v) { return v ? json(100.0 * *v) : json(nullptr); };
    json head{{"J&F", pct(rep.jf)},
              {"J", pct(rep.j)},
              {"F", pct(rep.f)},
              {"HOTA", rep.hota.hota},
              {"DetA", rep.hota.deta},
              {"AssA", rep.hota.assa},
              {"mAR", rep.recall ? json(rep.recall->mar) : json(nullptr)},
              {"id_switches", rep.id_switches}};
    log_event(io.err, "info", "eval.done", {{"output", dir.string()}});
    io.out << head.dump() << '\n';
    return kOk;
}

/// Reruns a command from its resolved_config.json, writing next to it unless
/// `output` is given.
inline int cmd_replay(const std::string& resolved_path, const std::string& output, Streams io) {
    json r;
    try {
        r = json::parse(read_text_file(resolved_path));
    } catch (const json::parse_error& e) {
        throw ConfigError(resolved_path + ": " + e.what());
    }
    const std::string command = r.value("command", "");
    const json& args = r.at("args");
    const std::string out =
        output.empty() ? std::filesystem::absolute(resolved_path).parent_path().string() : output;
    if (command == "simulate")
        return cmd_simulate(sim::scene_config_from_json(args.at("scene")), engine_config_from_json(args.at("engine")),
                            out, io);
    if (command == "track") {
        std::optional<std::uint64_t> seed;
        if (!args.at("seed").is_null()) seed = args["seed"].get<std::uint64_t>();
        return cmd_track(args.at("manifest").get<std::string>(), engine_config_from_json(args.at("engine")), out,
                         args.at("jobs").get<int>(), seed, io);
    }
    if (command == "eval") {
        EvalArgs a;
        a.pred = args.at("pred").get<std::string>();
        a.gt = args.at("gt").get<std::string>();
        a.manifest = args.at("manifest").get<std::string>();
        a.protocol = args.at("protocol").get<std::string>();
        a.class_aware = args.at("class_aware").get<bool>();
        a.cap = args.at("cap").get<std::size_t>();
        a.output = out;
        if (!args.at("label_split").empty()) {
            const auto dir = detail::prepare_output(out);
            a.label_split = (dir / "label_split.json").string();
            write_text_file(a.label_split, args["label_split"].dump(2) + "\n");
        }
        return cmd_eval(a, io);
    }
    throw ConfigError(resolved_path + ": unknown command '" + command + "'");
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

namespace detail {

inline void add_engine_flags(CLI::App* sub, EngineArgs& e) {
    sub->add_option("--config", e.config, "Engine config JSON")->check(CLI::ExistingFile);
    sub->add_option("--set", e.sets, "Engine override key=value (repeatable)");
    sub->add_option("--prompt", e.prompts, "Track only this category (repeatable)");
    sub->add_flag("--no-motion-propagation", e.no_motion, "Carry boxes over instead of warping them");
    sub->add_flag("--no-refinement", e.no_refinement, "Skip box refinement");
    sub->add_flag("--no-cycle-consistency", e.no_cycle, "Select hypotheses by quality");
    sub->add_flag("--no-box-adaptation", e.no_box, "Keep the refined box instead of the mask's tight box");
}

template <typename Fn>
int guarded(Streams io, Fn&& fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        log_event(io.err, "error", "config", {{"message", e.what()}});
        return kConfig;
    } catch (const ProtocolMismatch& e) {
        log_event(io.err, "error", "protocol_mismatch", {{"message", e.what()}});
        return kProtocol;
    } catch (const Error& e) {
        log_event(io.err, "error", "data", {{"message", e.what()}});
        return kData;
    } catch (const json::exception& e) {
        log_event(io.err, "error", "data", {{"message", e.what()}});
        return kData;
    } catch (const std::exception& e) {
        log_event(io.err, "error", "failure", {{"message", e.what()}});
        return kFailure;
    }
}

}  // namespace detail

inline int main(int argc, const char* const* argv, Streams io) {
    CLI::App app{"Zero-shot video object tracker: simulate scenes, track, evaluate"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    SimulateArgs sa;
    auto* sim_cmd = app.add_subcommand("simulate", "Render a synthetic scene and dump a replayable manifest");
    sim_cmd->add_option("--scene", sa.scene, "Scene config JSON")->required()->check(CLI::ExistingFile);
    sim_cmd->add_option("--output", sa.output, "Output directory")->required();
    sim_cmd->add_option("--seed", sa.seed, "Override the scene seed");
    detail::add_engine_flags(sim_cmd, sa.engine);

    TrackArgs ta;
    auto* track_cmd = app.add_subcommand("track", "Run the tracker over a manifest");
    track_cmd->add_option("--manifest", ta.manifest, "Provider manifest.json")->required()->check(CLI::ExistingFile);
    track_cmd->add_option("--output", ta.output, "Output directory")->required();
    track_cmd->add_option("--jobs", ta.jobs, "Worker threads per step")->check(CLI::PositiveNumber);
    track_cmd->add_option("--seed", ta.seed, "Recorded for provenance");
    detail::add_engine_flags(track_cmd, ta.engine);

    EvalArgs ea;
    auto* eval_cmd = app.add_subcommand("eval", "Score predicted tracks against ground truth");
    eval_cmd->add_option("--pred", ea.pred, "Predicted tracks NDJSON")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--gt", ea.gt, "Ground-truth tracks NDJSON")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--manifest", ea.manifest, "Manifest giving the video frame range")->check(CLI::ExistingFile);
    eval_cmd->add_option("--output", ea.output, "Output directory")->required();
    eval_cmd->add_option("--protocol", ea.protocol, "Track matching for J/F")
        ->check(CLI::IsMember({"vos", "openworld", "hota"}));
    eval_cmd->add_flag("--class-aware", ea.class_aware, "Require label equality for HOTA matches");
    eval_cmd->add_option("--label-split", ea.label_split, "JSON of named label subsets")->check(CLI::ExistingFile);
    eval_cmd->add_option("--cap", ea.cap, "Prediction cap for average recall");

    std::string replay_path, replay_output;
    auto* replay_cmd = app.add_subcommand("replay", "Rerun a command from its resolved_config.json");
    replay_cmd->add_option("resolved", replay_path, "resolved_config.json")->required()->check(CLI::ExistingFile);
    replay_cmd->add_option("--output", replay_output, "Override the output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        io.out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        io.out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::CallForVersion&) {
        io.out << kToolVersion << '\n';
        return kOk;
    } catch (const CLI::ParseError& e) {
        log_event(io.err, "error", "usage", {{"message", e.what()}});
        return kConfig;
    }

    return detail::guarded(io, [&]() -> int {
        if (*sim_cmd) {
            json j;
            try {
                j = json::parse(read_text_file(sa.scene));
            } catch (const json::parse_error& e) {
                throw ConfigError(sa.scene + ": " + e.what());
            }
            sim::SceneConfig scene;
            try {
                scene = sim::scene_config_from_json(j);
            } catch (const ConfigError& e) {
                throw ConfigError(sa.scene + ": " + e.what());
            }
            if (sa.seed) scene.seed = *sa.seed;
            return cmd_simulate(scene, resolve_engine(sa.engine), sa.output, io);
        }
        if (*track_cmd) return cmd_track(ta.manifest, resolve_engine(ta.engine), ta.output, ta.jobs, ta.seed, io);
        if (*eval_cmd) return cmd_eval(ea, io);
        return cmd_replay(replay_path, replay_output, io);
    });
}

}  // namespace ovtrack::cli
