#include "gdistill/cli.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "gdistill/checkpoint.hpp"
#include "gdistill/config.hpp"
#include "gdistill/errors.hpp"
#include "gdistill/guidance.hpp"
#include "gdistill/ply.hpp"
#include "gdistill/png_io.hpp"
#include "gdistill/remote_provider.hpp"
#include "gdistill/trainer.hpp"
#include "gdistill/views.hpp"

namespace fs = std::filesystem;

namespace gdistill::cli {
namespace {

extern "C" void handle_signal(int) { interrupt_flag().store(true); }

void write_json(const fs::path& p, const nlohmann::json& j) {
    std::ofstream out(p, std::ios::binary);
    out << j.dump(2) << '\n';
    if (!out) throw IoError(fmt::format("cannot write {}", p.string()));
}

nlohmann::json read_json_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot read {}", p.string()));
    std::stringstream buf;
    buf << in.rdbuf();
    auto j = nlohmann::json::parse(buf.str(), nullptr, false);
    if (j.is_discarded()) throw IoError(fmt::format("{} is not valid JSON", p.string()));
    return j;
}

/// Scene from a checkpoint directory or a bare PLY file.
GaussianScene load_scene(const fs::path& p) {
    if (fs::is_directory(p)) return load_checkpoint(p).state.scene;
    if (!fs::exists(p)) throw IoError(fmt::format("checkpoint {} does not exist", p.string()));
    return import_ply(p);
}

struct TrainOutcome {
    int code = kExitOk;
    fs::path run_dir;
};

class MessageLog final : public TrainObserver {
public:
    explicit MessageLog(std::ostream& err) : err_(err) {}
    void on_message(const std::string& m) override { err_ << "warning: " << m << '\n'; }

private:
    std::ostream& err_;
};

TrainOutcome train(const EngineConfig& cfg, const fs::path& run_root, std::optional<Checkpoint> resume,
                   std::optional<fs::path> resume_run_dir, std::ostream& out, std::ostream& err) {
    const nlohmann::json doc = cfg.to_json();
    TrainOutcome outcome;
    outcome.run_dir = resume_run_dir ? *resume_run_dir : make_run_dir(run_root, config_hash(doc));
    const fs::path& run_dir = outcome.run_dir;
    write_json(run_dir / "config.json", doc);

    std::unique_ptr<GuidanceProvider> provider;
    std::unique_ptr<ViewSource> views;
    std::optional<OracleSetup> oracle;
    switch (cfg.guidance.provider) {
    case ProviderKind::Remote: {
        RemoteProviderOptions ro;
        ro.endpoint = cfg.guidance.endpoint;
        ro.timeout = std::chrono::milliseconds(cfg.guidance.timeout_ms);
        ro.retries = cfg.guidance.retries;
        provider = std::make_unique<RemoteProvider>(ro);
        views = std::make_unique<RandomViewSource>(cfg.cameras);
        break;
    }
    case ProviderKind::Oracle:
        oracle = make_oracle_setup(three_gaussian_scene(), cfg.oracle, cfg.raster);
        provider = std::make_unique<OracleProvider>(oracle->train_targets, cfg.schedule, cfg.weights);
        views = std::make_unique<FixedViewSource>(oracle->train_cameras);
        break;
    case ProviderKind::Null:
        provider = std::make_unique<NullProvider>();
        views = std::make_unique<RandomViewSource>(cfg.cameras);
        break;
    }

    SceneInitOptions init = cfg.scene;
    init.seed = cfg.seed;
    TrainState state = resume ? std::move(resume->state) : TrainState::fresh(init_scene(init), cfg.seed);

    JsonlRunLog log(run_dir);
    MessageLog messages(err);
    TrainContext ctx;
    ctx.provider = provider.get();
    ctx.views = views.get();
    ctx.prompt = cfg.guidance.prompt;
    ctx.density = cfg.density;
    ctx.raster = cfg.raster;
    ctx.observers = {&log, &messages};

    RunStageOptions opts;
    opts.checkpoint_dir = run_dir / "checkpoints";
    opts.checkpoint_interval = cfg.checkpoint_interval;
    opts.visualization_dir = run_dir / "visualization";
    opts.visualization_interval = cfg.visualization_interval;
    opts.interrupt = &interrupt_flag();
    opts.config_snapshot = doc;

    const std::vector<StageConfig> stages = cfg.stages();
    while (state.stage < static_cast<int>(stages.size())) {
        const StageConfig& stage = stages[state.stage];
        if (state.iteration >= stage.iterations) {
            state.begin_next_stage();
            continue;
        }
        out << fmt::format("{}: iterations {}..{} at {}x{} ({} space), N={}\n", stage.name, state.iteration,
                           stage.iterations, stage.resolution, stage.resolution,
                           gdistill::to_string(stage.guidance_space), state.scene.size());
        const StageResult r = run_stage(state, stage, ctx, opts);
        if (r.interrupted) {
            err << "interrupted; checkpoint written to "
                << (r.last_checkpoint ? r.last_checkpoint->string() : std::string("<none>")) << '\n';
            outcome.code = kExitInterrupted;
            return outcome;
        }
        if (cfg.visualization_interval > 0) {
            dump_visualization(state, stage, ctx, views->probes(stage.resolution), opts.visualization_dir);
        }
        if (state.stage + 1 < static_cast<int>(stages.size())) state.begin_next_stage();
        else break;
    }

    export_ply(state.scene, run_dir / "final.ply");
    nlohmann::json summary = {{"n", state.scene.size()}, {"skipped_steps", state.skipped_steps}};
    if (oracle) {
        std::vector<double> scores;
        for (std::size_t k = 0; k < oracle->heldout_cameras.size(); ++k) {
            scores.push_back(psnr(render(state.scene, oracle->heldout_cameras[k], cfg.raster).image,
                                  oracle->heldout_targets[k]));
        }
        double mean = 0.0;
        for (double s : scores) mean += s;
        if (!scores.empty()) summary["heldout_psnr_mean"] = mean / scores.size();
        summary["heldout_psnr"] = scores;
    }
    write_json(run_dir / "summary.json", summary);
    out << fmt::format("done: N={}, run directory {}\n", state.scene.size(), run_dir.string());
    return outcome;
}

std::string read_config_doc_for_sweep(const fs::path& path, nlohmann::json& doc) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(fmt::format("cannot read config file '{}'", path.string()));
    std::stringstream buf;
    buf << in.rdbuf();
    doc = nlohmann::json::parse(buf.str(), nullptr, false, true);
    if (doc.is_discarded() || !doc.is_object()) {
        throw ConfigError(fmt::format("config file '{}' is not a JSON object", path.string()));
    }
    return buf.str();
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

int guarded(std::ostream& err, const std::function<int()>& body, bool checkpoint_load = false) {
    try {
        return body();
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const GuidanceUnavailable& e) {
        err << "guidance unavailable: " << e.what() << '\n';
        return kExitGuidance;
    } catch (const CheckpointError& e) {
        err << "checkpoint error: " << e.what() << '\n';
        return kExitFailure;
    } catch (const IoError& e) {
        err << (checkpoint_load ? "corrupt checkpoint: " : "I/O error: ") << e.what() << '\n';
        return checkpoint_load ? kExitCheckpoint : kExitFailure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
}

} // namespace

std::atomic<bool>& interrupt_flag() {
    static std::atomic<bool> flag{false};
    return flag;
}

fs::path make_run_dir(const fs::path& root, const std::string& hash) {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    localtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
    const std::string base = fmt::format("{}-{}", hash.substr(0, 12), stamp);
    fs::create_directories(root);
    for (int k = 0;; ++k) {
        const fs::path p = root / (k == 0 ? base : fmt::format("{}-{}", base, k));
        std::error_code ec;
        if (fs::create_directory(p, ec)) return p;
        if (ec) throw IoError(fmt::format("cannot create run directory {}: {}", p.string(), ec.message()));
    }
}

InspectReport inspect_logs(const fs::path& events_path, const std::optional<fs::path>& metrics_path,
                           const DensityControlConfig& cfg, std::optional<std::int64_t> total_iterations) {
    InspectReport rep;
    std::ostringstream text;
    std::vector<DensityEvent> events;

    std::ifstream in(events_path);
    if (!in) {
        rep.malformed.push_back(fmt::format("{}: cannot open", events_path.string()));
    } else {
        std::string line;
        for (int lineno = 1; std::getline(in, line); ++lineno) {
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            const auto j = nlohmann::json::parse(line, nullptr, false);
            try {
                if (j.is_discarded()) throw InvalidParameter("not JSON");
                events.push_back(DensityEvent::from_json(j));
            } catch (const InvalidParameter& e) {
                rep.malformed.push_back(fmt::format("events line {}: {}", lineno, e.what()));
            }
        }
    }
    rep.event_count = events.size();

    std::map<int, std::int64_t> stage_last_iteration;
    struct BoundsRow {
        std::int64_t iteration;
        double lower, upper, u;
    };
    std::map<int, std::vector<BoundsRow>> bounds;
    if (metrics_path) {
        std::ifstream min(*metrics_path);
        if (!min) {
            rep.malformed.push_back(fmt::format("{}: cannot open", metrics_path->string()));
        } else {
            std::string line;
            for (int lineno = 1; std::getline(min, line); ++lineno) {
                if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
                const auto j = nlohmann::json::parse(line, nullptr, false);
                if (j.is_discarded() || !j.is_object() || !j.contains("iteration") ||
                    !j["iteration"].is_number_integer()) {
                    rep.malformed.push_back(fmt::format("metrics line {}: malformed record", lineno));
                    continue;
                }
                const int stage = j.value("stage", 0);
                const auto it = j["iteration"].get<std::int64_t>();
                auto& last = stage_last_iteration[stage];
                last = std::max(last, it);
                if (j.contains("u_lower") && j.contains("u_upper") && j.contains("u") && j["u_lower"].is_number() &&
                    j["u_upper"].is_number() && j["u"].is_number()) {
                    bounds[stage].push_back(
                        {it, j["u_lower"].get<double>(), j["u_upper"].get<double>(), j["u"].get<double>()});
                }
            }
        }
    }

    text << "density-control events\n";
    if (events.empty()) {
        text << "  no events\n";
    } else {
        text << fmt::format("  {:>5} {:>9} {:<8} {:>8} {:>8} {:>7} {:>7} {:>7} {:>12}\n", "stage", "iteration",
                            "kind", "n_before", "n_after", "cloned", "split", "pruned", "max_opacity");
        for (const auto& e : events) {
            text << fmt::format("  {:>5} {:>9} {:<8} {:>8} {:>8} {:>7} {:>7} {:>7} {:>12}\n", e.stage, e.iteration,
                                e.kind, e.n_before, e.n_after, e.cloned, e.split, e.pruned,
                                e.kind == "reset" ? fmt::format("{:.6g}", e.max_opacity) : std::string("-"));
        }
    }

    std::map<int, std::vector<const DensityEvent*>> by_stage;
    for (const auto& e : events) by_stage[e.stage].push_back(&e);
    for (const auto& [stage, evs] : by_stage) {
        std::int64_t last = 0;
        for (const auto* e : evs) last = std::max(last, e->iteration);
        if (auto it = stage_last_iteration.find(stage); it != stage_last_iteration.end()) last = std::max(last, it->second);
        const std::int64_t total = total_iterations ? *total_iterations : last + 1;

        std::set<std::int64_t> densify_seen;
        int resets = 0;
        for (const auto* e : evs) {
            if (e->kind == "densify") {
                densify_seen.insert(e->iteration);
                if (!should_densify(e->iteration, cfg)) {
                    rep.violations.push_back(
                        fmt::format("stage {}: densify at iteration {} is off the schedule", stage, e->iteration));
                }
            } else if (e->kind == "prune") {
                if (!should_densify(e->iteration, cfg)) {
                    rep.violations.push_back(fmt::format(
                        "stage {}: prune at iteration {} is not paired with a scheduled densify", stage, e->iteration));
                }
            } else if (e->kind == "reset") {
                ++resets;
                if (e->iteration != cfg.opacity_reset_iteration) {
                    rep.violations.push_back(fmt::format("stage {}: opacity reset at iteration {} (expected {})", stage,
                                                         e->iteration, cfg.opacity_reset_iteration));
                }
                if (e->max_opacity > cfg.opacity_reset_value) {
                    rep.violations.push_back(fmt::format("stage {}: opacity {} exceeds the reset value after reset",
                                                         stage, e->max_opacity));
                }
            }
        }
        for (std::int64_t it = cfg.densify_start; it < std::min(cfg.densify_end, total); it += cfg.densify_interval) {
            if (!densify_seen.count(it)) {
                rep.violations.push_back(fmt::format("stage {}: expected densify at iteration {} is missing", stage, it));
            }
        }
        if (cfg.opacity_reset_iteration < std::min(total, finetune_start(cfg, total)) && resets == 0) {
            rep.violations.push_back(
                fmt::format("stage {}: no opacity reset at iteration {}", stage, cfg.opacity_reset_iteration));
        } else if (resets > 1) {
            rep.violations.push_back(fmt::format("stage {}: {} opacity resets (expected one)", stage, resets));
        } else if (resets == 1) {
            text << fmt::format("  stage {}: opacity reset at iteration {}\n", stage, cfg.opacity_reset_iteration);
        }
    }

    if (!bounds.empty()) {
        text << "noise-bound trace\n";
        for (auto& [stage, rows] : bounds) {
            std::sort(rows.begin(), rows.end(), [](const BoundsRow& a, const BoundsRow& b) { return a.iteration < b.iteration; });
            const std::size_t n = rows.size();
            for (double q : {0.0, 0.25, 0.5, 0.75, 1.0}) {
                const auto& r = rows[static_cast<std::size_t>(q * (n - 1))];
                text << fmt::format("  stage {} iteration {:>7}: u in [{:.4f}, {:.4f}]\n", stage, r.iteration, r.lower,
                                    r.upper);
            }
            std::size_t outside = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (rows[i].u < rows[i].lower || rows[i].u > rows[i].upper) ++outside;
                if (i > 0 && rows[i].upper - rows[i].lower > rows[i - 1].upper - rows[i - 1].lower + 1e-12) {
                    rep.violations.push_back(
                        fmt::format("stage {}: noise-bound width grows at iteration {}", stage, rows[i].iteration));
                }
            }
            if (outside > 0) {
                rep.violations.push_back(fmt::format("stage {}: {} sampled u outside their bounds", stage, outside));
            }
        }
    }

    if (rep.violations.empty()) {
        text << "schedule check: ok\n";
    } else {
        text << "schedule check: " << rep.violations.size() << " deviation(s)\n";
        for (const auto& v : rep.violations) text << "  - " << v << '\n';
    }
    for (const auto& m : rep.malformed) text << "  malformed: " << m << '\n';
    rep.text = text.str();
    return rep;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Score-distillation optimizer for 3D Gaussian scenes"};
    app.require_subcommand(1);
    app.fallthrough();

    fs::path run_root = "runs";
    app.add_option("--run-root", run_root, "Directory that receives run directories")->capture_default_str();

    // train
    auto* train_cmd = app.add_subcommand("train", "Optimize a scene against a guidance provider");
    fs::path config_path;
    std::vector<std::string> overrides;
    fs::path resume_path;
    train_cmd->add_option("--config,-c", config_path, "Training configuration (JSON)");
    train_cmd->add_option("--set", overrides, "Override a configuration key, e.g. trainer.stage1.iterations=10");
    train_cmd->add_option("--resume", resume_path, "Resume from a checkpoint directory");

    // render
    auto* render_cmd = app.add_subcommand("render", "Render a checkpoint to PNG files");
    fs::path render_ckpt;
    int turntable_count = 8;
    double elevation = 20.0, radius = 3.0, fov = 50.0, background = 1.0;
    int resolution = 256;
    fs::path render_out;
    render_cmd->add_option("--checkpoint", render_ckpt, "Checkpoint directory or PLY file")->required();
    render_cmd->add_option("--turntable", turntable_count, "Number of equal-azimuth views")->capture_default_str();
    render_cmd->add_option("--elevation", elevation, "Elevation in degrees")->capture_default_str();
    render_cmd->add_option("--radius", radius, "Camera distance from the origin")->capture_default_str();
    render_cmd->add_option("--fov", fov, "Vertical field of view in degrees")->capture_default_str();
    render_cmd->add_option("--resolution", resolution, "Square image size in pixels")->capture_default_str();
    render_cmd->add_option("--background", background, "Gray level of the background")->capture_default_str();
    render_cmd->add_option("--out", render_out, "Output directory (default: a new run directory)");

    // export
    auto* export_cmd = app.add_subcommand("export", "Write the scene of a checkpoint as PLY");
    fs::path export_ckpt, export_out;
    export_cmd->add_option("--checkpoint", export_ckpt, "Checkpoint directory or PLY file")->required();
    export_cmd->add_option("--out", export_out, "Output PLY path (default: <run dir>/scene.ply)");

    // inspect
    auto* inspect_cmd = app.add_subcommand("inspect", "Summarize event and metrics logs of a run");
    fs::path inspect_run, inspect_events, inspect_metrics, inspect_config;
    inspect_cmd->add_option("--run", inspect_run, "Run directory (events.jsonl, metrics.jsonl, config.json)");
    inspect_cmd->add_option("--events", inspect_events, "Event log path");
    inspect_cmd->add_option("--metrics", inspect_metrics, "Metrics log path");
    inspect_cmd->add_option("--config", inspect_config, "Configuration for the expected schedule");

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "Materialize (and optionally run) an ablation matrix");
    fs::path sweep_config;
    std::string sweep_kind = "guidance_scale";
    std::string sweep_values;
    bool sweep_execute = false;
    sweep_cmd->add_option("--config,-c", sweep_config, "Base configuration (JSON)")->required();
    sweep_cmd->add_option("--kind", sweep_kind, "guidance_scale or noise_bounds")
        ->check(CLI::IsMember({"guidance_scale", "noise_bounds"}))
        ->capture_default_str();
    sweep_cmd->add_option("--values", sweep_values,
                          "Comma-separated values (default: 10,20,35,100 or the noise-bound presets)");
    sweep_cmd->add_option("--set", overrides, "Override a configuration key for every member");
    sweep_cmd->add_flag("--run", sweep_execute, "Train every member after writing the configs");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    if (train_cmd->parsed()) {
        return guarded(err, [&]() -> int {
            std::optional<Checkpoint> resume;
            std::optional<fs::path> resume_dir;
            EngineConfig cfg;
            if (!resume_path.empty()) {
                try {
                    resume = load_checkpoint(resume_path);
                } catch (const IoError& e) {
                    err << "corrupt checkpoint: " << e.what() << '\n';
                    return kExitCheckpoint;
                }
                nlohmann::json doc = resume->config;
                apply_overrides(doc, overrides);
                cfg = EngineConfig::from_json(doc);
                const fs::path candidate = resume_path.parent_path().parent_path();
                if (fs::exists(candidate / "config.json")) resume_dir = candidate;
            } else {
                if (config_path.empty()) throw ConfigError("train needs --config or --resume");
                cfg = load_config(config_path, overrides);
            }
            if (const char* env = std::getenv("GDP_ENDPOINT"); env && *env) cfg.guidance.endpoint = env;

            interrupt_flag().store(false);
            auto prev_int = std::signal(SIGINT, handle_signal);
            auto prev_term = std::signal(SIGTERM, handle_signal);
            struct Restore {
                decltype(prev_int) i, t;
                ~Restore() {
                    std::signal(SIGINT, i);
                    std::signal(SIGTERM, t);
                }
            } restore{prev_int, prev_term};
            return train(cfg, run_root, std::move(resume), resume_dir, out, err).code;
        });
    }

    if (render_cmd->parsed()) {
        return guarded(
            err,
            [&]() -> int {
                if (turntable_count < 1) throw ConfigError("--turntable must be >= 1");
                if (resolution < 1) throw ConfigError("--resolution must be >= 1");
                const GaussianScene scene = load_scene(render_ckpt);
                fs::path dir = render_out;
                if (dir.empty()) {
                    const nlohmann::json request = {{"cmd", "render"},    {"checkpoint", render_ckpt.string()},
                                                 {"n", turntable_count}, {"elevation", elevation},
                                                 {"radius", radius},   {"fov", fov},
                                                 {"resolution", resolution}, {"background", background}};
                    dir = make_run_dir(run_root, config_hash(request));
                } else {
                    fs::create_directories(dir);
                }
                const auto cams = turntable(turntable_count, radius, elevation, fov, resolution);
                for (std::size_t k = 0; k < cams.size(); ++k) {
                    Camera cam = cams[k];
                    cam.background = Vec3<double>::Constant(background);
                    const double az = 360.0 * k / cams.size();
                    const fs::path p = dir / fmt::format("view_{:03d}_az{:06.2f}.png", k, az);
                    write_png(p, render(scene, cam).image);
                    out << p.string() << '\n';
                }
                return kExitOk;
            },
            /*checkpoint_load=*/true);
    }

    if (export_cmd->parsed()) {
        return guarded(
            err,
            [&]() -> int {
                const GaussianScene scene = load_scene(export_ckpt);
                fs::path dest = export_out;
                if (dest.empty()) {
                    dest = make_run_dir(run_root, config_hash({{"cmd", "export"}, {"checkpoint", export_ckpt.string()}})) /
                           "scene.ply";
                }
                export_ply(scene, dest);
                out << dest.string() << '\n';
                return kExitOk;
            },
            /*checkpoint_load=*/true);
    }

    if (inspect_cmd->parsed()) {
        return guarded(err, [&]() -> int {
            fs::path events = inspect_events;
            std::optional<fs::path> metrics;
            if (!inspect_metrics.empty()) metrics = inspect_metrics;
            DensityControlConfig dc;
            std::optional<std::int64_t> total;
            fs::path config_file = inspect_config;
            if (!inspect_run.empty()) {
                if (events.empty()) events = inspect_run / "events.jsonl";
                if (!metrics && fs::exists(inspect_run / "metrics.jsonl")) metrics = inspect_run / "metrics.jsonl";
                if (config_file.empty() && fs::exists(inspect_run / "config.json")) config_file = inspect_run / "config.json";
            }
            if (events.empty()) throw ConfigError("inspect needs --run or --events");
            if (!config_file.empty()) {
                const EngineConfig cfg = EngineConfig::from_json(read_json_file(config_file));
                dc = cfg.density;
                if (!cfg.stages().empty()) total = cfg.stages().front().iterations;
            }
            if (!fs::exists(events)) {
                out << "no events (" << events.string() << " not found)\n";
                return kExitOk;
            }
            out << inspect_logs(events, metrics, dc, total).text;
            return kExitOk;
        });
    }

    if (sweep_cmd->parsed()) {
        return guarded(err, [&]() -> int {
            nlohmann::json base;
            read_config_doc_for_sweep(sweep_config, base);
            apply_overrides(base, overrides);
            EngineConfig::from_json(base);

            std::vector<std::string> values = split_csv(sweep_values);
            if (values.empty()) {
                values = sweep_kind == "guidance_scale" ? std::vector<std::string>{"10", "20", "35", "100"}
                                                        : NoiseBoundSchedule::preset_names();
            }
            const fs::path dir = make_run_dir(run_root, config_hash({{"sweep", sweep_kind}, {"base", base}}));
            std::vector<std::pair<std::string, EngineConfig>> members;
            for (const std::string& v : values) {
                nlohmann::json doc = base;
                std::vector<std::string> ov;
                if (sweep_kind == "guidance_scale") {
                    ov = {"trainer.stage1.guidance_scale=" + v, "trainer.stage2.guidance_scale=" + v};
                } else {
                    const std::string quoted = nlohmann::json(v).dump();
                    ov = {"trainer.stage1.noise_bounds=" + quoted, "trainer.stage2.noise_bounds=" + quoted};
                }
                apply_overrides(doc, ov);
                const EngineConfig cfg = EngineConfig::from_json(doc);
                const fs::path p = dir / fmt::format("{}_{}.json", sweep_kind, v);
                write_json(p, cfg.to_json());
                out << p.string() << '\n';
                members.emplace_back(v, cfg);
            }
            if (!sweep_execute) return kExitOk;
            for (const auto& [v, cfg] : members) {
                const TrainOutcome o = train(cfg, dir / fmt::format("{}_{}", sweep_kind, v), std::nullopt,
                                             std::nullopt, out, err);
                if (o.code != kExitOk) return o.code;
            }
            return kExitOk;
        });
    }
    return kExitFailure;
}

} // namespace gdistill::cli
