#include "gdistill/trainer.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>

#include "gdistill/checkpoint.hpp"
#include "gdistill/errors.hpp"
#include "gdistill/png_io.hpp"
#include "json_util.hpp"

namespace fs = std::filesystem;

namespace gdistill {
namespace {

void notify_message(TrainContext& ctx, const std::string& msg) {
    for (auto* o : ctx.observers) o->on_message(msg);
}

void notify_event(TrainContext& ctx, const DensityEvent& e) {
    for (auto* o : ctx.observers) o->on_event(e);
}

double max_opacity(const GaussianScene& scene) {
    double m = 0.0;
    for (std::size_t i = 0; i < scene.size(); ++i) m = std::max(m, static_cast<double>(scene.opacity(i)));
    return m;
}

std::vector<Camera> probe_cameras(TrainContext& ctx, int resolution) {
    std::vector<Camera> cams;
    for (const View& v : ctx.views->probes(resolution)) cams.push_back(v.camera);
    return cams;
}

void run_density_events(TrainState& s, const StageConfig& stage, TrainContext& ctx, std::int64_t it) {
    const DensityControlConfig& cfg = ctx.density;
    bool changed = false;
    if (should_densify(it, cfg)) {
        DensifyReport dr;
        TopologyChange topo;
        s.scene = densify(s.scene, s.stats, cfg, s.rng, &dr, &topo);
        s.optimizer.apply_topology(topo);
        DensityEvent de{s.stage, it, "densify", dr.n_before, dr.n_after, dr.cloned, dr.split};
        notify_event(ctx, de);

        const std::vector<Camera> probes = probe_cameras(ctx, stage.resolution);
        PruneReport pr;
        s.scene = prune(s.scene, cfg, probes, ctx.raster, &pr, &topo);
        s.optimizer.apply_topology(topo);
        s.stats.resize(s.scene.size());
        DensityEvent pe{s.stage, it, "prune", pr.n_before, pr.n_after};
        pe.pruned = pr.pruned;
        notify_event(ctx, pe);
        changed = true;
    }
    if (it == cfg.opacity_reset_iteration && it < finetune_start(cfg, stage.iterations)) {
        const std::size_t n = s.scene.size();
        const auto idx = reset_opacity(s.scene, cfg);
        s.optimizer.reset_opacity_moments(idx);
        DensityEvent re{s.stage, it, "reset", n, n};
        re.changed = idx.size();
        re.max_opacity = max_opacity(s.scene);
        notify_event(ctx, re);
        changed = true;
    }
    if (changed) {
        try {
            validate_scene(s.scene);
        } catch (const InvalidParameter& e) {
            throw InternalConsistencyError(fmt::format("scene invalid after density event at {}: {}", it, e.what()));
        }
    }
}

fs::path checkpoint_path(const RunStageOptions& o, const StageConfig& stage, std::int64_t it) {
    return o.checkpoint_dir / fmt::format("{}_it{:06d}", stage.name, it);
}

} // namespace

StageConfig StageConfig::stage1_defaults() { return {}; }

StageConfig StageConfig::stage2_defaults() {
    StageConfig s;
    s.name = "stage2";
    s.resolution = 512;
    s.iterations = 5000;
    s.guidance_space = GuidanceSpace::Latent;
    s.density_control_enabled = false;
    return s;
}

void StageConfig::validate() const {
    if (name.empty()) throw ConfigError("stage name must not be empty");
    if (resolution < 8) throw ConfigError(fmt::format("{}.resolution must be >= 8 (got {})", name, resolution));
    if (iterations < 1) throw ConfigError(fmt::format("{}.iterations must be >= 1 (got {})", name, iterations));
    if (!(guidance_scale >= 0.0) || !std::isfinite(guidance_scale)) {
        throw ConfigError(fmt::format("{}.guidance_scale must be finite and >= 0", name));
    }
    learning_rates.validate();
}

nlohmann::json StageConfig::to_json() const {
    return {{"name", name},
            {"enabled", enabled},
            {"resolution", resolution},
            {"iterations", iterations},
            {"guidance_space", gdistill::to_string(guidance_space)},
            {"guidance_scale", guidance_scale},
            {"learning_rates", learning_rates.to_json()},
            {"density_control_enabled", density_control_enabled},
            {"noise_bounds", noise_bounds.to_json()}};
}

StageConfig StageConfig::from_json(const nlohmann::json& j, const StageConfig& defaults) {
    const std::string sec = defaults.name;
    detail::reject_unknown_keys(j,
                                {"name", "enabled", "resolution", "iterations", "guidance_space", "guidance_scale",
                                 "learning_rates", "density_control_enabled", "noise_bounds"},
                                sec);
    StageConfig s = defaults;
    detail::read_optional(j, "name", s.name, sec);
    detail::read_optional(j, "enabled", s.enabled, sec);
    detail::read_optional(j, "resolution", s.resolution, sec);
    detail::read_optional(j, "iterations", s.iterations, sec);
    std::string space = gdistill::to_string(s.guidance_space);
    detail::read_optional(j, "guidance_space", space, sec);
    s.guidance_space = parse_guidance_space(space);
    detail::read_optional(j, "guidance_scale", s.guidance_scale, sec);
    detail::read_optional(j, "density_control_enabled", s.density_control_enabled, sec);
    if (j.contains("learning_rates")) {
        nlohmann::json merged = defaults.learning_rates.to_json();
        const auto& lr = j.at("learning_rates");
        detail::reject_unknown_keys(lr, {"position", "scale", "rotation", "opacity", "color"}, sec + ".learning_rates");
        merged.update(lr);
        s.learning_rates = LearningRates::from_json(merged);
    }
    if (j.contains("noise_bounds")) s.noise_bounds = NoiseBoundSchedule::from_json(j.at("noise_bounds"));
    s.validate();
    return s;
}

TrainState TrainState::fresh(GaussianScene scene, std::uint64_t seed, AdamSettings adam) {
    TrainState s;
    s.optimizer = SceneOptimizer(scene.size(), adam);
    s.stats.resize(scene.size());
    s.scene = std::move(scene);
    s.rng = Rng(seed);
    return s;
}

void TrainState::begin_next_stage() {
    ++stage;
    iteration = 0;
    optimizer = SceneOptimizer(scene.size(), optimizer.settings());
    stats.resize(scene.size());
}

nlohmann::json StepRecord::to_json() const {
    nlohmann::json j = {{"stage", stage},
                        {"iteration", iteration},
                        {"u", u},
                        {"u_lower", u_lower},
                        {"u_upper", u_upper},
                        {"loss_proxy", std::isfinite(loss_proxy) ? nlohmann::json(loss_proxy) : nlohmann::json(nullptr)},
                        {"n", n},
                        {"skipped", skipped},
                        {"ms", millis}};
    if (skipped) j["skip_reason"] = skip_reason;
    return j;
}

nlohmann::json DensityEvent::to_json() const {
    nlohmann::json j = {{"stage", stage}, {"iteration", iteration}, {"kind", kind}, {"n_before", n_before},
                        {"n_after", n_after}};
    if (kind == "densify") {
        j["cloned"] = cloned;
        j["split"] = split;
    } else if (kind == "prune") {
        j["pruned"] = pruned;
    } else if (kind == "reset") {
        j["changed"] = changed;
        j["max_opacity"] = max_opacity;
    }
    return j;
}

DensityEvent DensityEvent::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw InvalidParameter("event is not a JSON object");
    DensityEvent e;
    try {
        e.stage = j.value("stage", 0);
        e.iteration = j.at("iteration").get<std::int64_t>();
        e.kind = j.at("kind").get<std::string>();
        e.n_before = j.at("n_before").get<std::size_t>();
        e.n_after = j.at("n_after").get<std::size_t>();
        e.cloned = j.value("cloned", std::size_t{0});
        e.split = j.value("split", std::size_t{0});
        e.pruned = j.value("pruned", std::size_t{0});
        e.changed = j.value("changed", std::size_t{0});
        e.max_opacity = j.value("max_opacity", 0.0);
    } catch (const nlohmann::json::exception& ex) {
        throw InvalidParameter(fmt::format("malformed event: {}", ex.what()));
    }
    if (e.kind != "densify" && e.kind != "prune" && e.kind != "reset") {
        throw InvalidParameter(fmt::format("unknown event kind '{}'", e.kind));
    }
    return e;
}

JsonlRunLog::JsonlRunLog(const fs::path& dir) {
    fs::create_directories(dir);
    metrics_.open(dir / "metrics.jsonl", std::ios::app);
    events_.open(dir / "events.jsonl", std::ios::app);
    if (!metrics_ || !events_) throw IoError(fmt::format("cannot open logs under {}", dir.string()));
}

void JsonlRunLog::on_step(const StepRecord& r) { metrics_ << r.to_json().dump() << '\n' << std::flush; }

void JsonlRunLog::on_event(const DensityEvent& e) { events_ << e.to_json().dump() << '\n' << std::flush; }

void JsonlRunLog::on_message(const std::string& m) { spdlog::warn("{}", m); }

StepRecord train_step(TrainState& s, const StageConfig& stage, TrainContext& ctx) {
    const auto t0 = std::chrono::steady_clock::now();
    if (!ctx.provider || !ctx.views) throw InvalidParameter("train_step needs a provider and a view source");
    const std::int64_t it = s.iteration;
    if (it < 0 || it >= stage.iterations) {
        throw InvalidParameter(fmt::format("iteration {} outside stage '{}' [0, {})", it, stage.name, stage.iterations));
    }
    const std::size_t n = s.scene.size();
    if (s.optimizer.size() != n || s.stats.size() != n) {
        throw InternalConsistencyError(fmt::format("state misaligned: scene {}, optimizer {}, stats {}", n,
                                                   s.optimizer.size(), s.stats.size()));
    }

    StepRecord rec;
    rec.stage = s.stage;
    rec.iteration = it;

    const View view = ctx.views->next(stage.resolution, s.rng);
    const NoiseBounds bounds = stage.noise_bounds.bounds_at(it, stage.iterations);
    rec.u_lower = bounds.lower;
    rec.u_upper = bounds.upper;
    rec.u = stage.noise_bounds.sample(it, stage.iterations, s.rng);
    rec.seed = s.rng.next_u64();

    const RenderOutput<float> out = render(s.scene, view.camera, ctx.raster);
    GuidanceRequest req;
    req.image = out.image;
    req.noise_fraction = rec.u;
    req.seed = rec.seed;
    req.prompt = ctx.prompt;
    req.guidance_scale = stage.guidance_scale;
    req.space = stage.guidance_space;
    req.view_id = view.view_id;
    const GuidanceResponse resp = guide(*ctx.provider, req);

    double sq = 0.0;
    for (float g : resp.grad_image.data) sq += static_cast<double>(g) * g;
    rec.loss_proxy = sq;

    if (!std::isfinite(sq)) {
        rec.skipped = true;
        rec.skip_reason = "non-finite guidance gradient";
    } else {
        const SceneGradients<float> grads = render_backward(s.scene, view.camera, resp.grad_image, ctx.raster);
        if (!grads.all_finite()) {
            rec.skipped = true;
            rec.skip_reason = "non-finite scene gradient";
        } else {
            if (stage.density_control_enabled) s.stats.accumulate(grads, stage.resolution, stage.resolution);
            const bool finetune =
                stage.density_control_enabled && it >= finetune_start(ctx.density, stage.iterations);
            s.optimizer.step(s.scene, grads, stage.learning_rates, finetune ? 0.1 : 1.0);
        }
    }
    if (rec.skipped) {
        ++s.skipped_steps;
        notify_message(ctx, fmt::format("{} iteration {}: step skipped ({})", stage.name, it, rec.skip_reason));
    }

    if (stage.density_control_enabled) run_density_events(s, stage, ctx, it);
    ++s.iteration;

    rec.n = s.scene.size();
    rec.millis = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    for (auto* o : ctx.observers) o->on_step(rec);
    return rec;
}

StageResult run_stage(TrainState& s, const StageConfig& stage, TrainContext& ctx, const RunStageOptions& o) {
    stage.validate();
    if (!ctx.provider || !ctx.views) throw InvalidParameter("run_stage needs a provider and a view source");
    const ProviderCapabilities caps = ctx.provider->capabilities();
    if (!caps.supports(stage.guidance_space, stage.resolution)) {
        throw ConfigError(fmt::format("guidance provider cannot serve {} space at {}x{} required by {}",
                                      gdistill::to_string(stage.guidance_space), stage.resolution, stage.resolution,
                                      stage.name));
    }
    if (stage.density_control_enabled) ctx.density.validate();

    StageResult result;
    const bool checkpoints = !o.checkpoint_dir.empty() && o.checkpoint_interval > 0;
    const auto write_checkpoint = [&](std::int64_t it) {
        const fs::path p = checkpoint_path(o, stage, it);
        try {
            save_checkpoint(p, s, o.config_snapshot);
        } catch (const IoError& e) {
            const std::string last = result.last_checkpoint ? result.last_checkpoint->string() : "<none>";
            throw CheckpointError(fmt::format("checkpoint {} failed: {} (last good checkpoint: {})", p.string(),
                                              e.what(), last),
                                  last);
        }
        result.last_checkpoint = p;
    };
    const std::vector<View> viz_probes = (!o.visualization_dir.empty() && o.visualization_interval > 0)
                                             ? ctx.views->probes(stage.resolution)
                                             : std::vector<View>{};

    while (s.iteration < stage.iterations) {
        if (o.stop_at && s.iteration >= *o.stop_at) return result;
        if (o.interrupt && o.interrupt->load()) {
            if (checkpoints) write_checkpoint(s.iteration);
            result.interrupted = true;
            return result;
        }
        train_step(s, stage, ctx);
        if (checkpoints && s.iteration % o.checkpoint_interval == 0 && s.iteration < stage.iterations) {
            write_checkpoint(s.iteration);
        }
        if (!viz_probes.empty() && s.iteration % o.visualization_interval == 0) {
            dump_visualization(s, stage, ctx, viz_probes, o.visualization_dir);
        }
    }
    if (checkpoints) write_checkpoint(s.iteration);
    result.completed = true;
    return result;
}

std::vector<fs::path> dump_visualization(const TrainState& s, const StageConfig& stage, TrainContext& ctx,
                                         const std::vector<View>& probes, const fs::path& dir) {
    if (!ctx.provider->capabilities().previews) {
        notify_message(ctx, FeatureUnavailable("guidance provider does not return previews; no visualization written")
                                .what());
        return {};
    }
    fs::create_directories(dir);
    // Independent of the training RNG so dumps never perturb the run.
    Rng rng(0x9e3779b97f4a7c15ULL ^ static_cast<std::uint64_t>(s.iteration) ^
            (static_cast<std::uint64_t>(s.stage) << 48));
    const std::int64_t it = std::min(s.iteration, stage.iterations);
    std::vector<fs::path> written;
    for (std::size_t k = 0; k < probes.size(); ++k) {
        GuidanceRequest req;
        req.image = render(s.scene, probes[k].camera, ctx.raster).image;
        req.noise_fraction = stage.noise_bounds.sample(it, stage.iterations, rng);
        req.seed = rng.next_u64();
        req.prompt = ctx.prompt;
        req.guidance_scale = stage.guidance_scale;
        req.space = stage.guidance_space;
        req.view_id = probes[k].view_id;
        const GuidanceResponse resp = guide(*ctx.provider, req);
        if (!resp.x_hat_preview) {
            notify_message(ctx, "guidance provider returned no preview; visualization skipped");
            return written;
        }
        const int cam_id = probes[k].view_id.value_or(static_cast<int>(k));
        const fs::path p =
            dir / fmt::format("{}_it{:06d}_cam{:02d}_u{:.3f}.png", stage.name, s.iteration, cam_id, req.noise_fraction);
        write_png(p, side_by_side(req.image, *resp.x_hat_preview));
        written.push_back(p);
    }
    return written;
}

} // namespace gdistill
