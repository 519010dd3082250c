#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>

#include <fmt/format.h>

#include "gdistill/checkpoint.hpp"
#include "gdistill/echo_server.hpp"
#include "gdistill/errors.hpp"
#include "gdistill/png_io.hpp"
#include "gdistill/remote_provider.hpp"
#include "gdistill/trainer.hpp"
#include "support.hpp"

using namespace gdistill;
using gdistill::testing::TempDir;

namespace {

struct Recorder final : TrainObserver {
    std::vector<StepRecord> steps;
    std::vector<DensityEvent> events;
    std::vector<std::string> messages;
    std::atomic<bool>* interrupt = nullptr;
    std::int64_t interrupt_after = -1;

    void on_step(const StepRecord& r) override {
        steps.push_back(r);
        if (interrupt && r.iteration + 1 == interrupt_after) interrupt->store(true);
    }
    void on_event(const DensityEvent& e) override { events.push_back(e); }
    void on_message(const std::string& m) override { messages.push_back(m); }
};

/// Returns a non-finite gradient on every `period`-th call.
class FlakyProvider final : public GuidanceProvider {
public:
    explicit FlakyProvider(int period) : period_(period) {}
    ProviderCapabilities capabilities() const override { return inner_.capabilities(); }
    GuidanceResponse guide(const GuidanceRequest& r) override {
        GuidanceResponse resp = inner_.guide(r);
        if (++calls_ % period_ == 0) resp.grad_image.data[0] = std::numeric_limits<float>::quiet_NaN();
        return resp;
    }

private:
    NullProvider inner_;
    int period_;
    int calls_ = 0;
};

OracleSetupConfig small_oracle(int res = 16, int views = 6) {
    OracleSetupConfig c;
    c.views = views;
    c.heldout_views = 2;
    c.resolution = res;
    return c;
}

DensityControlConfig compressed_density() {
    DensityControlConfig d;
    d.densify_start = 10;
    d.densify_interval = 20;
    d.densify_end = 50;
    d.opacity_reset_iteration = 25;
    d.grad_threshold = 1e-6;
    return d;
}

StageConfig small_stage(std::int64_t iterations, int res = 16) {
    StageConfig s;
    s.resolution = res;
    s.iterations = iterations;
    return s;
}

struct OracleRig {
    OracleSetup setup;
    OracleProvider provider;
    FixedViewSource views;
    TrainContext ctx;

    OracleRig(const GaussianScene& target, const OracleSetupConfig& c)
        : setup(make_oracle_setup(target, c)),
          provider(setup.train_targets, NoiseSchedule()),
          views(setup.train_cameras) {
        ctx.provider = &provider;
        ctx.views = &views;
        ctx.prompt = "three blobs";
    }
};

double train_mse(const GaussianScene& scene, const OracleSetup& setup) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& [id, cam] : setup.train_cameras) {
        const ImageF img = render(scene, cam, {}).image;
        const ImageF& t = setup.train_targets.at(id);
        for (std::size_t k = 0; k < img.data.size(); ++k) {
            const double d = img.data[k] - t.data[k];
            sum += d * d;
        }
        n += img.data.size();
    }
    return sum / static_cast<double>(n);
}

GaussianScene make_init(std::size_t n, std::uint64_t seed) {
    SceneInitOptions o;
    o.n_points = n;
    o.seed = seed;
    return init_scene(o);
}

TrainState run_oracle(std::int64_t iterations, std::uint64_t seed, Recorder* rec = nullptr) {
    OracleRig rig(three_gaussian_scene(), small_oracle());
    rig.ctx.density = compressed_density();
    if (rec) rig.ctx.observers.push_back(rec);
    TrainState s = TrainState::fresh(make_init(60, seed), seed);
    run_stage(s, small_stage(iterations), rig.ctx, {});
    return s;
}

} // namespace

TEST(StageConfig, DefaultsAndJson) {
    const StageConfig s1 = StageConfig::stage1_defaults();
    EXPECT_EQ(s1.resolution, 64);
    EXPECT_EQ(s1.iterations, 15000);
    EXPECT_TRUE(s1.density_control_enabled);
    EXPECT_EQ(s1.guidance_space, GuidanceSpace::Image);
    const StageConfig s2 = StageConfig::stage2_defaults();
    EXPECT_EQ(s2.resolution, 512);
    EXPECT_EQ(s2.iterations, 5000);
    EXPECT_FALSE(s2.density_control_enabled);
    EXPECT_EQ(s2.guidance_space, GuidanceSpace::Latent);

    const StageConfig back = StageConfig::from_json(s2.to_json(), s1);
    EXPECT_EQ(back.to_json(), s2.to_json());
    const StageConfig partial = StageConfig::from_json({{"iterations", 7}}, s2);
    EXPECT_EQ(partial.iterations, 7);
    EXPECT_EQ(partial.resolution, 512);
    EXPECT_THROW(StageConfig::from_json({{"iteration", 7}}, s1), ConfigError);
    EXPECT_THROW(StageConfig::from_json({{"resolution", 4}}, s1), ConfigError);
    EXPECT_THROW(StageConfig::from_json({{"guidance_space", "pixels"}}, s1), ConfigError);
}

TEST(DensityEventJson, RoundTripsAndRejectsMissingFields) {
    DensityEvent e{1, 600, "densify", 10, 14, 3, 1};
    e.max_opacity = 0.25;
    const DensityEvent back = DensityEvent::from_json(nlohmann::json::parse(e.to_json().dump()));
    EXPECT_EQ(back.to_json(), e.to_json());
    auto j = e.to_json();
    j.erase("kind");
    EXPECT_THROW(DensityEvent::from_json(j), InvalidParameter);
    j = e.to_json();
    j["iteration"] = "six hundred";
    EXPECT_THROW(DensityEvent::from_json(j), InvalidParameter);
}

TEST(TrainStep, ZeroGradientLeavesSceneUnchanged) {
    const GaussianScene target = three_gaussian_scene();
    OracleRig rig(target, small_oracle());
    TrainState s = TrainState::fresh(target, 3);
    StageConfig stage = small_stage(50);
    stage.density_control_enabled = false;
    for (int k = 0; k < 50; ++k) {
        const StepRecord r = train_step(s, stage, rig.ctx);
        EXPECT_EQ(r.loss_proxy, 0.0);
        EXPECT_FALSE(r.skipped);
    }
    EXPECT_EQ(s.scene, target);
    EXPECT_EQ(s.iteration, 50);
    EXPECT_EQ(s.optimizer.step_count(), 50);
}

TEST(TrainStep, RecordsSampledNoiseWithinBounds) {
    Recorder rec;
    run_oracle(120, 5, &rec);
    ASSERT_EQ(rec.steps.size(), 120u);
    for (std::size_t k = 0; k < rec.steps.size(); ++k) {
        const StepRecord& r = rec.steps[k];
        EXPECT_EQ(r.iteration, static_cast<std::int64_t>(k));
        EXPECT_GE(r.u, r.u_lower);
        EXPECT_LE(r.u, r.u_upper);
        EXPECT_GT(r.u, 0.0);
        EXPECT_LT(r.u, 1.0);
    }
}

TEST(TrainStep, SameSeedSameRunDifferentSeedDifferentRun) {
    const TrainState a = run_oracle(100, 11);
    const TrainState b = run_oracle(100, 11);
    EXPECT_TRUE(a == b);
    const TrainState c = run_oracle(100, 12);
    EXPECT_FALSE(a == c);
}

TEST(TrainStep, NonFiniteGradientSkipsUpdateButScheduleAdvances) {
    FlakyProvider provider(3);
    RandomViewSource views(CameraSamplerConfig{});
    Recorder rec;
    TrainContext ctx;
    ctx.provider = &provider;
    ctx.views = &views;
    ctx.density = compressed_density();
    ctx.observers.push_back(&rec);
    TrainState s = TrainState::fresh(make_init(40, 21), 21);
    run_stage(s, small_stage(60), ctx, {});
    EXPECT_EQ(s.skipped_steps, 20);
    EXPECT_EQ(s.optimizer.step_count(), 40);
    int skipped = 0;
    for (const auto& r : rec.steps) {
        if (r.skipped) {
            ++skipped;
            EXPECT_FALSE(r.skip_reason.empty());
        }
    }
    EXPECT_EQ(skipped, 20);
    bool reset_seen = false;
    for (const auto& e : rec.events) reset_seen |= e.kind == "reset" && e.iteration == 25;
    EXPECT_TRUE(reset_seen);
    EXPECT_NO_THROW(validate_scene(s.scene));
}

TEST(TrainStep, DensityControlOffKeepsCountConstant) {
    OracleRig rig(three_gaussian_scene(), small_oracle());
    rig.ctx.density = compressed_density();
    Recorder rec;
    rig.ctx.observers.push_back(&rec);
    TrainState s = TrainState::fresh(make_init(50, 4), 4);
    StageConfig stage = small_stage(80);
    stage.density_control_enabled = false;
    run_stage(s, stage, rig.ctx, {});
    EXPECT_TRUE(rec.events.empty());
    for (const auto& r : rec.steps) EXPECT_EQ(r.n, 50u);
}

TEST(TrainStep, InfiniteGradThresholdNeverGrowsTheScene) {
    NullProvider provider;
    RandomViewSource views(CameraSamplerConfig{});
    DensityControlConfig d = compressed_density();
    d.grad_threshold = std::numeric_limits<double>::infinity();
    d.opacity_reset_iteration = 1000000;
    Recorder rec;
    TrainContext ctx{&provider, &views, "", d, {}, {&rec}};

    // Some primitives start prunable, so the count may fall but never rise.
    GaussianScene scene = make_init(80, 8);
    for (std::size_t i = 0; i < scene.size(); i += 4) scene.opacity_logits[i] = static_cast<float>(logit(0.001));
    TrainState s = TrainState::fresh(scene, 8);
    run_stage(s, small_stage(60), ctx, {});
    std::size_t prev = 80;
    for (const auto& r : rec.steps) {
        EXPECT_LE(r.n, prev);
        if (r.n != prev) {
            bool prune_here = false;
            for (const auto& e : rec.events) prune_here |= e.kind == "prune" && e.iteration == r.iteration;
            EXPECT_TRUE(prune_here) << "count changed at " << r.iteration;
        }
        prev = r.n;
    }
    for (const auto& e : rec.events) {
        if (e.kind == "densify") {
            EXPECT_EQ(e.n_after, e.n_before);
            EXPECT_EQ(e.cloned + e.split, 0u);
        }
    }
    EXPECT_LT(s.scene.size(), 80u);

    // Nothing prunable: the count is exactly constant.
    Recorder quiet;
    ctx.observers = {&quiet};
    std::vector<Camera> probe_cams;
    for (const View& v : views.probes(16)) probe_cams.push_back(v.camera);
    const GaussianScene settled = prune(make_init(80, 9), d, probe_cams, {});
    TrainState t = TrainState::fresh(settled, 9);
    run_stage(t, small_stage(60), ctx, {});
    for (const auto& r : quiet.steps) EXPECT_EQ(r.n, settled.size());
    EXPECT_GT(settled.size(), 60u);
}

TEST(TrainStep, OpacityResetBoundsEveryPrimitive) {
    Recorder rec;
    run_oracle(30, 13, &rec);
    bool seen = false;
    for (const auto& e : rec.events) {
        if (e.kind != "reset") continue;
        seen = true;
        EXPECT_EQ(e.iteration, 25);
        EXPECT_LE(e.max_opacity, 0.005);
    }
    EXPECT_TRUE(seen);
}

TEST(RunStage, ResumeFromCheckpointIsBitExact) {
    const TrainState reference = run_oracle(70, 17);

    TempDir dir("resume");
    const auto resume_run = [&](std::int64_t cut) {
        OracleRig rig(three_gaussian_scene(), small_oracle());
        rig.ctx.density = compressed_density();
        TrainState s = TrainState::fresh(make_init(60, 17), 17);
        RunStageOptions first;
        first.stop_at = cut;
        const StageResult r1 = run_stage(s, small_stage(70), rig.ctx, first);
        EXPECT_FALSE(r1.completed);
        EXPECT_EQ(s.iteration, cut);
        const auto path = dir / fmt::format("cut{}", cut);
        save_checkpoint(path, s, {{"note", "resume"}});

        Checkpoint cp = load_checkpoint(path);
        EXPECT_TRUE(cp.state == s);
        EXPECT_EQ(cp.config["note"], "resume");
        OracleRig rig2(three_gaussian_scene(), small_oracle());
        rig2.ctx.density = compressed_density();
        const StageResult r2 = run_stage(cp.state, small_stage(70), rig2.ctx, {});
        EXPECT_TRUE(r2.completed);
        return cp.state;
    };
    for (std::int64_t cut : {1, 10, 25, 26, 37, 69}) EXPECT_TRUE(resume_run(cut) == reference) << "cut " << cut;
}

TEST(RunStage, InterruptWritesCheckpointThatResumesBitExact) {
    const TrainState reference = run_oracle(70, 19);
    TempDir dir("interrupt");
    std::atomic<bool> stop{false};
    Recorder rec;
    rec.interrupt = &stop;
    rec.interrupt_after = 33;

    OracleRig rig(three_gaussian_scene(), small_oracle());
    rig.ctx.density = compressed_density();
    rig.ctx.observers.push_back(&rec);
    TrainState s = TrainState::fresh(make_init(60, 19), 19);
    RunStageOptions o;
    o.checkpoint_dir = dir.path();
    o.checkpoint_interval = 1000;
    o.interrupt = &stop;
    const StageResult r = run_stage(s, small_stage(70), rig.ctx, o);
    EXPECT_TRUE(r.interrupted);
    EXPECT_FALSE(r.completed);
    ASSERT_TRUE(r.last_checkpoint.has_value());
    EXPECT_EQ(r.last_checkpoint->filename(), "stage1_it000033");

    Checkpoint cp = load_checkpoint(*r.last_checkpoint);
    EXPECT_EQ(cp.state.iteration, 33);
    OracleRig rig2(three_gaussian_scene(), small_oracle());
    rig2.ctx.density = compressed_density();
    run_stage(cp.state, small_stage(70), rig2.ctx, {});
    EXPECT_TRUE(cp.state == reference);
}

TEST(RunStage, WritesPeriodicAndFinalCheckpoints) {
    TempDir dir("periodic");
    OracleRig rig(three_gaussian_scene(), small_oracle());
    TrainState s = TrainState::fresh(make_init(20, 2), 2);
    RunStageOptions o;
    o.checkpoint_dir = dir.path();
    o.checkpoint_interval = 10;
    StageConfig stage = small_stage(25);
    stage.density_control_enabled = false;
    const StageResult r = run_stage(s, stage, rig.ctx, o);
    EXPECT_TRUE(r.completed);
    for (const char* name : {"stage1_it000010", "stage1_it000020", "stage1_it000025"}) {
        EXPECT_TRUE(std::filesystem::exists(dir / name / "scene.ply")) << name;
        EXPECT_TRUE(std::filesystem::exists(dir / name / "state.json")) << name;
    }
    EXPECT_EQ(r.last_checkpoint, dir / "stage1_it000025");
    EXPECT_EQ(load_checkpoint(dir / "stage1_it000025").state, s);
}

TEST(RunStage, UnwritableCheckpointDirectoryIsCheckpointError) {
    TempDir dir("unwritable");
    const auto blocker = dir / "file";
    std::ofstream(blocker) << "x";
    OracleRig rig(three_gaussian_scene(), small_oracle());
    TrainState s = TrainState::fresh(make_init(20, 2), 2);
    RunStageOptions o;
    o.checkpoint_dir = blocker;
    o.checkpoint_interval = 5;
    StageConfig stage = small_stage(12);
    stage.density_control_enabled = false;
    EXPECT_THROW(run_stage(s, stage, rig.ctx, o), CheckpointError);
}

TEST(RunStage, CapabilityMismatchIsConfigError) {
    OracleRig rig(three_gaussian_scene(), small_oracle());
    TrainState s = TrainState::fresh(make_init(20, 2), 2);
    StageConfig latent = small_stage(5);
    latent.guidance_space = GuidanceSpace::Latent;
    EXPECT_THROW(run_stage(s, latent, rig.ctx, {}), ConfigError);
    EXPECT_THROW(run_stage(s, small_stage(5, 32), rig.ctx, {}), ConfigError);
    EXPECT_EQ(s.iteration, 0);
}

TEST(RunStage, OracleReconstructionErrorDecreasesOverWindows) {
    OracleRig rig(three_gaussian_scene(), small_oracle(32, 8));
    TrainState s = TrainState::fresh(make_init(300, 23), 23);
    StageConfig stage = small_stage(3000, 32);
    const double initial = train_mse(s.scene, rig.setup);
    std::vector<double> window_mse;
    for (std::int64_t stop = 1001; stop <= 3001; stop += 500) {
        RunStageOptions o;
        o.stop_at = std::min<std::int64_t>(stop, stage.iterations);
        run_stage(s, stage, rig.ctx, o);
        window_mse.push_back(train_mse(s.scene, rig.setup));
    }
    for (std::size_t k = 1; k < window_mse.size(); ++k) {
        EXPECT_LE(window_mse[k], window_mse[k - 1]) << "window ending at " << 1001 + 500 * k;
    }
    EXPECT_LT(window_mse.back(), 0.1 * initial);
}

TEST(Visualization, OraclePreviewPanelIsTheTarget) {
    TempDir dir("viz_oracle");
    OracleRig rig(three_gaussian_scene(), small_oracle());
    TrainState s = TrainState::fresh(make_init(30, 5), 5);
    const StageConfig stage = small_stage(10);
    const auto probes = rig.views.probes(16);
    const auto files = dump_visualization(s, stage, rig.ctx, probes, dir.path());
    ASSERT_EQ(files.size(), probes.size());
    for (std::size_t k = 0; k < files.size(); ++k) {
        const ImageF png = read_png(files[k]);
        ASSERT_EQ(png.width, 32);
        ASSERT_EQ(png.height, 16);
        const ImageF& target = rig.setup.train_targets.at(*probes[k].view_id);
        const ImageF x = render(s.scene, probes[k].camera, {}).image;
        for (int y = 0; y < 16; ++y) {
            for (int px = 0; px < 16; ++px) {
                for (int c = 0; c < 3; ++c) {
                    EXPECT_EQ(png.at(px + 16, y, c), quantize_unit(target.at(px, y, c)));
                    EXPECT_EQ(png.at(px, y, c), quantize_unit(x.at(px, y, c)));
                }
            }
        }
        const std::string name = files[k].filename().string();
        EXPECT_EQ(name.rfind(fmt::format("stage1_it000000_cam{:02d}_u", *probes[k].view_id), 0), 0u) << name;
    }
    EXPECT_EQ(dump_visualization(s, stage, rig.ctx, probes, dir.path()), files);
}

TEST(Visualization, NoPreviewProviderWarnsAndWritesNothing) {
    TempDir dir("viz_null");
    NullProvider provider;
    RandomViewSource views(CameraSamplerConfig{});
    Recorder rec;
    TrainContext ctx{&provider, &views, "", {}, {}, {&rec}};
    TrainState s = TrainState::fresh(make_init(10, 5), 5);
    EXPECT_TRUE(dump_visualization(s, small_stage(10), ctx, views.probes(16), dir.path() / "out").empty());
    ASSERT_EQ(rec.messages.size(), 1u);
    EXPECT_NE(rec.messages[0].find("preview"), std::string::npos);
    EXPECT_FALSE(std::filesystem::exists(dir.path() / "out"));

    rec.messages.clear();
    StageConfig stage = small_stage(10);
    stage.density_control_enabled = false;
    RunStageOptions o;
    o.visualization_dir = dir.path() / "run";
    o.visualization_interval = 5;
    run_stage(s, stage, ctx, o);
    EXPECT_FALSE(rec.messages.empty());
    EXPECT_FALSE(std::filesystem::exists(dir.path() / "run"));
}

TEST(Visualization, EchoPreviewAtLowNoiseMatchesRender) {
    TempDir dir("viz_echo");
    EchoServer server(EchoServerOptions{});
    RemoteProvider provider(RemoteProviderOptions{server.endpoint(), std::chrono::milliseconds(5000), 0});
    RandomViewSource views(CameraSamplerConfig{});
    TrainContext ctx{&provider, &views, "a chair", {}, {}, {}};
    TrainState s = TrainState::fresh(make_init(30, 6), 6);
    StageConfig stage = small_stage(10);
    stage.noise_bounds = NoiseBoundSchedule::constant(0.0004, 0.0004);
    const auto probes = views.probes(16);
    const auto files = dump_visualization(s, stage, ctx, probes, dir.path());
    ASSERT_EQ(files.size(), 8u);
    for (std::size_t k = 0; k < files.size(); ++k) {
        const ImageF png = read_png(files[k]);
        for (int y = 0; y < 16; ++y) {
            for (int x = 0; x < 16; ++x) {
                for (int c = 0; c < 3; ++c) EXPECT_NEAR(png.at(x + 16, y, c), png.at(x, y, c), 1.0 / 255 + 1e-6);
            }
        }
    }
}

TEST(Visualization, GuidanceScaleSweepProducesOnePreviewSetPerScale) {
    TempDir dir("viz_sweep");
    EchoServer server(EchoServerOptions{});
    RemoteProvider provider(RemoteProviderOptions{server.endpoint(), std::chrono::milliseconds(5000), 0});
    RandomViewSource views(CameraSamplerConfig{});
    TrainContext ctx{&provider, &views, "a chair", {}, {}, {}};
    TrainState s = TrainState::fresh(make_init(30, 6), 6);
    const auto probes = views.probes(16);
    for (double scale : {7.5, 25.0, 50.0, 100.0}) {
        StageConfig stage = small_stage(10);
        stage.guidance_scale = scale;
        const auto out = dir / fmt::format("s{}", scale);
        EXPECT_EQ(dump_visualization(s, stage, ctx, probes, out).size(), probes.size());
    }
    std::size_t sets = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir.path())) sets += e.is_directory();
    EXPECT_EQ(sets, 4u);
}

TEST(JsonlRunLog, AppendsOneLinePerRecord) {
    TempDir dir("jsonl");
    {
        JsonlRunLog log(dir.path());
        StepRecord r;
        r.iteration = 3;
        r.u = 0.5;
        log.on_step(r);
        log.on_step(r);
        log.on_event(DensityEvent{0, 100, "densify", 5, 7, 2, 0});
        log.on_message("hello");
    }
    std::ifstream metrics(dir / "metrics.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(metrics, line)) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_EQ(j["iteration"], 3);
        ++lines;
    }
    EXPECT_EQ(lines, 2);
    std::ifstream events(dir / "events.jsonl");
    ASSERT_TRUE(std::getline(events, line));
    EXPECT_EQ(DensityEvent::from_json(nlohmann::json::parse(line)).n_after, 7u);
}

TEST(TrainStep, SmoothingPhaseSuppressesResetAndSlowsPositions) {
    DensityControlConfig d = compressed_density();
    d.densify_end = 30;
    d.finetune_iterations = 20;
    d.opacity_reset_iteration = 45; // inside [40, 60)
    OracleRig rig(three_gaussian_scene(), small_oracle());
    rig.ctx.density = d;
    Recorder rec;
    rig.ctx.observers.push_back(&rec);
    TrainState s = TrainState::fresh(make_init(60, 29), 29);
    const StageConfig stage = small_stage(60);
    RunStageOptions o;
    o.stop_at = 40;
    run_stage(s, stage, rig.ctx, o);

    // From here on, one smoothing step moves positions by at most 0.1·lr.
    TrainState probe = s;
    const GaussianScene before = probe.scene;
    train_step(probe, stage, rig.ctx);
    double max_disp = 0.0;
    for (std::size_t i = 0; i < before.size(); ++i) {
        max_disp = std::max(max_disp,
                            (probe.scene.positions[i] - before.positions[i]).cast<double>().cwiseAbs().maxCoeff());
    }
    // Adam's per-step displacement is bounded by lr·(1-β1)/sqrt(1-β2) for a ramped history.
    EXPECT_LE(max_disp, 0.1 * stage.learning_rates.position * 3.2 + 1e-7);
    EXPECT_GT(max_disp, 0.0);

    run_stage(s, stage, rig.ctx, {});
    for (const auto& e : rec.events) EXPECT_LT(e.iteration, 40) << e.kind;
}
