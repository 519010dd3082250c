#pragma once

#include <json.hpp>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "gdistill/annealing.hpp"
#include "gdistill/density_control.hpp"
#include "gdistill/guidance.hpp"
#include "gdistill/optimizer.hpp"
#include "gdistill/rasterizer.hpp"
#include "gdistill/rng.hpp"
#include "gdistill/scene.hpp"
#include "gdistill/views.hpp"

namespace gdistill {

struct StageConfig {
    std::string name = "stage1";
    bool enabled = true;
    int resolution = 64;
    std::int64_t iterations = 15000;
    GuidanceSpace guidance_space = GuidanceSpace::Image;
    double guidance_scale = 100.0;
    LearningRates learning_rates;
    bool density_control_enabled = true;
    NoiseBoundSchedule noise_bounds = NoiseBoundSchedule::default_schedule();

    /// Coarse image-space stage: 64 px, 15000 iterations, density control on.
    static StageConfig stage1_defaults();
    /// Fine latent-space stage: 512 px, 5000 iterations, density control off.
    static StageConfig stage2_defaults();

    /// Throws ConfigError unless resolution ≥ 8, iterations ≥ 1 and every
    /// learning rate is finite and non-negative.
    void validate() const;
    nlohmann::json to_json() const;
    /// Keys absent from `j` keep the values of `defaults`.
    static StageConfig from_json(const nlohmann::json& j, const StageConfig& defaults);
};

/// Everything that evolves during training. Equal states produce equal futures.
struct TrainState {
    GaussianScene scene;
    SceneOptimizer optimizer;
    GradStats stats;
    Rng rng;
    int stage = 0;
    /// Completed iterations within the current stage.
    std::int64_t iteration = 0;
    std::int64_t skipped_steps = 0;

    static TrainState fresh(GaussianScene scene, std::uint64_t seed, AdamSettings adam = {});
    /// Advances to the next stage: iteration 0, fresh optimizer and stats.
    void begin_next_stage();

    bool operator==(const TrainState& o) const {
        return scene == o.scene && optimizer == o.optimizer && stats == o.stats && rng == o.rng &&
               stage == o.stage && iteration == o.iteration && skipped_steps == o.skipped_steps;
    }
};

struct StepRecord {
    int stage = 0;
    std::int64_t iteration = 0; // the iteration this step executed
    double u = 0.0;
    double u_lower = 0.0;
    double u_upper = 0.0;
    std::uint64_t seed = 0;
    double loss_proxy = 0.0; // ‖grad_image‖²
    std::size_t n = 0;
    bool skipped = false;
    std::string skip_reason;
    double millis = 0.0;

    nlohmann::json to_json() const;
};

struct DensityEvent {
    int stage = 0;
    std::int64_t iteration = 0;
    std::string kind; // "densify", "prune" or "reset"
    std::size_t n_before = 0;
    std::size_t n_after = 0;
    std::size_t cloned = 0;
    std::size_t split = 0;
    std::size_t pruned = 0;
    std::size_t changed = 0;
    double max_opacity = 0.0;

    nlohmann::json to_json() const;
    /// Throws InvalidParameter on missing or mistyped fields.
    static DensityEvent from_json(const nlohmann::json& j);
};

class TrainObserver {
public:
    virtual ~TrainObserver() = default;
    virtual void on_step(const StepRecord&) {}
    virtual void on_event(const DensityEvent&) {}
    virtual void on_message(const std::string&) {}
};

/// Appends metrics and density events as JSON lines.
class JsonlRunLog final : public TrainObserver {
public:
    /// Opens (appending) `metrics.jsonl` and `events.jsonl` under `dir`.
    explicit JsonlRunLog(const std::filesystem::path& dir);
    void on_step(const StepRecord& r) override;
    void on_event(const DensityEvent& e) override;
    void on_message(const std::string& m) override;

private:
    std::ofstream metrics_;
    std::ofstream events_;
};

/// Collaborators of the loop that are not part of the evolving state.
struct TrainContext {
    GuidanceProvider* provider = nullptr;
    ViewSource* views = nullptr;
    std::string prompt;
    DensityControlConfig density;
    RasterSettings raster;
    std::vector<TrainObserver*> observers;
};

/// One optimization step at iteration `state.iteration` of `stage`:
/// camera → render → u → guide → backward → Adam → density events.
/// A non-finite gradient skips the parameter update (recorded in the
/// returned record) but the density schedule still advances.
StepRecord train_step(TrainState& state, const StageConfig& stage, TrainContext& ctx);

struct RunStageOptions {
    /// Checkpoints go to `<checkpoint_dir>/<stage>_it<iteration>`; empty disables them.
    std::filesystem::path checkpoint_dir;
    std::int64_t checkpoint_interval = 1000;
    /// Visualization dumps; empty directory or interval 0 disables them.
    std::filesystem::path visualization_dir;
    std::int64_t visualization_interval = 0;
    /// Stop (without a stage-end checkpoint) once this many iterations are done.
    std::optional<std::int64_t> stop_at;
    /// Polled once per step; when set the loop checkpoints and returns.
    const std::atomic<bool>* interrupt = nullptr;
    /// Stored in each checkpoint so a run can be resumed from it alone.
    nlohmann::json config_snapshot = nlohmann::json::object();
};

struct StageResult {
    bool completed = false;
    bool interrupted = false;
    std::optional<std::filesystem::path> last_checkpoint;
};

/// Runs the remaining iterations of `stage`. Throws ConfigError when the
/// provider cannot serve the stage's space/resolution and CheckpointError
/// (carrying the last good checkpoint) when a checkpoint cannot be written.
StageResult run_stage(TrainState& state, const StageConfig& stage, TrainContext& ctx, const RunStageOptions& options);

/// Writes `x | x̂` PNGs for each probe view. Returns the files written; none
/// (plus a warning to observers) when the provider has no previews.
std::vector<std::filesystem::path> dump_visualization(const TrainState& state, const StageConfig& stage,
                                                      TrainContext& ctx, const std::vector<View>& probes,
                                                      const std::filesystem::path& dir);

} // namespace gdistill
