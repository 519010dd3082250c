#pragma once

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gdistill/rasterizer.hpp"
#include "gdistill/rng.hpp"
#include "gdistill/scene.hpp"

namespace gdistill {

struct DensityControlConfig {
    std::int64_t densify_interval = 500;
    std::int64_t densify_start = 100;
    std::int64_t densify_end = 12000;
    /// Mean screen-space positional gradient above which a primitive is
    /// cloned or split (see GradStats for the normalization).
    double grad_threshold = 2e-4;
    /// World units; primitives whose largest scale exceeds it are split.
    double split_scale_threshold = 0.01;
    double split_factor = 1.6;
    int split_children = 2;
    double prune_opacity_threshold = 0.005;
    /// Fraction of the image area covered by the 99% ellipse.
    double prune_screen_area_threshold = 0.1;
    std::int64_t opacity_reset_iteration = 1000;
    double opacity_reset_value = 0.005;
    /// Length of the closing smoothing phase: no topology events and the
    /// position learning rate scaled by 0.1.
    std::int64_t finetune_iterations = 3000;
    /// Distance a clone is moved along its mean positional gradient, world units.
    double clone_step = 0.00064;

    /// Throws ConfigError on violated invariants.
    void validate() const;

    nlohmann::json to_json() const;
    /// Keys absent from `j` keep their defaults; unknown keys are rejected.
    static DensityControlConfig from_json(const nlohmann::json& j);
};

/// Per-primitive running statistics between densify events.
///
/// The screen-space gradient is normalized like a per-pixel-mean loss in
/// normalized device coordinates: g_ndc = (gx·W/2, gy·H/2) / (W·H), where
/// (gx, gy) is dL/d(mean2d) in pixels of a summed loss.
struct GradStats {
    std::vector<double> accum_pos_grad_norm;
    std::vector<std::uint32_t> observation_count;
    /// Running sum of the world-space positional gradient (clone direction).
    std::vector<Vec3<double>> accum_pos_grad3d;

    std::size_t size() const { return accum_pos_grad_norm.size(); }
    void resize(std::size_t n);
    void reset();
    /// Adds one view's gradients; only primitives visible in it are counted.
    void accumulate(const SceneGradients<float>& grads, int width, int height);
    double mean_norm(std::size_t i) const;

    nlohmann::json to_json() const;
    static GradStats from_json(const nlohmann::json& j);

    bool operator==(const GradStats&) const = default;
};

/// Maps each primitive of a new scene to the primitive of the old scene
/// whose optimizer state it inherits, or -1 for fresh state.
struct TopologyChange {
    std::vector<std::int64_t> source;
};

struct DensifyReport {
    std::size_t cloned = 0;
    std::size_t split = 0;
    std::size_t n_before = 0;
    std::size_t n_after = 0;
};

struct PruneReport {
    std::size_t pruned = 0;
    std::size_t n_before = 0;
    std::size_t n_after = 0;
};

/// True iff densify_start ≤ iteration < densify_end and the iteration is on
/// the densify_interval grid anchored at densify_start.
bool should_densify(std::int64_t iteration, const DensityControlConfig& config);

/// First iteration of the smoothing phase of a `total_iterations` stage:
/// max(densify_end, total_iterations - finetune_iterations).
std::int64_t finetune_start(const DensityControlConfig& config, std::int64_t total_iterations);

/// Clones small and splits large primitives whose mean screen-space gradient
/// reaches the threshold. Split children are sampled from the parent's own
/// Gaussian; clones are offset by one gradient step. Resets `stats` (resized
/// to the new count). Throws InternalConsistencyError if stats are misaligned.
GaussianScene densify(const GaussianScene& scene, GradStats& stats, const DensityControlConfig& config, Rng& rng,
                      DensifyReport* report = nullptr, TopologyChange* topology = nullptr);

/// Removes near-transparent primitives and those whose 99% footprint exceeds
/// the area threshold in any probe camera. Never empties the scene.
GaussianScene prune(const GaussianScene& scene, const DensityControlConfig& config, std::span<const Camera> probes,
                    const RasterSettings& raster = {}, PruneReport* report = nullptr, TopologyChange* topology = nullptr);

/// Sets each opacity to min(opacity, opacity_reset_value) through the logit.
/// The stored logit is chosen so the opacity never exceeds the reset value
/// in either float or double evaluation. Returns indices that changed.
std::vector<std::size_t> reset_opacity(GaussianScene& scene, const DensityControlConfig& config);

} // namespace gdistill
