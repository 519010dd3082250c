#pragma once

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gdistill/density_control.hpp"
#include "gdistill/rasterizer.hpp"
#include "gdistill/scene.hpp"

namespace gdistill {

/// Per-parameter-class step sizes.
struct LearningRates {
    double position = 0.00064;
    double scale = 5e-3;
    double rotation = 1e-3;
    double opacity = 5e-2;
    double color = 1e-2;

    /// Throws ConfigError on negative or non-finite rates.
    void validate() const;
    nlohmann::json to_json() const;
    static LearningRates from_json(const nlohmann::json& j);
    bool operator==(const LearningRates&) const = default;
};

struct AdamSettings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
    bool operator==(const AdamSettings&) const = default;
};

/// Opacity logits are kept inside ±kOpacityLogitBound so that the float
/// sigmoid stays strictly inside (0, 1).
inline constexpr float kOpacityLogitBound = 15.0f;

/// Adam with bias correction, one moment pair per scalar parameter and one
/// shared step counter.
///
/// After each step quaternions that moved are renormalized, colors are
/// clamped to [0, 1] and opacity logits to ±kOpacityLogitBound. A class with
/// learning rate 0 is left bit-identical (its moments still update).
class SceneOptimizer {
public:
    explicit SceneOptimizer(std::size_t n = 0, AdamSettings settings = {});

    std::size_t size() const { return n_; }
    std::int64_t step_count() const { return step_; }
    const AdamSettings& settings() const { return settings_; }

    /// `position_lr_scale` multiplies the position rate (finetune decay).
    /// Throws InternalConsistencyError when sizes disagree.
    void step(GaussianScene& scene, const SceneGradients<float>& grads, const LearningRates& lr,
              double position_lr_scale = 1.0);

    /// Re-indexes the moments after densify/prune; -1 entries start at zero.
    void apply_topology(const TopologyChange& change);

    /// Zeroes the opacity moments of the given primitives.
    void reset_opacity_moments(std::span<const std::size_t> indices);

    nlohmann::json to_json() const;
    static SceneOptimizer from_json(const nlohmann::json& j);

    bool operator==(const SceneOptimizer&) const = default;

private:
    struct Moments {
        std::vector<float> m;
        std::vector<float> v;
        bool operator==(const Moments&) const = default;
    };
    static constexpr int kClasses = 5;
    static constexpr int kWidth[kClasses] = {3, 3, 4, 1, 3};

    std::size_t n_ = 0;
    std::int64_t step_ = 0;
    AdamSettings settings_;
    Moments moments_[kClasses];
};

} // namespace gdistill
