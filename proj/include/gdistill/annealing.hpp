#pragma once

#include <json.hpp>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gdistill/rng.hpp"

namespace gdistill {

struct NoiseBreakpoint {
    double progress; // p ∈ [0, 1], fraction of the stage's iterations
    double lower;    // u_lo
    double upper;    // u_hi

    bool operator==(const NoiseBreakpoint&) const = default;
};

struct NoiseBounds {
    double lower;
    double upper;
    double width() const { return upper - lower; }
};

/// Piecewise-linear lower/upper bounds on the sampled noise fraction u,
/// narrowing (never widening) as training progresses.
class NoiseBoundSchedule {
public:
    /// Throws ConfigError unless progress is strictly increasing from 0 to 1,
    /// 0 < lower ≤ upper < 1 everywhere and the width never grows.
    explicit NoiseBoundSchedule(std::vector<NoiseBreakpoint> breakpoints);

    /// [0, 0.02, 0.98] → [0.3, 0.02, 0.98] → [1, 0.02, 0.50]
    static NoiseBoundSchedule default_schedule();
    /// Fixed bounds for the whole run.
    static NoiseBoundSchedule constant(double lower, double upper);
    /// Named presets: "default" plus the constant-bounds ablations
    /// "fixed_low" [0.02, 0.35], "fixed_mid" [0.02, 0.65], "fixed_high" [0.02, 0.98].
    static NoiseBoundSchedule preset(const std::string& name);
    static std::vector<std::string> preset_names();

    NoiseBounds bounds_at_progress(double progress) const;
    /// Bounds at p = iteration / total_iterations; requires 0 ≤ iteration ≤ total, total ≥ 1.
    NoiseBounds bounds_at(std::int64_t iteration, std::int64_t total_iterations) const;
    /// u uniform on [u_lo, u_hi].
    double sample(std::int64_t iteration, std::int64_t total_iterations, Rng& rng) const;

    const std::vector<NoiseBreakpoint>& breakpoints() const { return breakpoints_; }

    /// JSON array of [p, lower, upper] triples.
    nlohmann::json to_json() const;
    static NoiseBoundSchedule from_json(const nlohmann::json& j);

    bool operator==(const NoiseBoundSchedule&) const = default;

private:
    std::vector<NoiseBreakpoint> breakpoints_;
};

} // namespace gdistill
