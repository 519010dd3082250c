#include "gdistill/annealing.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "gdistill/errors.hpp"

namespace gdistill {

NoiseBoundSchedule::NoiseBoundSchedule(std::vector<NoiseBreakpoint> breakpoints)
    : breakpoints_(std::move(breakpoints)) {
    if (breakpoints_.size() < 2) throw ConfigError("noise bound schedule needs at least two breakpoints");
    if (breakpoints_.front().progress != 0.0 || breakpoints_.back().progress != 1.0) {
        throw ConfigError("noise bound schedule must start at p=0 and end at p=1");
    }
    for (std::size_t i = 0; i < breakpoints_.size(); ++i) {
        const auto& b = breakpoints_[i];
        if (!(b.lower > 0.0 && b.lower <= b.upper && b.upper < 1.0)) {
            throw ConfigError(fmt::format("breakpoint {} needs 0 < lower <= upper < 1, got [{}, {}]", i, b.lower, b.upper));
        }
        if (i > 0) {
            const auto& prev = breakpoints_[i - 1];
            if (!(b.progress > prev.progress)) {
                throw ConfigError(fmt::format("breakpoint {} progress {} is not increasing", i, b.progress));
            }
            if (b.upper - b.lower > prev.upper - prev.lower) {
                throw ConfigError(fmt::format("breakpoint {} widens the noise range", i));
            }
        }
    }
}

NoiseBoundSchedule NoiseBoundSchedule::default_schedule() {
    return NoiseBoundSchedule({{0.0, 0.02, 0.98}, {0.3, 0.02, 0.98}, {1.0, 0.02, 0.50}});
}

NoiseBoundSchedule NoiseBoundSchedule::constant(double lower, double upper) {
    return NoiseBoundSchedule({{0.0, lower, upper}, {1.0, lower, upper}});
}

NoiseBoundSchedule NoiseBoundSchedule::preset(const std::string& name) {
    if (name == "default") return default_schedule();
    if (name == "fixed_low") return constant(0.02, 0.35);
    if (name == "fixed_mid") return constant(0.02, 0.65);
    if (name == "fixed_high") return constant(0.02, 0.98);
    throw ConfigError(fmt::format("unknown noise bound preset '{}'", name));
}

std::vector<std::string> NoiseBoundSchedule::preset_names() {
    return {"default", "fixed_low", "fixed_mid", "fixed_high"};
}

NoiseBounds NoiseBoundSchedule::bounds_at_progress(double p) const {
    p = std::clamp(p, 0.0, 1.0);
    auto hi = std::upper_bound(breakpoints_.begin(), breakpoints_.end(), p,
                               [](double v, const NoiseBreakpoint& b) { return v < b.progress; });
    if (hi == breakpoints_.end()) return {breakpoints_.back().lower, breakpoints_.back().upper};
    const auto& b1 = *hi;
    const auto& b0 = *(hi - 1);
    const double f = (p - b0.progress) / (b1.progress - b0.progress);
    return {b0.lower + f * (b1.lower - b0.lower), b0.upper + f * (b1.upper - b0.upper)};
}

NoiseBounds NoiseBoundSchedule::bounds_at(std::int64_t iteration, std::int64_t total) const {
    if (total < 1 || iteration < 0 || iteration > total) {
        throw InvalidParameter(fmt::format("bounds_at: need 0 <= iteration ({}) <= total ({}), total >= 1", iteration, total));
    }
    return bounds_at_progress(static_cast<double>(iteration) / static_cast<double>(total));
}

double NoiseBoundSchedule::sample(std::int64_t iteration, std::int64_t total, Rng& rng) const {
    const NoiseBounds b = bounds_at(iteration, total);
    const double u = b.lower + b.width() * rng.uniform();
    return std::clamp(u, b.lower, b.upper);
}

nlohmann::json NoiseBoundSchedule::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& b : breakpoints_) arr.push_back({b.progress, b.lower, b.upper});
    return arr;
}

NoiseBoundSchedule NoiseBoundSchedule::from_json(const nlohmann::json& j) {
    if (j.is_string()) return preset(j.get<std::string>());
    if (!j.is_array()) throw ConfigError("noise bound schedule must be an array of [p, lower, upper] or a preset name");
    std::vector<NoiseBreakpoint> bps;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto& t = j[i];
        if (!t.is_array() || t.size() != 3 || !t[0].is_number() || !t[1].is_number() || !t[2].is_number()) {
            throw ConfigError(fmt::format("noise bound breakpoint {} must be [p, lower, upper]", i));
        }
        bps.push_back({t[0].get<double>(), t[1].get<double>(), t[2].get<double>()});
    }
    return NoiseBoundSchedule(std::move(bps));
}

} // namespace gdistill
