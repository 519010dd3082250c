#include "gdistill/diffusion_math.hpp"

#include <fmt/format.h>

#include <algorithm>

namespace gdistill {

NoiseSchedule::NoiseSchedule(int timesteps, double beta_start, double beta_end)
    : timesteps_(timesteps), beta_start_(beta_start), beta_end_(beta_end) {
    if (timesteps < 2) throw InvalidParameter(fmt::format("noise schedule needs T >= 2, got {}", timesteps));
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw InvalidParameter(
            fmt::format("noise schedule needs 0 < beta_start <= beta_end < 1, got [{}, {}]", beta_start, beta_end));
    }
    alpha_bar_.resize(static_cast<std::size_t>(timesteps));
    double prod = 1.0;
    for (int t = 0; t < timesteps; ++t) {
        const double beta = beta_start + (beta_end - beta_start) * t / (timesteps - 1);
        prod *= 1.0 - beta;
        alpha_bar_[static_cast<std::size_t>(t)] = prod;
    }
    if (!(alpha_bar_.back() > 0.0)) throw InvalidParameter("noise schedule collapses to alpha_bar_T = 0");
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t < 1 || t > timesteps_) {
        throw InvalidParameter(fmt::format("timestep {} outside [1, {}]", t, timesteps_));
    }
    return alpha_bar_[static_cast<std::size_t>(t - 1)];
}

int NoiseSchedule::timestep_from_fraction(double u) const {
    if (!(u > 0.0 && u < 1.0)) throw InvalidParameter(fmt::format("noise fraction {} outside (0, 1)", u));
    const long t = std::lround(u * timesteps_);
    return static_cast<int>(std::clamp<long>(t, 1, timesteps_));
}

nlohmann::json NoiseSchedule::to_json() const {
    return {{"T", timesteps_}, {"beta_start", beta_start_}, {"beta_end", beta_end_}, {"kind", kKindLinear}};
}

NoiseSchedule NoiseSchedule::from_json(const nlohmann::json& j) {
    try {
        const std::string kind = j.value("kind", std::string(kKindLinear));
        if (kind != kKindLinear) throw ConfigError(fmt::format("unsupported noise schedule kind '{}'", kind));
        return NoiseSchedule(j.at("T").get<int>(), j.at("beta_start").get<double>(), j.at("beta_end").get<double>());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(fmt::format("malformed noise schedule: {}", e.what()));
    } catch (const InvalidParameter& e) {
        throw ConfigError(e.what());
    }
}

SdsWeights SdsWeights::parse(const std::string& name) {
    if (name == "constant") return {SdsWeighting::ConstantOne};
    if (name == "one_minus_alpha_bar") return {SdsWeighting::OneMinusAlphaBar};
    throw ConfigError(fmt::format("unknown SDS weighting '{}' (valid: constant, one_minus_alpha_bar)", name));
}

std::string SdsWeights::name() const {
    return kind == SdsWeighting::ConstantOne ? "constant" : "one_minus_alpha_bar";
}

double l2_scale(double alpha_bar, const SdsWeights& weights) {
    if (!(alpha_bar > kAlphaBarFloor && alpha_bar < 1.0 - kAlphaBarFloor)) {
        throw DegenerateTimestep(fmt::format("alpha_bar {} too close to 0 or 1 for the L2 scale", alpha_bar));
    }
    return weights(alpha_bar) * std::sqrt(alpha_bar) / std::sqrt(1.0 - alpha_bar);
}

} // namespace gdistill
