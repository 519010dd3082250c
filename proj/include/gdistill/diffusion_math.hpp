#pragma once

#include <json.hpp>

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gdistill/errors.hpp"

namespace gdistill {

/// Below this ᾱ_t (or above 1 - this) the one-step denoiser and the L2
/// scale factor are numerically meaningless.
inline constexpr double kAlphaBarFloor = 1e-8;

/// Fixed variance schedule: β_t linear in t, ᾱ_t = Π_{s≤t} (1 - β_s), t ∈ [1, T].
class NoiseSchedule {
public:
    static constexpr const char* kKindLinear = "linear";

    NoiseSchedule() : NoiseSchedule(1000, 8.5e-4, 1.2e-2) {}
    NoiseSchedule(int timesteps, double beta_start, double beta_end);

    int timesteps() const { return timesteps_; }
    double beta_start() const { return beta_start_; }
    double beta_end() const { return beta_end_; }

    /// ᾱ_t for integer t ∈ [1, T]; throws InvalidParameter otherwise.
    double alpha_bar(int t) const;

    /// Maps a noise fraction u ∈ (0, 1) to t = round(u·T), clamped to [1, T].
    int timestep_from_fraction(double u) const;

    nlohmann::json to_json() const;
    static NoiseSchedule from_json(const nlohmann::json& j);

    bool operator==(const NoiseSchedule& o) const {
        return timesteps_ == o.timesteps_ && beta_start_ == o.beta_start_ && beta_end_ == o.beta_end_;
    }

private:
    int timesteps_;
    double beta_start_;
    double beta_end_;
    std::vector<double> alpha_bar_; // index t-1
};

/// SDS weighting w(t).
enum class SdsWeighting { ConstantOne, OneMinusAlphaBar };

struct SdsWeights {
    SdsWeighting kind = SdsWeighting::ConstantOne;

    double operator()(double alpha_bar) const {
        return kind == SdsWeighting::ConstantOne ? 1.0 : 1.0 - alpha_bar;
    }

    static SdsWeights parse(const std::string& name);
    std::string name() const;
};

/// β(t) = w(t)·√ᾱ_t / √(1-ᾱ_t), the scale that turns the SDS residual into
/// an L2 gradient. Throws DegenerateTimestep when ᾱ_t is not inside (floor, 1-floor).
double l2_scale(double alpha_bar, const SdsWeights& weights);

namespace detail {
inline void require_same_size(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw InvalidParameter(std::string(what) + ": operand sizes differ");
}
} // namespace detail

/// Forward diffusion x_t = √ᾱ·x + √(1-ᾱ)·ε for an explicit ᾱ ∈ [0, 1].
template <typename T>
std::vector<T> add_noise(std::span<const T> x, std::span<const T> eps, double alpha_bar) {
    detail::require_same_size(x.size(), eps.size(), "add_noise");
    if (!(alpha_bar >= 0.0 && alpha_bar <= 1.0)) throw InvalidParameter("add_noise: alpha_bar outside [0, 1]");
    const T a = static_cast<T>(std::sqrt(alpha_bar));
    const T b = static_cast<T>(std::sqrt(1.0 - alpha_bar));
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + b * eps[i];
    return out;
}

template <typename T>
std::vector<T> add_noise(std::span<const T> x, int t, std::span<const T> eps, const NoiseSchedule& schedule) {
    return add_noise(x, eps, schedule.alpha_bar(t));
}

/// One-step denoised image x̂ = (x_t - √(1-ᾱ)·ε̂) / √ᾱ.
template <typename T>
std::vector<T> denoise_one_step(std::span<const T> x_t, std::span<const T> eps_hat, double alpha_bar) {
    detail::require_same_size(x_t.size(), eps_hat.size(), "denoise_one_step");
    if (!(alpha_bar > kAlphaBarFloor) || alpha_bar > 1.0) {
        throw DegenerateTimestep("denoise_one_step: alpha_bar at or below the floor");
    }
    const T inv_a = static_cast<T>(1.0 / std::sqrt(alpha_bar));
    const T b = static_cast<T>(std::sqrt(1.0 - alpha_bar));
    std::vector<T> out(x_t.size());
    for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = (x_t[i] - b * eps_hat[i]) * inv_a;
    return out;
}

template <typename T>
std::vector<T> denoise_one_step(std::span<const T> x_t, std::span<const T> eps_hat, int t,
                                const NoiseSchedule& schedule) {
    return denoise_one_step(x_t, eps_hat, schedule.alpha_bar(t));
}

/// Classifier-free guidance ε_u + s·(ε_c - ε_u).
template <typename T>
std::vector<T> apply_cfg(std::span<const T> eps_uncond, std::span<const T> eps_cond, double scale) {
    detail::require_same_size(eps_uncond.size(), eps_cond.size(), "apply_cfg");
    if (!(scale >= 0.0)) throw InvalidParameter("apply_cfg: guidance scale must be >= 0");
    const T s = static_cast<T>(scale);
    std::vector<T> out(eps_uncond.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = eps_uncond[i] + s * (eps_cond[i] - eps_uncond[i]);
    return out;
}

/// SDS image-space gradient w(t)·(ε̂ - ε).
template <typename T>
std::vector<T> sds_gradient(std::span<const T> eps_hat, std::span<const T> eps, double alpha_bar,
                            const SdsWeights& weights) {
    detail::require_same_size(eps_hat.size(), eps.size(), "sds_gradient");
    const T w = static_cast<T>(weights(alpha_bar));
    std::vector<T> out(eps.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = w * (eps_hat[i] - eps[i]);
    return out;
}

template <typename T>
std::vector<T> sds_gradient(std::span<const T> eps_hat, std::span<const T> eps, int t, const NoiseSchedule& schedule,
                            const SdsWeights& weights) {
    return sds_gradient(eps_hat, eps, schedule.alpha_bar(t), weights);
}

/// Gradient of the scaled L2 loss β(t)/2·‖x - x̂‖², i.e. β(t)·(x - x̂).
template <typename T>
std::vector<T> l2_reparam_gradient(std::span<const T> x, std::span<const T> x_hat, double alpha_bar,
                                   const SdsWeights& weights) {
    detail::require_same_size(x.size(), x_hat.size(), "l2_reparam_gradient");
    const T beta = static_cast<T>(l2_scale(alpha_bar, weights));
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = beta * (x[i] - x_hat[i]);
    return out;
}

template <typename T>
std::vector<T> l2_reparam_gradient(std::span<const T> x, std::span<const T> x_hat, int t,
                                   const NoiseSchedule& schedule, const SdsWeights& weights) {
    return l2_reparam_gradient(x, x_hat, schedule.alpha_bar(t), weights);
}

} // namespace gdistill
