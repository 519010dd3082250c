#include "gdistill/optimizer.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "gdistill/errors.hpp"
#include "json_util.hpp"

namespace gdistill {
namespace {

enum Class { kPos = 0, kScale = 1, kRot = 2, kOpacity = 3, kColor = 4 };
constexpr const char* kClassNames[] = {"position", "scale", "rotation", "opacity", "color"};

struct AdamStep {
    float beta1, beta2, one_minus_beta1, one_minus_beta2;
    double bias1, bias2;
    double eps;

    // Returns the (unscaled) update and advances the moments.
    double operator()(float g, float& m, float& v) const {
        m = beta1 * m + one_minus_beta1 * g;
        v = beta2 * v + one_minus_beta2 * g * g;
        const double m_hat = m / bias1;
        const double v_hat = v / bias2;
        return m_hat / (std::sqrt(v_hat) + eps);
    }
};

} // namespace

void LearningRates::validate() const {
    const double rates[] = {position, scale, rotation, opacity, color};
    for (int k = 0; k < 5; ++k) {
        if (!(rates[k] >= 0.0) || !std::isfinite(rates[k])) {
            throw ConfigError(fmt::format("learning rate '{}' must be finite and >= 0 (got {})", kClassNames[k], rates[k]));
        }
    }
}

nlohmann::json LearningRates::to_json() const {
    return {{"position", position}, {"scale", scale}, {"rotation", rotation}, {"opacity", opacity}, {"color", color}};
}

LearningRates LearningRates::from_json(const nlohmann::json& j) {
    const std::string sec = "learning_rates";
    detail::reject_unknown_keys(j, {"position", "scale", "rotation", "opacity", "color"}, sec);
    LearningRates lr;
    detail::read_optional(j, "position", lr.position, sec);
    detail::read_optional(j, "scale", lr.scale, sec);
    detail::read_optional(j, "rotation", lr.rotation, sec);
    detail::read_optional(j, "opacity", lr.opacity, sec);
    detail::read_optional(j, "color", lr.color, sec);
    lr.validate();
    return lr;
}

SceneOptimizer::SceneOptimizer(std::size_t n, AdamSettings settings) : n_(n), settings_(settings) {
    for (int k = 0; k < kClasses; ++k) {
        moments_[k].m.assign(n * kWidth[k], 0.f);
        moments_[k].v.assign(n * kWidth[k], 0.f);
    }
}

void SceneOptimizer::step(GaussianScene& scene, const SceneGradients<float>& g, const LearningRates& lr,
                          double position_lr_scale) {
    if (scene.size() != n_ || g.positions.size() != n_ || g.opacity_logits.size() != n_) {
        throw InternalConsistencyError(
            fmt::format("optimizer holds {} entries, scene {}, gradients {}", n_, scene.size(), g.positions.size()));
    }
    ++step_;
    const AdamStep adam{static_cast<float>(settings_.beta1),
                        static_cast<float>(settings_.beta2),
                        static_cast<float>(1.0 - settings_.beta1),
                        static_cast<float>(1.0 - settings_.beta2),
                        1.0 - std::pow(settings_.beta1, static_cast<double>(step_)),
                        1.0 - std::pow(settings_.beta2, static_cast<double>(step_)),
                        settings_.eps};
    const double rates[kClasses] = {lr.position * position_lr_scale, lr.scale, lr.rotation, lr.opacity, lr.color};

    for (std::size_t i = 0; i < n_; ++i) {
        for (int c = 0; c < 3; ++c) {
            const std::size_t k = i * 3 + c;
            const double up = adam(g.positions[i][c], moments_[kPos].m[k], moments_[kPos].v[k]);
            if (rates[kPos] != 0.0) scene.positions[i][c] = static_cast<float>(scene.positions[i][c] - rates[kPos] * up);
            const double us = adam(g.log_scales[i][c], moments_[kScale].m[k], moments_[kScale].v[k]);
            if (rates[kScale] != 0.0) {
                scene.log_scales[i][c] = static_cast<float>(scene.log_scales[i][c] - rates[kScale] * us);
            }
            const double uc = adam(g.colors[i][c], moments_[kColor].m[k], moments_[kColor].v[k]);
            if (rates[kColor] != 0.0) {
                scene.colors[i][c] = std::clamp(static_cast<float>(scene.colors[i][c] - rates[kColor] * uc), 0.f, 1.f);
            }
        }

        bool rotated = false;
        for (int c = 0; c < 4; ++c) {
            const std::size_t k = i * 4 + c;
            const double ur = adam(g.rotations[i][c], moments_[kRot].m[k], moments_[kRot].v[k]);
            if (rates[kRot] != 0.0 && ur != 0.0) {
                scene.rotations[i][c] = static_cast<float>(scene.rotations[i][c] - rates[kRot] * ur);
                rotated = true;
            }
        }
        if (rotated) scene.rotations[i].normalize();

        const double uo = adam(g.opacity_logits[i], moments_[kOpacity].m[i], moments_[kOpacity].v[i]);
        if (rates[kOpacity] != 0.0) {
            scene.opacity_logits[i] = std::clamp(static_cast<float>(scene.opacity_logits[i] - rates[kOpacity] * uo),
                                                 -kOpacityLogitBound, kOpacityLogitBound);
        }
    }
}

void SceneOptimizer::apply_topology(const TopologyChange& change) {
    const std::size_t n = change.source.size();
    for (int k = 0; k < kClasses; ++k) {
        const int w = kWidth[k];
        Moments next{std::vector<float>(n * w, 0.f), std::vector<float>(n * w, 0.f)};
        for (std::size_t i = 0; i < n; ++i) {
            const std::int64_t src = change.source[i];
            if (src < 0) continue;
            if (static_cast<std::size_t>(src) >= n_) {
                throw InternalConsistencyError(fmt::format("topology source {} out of range ({})", src, n_));
            }
            for (int c = 0; c < w; ++c) {
                next.m[i * w + c] = moments_[k].m[src * w + c];
                next.v[i * w + c] = moments_[k].v[src * w + c];
            }
        }
        moments_[k] = std::move(next);
    }
    n_ = n;
}

void SceneOptimizer::reset_opacity_moments(std::span<const std::size_t> indices) {
    for (std::size_t i : indices) {
        if (i >= n_) throw InternalConsistencyError(fmt::format("opacity moment index {} out of range", i));
        moments_[kOpacity].m[i] = 0.f;
        moments_[kOpacity].v[i] = 0.f;
    }
}

nlohmann::json SceneOptimizer::to_json() const {
    nlohmann::json j = {{"n", n_},
                        {"step", step_},
                        {"beta1", settings_.beta1},
                        {"beta2", settings_.beta2},
                        {"eps", settings_.eps}};
    for (int k = 0; k < kClasses; ++k) {
        j["moments"][kClassNames[k]] = {{"m", moments_[k].m}, {"v", moments_[k].v}};
    }
    return j;
}

SceneOptimizer SceneOptimizer::from_json(const nlohmann::json& j) {
    try {
        AdamSettings s{j.at("beta1").get<double>(), j.at("beta2").get<double>(), j.at("eps").get<double>()};
        SceneOptimizer opt(j.at("n").get<std::size_t>(), s);
        opt.step_ = j.at("step").get<std::int64_t>();
        for (int k = 0; k < kClasses; ++k) {
            const auto& mj = j.at("moments").at(kClassNames[k]);
            auto m = mj.at("m").get<std::vector<float>>();
            auto v = mj.at("v").get<std::vector<float>>();
            if (m.size() != opt.n_ * kWidth[k] || v.size() != m.size()) {
                throw IoError(fmt::format("optimizer moments for '{}' have the wrong length", kClassNames[k]));
            }
            opt.moments_[k] = {std::move(m), std::move(v)};
        }
        return opt;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(fmt::format("malformed optimizer state: {}", e.what()));
    }
}

} // namespace gdistill
