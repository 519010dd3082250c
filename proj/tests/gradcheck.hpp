#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include <fmt/format.h>

#include "gdistill/rasterizer.hpp"
#include "gdistill/rng.hpp"
#include "gdistill/scene.hpp"

namespace gdistill::testing {

struct GradCheckResult {
    std::size_t checked = 0;
    std::size_t failures = 0;
    double worst_excess = 0.0; // max of |a - fd| / max(atol, rtol·scale)
    std::string worst;
};

/// Central differences of L = Σ weights ⊙ render(scene) against
/// render_backward, parameter by parameter, in double precision.
inline GradCheckResult check_render_gradients(const GaussianSceneD& scene, const Camera& camera,
                                              const RasterSettings& settings, const ImageD& weights,
                                              double h = 1e-4, double rtol = 1e-3, double atol = 1e-6) {
    const auto loss = [&](const GaussianSceneD& s) {
        const ImageD img = render(s, camera, settings).image;
        double acc = 0.0;
        for (std::size_t k = 0; k < img.data.size(); ++k) acc += weights.data[k] * img.data[k];
        return acc;
    };
    const SceneGradients<double> g = render_backward(scene, camera, weights, settings);

    GradCheckResult result;
    const auto check = [&](const std::string& name, double analytic, const std::function<double&(GaussianSceneD&)>& ref) {
        GaussianSceneD plus = scene;
        GaussianSceneD minus = scene;
        ref(plus) += h;
        ref(minus) -= h;
        const double fd = (loss(plus) - loss(minus)) / (2 * h);
        const double err = std::abs(analytic - fd);
        const double allowed = std::max(atol, rtol * std::max(std::abs(fd), std::abs(analytic)));
        ++result.checked;
        if (err > allowed) ++result.failures;
        if (err / allowed > result.worst_excess) {
            result.worst_excess = err / allowed;
            result.worst = fmt::format("{} analytic={:.9g} fd={:.9g}", name, analytic, fd);
        }
    };

    for (std::size_t i = 0; i < scene.size(); ++i) {
        for (int c = 0; c < 3; ++c) {
            check(fmt::format("position[{}][{}]", i, c), g.positions[i][c],
                  [i, c](GaussianSceneD& s) -> double& { return s.positions[i][c]; });
            check(fmt::format("log_scale[{}][{}]", i, c), g.log_scales[i][c],
                  [i, c](GaussianSceneD& s) -> double& { return s.log_scales[i][c]; });
            check(fmt::format("color[{}][{}]", i, c), g.colors[i][c],
                  [i, c](GaussianSceneD& s) -> double& { return s.colors[i][c]; });
        }
        // The quaternion is normalized inside the renderer, so differences of
        // the raw components already live in the tangent space at unit norm.
        for (int c = 0; c < 4; ++c) {
            check(fmt::format("rotation[{}][{}]", i, c), g.rotations[i][c],
                  [i, c](GaussianSceneD& s) -> double& { return s.rotations[i][c]; });
        }
        check(fmt::format("opacity_logit[{}]", i), g.opacity_logits[i],
              [i](GaussianSceneD& s) -> double& { return s.opacity_logits[i]; });
    }
    return result;
}

inline ImageD random_weights(int w, int h, Rng& rng) {
    ImageD img(w, h);
    for (double& v : img.data) v = rng.uniform(-1.0, 1.0);
    return img;
}

} // namespace gdistill::testing
