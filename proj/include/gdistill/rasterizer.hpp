#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "gdistill/image.hpp"
#include "gdistill/scene.hpp"

namespace gdistill {

/// Mahalanobis radius of the 99% probability ellipse of a 2D Gaussian.
inline constexpr double kExtent99 = 3.0348542587702925; // sqrt(-2 ln 0.01)

struct RasterSettings {
    /// Isotropic dilation added to the screen-space covariance, px².
    double low_pass = 0.3;
    /// Per-pixel support of a splat, as a Mahalanobis radius. Outside it
    /// alpha is exactly zero (forward and backward agree).
    double support_sigma = 3.5;
    double alpha_max = 0.999;
    /// Compositing stops before transmittance would drop below this.
    double transmittance_min = 1e-4;
    int tile_size = 16;
};

/// A primitive projected to screen space.
template <typename T> struct Splat2D {
    Vec2<T> mean2d;
    Mat2<T> cov2d;
    Mat2<T> conic; // inverse of cov2d
    T depth = T(0);
    Vec3<T> color = Vec3<T>::Zero();
    T opacity = T(0);
    std::size_t source_index = 0;
};

/// EWA projection: mean2d is the pinhole projection of the camera-space
/// center, cov2d = J W Σ Wᵀ Jᵀ + low_pass·I. Returns nullopt when the center
/// is at or in front of the near plane, the covariance is degenerate, or the
/// 99% ellipse lies entirely outside the image.
template <typename T>
std::optional<Splat2D<T>> project_gaussian(const Vec3<T>& position, const Mat3<T>& cov3d, const Camera& camera,
                                           const RasterSettings& settings = {});

template <typename T> struct RenderOutput {
    Image<T> image;
    /// H×W accumulated opacity, 1 - final transmittance.
    std::vector<T> alpha_map;
    std::size_t splat_count = 0;
};

/// Sorted front-to-back alpha compositing over the camera background.
template <typename T>
RenderOutput<T> render(const BasicGaussianScene<T>& scene, const Camera& camera, const RasterSettings& settings = {});

template <typename T> struct SceneGradients {
    std::vector<Vec3<T>> positions;
    std::vector<Vec3<T>> log_scales;
    std::vector<Quat<T>> rotations;
    std::vector<T> opacity_logits;
    std::vector<Vec3<T>> colors;
    /// dL/d(mean2d) in pixels, zero for culled primitives.
    std::vector<Vec2<T>> mean2d;
    /// 1 where the primitive survived culling in this view.
    std::vector<unsigned char> visible;

    void resize(std::size_t n);
    bool all_finite() const;
};

/// Gradients of a scalar loss with respect to every scene parameter, given
/// dL/d(image). Uses the same sort order, support cutoff, alpha clamp and
/// early termination as `render`.
template <typename T>
SceneGradients<T> render_backward(const BasicGaussianScene<T>& scene, const Camera& camera,
                                  const Image<T>& d_loss_d_image, const RasterSettings& settings = {});

} // namespace gdistill
