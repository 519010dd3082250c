#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace gdistill {

template <typename T> using Vec2 = Eigen::Matrix<T, 2, 1>;
template <typename T> using Vec3 = Eigen::Matrix<T, 3, 1>;
template <typename T> using Vec4 = Eigen::Matrix<T, 4, 1>;
template <typename T> using Mat2 = Eigen::Matrix<T, 2, 2>;
template <typename T> using Mat3 = Eigen::Matrix<T, 3, 3>;

/// Unit quaternion stored as (w, x, y, z).
template <typename T> using Quat = Vec4<T>;

template <typename T> T sigmoid(T x) { return T(1) / (T(1) + std::exp(-x)); }
template <typename T> T logit(T p) { return std::log(p / (T(1) - p)); }

/// Learnable scene: N anisotropic Gaussians with diffuse colors.
///
/// Structure-of-arrays layout; every array has length N.
///   - log_scales:     log of per-axis standard deviation (world units)
///   - rotations:      unit quaternions (w, x, y, z)
///   - opacity_logits: opacity = sigmoid(logit)
///   - colors:         RGB in [0, 1]
template <typename T> struct BasicGaussianScene {
    std::vector<Vec3<T>> positions;
    std::vector<Vec3<T>> log_scales;
    std::vector<Quat<T>> rotations;
    std::vector<T> opacity_logits;
    std::vector<Vec3<T>> colors;

    std::size_t size() const { return positions.size(); }
    bool empty() const { return positions.empty(); }

    T opacity(std::size_t i) const { return sigmoid(opacity_logits[i]); }

    void resize(std::size_t n) {
        positions.resize(n, Vec3<T>::Zero());
        log_scales.resize(n, Vec3<T>::Zero());
        rotations.resize(n, Quat<T>(T(1), T(0), T(0), T(0)));
        opacity_logits.resize(n, T(0));
        colors.resize(n, Vec3<T>::Zero());
    }

    /// Appends primitive `i` of `src`.
    void push_from(const BasicGaussianScene& src, std::size_t i) {
        positions.push_back(src.positions[i]);
        log_scales.push_back(src.log_scales[i]);
        rotations.push_back(src.rotations[i]);
        opacity_logits.push_back(src.opacity_logits[i]);
        colors.push_back(src.colors[i]);
    }

    template <typename U> BasicGaussianScene<U> cast() const {
        BasicGaussianScene<U> out;
        out.resize(size());
        for (std::size_t i = 0; i < size(); ++i) {
            out.positions[i] = positions[i].template cast<U>();
            out.log_scales[i] = log_scales[i].template cast<U>();
            out.rotations[i] = rotations[i].template cast<U>();
            out.opacity_logits[i] = static_cast<U>(opacity_logits[i]);
            out.colors[i] = colors[i].template cast<U>();
        }
        return out;
    }

    bool operator==(const BasicGaussianScene&) const = default;
};

using GaussianScene = BasicGaussianScene<float>;
using GaussianSceneD = BasicGaussianScene<double>;

/// Pinhole camera. `rotation`/`translation` map world to camera space
/// (x right, y down, z forward).
struct Camera {
    Mat3<double> rotation = Mat3<double>::Identity();
    Vec3<double> translation = Vec3<double>::Zero();
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 1;
    int height = 1;
    double near_clip = 0.01;
    Vec3<double> background = Vec3<double>::Zero();

    /// Throws InvalidParameter when the intrinsics or resolution are unusable.
    void validate() const;

    Vec3<double> center() const { return -rotation.transpose() * translation; }

    /// Camera at `eye` looking at `target`; the image y axis points along -`up`.
    static Camera look_at(const Vec3<double>& eye, const Vec3<double>& target,
                          const Vec3<double>& up, double fov_y_deg, int width, int height,
                          double near_clip = 0.01);
};

/// Σ = R S Sᵀ Rᵀ with S = diag(exp(log_scale)). The quaternion is normalized
/// internally so the result only depends on its direction.
template <typename T> Mat3<T> compute_cov3d(const Vec3<T>& log_scale, const Quat<T>& rotation);

/// Rotation matrix of the normalized quaternion (w, x, y, z).
template <typename T> Mat3<T> quat_to_matrix(const Quat<T>& q);

struct SceneInitOptions {
    std::size_t n_points = 1000;
    double radius = 1.0;
    double opacity_max = 0.3;
    double opacity_min = 0.02;
    std::uint64_t seed = 0;
};

/// Linear decay law used at initialization: opacity_max at the origin,
/// opacity_min at `radius` (clamped beyond it).
double initial_opacity(double distance, const SceneInitOptions& options);

/// Uniform samples in a ball with opacity decaying linearly with distance
/// from the origin, from `opacity_max` at the center to `opacity_min` at the
/// boundary. Per-axis standard deviation is half the mean point spacing.
GaussianScene init_scene(const SceneInitOptions& options);

/// Throws InvalidParameter when array lengths disagree or any field is
/// non-finite / quaternions are not unit within `quat_tol`.
template <typename T> void validate_scene(const BasicGaussianScene<T>& scene, double quat_tol = 1e-5);

} // namespace gdistill
