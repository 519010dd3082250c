#include "gdistill/scene.hpp"

#include <Eigen/Geometry>
#include <fmt/format.h>

#include <algorithm>
#include <numbers>

#include "gdistill/errors.hpp"
#include "gdistill/rng.hpp"

namespace gdistill {

void Camera::validate() const {
    if (width < 1 || height < 1) {
        throw InvalidParameter(fmt::format("camera resolution must be >= 1, got {}x{}", width, height));
    }
    if (!(fx > 0.0) || !(fy > 0.0)) {
        throw InvalidParameter(fmt::format("camera focal lengths must be > 0, got ({}, {})", fx, fy));
    }
    if (!(near_clip > 0.0)) {
        throw InvalidParameter(fmt::format("camera near_clip must be > 0, got {}", near_clip));
    }
    if (!rotation.allFinite() || !translation.allFinite() || !std::isfinite(cx) || !std::isfinite(cy)) {
        throw InvalidParameter("camera extrinsics/principal point must be finite");
    }
}

Camera Camera::look_at(const Vec3<double>& eye, const Vec3<double>& target, const Vec3<double>& up,
                       double fov_y_deg, int width, int height, double near_clip) {
    const Vec3<double> forward = (target - eye).normalized();
    Vec3<double> right = forward.cross(up);
    if (right.norm() < 1e-9) {
        // Looking straight along `up`; any perpendicular works.
        right = forward.cross(std::abs(forward.x()) < 0.9 ? Vec3<double>::UnitX() : Vec3<double>::UnitY());
    }
    right.normalize();
    const Vec3<double> down = forward.cross(right);

    Camera cam;
    cam.rotation.row(0) = right.transpose();
    cam.rotation.row(1) = down.transpose();
    cam.rotation.row(2) = forward.transpose();
    cam.translation = -cam.rotation * eye;
    const double half = fov_y_deg * std::numbers::pi / 360.0;
    cam.fy = 0.5 * height / std::tan(half);
    cam.fx = cam.fy;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.width = width;
    cam.height = height;
    cam.near_clip = near_clip;
    return cam;
}

template <typename T> Mat3<T> quat_to_matrix(const Quat<T>& q_in) {
    const Quat<T> q = q_in.normalized();
    const T w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3<T> r;
    r << T(1) - T(2) * (y * y + z * z), T(2) * (x * y - w * z), T(2) * (x * z + w * y),
        T(2) * (x * y + w * z), T(1) - T(2) * (x * x + z * z), T(2) * (y * z - w * x),
        T(2) * (x * z - w * y), T(2) * (y * z + w * x), T(1) - T(2) * (x * x + y * y);
    return r;
}

template <typename T> Mat3<T> compute_cov3d(const Vec3<T>& log_scale, const Quat<T>& rotation) {
    if (!log_scale.allFinite() || !rotation.allFinite()) {
        throw InvalidParameter("compute_cov3d: non-finite scale or rotation");
    }
    if (rotation.norm() == T(0)) {
        throw InvalidParameter("compute_cov3d: zero quaternion");
    }
    const Mat3<T> r = quat_to_matrix(rotation);
    const Vec3<T> s = log_scale.array().exp();
    const Mat3<T> a = r * s.asDiagonal();
    Mat3<T> cov = a * a.transpose();
    // Exact symmetry regardless of rounding in the product.
    cov(1, 0) = cov(0, 1);
    cov(2, 0) = cov(0, 2);
    cov(2, 1) = cov(1, 2);
    return cov;
}

double initial_opacity(double distance, const SceneInitOptions& opt) {
    const double frac = std::clamp(distance / opt.radius, 0.0, 1.0);
    return opt.opacity_max - (opt.opacity_max - opt.opacity_min) * frac;
}

GaussianScene init_scene(const SceneInitOptions& opt) {
    if (opt.n_points == 0) {
        throw InvalidParameter("init_scene: n_points must be >= 1");
    }
    if (!(opt.radius > 0.0)) {
        throw InvalidParameter(fmt::format("init_scene: radius must be > 0, got {}", opt.radius));
    }
    if (!(opt.opacity_min > 0.0 && opt.opacity_min <= opt.opacity_max && opt.opacity_max < 1.0)) {
        throw InvalidParameter(fmt::format("init_scene: need 0 < opacity_min <= opacity_max < 1, got [{}, {}]",
                                           opt.opacity_min, opt.opacity_max));
    }

    Rng rng(opt.seed);
    GaussianScene scene;
    scene.resize(opt.n_points);

    const double sigma = 0.5 * opt.radius / std::cbrt(static_cast<double>(opt.n_points));
    const auto log_sigma = static_cast<float>(std::log(sigma));

    for (std::size_t i = 0; i < opt.n_points; ++i) {
        Vec3<double> dir(rng.normal(), rng.normal(), rng.normal());
        while (dir.norm() < 1e-12) dir = Vec3<double>(rng.normal(), rng.normal(), rng.normal());
        dir.normalize();
        const double r = opt.radius * std::cbrt(rng.uniform());
        const Vec3<double> p = r * dir;
        scene.positions[i] = p.cast<float>();

        // Decay law evaluated on the stored (float) position.
        const double opacity = initial_opacity(scene.positions[i].cast<double>().norm(), opt);
        scene.opacity_logits[i] = static_cast<float>(logit(opacity));

        scene.log_scales[i] = Vec3<float>::Constant(log_sigma);
        scene.rotations[i] = Quat<float>(1.f, 0.f, 0.f, 0.f);
        scene.colors[i] = Vec3<float>(static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()),
                                      static_cast<float>(rng.uniform()));
    }
    return scene;
}

template <typename T> void validate_scene(const BasicGaussianScene<T>& s, double quat_tol) {
    const std::size_t n = s.positions.size();
    if (s.log_scales.size() != n || s.rotations.size() != n || s.opacity_logits.size() != n || s.colors.size() != n) {
        throw InvalidParameter("scene arrays have mismatched lengths");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!s.positions[i].allFinite() || !s.log_scales[i].allFinite() || !s.rotations[i].allFinite() ||
            !std::isfinite(s.opacity_logits[i]) || !s.colors[i].allFinite()) {
            throw InvalidParameter(fmt::format("scene primitive {} has a non-finite field", i));
        }
        if (std::abs(static_cast<double>(s.rotations[i].norm()) - 1.0) > quat_tol) {
            throw InvalidParameter(fmt::format("scene primitive {} quaternion is not unit norm", i));
        }
    }
}

template Mat3<float> quat_to_matrix(const Quat<float>&);
template Mat3<double> quat_to_matrix(const Quat<double>&);
template Mat3<float> compute_cov3d(const Vec3<float>&, const Quat<float>&);
template Mat3<double> compute_cov3d(const Vec3<double>&, const Quat<double>&);
template void validate_scene(const BasicGaussianScene<float>&, double);
template void validate_scene(const BasicGaussianScene<double>&, double);

} // namespace gdistill
