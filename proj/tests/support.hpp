#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "gdistill/rasterizer.hpp"
#include "gdistill/rng.hpp"
#include "gdistill/scene.hpp"

namespace gdistill::testing {

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("gdistill_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline Quat<double> random_unit_quat(Rng& rng) {
    Quat<double> q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    return q / q.norm();
}

/// Gaussians well inside the view frustum of `front_camera`, sized so that
/// their footprints span a few pixels of a 16×16 image.
template <typename T> BasicGaussianScene<T> random_scene(std::size_t n, Rng& rng, double spread = 0.35) {
    BasicGaussianScene<T> s;
    s.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        s.positions[i] = Vec3<double>(rng.uniform(-spread, spread), rng.uniform(-spread, spread),
                                      rng.uniform(-0.3, 0.3))
                             .cast<T>();
        s.log_scales[i] =
            Vec3<double>(rng.uniform(-2.6, -1.6), rng.uniform(-2.6, -1.6), rng.uniform(-2.6, -1.6)).cast<T>();
        s.rotations[i] = random_unit_quat(rng).cast<T>();
        s.opacity_logits[i] = static_cast<T>(rng.uniform(-1.5, 1.5));
        s.colors[i] = Vec3<double>(rng.uniform(), rng.uniform(), rng.uniform()).cast<T>();
    }
    return s;
}

/// Looks at the origin from +z at distance 3 (image y down, x right).
inline Camera front_camera(int size = 16, Vec3<double> background = Vec3<double>(0.2, 0.3, 0.4)) {
    Camera c = Camera::look_at(Vec3<double>(0.3, -0.2, 3.0), Vec3<double>::Zero(), Vec3<double>::UnitY(), 40.0, size,
                               size, 0.1);
    c.background = background;
    return c;
}

} // namespace gdistill::testing
