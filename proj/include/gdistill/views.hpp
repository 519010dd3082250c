#pragma once

#include <json.hpp>

#include <map>
#include <optional>
#include <vector>

#include "gdistill/image.hpp"
#include "gdistill/rasterizer.hpp"
#include "gdistill/rng.hpp"
#include "gdistill/scene.hpp"

namespace gdistill {

/// Object-centric random viewpoints on a spherical shell around the origin.
/// World +z is up; elevation is measured from the xy plane.
struct CameraSamplerConfig {
    double radius_min = 2.5;
    double radius_max = 4.0;
    double elevation_min_deg = -10.0;
    double elevation_max_deg = 45.0;
    double fov_min_deg = 40.0;
    double fov_max_deg = 70.0;
    double near_clip = 0.1;

    void validate() const;
    nlohmann::json to_json() const;
    static CameraSamplerConfig from_json(const nlohmann::json& j);
};

/// Camera at spherical coordinates (radius, elevation, azimuth) looking at the origin.
Camera orbit_camera(double radius, double elevation_deg, double azimuth_deg, double fov_deg, int resolution,
                    double near_clip = 0.1);

struct SampledCamera {
    Camera camera;
    double radius;
    double elevation_deg;
    double azimuth_deg;
    double fov_deg;
};

/// Azimuth uniform in [0, 360), the other coordinates uniform in their ranges.
SampledCamera sample_camera(const CameraSamplerConfig& config, int resolution, Rng& rng);

/// `count` cameras at equal azimuth spacing (starting at `azimuth0_deg`).
std::vector<Camera> turntable(int count, double radius, double elevation_deg, double fov_deg, int resolution,
                              double azimuth0_deg = 0.0, double near_clip = 0.1);

/// One training viewpoint. `view_id` is set for sources with stored targets.
struct View {
    Camera camera;
    std::optional<int> view_id;
};

/// Where the trainer gets its cameras from.
class ViewSource {
public:
    virtual ~ViewSource() = default;
    virtual View next(int resolution, Rng& rng) = 0;
    /// Deterministic cameras used for pruning and visualization.
    virtual std::vector<View> probes(int resolution) const = 0;
};

/// Random cameras from the sampler over a random gray background.
class RandomViewSource final : public ViewSource {
public:
    explicit RandomViewSource(CameraSamplerConfig config, bool random_background = true,
                              Vec3<double> fixed_background = Vec3<double>::Constant(0.5));
    View next(int resolution, Rng& rng) override;
    std::vector<View> probes(int resolution) const override;

private:
    CameraSamplerConfig config_;
    bool random_background_;
    Vec3<double> fixed_background_;
};

/// A fixed camera set with ids; each step draws one uniformly.
class FixedViewSource final : public ViewSource {
public:
    explicit FixedViewSource(std::map<int, Camera> cameras);
    View next(int resolution, Rng& rng) override;
    std::vector<View> probes(int resolution) const override;

private:
    std::map<int, Camera> cameras_;
    std::vector<int> ids_;
};

/// Synthetic end-to-end setup: a ground-truth scene, training cameras with
/// rendered targets and held-out cameras with their renders.
struct OracleSetup {
    GaussianScene target;
    std::map<int, Camera> train_cameras;
    std::map<int, ImageF> train_targets;
    std::vector<Camera> heldout_cameras;
    std::vector<ImageF> heldout_targets;
};

struct OracleSetupConfig {
    int views = 16;
    int heldout_views = 4;
    int resolution = 64;
    double camera_radius = 3.0;
    double fov_deg = 50.0;
    Vec3<double> background = Vec3<double>::Zero();

    void validate() const;
    nlohmann::json to_json() const;
    static OracleSetupConfig from_json(const nlohmann::json& j);
};

/// Three colored anisotropic Gaussians (red, green, blue) inside the unit ball.
GaussianScene three_gaussian_scene();

/// Training cameras on a Fibonacci sphere band (elevation -15°..60°);
/// held-out cameras interleave on a separate ring. Targets are rendered
/// with `raster`.
OracleSetup make_oracle_setup(const GaussianScene& target, const OracleSetupConfig& config,
                              const RasterSettings& raster = {});

/// 10·log10(1 / MSE) for images in [0, 1]; +inf for identical images.
double psnr(const ImageF& a, const ImageF& b);

} // namespace gdistill
