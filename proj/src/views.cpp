#include "gdistill/views.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "gdistill/errors.hpp"
#include "json_util.hpp"

namespace gdistill {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Vec3<double> read_vec3(const nlohmann::json& j, const char* key, const std::string& sec, Vec3<double> fallback) {
    const auto it = j.find(key);
    if (it == j.end()) return fallback;
    if (!it->is_array() || it->size() != 3) throw ConfigError(fmt::format("'{}.{}' must be a 3-element array", sec, key));
    Vec3<double> v;
    for (int c = 0; c < 3; ++c) {
        if (!(*it)[c].is_number()) throw ConfigError(fmt::format("'{}.{}' must hold numbers", sec, key));
        v[c] = (*it)[c].get<double>();
    }
    return v;
}

} // namespace

void CameraSamplerConfig::validate() const {
    if (!(near_clip > 0.0)) throw ConfigError("cameras.near_clip must be > 0");
    if (!(radius_min > near_clip && radius_min <= radius_max)) {
        throw ConfigError("cameras: need near_clip < radius_min <= radius_max");
    }
    if (!(elevation_min_deg <= elevation_max_deg && elevation_min_deg > -90.0 && elevation_max_deg < 90.0)) {
        throw ConfigError("cameras: elevation range must lie inside (-90, 90) and be ordered");
    }
    if (!(fov_min_deg > 0.0 && fov_min_deg <= fov_max_deg && fov_max_deg < 180.0)) {
        throw ConfigError("cameras: fov range must lie inside (0, 180) and be ordered");
    }
}

nlohmann::json CameraSamplerConfig::to_json() const {
    return {{"radius_min", radius_min},
            {"radius_max", radius_max},
            {"elevation_min_deg", elevation_min_deg},
            {"elevation_max_deg", elevation_max_deg},
            {"fov_min_deg", fov_min_deg},
            {"fov_max_deg", fov_max_deg},
            {"near_clip", near_clip}};
}

CameraSamplerConfig CameraSamplerConfig::from_json(const nlohmann::json& j) {
    const std::string sec = "cameras";
    detail::reject_unknown_keys(j,
                                {"radius_min", "radius_max", "elevation_min_deg", "elevation_max_deg", "fov_min_deg",
                                 "fov_max_deg", "near_clip"},
                                sec);
    CameraSamplerConfig c;
    detail::read_optional(j, "radius_min", c.radius_min, sec);
    detail::read_optional(j, "radius_max", c.radius_max, sec);
    detail::read_optional(j, "elevation_min_deg", c.elevation_min_deg, sec);
    detail::read_optional(j, "elevation_max_deg", c.elevation_max_deg, sec);
    detail::read_optional(j, "fov_min_deg", c.fov_min_deg, sec);
    detail::read_optional(j, "fov_max_deg", c.fov_max_deg, sec);
    detail::read_optional(j, "near_clip", c.near_clip, sec);
    c.validate();
    return c;
}

Camera orbit_camera(double radius, double elevation_deg, double azimuth_deg, double fov_deg, int resolution,
                    double near_clip) {
    const double el = elevation_deg * kDeg;
    const double az = azimuth_deg * kDeg;
    const Vec3<double> eye(radius * std::cos(el) * std::cos(az), radius * std::cos(el) * std::sin(az),
                           radius * std::sin(el));
    return Camera::look_at(eye, Vec3<double>::Zero(), Vec3<double>::UnitZ(), fov_deg, resolution, resolution, near_clip);
}

SampledCamera sample_camera(const CameraSamplerConfig& c, int resolution, Rng& rng) {
    SampledCamera s;
    s.radius = rng.uniform(c.radius_min, c.radius_max);
    s.elevation_deg = rng.uniform(c.elevation_min_deg, c.elevation_max_deg);
    s.azimuth_deg = rng.uniform(0.0, 360.0);
    s.fov_deg = rng.uniform(c.fov_min_deg, c.fov_max_deg);
    s.camera = orbit_camera(s.radius, s.elevation_deg, s.azimuth_deg, s.fov_deg, resolution, c.near_clip);
    return s;
}

std::vector<Camera> turntable(int count, double radius, double elevation_deg, double fov_deg, int resolution,
                              double azimuth0_deg, double near_clip) {
    if (count < 1) throw InvalidParameter("turntable needs at least one camera");
    std::vector<Camera> cams;
    for (int k = 0; k < count; ++k) {
        cams.push_back(orbit_camera(radius, elevation_deg, azimuth0_deg + 360.0 * k / count, fov_deg, resolution,
                                    near_clip));
    }
    return cams;
}

RandomViewSource::RandomViewSource(CameraSamplerConfig config, bool random_background, Vec3<double> fixed_background)
    : config_(config), random_background_(random_background), fixed_background_(fixed_background) {
    config_.validate();
}

View RandomViewSource::next(int resolution, Rng& rng) {
    View v{sample_camera(config_, resolution, rng).camera, std::nullopt};
    v.camera.background = random_background_ ? Vec3<double>::Constant(rng.uniform()) : fixed_background_;
    return v;
}

std::vector<View> RandomViewSource::probes(int resolution) const {
    const double radius = 0.5 * (config_.radius_min + config_.radius_max);
    const double elevation = 0.5 * (config_.elevation_min_deg + config_.elevation_max_deg);
    const double fov = 0.5 * (config_.fov_min_deg + config_.fov_max_deg);
    std::vector<View> out;
    for (Camera& cam : turntable(8, radius, elevation, fov, resolution, 0.0, config_.near_clip)) {
        cam.background = fixed_background_;
        out.push_back({cam, std::nullopt});
    }
    return out;
}

FixedViewSource::FixedViewSource(std::map<int, Camera> cameras) : cameras_(std::move(cameras)) {
    if (cameras_.empty()) throw InvalidParameter("fixed view source needs at least one camera");
    for (const auto& [id, cam] : cameras_) {
        cam.validate();
        ids_.push_back(id);
    }
}

View FixedViewSource::next(int resolution, Rng& rng) {
    const int id = ids_[rng.uniform_index(ids_.size())];
    const Camera& cam = cameras_.at(id);
    if (cam.width != resolution || cam.height != resolution) {
        throw ConfigError(fmt::format("view {} is {}x{}, stage resolution is {}", id, cam.width, cam.height, resolution));
    }
    return {cam, id};
}

std::vector<View> FixedViewSource::probes(int resolution) const {
    std::vector<View> out;
    for (const auto& [id, cam] : cameras_) {
        if (cam.width != resolution || cam.height != resolution) {
            throw ConfigError(
                fmt::format("view {} is {}x{}, stage resolution is {}", id, cam.width, cam.height, resolution));
        }
        out.push_back({cam, id});
    }
    return out;
}

void OracleSetupConfig::validate() const {
    if (views < 1) throw ConfigError("oracle.views must be >= 1");
    if (heldout_views < 0) throw ConfigError("oracle.heldout_views must be >= 0");
    if (resolution < 8) throw ConfigError("oracle.resolution must be >= 8");
    if (!(camera_radius > 1.0)) throw ConfigError("oracle.camera_radius must exceed the scene radius (1)");
    if (!(fov_deg > 0.0 && fov_deg < 180.0)) throw ConfigError("oracle.fov_deg must lie in (0, 180)");
    for (int c = 0; c < 3; ++c) {
        if (!(background[c] >= 0.0 && background[c] <= 1.0)) throw ConfigError("oracle.background must lie in [0, 1]");
    }
}

nlohmann::json OracleSetupConfig::to_json() const {
    return {{"views", views},
            {"heldout_views", heldout_views},
            {"resolution", resolution},
            {"camera_radius", camera_radius},
            {"fov_deg", fov_deg},
            {"background", {background.x(), background.y(), background.z()}}};
}

OracleSetupConfig OracleSetupConfig::from_json(const nlohmann::json& j) {
    const std::string sec = "oracle";
    detail::reject_unknown_keys(j, {"views", "heldout_views", "resolution", "camera_radius", "fov_deg", "background"},
                                sec);
    OracleSetupConfig c;
    detail::read_optional(j, "views", c.views, sec);
    detail::read_optional(j, "heldout_views", c.heldout_views, sec);
    detail::read_optional(j, "resolution", c.resolution, sec);
    detail::read_optional(j, "camera_radius", c.camera_radius, sec);
    detail::read_optional(j, "fov_deg", c.fov_deg, sec);
    c.background = read_vec3(j, "background", sec, c.background);
    c.validate();
    return c;
}

GaussianScene three_gaussian_scene() {
    GaussianScene s;
    s.resize(3);
    const auto axis_angle = [](double angle, Vec3<double> axis) {
        axis.normalize();
        const double h = 0.5 * angle;
        return Quat<float>(static_cast<float>(std::cos(h)), static_cast<float>(std::sin(h) * axis.x()),
                           static_cast<float>(std::sin(h) * axis.y()), static_cast<float>(std::sin(h) * axis.z()));
    };
    s.positions = {{-0.35f, -0.1f, 0.0f}, {0.3f, 0.25f, 0.1f}, {0.05f, -0.2f, 0.35f}};
    s.log_scales = {Vec3<double>(0.35, 0.15, 0.12).array().log().cast<float>(),
                    Vec3<double>(0.12, 0.3, 0.15).array().log().cast<float>(),
                    Vec3<double>(0.2, 0.2, 0.1).array().log().cast<float>()};
    s.rotations = {axis_angle(0.6, {0, 0, 1}), axis_angle(-0.4, {1, 1, 0}), axis_angle(0.9, {0, 1, 0})};
    s.opacity_logits = {static_cast<float>(logit(0.9)), static_cast<float>(logit(0.85)),
                        static_cast<float>(logit(0.8))};
    s.colors = {{0.9f, 0.15f, 0.1f}, {0.1f, 0.8f, 0.2f}, {0.15f, 0.25f, 0.9f}};
    return s;
}

OracleSetup make_oracle_setup(const GaussianScene& target, const OracleSetupConfig& c, const RasterSettings& raster) {
    c.validate();
    OracleSetup setup;
    setup.target = target;
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    const double z_lo = std::sin(-15.0 * kDeg);
    const double z_hi = std::sin(60.0 * kDeg);
    for (int k = 0; k < c.views; ++k) {
        const double z = c.views == 1 ? 0.5 * (z_lo + z_hi) : z_lo + (z_hi - z_lo) * k / (c.views - 1);
        const double elevation = std::asin(z) / kDeg;
        const double azimuth = std::fmod(k * golden / kDeg, 360.0);
        Camera cam = orbit_camera(c.camera_radius, elevation, azimuth, c.fov_deg, c.resolution);
        cam.background = c.background;
        setup.train_cameras[k] = cam;
        setup.train_targets[k] = render(target, cam, raster).image;
    }
    for (int k = 0; k < c.heldout_views; ++k) {
        const double azimuth = 360.0 * (k + 0.5) / c.heldout_views + 17.0;
        Camera cam = orbit_camera(c.camera_radius, 20.0, azimuth, c.fov_deg, c.resolution);
        cam.background = c.background;
        setup.heldout_cameras.push_back(cam);
        setup.heldout_targets.push_back(render(target, cam, raster).image);
    }
    return setup;
}

double psnr(const ImageF& a, const ImageF& b) {
    if (!a.same_shape(b) || a.data.size() != b.data.size()) throw InvalidParameter("psnr: image shapes differ");
    if (a.data.empty()) throw InvalidParameter("psnr: empty images");
    double se = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - b.data[i];
        se += d * d;
    }
    const double mse = se / a.data.size();
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

} // namespace gdistill
