#include "gdistill/density_control.hpp"

#include <Eigen/Dense>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gdistill/errors.hpp"
#include "json_util.hpp"

namespace gdistill {

void DensityControlConfig::validate() const {
    if (densify_interval < 1) throw ConfigError("density.densify_interval must be >= 1");
    if (densify_start < 0 || !(densify_start < densify_end)) {
        throw ConfigError(fmt::format("density: need 0 <= densify_start ({}) < densify_end ({})", densify_start, densify_end));
    }
    if (!(grad_threshold > 0.0)) throw ConfigError("density.grad_threshold must be > 0");
    if (!(split_scale_threshold > 0.0)) throw ConfigError("density.split_scale_threshold must be > 0");
    if (!(split_factor > 0.0)) throw ConfigError("density.split_factor must be > 0");
    if (split_children < 1) throw ConfigError("density.split_children must be >= 1");
    if (!(prune_opacity_threshold > 0.0)) throw ConfigError("density.prune_opacity_threshold must be > 0");
    if (!(prune_screen_area_threshold > 0.0)) throw ConfigError("density.prune_screen_area_threshold must be > 0");
    if (!(opacity_reset_value > 0.0 && opacity_reset_value < 1.0)) {
        throw ConfigError("density.opacity_reset_value must lie in (0, 1)");
    }
    if (finetune_iterations < 0) throw ConfigError("density.finetune_iterations must be >= 0");
    if (!(clone_step >= 0.0)) throw ConfigError("density.clone_step must be >= 0");
}

nlohmann::json DensityControlConfig::to_json() const {
    return {{"densify_interval", densify_interval},
            {"densify_start", densify_start},
            {"densify_end", densify_end},
            {"grad_threshold", grad_threshold},
            {"split_scale_threshold", split_scale_threshold},
            {"split_factor", split_factor},
            {"split_children", split_children},
            {"prune_opacity_threshold", prune_opacity_threshold},
            {"prune_screen_area_threshold", prune_screen_area_threshold},
            {"opacity_reset_iteration", opacity_reset_iteration},
            {"opacity_reset_value", opacity_reset_value},
            {"finetune_iterations", finetune_iterations},
            {"clone_step", clone_step}};
}

DensityControlConfig DensityControlConfig::from_json(const nlohmann::json& j) {
    const std::string sec = "density";
    detail::reject_unknown_keys(j,
                                {"densify_interval", "densify_start", "densify_end", "grad_threshold",
                                 "split_scale_threshold", "split_factor", "split_children", "prune_opacity_threshold",
                                 "prune_screen_area_threshold", "opacity_reset_iteration", "opacity_reset_value",
                                 "finetune_iterations", "clone_step"},
                                sec);
    DensityControlConfig c;
    detail::read_optional(j, "densify_interval", c.densify_interval, sec);
    detail::read_optional(j, "densify_start", c.densify_start, sec);
    detail::read_optional(j, "densify_end", c.densify_end, sec);
    detail::read_optional(j, "grad_threshold", c.grad_threshold, sec);
    detail::read_optional(j, "split_scale_threshold", c.split_scale_threshold, sec);
    detail::read_optional(j, "split_factor", c.split_factor, sec);
    detail::read_optional(j, "split_children", c.split_children, sec);
    detail::read_optional(j, "prune_opacity_threshold", c.prune_opacity_threshold, sec);
    detail::read_optional(j, "prune_screen_area_threshold", c.prune_screen_area_threshold, sec);
    detail::read_optional(j, "opacity_reset_iteration", c.opacity_reset_iteration, sec);
    detail::read_optional(j, "opacity_reset_value", c.opacity_reset_value, sec);
    detail::read_optional(j, "finetune_iterations", c.finetune_iterations, sec);
    detail::read_optional(j, "clone_step", c.clone_step, sec);
    c.validate();
    return c;
}

void GradStats::resize(std::size_t n) {
    accum_pos_grad_norm.assign(n, 0.0);
    observation_count.assign(n, 0);
    accum_pos_grad3d.assign(n, Vec3<double>::Zero());
}

void GradStats::reset() { resize(size()); }

void GradStats::accumulate(const SceneGradients<float>& grads, int width, int height) {
    if (grads.positions.size() != size()) {
        throw InternalConsistencyError(
            fmt::format("grad stats hold {} entries, gradients {}", size(), grads.positions.size()));
    }
    const double sx = 0.5 * width / (static_cast<double>(width) * height);
    const double sy = 0.5 * height / (static_cast<double>(width) * height);
    for (std::size_t i = 0; i < size(); ++i) {
        if (!grads.visible[i]) continue;
        const double gx = grads.mean2d[i].x() * sx;
        const double gy = grads.mean2d[i].y() * sy;
        accum_pos_grad_norm[i] += std::sqrt(gx * gx + gy * gy);
        accum_pos_grad3d[i] += grads.positions[i].cast<double>();
        ++observation_count[i];
    }
}

double GradStats::mean_norm(std::size_t i) const {
    return observation_count[i] == 0 ? 0.0 : accum_pos_grad_norm[i] / observation_count[i];
}

nlohmann::json GradStats::to_json() const {
    nlohmann::json g3 = nlohmann::json::array();
    for (const auto& v : accum_pos_grad3d) g3.push_back({v.x(), v.y(), v.z()});
    return {{"accum_pos_grad_norm", accum_pos_grad_norm}, {"observation_count", observation_count}, {"accum_pos_grad3d", g3}};
}

GradStats GradStats::from_json(const nlohmann::json& j) {
    GradStats s;
    try {
        s.accum_pos_grad_norm = j.at("accum_pos_grad_norm").get<std::vector<double>>();
        s.observation_count = j.at("observation_count").get<std::vector<std::uint32_t>>();
        for (const auto& v : j.at("accum_pos_grad3d")) {
            s.accum_pos_grad3d.emplace_back(v.at(0).get<double>(), v.at(1).get<double>(), v.at(2).get<double>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(fmt::format("malformed grad stats: {}", e.what()));
    }
    if (s.observation_count.size() != s.size() || s.accum_pos_grad3d.size() != s.size()) {
        throw IoError("grad stats arrays have mismatched lengths");
    }
    return s;
}

bool should_densify(std::int64_t iteration, const DensityControlConfig& c) {
    if (iteration < c.densify_start || iteration >= c.densify_end) return false;
    return (iteration - c.densify_start) % c.densify_interval == 0;
}

std::int64_t finetune_start(const DensityControlConfig& c, std::int64_t total_iterations) {
    return std::max(c.densify_end, total_iterations - c.finetune_iterations);
}

GaussianScene densify(const GaussianScene& scene, GradStats& stats, const DensityControlConfig& c, Rng& rng,
                      DensifyReport* report, TopologyChange* topology) {
    if (stats.size() != scene.size() || stats.observation_count.size() != scene.size() ||
        stats.accum_pos_grad3d.size() != scene.size()) {
        throw InternalConsistencyError(
            fmt::format("densify: grad stats hold {} entries, scene {}", stats.size(), scene.size()));
    }
    const std::size_t n = scene.size();
    std::vector<unsigned char> split(n, 0), clone(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (stats.mean_norm(i) < c.grad_threshold) continue;
        const double max_scale = std::exp(static_cast<double>(scene.log_scales[i].maxCoeff()));
        if (max_scale > c.split_scale_threshold) {
            split[i] = 1;
        } else {
            clone[i] = 1;
        }
    }

    GaussianScene out;
    TopologyChange topo;
    for (std::size_t i = 0; i < n; ++i) {
        if (split[i]) continue;
        out.push_from(scene, i);
        topo.source.push_back(static_cast<std::int64_t>(i));
    }

    DensifyReport rep;
    rep.n_before = n;
    const float log_factor = static_cast<float>(std::log(c.split_factor));
    for (std::size_t i = 0; i < n; ++i) {
        if (clone[i]) {
            out.push_from(scene, i);
            const Vec3<double> g = stats.accum_pos_grad3d[i];
            const double gn = g.norm();
            if (gn > 0.0 && std::isfinite(gn)) {
                const Vec3<double> p = scene.positions[i].cast<double>() - c.clone_step * g / gn;
                out.positions.back() = p.cast<float>();
            }
            topo.source.push_back(-1);
            ++rep.cloned;
        } else if (split[i]) {
            const Mat3<double> rot = quat_to_matrix<double>(scene.rotations[i].cast<double>());
            const Vec3<double> sigma = scene.log_scales[i].cast<double>().array().exp();
            for (int k = 0; k < c.split_children; ++k) {
                out.push_from(scene, i);
                const Vec3<double> z(rng.normal(), rng.normal(), rng.normal());
                const Vec3<double> p = scene.positions[i].cast<double>() + rot * sigma.cwiseProduct(z);
                out.positions.back() = p.cast<float>();
                out.log_scales.back() = scene.log_scales[i] - Vec3<float>::Constant(log_factor);
                topo.source.push_back(-1);
            }
            ++rep.split;
        }
    }
    rep.n_after = out.size();
    stats.resize(out.size());
    if (report) *report = rep;
    if (topology) *topology = std::move(topo);
    return out;
}

GaussianScene prune(const GaussianScene& scene, const DensityControlConfig& c, std::span<const Camera> probes,
                    const RasterSettings& raster, PruneReport* report, TopologyChange* topology) {
    const std::size_t n = scene.size();
    std::vector<unsigned char> remove(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (static_cast<double>(scene.opacity(i)) < c.prune_opacity_threshold) {
            remove[i] = 1;
            continue;
        }
        const Mat3<double> cov =
            compute_cov3d<double>(scene.log_scales[i].cast<double>(), scene.rotations[i].cast<double>());
        for (const Camera& cam : probes) {
            const auto splat = project_gaussian<double>(scene.positions[i].cast<double>(), cov, cam, raster);
            if (!splat) continue;
            const double area = std::numbers::pi * kExtent99 * kExtent99 * std::sqrt(splat->cov2d.determinant());
            if (area > c.prune_screen_area_threshold * cam.width * cam.height) {
                remove[i] = 1;
                break;
            }
        }
    }

    std::size_t kept = static_cast<std::size_t>(std::count(remove.begin(), remove.end(), 0));
    if (kept == 0 && n > 0) {
        // Keep the most opaque primitive (lowest index on ties).
        std::size_t best = 0;
        for (std::size_t i = 1; i < n; ++i) {
            if (scene.opacity_logits[i] > scene.opacity_logits[best]) best = i;
        }
        remove[best] = 0;
        kept = 1;
    }

    GaussianScene out;
    TopologyChange topo;
    for (std::size_t i = 0; i < n; ++i) {
        if (remove[i]) continue;
        out.push_from(scene, i);
        topo.source.push_back(static_cast<std::int64_t>(i));
    }
    if (report) *report = {n - kept, n, kept};
    if (topology) *topology = std::move(topo);
    return out;
}

std::vector<std::size_t> reset_opacity(GaussianScene& scene, const DensityControlConfig& c) {
    const double cap = c.opacity_reset_value;
    auto fits = [cap](float l) {
        return sigmoid(static_cast<double>(l)) <= cap && static_cast<double>(sigmoid(l)) <= cap;
    };
    float capped = static_cast<float>(logit(cap));
    while (!fits(capped)) capped = std::nextafter(capped, -std::numeric_limits<float>::infinity());

    std::vector<std::size_t> changed;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        if (scene.opacity_logits[i] > capped) {
            scene.opacity_logits[i] = capped;
            changed.push_back(i);
        }
    }
    return changed;
}

} // namespace gdistill
