#include "gdistill/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "gdistill/errors.hpp"

namespace gdistill {
namespace {

template <typename T> struct ProjectionTerms {
    Vec3<T> p_cam;
    Eigen::Matrix<T, 2, 3> jacobian;
};

template <typename T> ProjectionTerms<T> projection_terms(const Vec3<T>& position, const Camera& cam) {
    const Mat3<T> w = cam.rotation.cast<T>();
    const Vec3<T> pc = w * position + cam.translation.cast<T>();
    const T fx = static_cast<T>(cam.fx), fy = static_cast<T>(cam.fy);
    const T z = pc.z();
    const T inv_z = T(1) / z;
    Eigen::Matrix<T, 2, 3> j;
    j << fx * inv_z, T(0), -fx * pc.x() * inv_z * inv_z, T(0), fy * inv_z, -fy * pc.y() * inv_z * inv_z;
    return {pc, j};
}

/// Pixel rectangle [x0, x1] × [y0, y1] of pixel centers inside the axis-aligned
/// box of the ellipse with Mahalanobis radius `radius`.
struct PixelRect {
    int x0, x1, y0, y1;
    bool empty() const { return x0 > x1 || y0 > y1; }
};

template <typename T> PixelRect support_rect(const Splat2D<T>& s, double radius, int width, int height) {
    const double hx = radius * std::sqrt(static_cast<double>(s.cov2d(0, 0)));
    const double hy = radius * std::sqrt(static_cast<double>(s.cov2d(1, 1)));
    const double mx = static_cast<double>(s.mean2d.x());
    const double my = static_cast<double>(s.mean2d.y());
    PixelRect r;
    r.x0 = std::max(0, static_cast<int>(std::ceil(mx - hx - 0.5)));
    r.x1 = std::min(width - 1, static_cast<int>(std::floor(mx + hx - 0.5)));
    r.y0 = std::max(0, static_cast<int>(std::ceil(my - hy - 0.5)));
    r.y1 = std::min(height - 1, static_cast<int>(std::floor(my + hy - 0.5)));
    return r;
}

template <typename T> struct PreparedSplats {
    std::vector<Splat2D<T>> splats; // sorted by (depth, source_index)
    std::vector<PixelRect> rects;
    int tiles_x = 0;
    int tiles_y = 0;
    std::vector<std::vector<std::uint32_t>> tiles;
};

template <typename T>
PreparedSplats<T> prepare(const BasicGaussianScene<T>& scene, const Camera& cam, const RasterSettings& settings) {
    PreparedSplats<T> out;
    out.splats.reserve(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const Mat3<T> cov3d = compute_cov3d(scene.log_scales[i], scene.rotations[i]);
        auto splat = project_gaussian(scene.positions[i], cov3d, cam, settings);
        if (!splat) continue;
        splat->color = scene.colors[i];
        splat->opacity = scene.opacity(i);
        splat->source_index = i;
        out.splats.push_back(*splat);
    }
    std::stable_sort(out.splats.begin(), out.splats.end(), [](const Splat2D<T>& a, const Splat2D<T>& b) {
        if (a.depth != b.depth) return a.depth < b.depth;
        return a.source_index < b.source_index;
    });

    const int ts = std::max(1, settings.tile_size);
    out.tiles_x = (cam.width + ts - 1) / ts;
    out.tiles_y = (cam.height + ts - 1) / ts;
    out.tiles.assign(static_cast<std::size_t>(out.tiles_x) * out.tiles_y, {});
    out.rects.reserve(out.splats.size());
    for (std::uint32_t k = 0; k < out.splats.size(); ++k) {
        const PixelRect r = support_rect(out.splats[k], settings.support_sigma, cam.width, cam.height);
        out.rects.push_back(r);
        if (r.empty()) continue;
        for (int ty = r.y0 / ts; ty <= r.y1 / ts; ++ty) {
            for (int tx = r.x0 / ts; tx <= r.x1 / ts; ++tx) {
                out.tiles[static_cast<std::size_t>(ty) * out.tiles_x + tx].push_back(k);
            }
        }
    }
    return out;
}

/// One splat's contribution at a pixel, as seen by the compositor.
template <typename T> struct Contribution {
    std::uint32_t splat;
    T alpha;
    T gauss;      // exp(power)
    T transmittance; // before this splat
    Vec2<T> delta;   // pixel center - mean2d
    bool clamped;
};

/// Runs the compositor for one pixel. Returns the final transmittance and
/// the accumulated color; optionally records contributions in order.
template <typename T>
T composite_pixel(const PreparedSplats<T>& prep, const std::vector<std::uint32_t>& tile, int px, int py,
                  const RasterSettings& settings, Vec3<T>& color, std::vector<Contribution<T>>* record) {
    const T support2 = static_cast<T>(settings.support_sigma * settings.support_sigma);
    const T alpha_max = static_cast<T>(settings.alpha_max);
    const T t_min = static_cast<T>(settings.transmittance_min);
    const Vec2<T> pix(static_cast<T>(px) + T(0.5), static_cast<T>(py) + T(0.5));
    T trans = T(1);
    color.setZero();
    for (const std::uint32_t k : tile) {
        const PixelRect& r = prep.rects[k];
        if (px < r.x0 || px > r.x1 || py < r.y0 || py > r.y1) continue;
        const Splat2D<T>& s = prep.splats[k];
        const Vec2<T> d = pix - s.mean2d;
        const T maha = s.conic(0, 0) * d.x() * d.x() + T(2) * s.conic(0, 1) * d.x() * d.y() +
                       s.conic(1, 1) * d.y() * d.y();
        if (!(maha <= support2)) continue;
        const T gauss = std::exp(T(-0.5) * maha);
        T alpha = s.opacity * gauss;
        const bool clamped = alpha > alpha_max;
        if (clamped) alpha = alpha_max;
        const T next = trans * (T(1) - alpha);
        if (next < t_min) break;
        color += s.color * (alpha * trans);
        if (record) record->push_back({k, alpha, gauss, trans, d, clamped});
        trans = next;
    }
    return trans;
}

template <typename T> Mat3<T> drot_dw(const Quat<T>& q) {
    const T x = q[1], y = q[2], z = q[3];
    Mat3<T> m;
    m << T(0), -2 * z, 2 * y, 2 * z, T(0), -2 * x, -2 * y, 2 * x, T(0);
    return m;
}
template <typename T> Mat3<T> drot_dx(const Quat<T>& q) {
    const T w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3<T> m;
    m << T(0), 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x;
    return m;
}
template <typename T> Mat3<T> drot_dy(const Quat<T>& q) {
    const T w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3<T> m;
    m << -4 * y, 2 * x, 2 * w, 2 * x, T(0), 2 * z, -2 * w, 2 * z, -4 * y;
    return m;
}
template <typename T> Mat3<T> drot_dz(const Quat<T>& q) {
    const T w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3<T> m;
    m << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, T(0);
    return m;
}

} // namespace

template <typename T>
std::optional<Splat2D<T>> project_gaussian(const Vec3<T>& position, const Mat3<T>& cov3d, const Camera& cam,
                                           const RasterSettings& settings) {
    const ProjectionTerms<T> pt = projection_terms(position, cam);
    const T z = pt.p_cam.z();
    if (!(z > static_cast<T>(cam.near_clip))) return std::nullopt;

    Splat2D<T> s;
    s.depth = z;
    s.mean2d = Vec2<T>(static_cast<T>(cam.fx) * pt.p_cam.x() / z + static_cast<T>(cam.cx),
                       static_cast<T>(cam.fy) * pt.p_cam.y() / z + static_cast<T>(cam.cy));
    const Eigen::Matrix<T, 2, 3> m = pt.jacobian * cam.rotation.cast<T>();
    s.cov2d = m * cov3d * m.transpose();
    s.cov2d(1, 0) = s.cov2d(0, 1);
    s.cov2d(0, 0) += static_cast<T>(settings.low_pass);
    s.cov2d(1, 1) += static_cast<T>(settings.low_pass);

    const T det = s.cov2d(0, 0) * s.cov2d(1, 1) - s.cov2d(0, 1) * s.cov2d(0, 1);
    if (!(det > T(0)) || !(s.cov2d(0, 0) > T(0)) || !std::isfinite(det)) return std::nullopt;
    s.conic << s.cov2d(1, 1) / det, -s.cov2d(0, 1) / det, -s.cov2d(0, 1) / det, s.cov2d(0, 0) / det;

    const double hx = kExtent99 * std::sqrt(static_cast<double>(s.cov2d(0, 0)));
    const double hy = kExtent99 * std::sqrt(static_cast<double>(s.cov2d(1, 1)));
    const double mx = static_cast<double>(s.mean2d.x());
    const double my = static_cast<double>(s.mean2d.y());
    if (mx + hx <= 0.0 || mx - hx >= cam.width || my + hy <= 0.0 || my - hy >= cam.height) return std::nullopt;
    return s;
}

template <typename T>
RenderOutput<T> render(const BasicGaussianScene<T>& scene, const Camera& cam, const RasterSettings& settings) {
    cam.validate();
    const PreparedSplats<T> prep = prepare(scene, cam, settings);
    RenderOutput<T> out;
    out.image = Image<T>(cam.width, cam.height);
    out.alpha_map.assign(out.image.pixel_count(), T(0));
    out.splat_count = prep.splats.size();
    const Vec3<T> bg = cam.background.cast<T>();
    const int ts = std::max(1, settings.tile_size);

    Vec3<T> color;
    for (int py = 0; py < cam.height; ++py) {
        for (int px = 0; px < cam.width; ++px) {
            const auto& tile = prep.tiles[static_cast<std::size_t>(py / ts) * prep.tiles_x + px / ts];
            const T trans = composite_pixel<T>(prep, tile, px, py, settings, color, nullptr);
            for (int c = 0; c < 3; ++c) out.image.at(px, py, c) = color[c] + trans * bg[c];
            out.alpha_map[static_cast<std::size_t>(py) * cam.width + px] = T(1) - trans;
        }
    }
    return out;
}

template <typename T> void SceneGradients<T>::resize(std::size_t n) {
    positions.assign(n, Vec3<T>::Zero());
    log_scales.assign(n, Vec3<T>::Zero());
    rotations.assign(n, Quat<T>::Zero());
    opacity_logits.assign(n, T(0));
    colors.assign(n, Vec3<T>::Zero());
    mean2d.assign(n, Vec2<T>::Zero());
    visible.assign(n, 0);
}

template <typename T> bool SceneGradients<T>::all_finite() const {
    for (std::size_t i = 0; i < positions.size(); ++i) {
        if (!positions[i].allFinite() || !log_scales[i].allFinite() || !rotations[i].allFinite() ||
            !std::isfinite(opacity_logits[i]) || !colors[i].allFinite() || !mean2d[i].allFinite()) {
            return false;
        }
    }
    return true;
}

template <typename T>
SceneGradients<T> render_backward(const BasicGaussianScene<T>& scene, const Camera& cam, const Image<T>& d_image,
                                  const RasterSettings& settings) {
    cam.validate();
    SceneGradients<T> grads;
    grads.resize(scene.size());
    if (d_image.width != cam.width || d_image.height != cam.height) {
        throw InvalidParameter("render_backward: gradient image does not match camera resolution");
    }

    const PreparedSplats<T> prep = prepare(scene, cam, settings);
    for (const auto& s : prep.splats) grads.visible[s.source_index] = 1;
    if (std::all_of(d_image.data.begin(), d_image.data.end(), [](T v) { return v == T(0); })) return grads;

    const std::size_t n_splats = prep.splats.size();
    std::vector<Vec3<T>> g_color(n_splats, Vec3<T>::Zero());
    std::vector<T> g_opacity(n_splats, T(0));
    std::vector<Vec2<T>> g_mean(n_splats, Vec2<T>::Zero());
    std::vector<Mat2<T>> g_conic(n_splats, Mat2<T>::Zero());

    const Vec3<T> bg = cam.background.cast<T>();
    const int ts = std::max(1, settings.tile_size);
    std::vector<Contribution<T>> contribs;
    Vec3<T> color;

    for (int py = 0; py < cam.height; ++py) {
        for (int px = 0; px < cam.width; ++px) {
            const Vec3<T> d_pix(d_image.at(px, py, 0), d_image.at(px, py, 1), d_image.at(px, py, 2));
            if (d_pix.isZero(T(0))) continue;
            const auto& tile = prep.tiles[static_cast<std::size_t>(py / ts) * prep.tiles_x + px / ts];
            contribs.clear();
            composite_pixel<T>(prep, tile, px, py, settings, color, &contribs);

            // Back to front: `behind` is the normalized color seen through
            // splat i, starting from the background.
            Vec3<T> behind = bg;
            for (auto it = contribs.rbegin(); it != contribs.rend(); ++it) {
                const Splat2D<T>& s = prep.splats[it->splat];
                const T trans = it->transmittance;
                g_color[it->splat] += d_pix * (it->alpha * trans);
                const T d_alpha = trans * d_pix.dot(s.color - behind);
                behind = s.color * it->alpha + behind * (T(1) - it->alpha);
                if (it->clamped) continue;

                g_opacity[it->splat] += d_alpha * it->gauss;
                const T d_power = d_alpha * it->alpha;
                const Vec2<T>& d = it->delta;
                g_mean[it->splat] += d_power * (s.conic * d);
                Mat2<T> dq;
                dq << d.x() * d.x(), d.x() * d.y(), d.x() * d.y(), d.y() * d.y();
                g_conic[it->splat] += (T(-0.5) * d_power) * dq;
            }
        }
    }

    const Mat3<T> w = cam.rotation.cast<T>();
    const T fx = static_cast<T>(cam.fx), fy = static_cast<T>(cam.fy);
    for (std::size_t k = 0; k < n_splats; ++k) {
        const Splat2D<T>& s = prep.splats[k];
        const std::size_t i = s.source_index;
        grads.colors[i] = g_color[k];
        const T sig = s.opacity;
        grads.opacity_logits[i] = g_opacity[k] * sig * (T(1) - sig);
        grads.mean2d[i] = g_mean[k];

        // conic = cov2d⁻¹  ⇒  dL/dcov2d = -conic · dL/dconic · conic
        const Mat2<T> g_cov2d = -s.conic * g_conic[k] * s.conic;

        const ProjectionTerms<T> pt = projection_terms(scene.positions[i], cam);
        const Mat3<T> rot = quat_to_matrix(scene.rotations[i]);
        const Vec3<T> scale = scene.log_scales[i].array().exp();
        const Mat3<T> a = rot * scale.asDiagonal();
        const Mat3<T> cov3d = a * a.transpose();
        const Eigen::Matrix<T, 2, 3> m = pt.jacobian * w;

        // cov2d = M Σ Mᵀ (+ low pass), M = J W
        const Mat3<T> g_cov3d = m.transpose() * g_cov2d * m;
        const Eigen::Matrix<T, 2, 3> g_m = T(2) * g_cov2d * m * cov3d;
        const Eigen::Matrix<T, 2, 3> g_j = g_m * w.transpose();

        const Vec3<T>& pc = pt.p_cam;
        const T iz = T(1) / pc.z(), iz2 = iz * iz, iz3 = iz2 * iz;
        Vec3<T> g_pc;
        g_pc.x() = g_mean[k].x() * fx * iz - g_j(0, 2) * fx * iz2;
        g_pc.y() = g_mean[k].y() * fy * iz - g_j(1, 2) * fy * iz2;
        g_pc.z() = -g_mean[k].x() * fx * pc.x() * iz2 - g_mean[k].y() * fy * pc.y() * iz2 - g_j(0, 0) * fx * iz2 +
                   g_j(0, 2) * T(2) * fx * pc.x() * iz3 - g_j(1, 1) * fy * iz2 + g_j(1, 2) * T(2) * fy * pc.y() * iz3;
        grads.positions[i] = w.transpose() * g_pc;

        // Σ = A Aᵀ, A = R S
        const Mat3<T> g_a = T(2) * g_cov3d * a;
        const Mat3<T> g_r = g_a * scale.asDiagonal();
        for (int c = 0; c < 3; ++c) grads.log_scales[i][c] = g_a.col(c).dot(rot.col(c)) * scale[c];

        const Quat<T> q = scene.rotations[i];
        const T qn = q.norm();
        const Quat<T> qh = q / qn;
        Quat<T> g_qh(g_r.cwiseProduct(drot_dw(qh)).sum(), g_r.cwiseProduct(drot_dx(qh)).sum(),
                     g_r.cwiseProduct(drot_dy(qh)).sum(), g_r.cwiseProduct(drot_dz(qh)).sum());
        grads.rotations[i] = (g_qh - qh * qh.dot(g_qh)) / qn;
    }
    return grads;
}

template std::optional<Splat2D<float>> project_gaussian(const Vec3<float>&, const Mat3<float>&, const Camera&,
                                                        const RasterSettings&);
template std::optional<Splat2D<double>> project_gaussian(const Vec3<double>&, const Mat3<double>&, const Camera&,
                                                         const RasterSettings&);
template RenderOutput<float> render(const BasicGaussianScene<float>&, const Camera&, const RasterSettings&);
template RenderOutput<double> render(const BasicGaussianScene<double>&, const Camera&, const RasterSettings&);
template struct SceneGradients<float>;
template struct SceneGradients<double>;
template SceneGradients<float> render_backward(const BasicGaussianScene<float>&, const Camera&, const Image<float>&,
                                               const RasterSettings&);
template SceneGradients<double> render_backward(const BasicGaussianScene<double>&, const Camera&,
                                                const Image<double>&, const RasterSettings&);

} // namespace gdistill
