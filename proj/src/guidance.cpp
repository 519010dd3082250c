#include "gdistill/guidance.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "gdistill/rng.hpp"

namespace gdistill {

std::string to_string(GuidanceSpace space) { return space == GuidanceSpace::Image ? "image" : "latent"; }

GuidanceSpace parse_guidance_space(const std::string& name) {
    if (name == "image") return GuidanceSpace::Image;
    if (name == "latent") return GuidanceSpace::Latent;
    throw ConfigError(fmt::format("unknown guidance space '{}' (valid: image, latent)", name));
}

void GuidanceRequest::validate() const {
    if (image.width < 1 || image.height < 1 || image.data.size() != image.pixel_count() * 3) {
        throw InvalidRequest("guidance request image is empty or malformed");
    }
    if (!(noise_fraction > 0.0 && noise_fraction < 1.0)) {
        throw InvalidRequest(fmt::format("noise fraction {} outside (0, 1)", noise_fraction));
    }
    if (!(guidance_scale >= 0.0)) throw InvalidRequest("guidance scale must be >= 0");
}

bool ProviderCapabilities::supports(GuidanceSpace space, int resolution) const {
    const bool space_ok = std::find(spaces.begin(), spaces.end(), space) != spaces.end();
    const bool res_ok =
        resolutions.empty() || std::find(resolutions.begin(), resolutions.end(), resolution) != resolutions.end();
    return space_ok && res_ok;
}

GuidanceResponse guide(GuidanceProvider& provider, const GuidanceRequest& request) {
    request.validate();
    GuidanceResponse resp = provider.guide(request);
    if (!resp.grad_image.same_shape(request.image) || resp.grad_image.data.size() != request.image.data.size()) {
        throw ProtocolError(fmt::format("gradient is {}x{}, request was {}x{}", resp.grad_image.width,
                                        resp.grad_image.height, request.image.width, request.image.height));
    }
    if (resp.x_hat_preview) {
        auto& p = *resp.x_hat_preview;
        if (!p.same_shape(request.image) || p.data.size() != request.image.data.size()) {
            throw ProtocolError("preview shape does not match the request");
        }
        for (float& v : p.data) v = std::isfinite(v) ? std::clamp(v, 0.f, 1.f) : 0.f;
    }
    return resp;
}

std::vector<float> noise_from_seed(std::uint64_t seed, std::size_t n) {
    Rng rng(seed);
    std::vector<float> eps(n);
    for (float& v : eps) v = static_cast<float>(rng.normal());
    return eps;
}

OracleProvider::OracleProvider(std::map<int, ImageF> target_views, NoiseSchedule schedule, SdsWeights weights)
    : targets_(std::move(target_views)), schedule_(std::move(schedule)), weights_(weights) {
    if (targets_.empty()) throw InvalidParameter("oracle provider needs at least one target view");
    const auto& first = targets_.begin()->second;
    for (const auto& [id, img] : targets_) {
        if (!img.same_shape(first) || img.data.size() != img.pixel_count() * 3) {
            throw InvalidParameter(fmt::format("oracle target view {} has a different shape", id));
        }
    }
    if (first.width == first.height) resolution_ = first.width;
}

ProviderCapabilities OracleProvider::capabilities() const {
    ProviderCapabilities caps;
    caps.spaces = {GuidanceSpace::Image};
    if (resolution_ > 0) caps.resolutions = {resolution_};
    caps.previews = true;
    return caps;
}

GuidanceResponse OracleProvider::guide(const GuidanceRequest& request) {
    if (!request.view_id) throw InvalidRequest("oracle provider needs a view id");
    const auto it = targets_.find(*request.view_id);
    if (it == targets_.end()) throw InvalidRequest(fmt::format("oracle has no target for view {}", *request.view_id));
    const ImageF& target = it->second;
    if (!target.same_shape(request.image)) {
        throw ProtocolError(fmt::format("oracle target is {}x{}, request is {}x{}", target.width, target.height,
                                        request.image.width, request.image.height));
    }
    const int t = schedule_.timestep_from_fraction(request.noise_fraction);
    const double alpha_bar = schedule_.alpha_bar(t);

    GuidanceResponse resp;
    resp.grad_image.width = request.image.width;
    resp.grad_image.height = request.image.height;
    resp.grad_image.data = l2_reparam_gradient<float>(request.image.data, target.data, alpha_bar, weights_);
    resp.x_hat_preview = target;
    return resp;
}

ProviderCapabilities NullProvider::capabilities() const {
    ProviderCapabilities caps;
    caps.spaces = {GuidanceSpace::Image, GuidanceSpace::Latent};
    return caps;
}

GuidanceResponse NullProvider::guide(const GuidanceRequest& request) {
    GuidanceResponse resp;
    resp.grad_image = ImageF(request.image.width, request.image.height, 0.f);
    return resp;
}

} // namespace gdistill
