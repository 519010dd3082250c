#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gdistill/diffusion_math.hpp"
#include "gdistill/image.hpp"

namespace gdistill {

enum class GuidanceSpace { Image, Latent };

std::string to_string(GuidanceSpace space);
/// Accepts "image" / "latent"; throws ConfigError otherwise.
GuidanceSpace parse_guidance_space(const std::string& name);

/// One denoiser query: the current rendering plus the noise level, the
/// seed for ε, and the conditioning.
struct GuidanceRequest {
    ImageF image;
    double noise_fraction = 0.5;
    std::uint64_t seed = 0;
    std::string prompt;
    double guidance_scale = 1.0;
    GuidanceSpace space = GuidanceSpace::Image;
    /// Identifies the viewpoint for providers that hold per-view data
    /// (the oracle). Not part of the wire protocol.
    std::optional<int> view_id;

    /// Throws InvalidRequest on empty images or u outside (0, 1).
    void validate() const;
};

struct GuidanceResponse {
    /// dL/dx in image space, already weighted by w(t).
    ImageF grad_image;
    /// One-step denoised image, clipped to [0, 1].
    std::optional<ImageF> x_hat_preview;
};

struct ProviderCapabilities {
    std::string protocol = "gdp/1";
    std::vector<GuidanceSpace> spaces;
    /// Square resolutions accepted; empty means any.
    std::vector<int> resolutions;
    bool previews = false;

    bool supports(GuidanceSpace space, int resolution) const;
};

class GuidanceProvider {
public:
    virtual ~GuidanceProvider() = default;
    virtual ProviderCapabilities capabilities() const = 0;
    virtual GuidanceResponse guide(const GuidanceRequest& request) = 0;
};

/// Validates the request, calls the provider and checks the response shape
/// (ProtocolError on mismatch). Previews are clipped to [0, 1]. Gradient
/// finiteness is left to the caller, which skips such steps.
GuidanceResponse guide(GuidanceProvider& provider, const GuidanceRequest& request);

/// Unit-normal ε of length n derived from `seed`. Shared by every provider
/// that needs the paired (ε, ε̂) of a request.
std::vector<float> noise_from_seed(std::uint64_t seed, std::size_t n);

/// Test oracle: treats a stored target view as the denoised image x̂ and
/// returns β(t)·(x - x̂). Training against it is multi-view L2
/// reconstruction.
class OracleProvider final : public GuidanceProvider {
public:
    OracleProvider(std::map<int, ImageF> target_views, NoiseSchedule schedule, SdsWeights weights = {});

    ProviderCapabilities capabilities() const override;
    GuidanceResponse guide(const GuidanceRequest& request) override;

    const std::map<int, ImageF>& targets() const { return targets_; }

private:
    std::map<int, ImageF> targets_;
    NoiseSchedule schedule_;
    SdsWeights weights_;
    int resolution_ = 0;
};

/// Returns an all-zero gradient; drives the loop without any signal.
class NullProvider final : public GuidanceProvider {
public:
    ProviderCapabilities capabilities() const override;
    GuidanceResponse guide(const GuidanceRequest& request) override;
};

} // namespace gdistill
