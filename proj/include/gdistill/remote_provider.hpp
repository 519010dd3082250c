#pragma once

#include <chrono>
#include <memory>
#include <string>

#include "gdistill/guidance.hpp"

namespace gdistill {

struct RemoteProviderOptions {
    std::string endpoint = "http://127.0.0.1:8765";
    std::chrono::milliseconds timeout{30000};
    int retries = 2;
};

/// Client for an out-of-process denoiser speaking gdp/1.
///
/// Construction performs the health check. Each guide() call is bounded by
/// timeout × (retries + 1): transport failures and 5xx responses are retried,
/// malformed responses surface immediately as ProtocolError.
class RemoteProvider final : public GuidanceProvider {
public:
    explicit RemoteProvider(RemoteProviderOptions options);
    ~RemoteProvider() override;

    RemoteProvider(const RemoteProvider&) = delete;
    RemoteProvider& operator=(const RemoteProvider&) = delete;

    ProviderCapabilities capabilities() const override { return caps_; }
    GuidanceResponse guide(const GuidanceRequest& request) override;

private:
    struct Client;
    RemoteProviderOptions options_;
    std::unique_ptr<Client> client_;
    ProviderCapabilities caps_;
};

} // namespace gdistill
