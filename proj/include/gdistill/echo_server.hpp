#pragma once

#include <atomic>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "gdistill/diffusion_math.hpp"
#include "gdistill/guidance.hpp"

namespace gdistill {

/// Deliberate misbehaviour for exercising client error paths.
enum class EchoFault {
    None,
    TruncatedBody,
    OversizedHeader,
    Garbage,
    BadMagic,
    BadJsonHeader,
    WrongShape,
    TrailingBytes,
    NonFiniteGradient,
    HttpError,
    Hang,
    WrongProtocolVersion,
};

struct EchoServerOptions {
    std::string host = "127.0.0.1";
    int port = 0; // 0 picks a free port
    std::vector<GuidanceSpace> spaces = {GuidanceSpace::Image, GuidanceSpace::Latent};
    std::vector<int> resolutions;
    NoiseSchedule schedule;
    SdsWeights weights;
    EchoFault fault = EchoFault::None;
    int hang_ms = 2000;
};

/// gdp/1 server whose denoiser returns ε̂ = ε. The SDS gradient is therefore
/// exactly zero and the preview is the one-step inverse of the noised input.
class EchoServer {
public:
    explicit EchoServer(EchoServerOptions options);
    ~EchoServer();

    EchoServer(const EchoServer&) = delete;
    EchoServer& operator=(const EchoServer&) = delete;

    int port() const { return port_; }
    std::string endpoint() const;
    void set_fault(EchoFault fault) { fault_.store(fault); }
    std::size_t requests_served() const { return served_.load(); }

    /// Blocks until stop() is called from another thread.
    void run_forever();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<EchoFault> fault_;
    std::atomic<std::size_t> served_{0};
    EchoServerOptions options_;
};

/// Server-side computation of an echo response for a decoded request.
GuidanceResponse echo_guide(const GuidanceRequest& request, const NoiseSchedule& schedule, const SdsWeights& weights);

} // namespace gdistill
