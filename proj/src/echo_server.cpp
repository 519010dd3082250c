#include "gdistill/echo_server.hpp"

#include <fmt/format.h>
#include <httplib.h>

#include <chrono>
#include <cstring>
#include <limits>

#include "gdistill/wire_protocol.hpp"

namespace gdistill {

GuidanceResponse echo_guide(const GuidanceRequest& request, const NoiseSchedule& schedule, const SdsWeights& weights) {
    const std::size_t n = request.image.data.size();
    const std::vector<float> eps = noise_from_seed(request.seed, n);
    const int t = schedule.timestep_from_fraction(request.noise_fraction);
    const double alpha_bar = schedule.alpha_bar(t);
    const std::vector<float> x_t = add_noise<float>(request.image.data, eps, alpha_bar);
    const std::vector<float>& eps_hat = eps; // the echo denoiser

    GuidanceResponse resp;
    resp.grad_image.width = request.image.width;
    resp.grad_image.height = request.image.height;
    resp.grad_image.data = sds_gradient<float>(eps_hat, eps, alpha_bar, weights);
    ImageF preview(request.image.width, request.image.height);
    preview.data = denoise_one_step<float>(x_t, eps_hat, alpha_bar);
    for (float& v : preview.data) v = std::clamp(v, 0.f, 1.f);
    resp.x_hat_preview = std::move(preview);
    return resp;
}

struct EchoServer::Impl {
    httplib::Server server;
};

EchoServer::EchoServer(EchoServerOptions options)
    : impl_(std::make_unique<Impl>()), fault_(options.fault), options_(std::move(options)) {
    auto& srv = impl_->server;

    srv.Get(std::string(wire::kHealthPath), [this](const httplib::Request&, httplib::Response& res) {
        ProviderCapabilities caps;
        caps.spaces = options_.spaces;
        caps.resolutions = options_.resolutions;
        caps.previews = true;
        if (fault_.load() == EchoFault::WrongProtocolVersion) caps.protocol = "gdp/0";
        res.set_content(wire::health_document(caps).dump(), "application/json");
    });

    srv.Post(std::string(wire::kGuidePath), [this](const httplib::Request& req, httplib::Response& res) {
        ++served_;
        GuidanceRequest request;
        try {
            request = wire::decode_request(req.body);
            request.validate();
        } catch (const Error& e) {
            res.status = 422;
            res.set_content(e.what(), "text/plain");
            return;
        }
        ProviderCapabilities caps;
        caps.spaces = options_.spaces;
        caps.resolutions = options_.resolutions;
        if (request.image.width != request.image.height ||
            !caps.supports(request.space, request.image.width)) {
            res.status = 422;
            res.set_content(wire::health_document(caps).dump(), "application/json");
            return;
        }

        GuidanceResponse resp = echo_guide(request, options_.schedule, options_.weights);
        std::string body;
        switch (fault_.load()) {
        case EchoFault::None:
        case EchoFault::WrongProtocolVersion:
            body = wire::encode_response(resp);
            break;
        case EchoFault::TruncatedBody:
            body = wire::encode_response(resp);
            body.resize(body.size() / 2);
            break;
        case EchoFault::OversizedHeader: {
            body = wire::encode_response(resp);
            const std::uint32_t huge = std::numeric_limits<std::uint32_t>::max();
            std::memcpy(body.data() + wire::kMagic.size(), &huge, 4);
            break;
        }
        case EchoFault::Garbage:
            body.assign(257, '\x5a');
            break;
        case EchoFault::BadMagic:
            body = wire::encode_response(resp);
            body[0] = 'X';
            break;
        case EchoFault::BadJsonHeader: {
            const std::string header = "{\"h\": 4, \"w\":";
            body.append(wire::kMagic);
            const auto len = static_cast<std::uint32_t>(header.size());
            body.append(reinterpret_cast<const char*>(&len), 4);
            body.append(header);
            break;
        }
        case EchoFault::WrongShape: {
            GuidanceResponse wrong;
            wrong.grad_image = ImageF(resp.grad_image.width + 1, resp.grad_image.height);
            body = wire::encode_response(wrong);
            break;
        }
        case EchoFault::TrailingBytes:
            body = wire::encode_response(resp);
            body.append(13, '\0');
            break;
        case EchoFault::NonFiniteGradient:
            resp.grad_image.data[0] = std::numeric_limits<float>::quiet_NaN();
            body = wire::encode_response(resp);
            break;
        case EchoFault::HttpError:
            res.status = 503;
            res.set_content("overloaded", "text/plain");
            return;
        case EchoFault::Hang:
            std::this_thread::sleep_for(std::chrono::milliseconds(options_.hang_ms));
            body = wire::encode_response(resp);
            break;
        }
        res.set_content(body, "application/octet-stream");
    });

    if (options_.port == 0) {
        port_ = srv.bind_to_any_port(options_.host);
    } else {
        port_ = srv.bind_to_port(options_.host, options_.port) ? options_.port : -1;
    }
    if (port_ <= 0) throw IoError(fmt::format("echo server could not bind {}:{}", options_.host, options_.port));
    thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

EchoServer::~EchoServer() { stop(); }

std::string EchoServer::endpoint() const { return fmt::format("http://{}:{}", options_.host, port_); }

void EchoServer::run_forever() {
    if (thread_.joinable()) thread_.join();
}

void EchoServer::stop() {
    impl_->server.stop();
    if (thread_.joinable()) thread_.join();
}

} // namespace gdistill
