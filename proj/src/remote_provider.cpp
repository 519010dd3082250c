#include "gdistill/remote_provider.hpp"

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "gdistill/wire_protocol.hpp"

namespace gdistill {

struct RemoteProvider::Client {
    httplib::Client http;
    explicit Client(const std::string& endpoint) : http(endpoint) {}
};

namespace {

void apply_timeouts(httplib::Client& http, std::chrono::milliseconds timeout) {
    // Split one attempt's budget so connect + send + receive stays within it.
    const auto quarter = std::max<std::chrono::milliseconds::rep>(1, timeout.count() / 4);
    const auto half = std::max<std::chrono::milliseconds::rep>(1, timeout.count() / 2);
    http.set_connection_timeout(std::chrono::milliseconds(quarter));
    http.set_write_timeout(std::chrono::milliseconds(quarter));
    http.set_read_timeout(std::chrono::milliseconds(half));
}

} // namespace

RemoteProvider::RemoteProvider(RemoteProviderOptions options) : options_(std::move(options)) {
    if (options_.retries < 0) throw InvalidParameter("remote provider retries must be >= 0");
    if (options_.timeout.count() <= 0) throw InvalidParameter("remote provider timeout must be > 0");
    try {
        client_ = std::make_unique<Client>(options_.endpoint);
    } catch (const std::exception& e) {
        throw GuidanceUnavailable(fmt::format("invalid guidance endpoint '{}': {}", options_.endpoint, e.what()));
    }
    if (!client_->http.is_valid()) {
        throw GuidanceUnavailable(fmt::format("invalid guidance endpoint '{}'", options_.endpoint));
    }
    apply_timeouts(client_->http, options_.timeout);

    auto res = client_->http.Get(std::string(wire::kHealthPath));
    if (!res) {
        throw GuidanceUnavailable(fmt::format("health check against {} failed: {}", options_.endpoint,
                                              httplib::to_string(res.error())));
    }
    if (res->status != 200) {
        throw GuidanceUnavailable(fmt::format("health check against {} returned HTTP {}", options_.endpoint, res->status));
    }
    caps_ = wire::parse_health(res->body);
}

RemoteProvider::~RemoteProvider() = default;

GuidanceResponse RemoteProvider::guide(const GuidanceRequest& request) {
    const std::string body = wire::encode_request(request);
    std::string last_error;
    for (int attempt = 0; attempt <= options_.retries; ++attempt) {
        auto res = client_->http.Post(std::string(wire::kGuidePath), body, "application/octet-stream");
        if (!res) {
            last_error = httplib::to_string(res.error());
            spdlog::warn("guidance request attempt {}/{} failed: {}", attempt + 1, options_.retries + 1, last_error);
            continue;
        }
        if (res->status >= 500) {
            last_error = fmt::format("HTTP {}", res->status);
            spdlog::warn("guidance request attempt {}/{} failed: {}", attempt + 1, options_.retries + 1, last_error);
            continue;
        }
        if (res->status != 200) {
            throw ProtocolError(fmt::format("guidance server rejected request with HTTP {}: {}", res->status,
                                            res->body.substr(0, 200)));
        }
        return wire::decode_response(res->body, request.image.height, request.image.width);
    }
    throw GuidanceUnavailable(
        fmt::format("guidance server {} unavailable after {} attempts: {}", options_.endpoint, options_.retries + 1, last_error));
}

} // namespace gdistill
