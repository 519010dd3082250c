#include <CLI11.hpp>

#include <chrono>
#include <csignal>
#include <iostream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "gdistill/echo_server.hpp"

namespace {

volatile std::sig_atomic_t g_stop = 0;

extern "C" void on_signal(int) { g_stop = 1; }

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"gdp/1 echo server: the denoiser returns the request's own noise, so gradients are zero"};
    gdistill::EchoServerOptions opts;
    opts.port = 8765;
    std::vector<std::string> spaces = {"image", "latent"};
    std::string fault = "none";
    app.add_option("--host", opts.host)->capture_default_str();
    app.add_option("--port", opts.port, "0 picks a free port")->capture_default_str();
    app.add_option("--resolution", opts.resolutions, "Accepted square resolutions (default: any)");
    app.add_option("--space", spaces, "Advertised spaces")->check(CLI::IsMember({"image", "latent"}));
    const std::map<std::string, gdistill::EchoFault> faults = {
        {"none", gdistill::EchoFault::None},
        {"truncated", gdistill::EchoFault::TruncatedBody},
        {"oversized-header", gdistill::EchoFault::OversizedHeader},
        {"garbage", gdistill::EchoFault::Garbage},
        {"bad-magic", gdistill::EchoFault::BadMagic},
        {"bad-json", gdistill::EchoFault::BadJsonHeader},
        {"wrong-shape", gdistill::EchoFault::WrongShape},
        {"trailing-bytes", gdistill::EchoFault::TrailingBytes},
        {"nan", gdistill::EchoFault::NonFiniteGradient},
        {"http-error", gdistill::EchoFault::HttpError},
        {"hang", gdistill::EchoFault::Hang},
        {"wrong-version", gdistill::EchoFault::WrongProtocolVersion},
    };
    app.add_option("--fault", fault, "Fault injection mode")->transform(CLI::IsMember(faults, CLI::ignore_case));
    CLI11_PARSE(app, argc, argv);

    opts.spaces.clear();
    for (const auto& s : spaces) opts.spaces.push_back(gdistill::parse_guidance_space(s));
    opts.fault = faults.at(fault);
    try {
        gdistill::EchoServer server(opts);
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        std::cout << "listening on " << server.endpoint() << std::endl;
        while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        server.stop();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
