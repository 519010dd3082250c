#pragma once

#include <cstring>
#include <string>

#include "gdistill/errors.hpp"
#include "gdistill/rng.hpp"
#include "gdistill/wire_protocol.hpp"

namespace gdistill::testing {

struct FuzzStats {
    std::size_t cases = 0;
    std::size_t decoded = 0;
    std::size_t protocol_errors = 0;
    /// Anything that is not a ProtocolError (including non-engine exceptions).
    std::size_t untyped = 0;
    std::string first_untyped;
};

inline GuidanceResponse random_response(Rng& rng, int h, int w) {
    GuidanceResponse r;
    r.grad_image = ImageF(w, h);
    for (float& v : r.grad_image.data) v = static_cast<float>(rng.normal());
    if (rng.uniform() < 0.5) {
        ImageF p(w, h);
        for (float& v : p.data) v = static_cast<float>(rng.uniform());
        r.x_hat_preview = p;
    }
    return r;
}

inline std::string mutate(std::string body, Rng& rng) {
    switch (rng.uniform_index(7)) {
    case 0: // truncate
        body.resize(rng.uniform_index(body.size() + 1));
        break;
    case 1: // flip bytes
        for (int k = 0, n = 1 + static_cast<int>(rng.uniform_index(8)); k < n && !body.empty(); ++k) {
            body[rng.uniform_index(body.size())] = static_cast<char>(rng.next_u64());
        }
        break;
    case 2: { // rewrite the header length
        if (body.size() >= 12) {
            const std::uint32_t len = rng.uniform() < 0.5 ? static_cast<std::uint32_t>(rng.next_u64())
                                                          : static_cast<std::uint32_t>(rng.uniform_index(64));
            std::memcpy(body.data() + 8, &len, 4);
        }
        break;
    }
    case 3: // append junk
        body.append(1 + rng.uniform_index(64), static_cast<char>(rng.next_u64()));
        break;
    case 4: { // pure garbage
        std::string g(rng.uniform_index(512), '\0');
        for (char& c : g) c = static_cast<char>(rng.next_u64());
        if (rng.uniform() < 0.5 && g.size() >= 8) std::memcpy(g.data(), "GDPROTO1", 8);
        body = g;
        break;
    }
    case 5: { // corrupt the JSON header text
        const std::size_t start = 12;
        const auto end = body.find('}', start);
        if (end != std::string::npos && end > start) {
            body[start + rng.uniform_index(end - start + 1)] = "{}[]\":,0-e"[rng.uniform_index(10)];
        }
        break;
    }
    default: { // replace the header with a plausible but wrong one
        static const char* headers[] = {
            R"({"h": -1, "w": 4, "has_preview": false})",       R"({"h": 4, "w": 4})",
            R"({"h": 4.5, "w": 4, "has_preview": false})",      R"({"h": 99999, "w": 99999, "has_preview": true})",
            R"({"h": 4, "w": 4, "has_preview": "yes"})",        R"([4, 4, false])",
            R"({"h": 4, "w": 4, "has_preview": true, "x": 1})", R"({"h": "4", "w": 4, "has_preview": false})",
        };
        const std::string hdr = headers[rng.uniform_index(std::size(headers))];
        std::string out = "GDPROTO1";
        const auto len = static_cast<std::uint32_t>(hdr.size());
        out.append(reinterpret_cast<const char*>(&len), 4);
        out += hdr;
        if (body.size() > 12) {
            std::uint32_t old = 0;
            std::memcpy(&old, body.data() + 8, 4);
            if (12 + static_cast<std::size_t>(old) <= body.size()) out += body.substr(12 + old);
        }
        body = out;
        break;
    }
    }
    return body;
}

/// Feeds `iterations` mutated gdp/1 responses (and requests) to the decoders.
inline FuzzStats fuzz_decoders(std::size_t iterations, std::uint64_t seed) {
    Rng rng(seed);
    FuzzStats stats;
    const auto run = [&](auto&& fn) {
        ++stats.cases;
        try {
            fn();
            ++stats.decoded;
        } catch (const ProtocolError&) {
            ++stats.protocol_errors;
        } catch (const std::exception& e) {
            if (stats.untyped++ == 0) stats.first_untyped = e.what();
        } catch (...) {
            if (stats.untyped++ == 0) stats.first_untyped = "non-std exception";
        }
    };
    for (std::size_t i = 0; i < iterations; ++i) {
        const int h = 1 + static_cast<int>(rng.uniform_index(6));
        const int w = 1 + static_cast<int>(rng.uniform_index(6));
        const std::string resp = mutate(wire::encode_response(random_response(rng, h, w)), rng);
        run([&] { wire::decode_response(resp, h, w); });

        GuidanceRequest req;
        req.image = ImageF(w, h, 0.25f);
        req.noise_fraction = rng.uniform(0.01, 0.99);
        req.seed = rng.next_u64();
        req.prompt = "fuzz";
        const std::string body = mutate(wire::encode_request(req), rng);
        run([&] { wire::decode_request(body); });
    }
    return stats;
}

} // namespace gdistill::testing
