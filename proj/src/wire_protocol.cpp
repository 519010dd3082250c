#include "gdistill/wire_protocol.hpp"

#include <fmt/format.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <optional>

namespace gdistill::wire {
namespace {

static_assert(std::endian::native == std::endian::little, "wire codec assumes a little-endian host");

std::string frame(const nlohmann::json& header, std::initializer_list<const ImageF*> tensors) {
    const std::string h = header.dump();
    std::string out;
    std::size_t tensor_bytes = 0;
    for (const ImageF* t : tensors) tensor_bytes += t->data.size() * sizeof(float);
    out.reserve(kMagic.size() + 4 + h.size() + tensor_bytes);
    out.append(kMagic);
    const auto len = static_cast<std::uint32_t>(h.size());
    char len_bytes[4];
    std::memcpy(len_bytes, &len, 4);
    out.append(len_bytes, 4);
    out.append(h);
    for (const ImageF* t : tensors) {
        out.append(reinterpret_cast<const char*>(t->data.data()), t->data.size() * sizeof(float));
    }
    return out;
}

struct Frame {
    nlohmann::json header;
    std::string_view payload;
};

Frame unframe(std::string_view body) {
    if (body.size() < kMagic.size() + 4) {
        throw ProtocolError(fmt::format("message too short ({} bytes)", body.size()));
    }
    if (body.substr(0, kMagic.size()) != kMagic) throw ProtocolError("bad magic");
    std::uint32_t len = 0;
    std::memcpy(&len, body.data() + kMagic.size(), 4);
    if (len > kMaxHeaderBytes) throw ProtocolError(fmt::format("header length {} exceeds limit", len));
    const std::size_t start = kMagic.size() + 4;
    if (body.size() - start < len) throw ProtocolError("truncated header");
    Frame f;
    f.header = nlohmann::json::parse(body.substr(start, len), nullptr, /*allow_exceptions=*/false);
    if (f.header.is_discarded() || !f.header.is_object()) throw ProtocolError("header is not a JSON object");
    f.payload = body.substr(start + len);
    return f;
}

template <typename V> V field(const nlohmann::json& h, const char* key) {
    const auto it = h.find(key);
    if (it == h.end()) throw ProtocolError(fmt::format("header missing '{}'", key));
    try {
        return it->template get<V>();
    } catch (const nlohmann::json::exception&) {
        throw ProtocolError(fmt::format("header field '{}' has the wrong type", key));
    }
}

std::pair<int, int> shape(const nlohmann::json& h) {
    const auto hh = h.find("h");
    const auto ww = h.find("w");
    if (hh == h.end() || ww == h.end() || !hh->is_number_integer() || !ww->is_number_integer()) {
        throw ProtocolError("header needs integer 'h' and 'w'");
    }
    const auto height = hh->get<std::int64_t>();
    const auto width = ww->get<std::int64_t>();
    if (height < 1 || width < 1 || height > kMaxSide || width > kMaxSide) {
        throw ProtocolError(fmt::format("shape {}x{} out of range", height, width));
    }
    return {static_cast<int>(height), static_cast<int>(width)};
}

ImageF read_tensor(std::string_view& payload, int height, int width) {
    ImageF img(width, height);
    const std::size_t bytes = img.data.size() * sizeof(float);
    if (payload.size() < bytes) throw ProtocolError("truncated tensor payload");
    std::memcpy(img.data.data(), payload.data(), bytes);
    payload.remove_prefix(bytes);
    return img;
}

} // namespace

std::string encode_request(const GuidanceRequest& r) {
    const nlohmann::json header = {{"h", r.image.height},
                                   {"w", r.image.width},
                                   {"noise_fraction", r.noise_fraction},
                                   {"seed", r.seed},
                                   {"prompt", r.prompt},
                                   {"guidance_scale", r.guidance_scale},
                                   {"space", to_string(r.space)}};
    return frame(header, {&r.image});
}

GuidanceRequest decode_request(std::string_view body) {
    Frame f = unframe(body);
    const auto [h, w] = shape(f.header);
    GuidanceRequest r;
    r.noise_fraction = field<double>(f.header, "noise_fraction");
    r.seed = field<std::uint64_t>(f.header, "seed");
    r.prompt = field<std::string>(f.header, "prompt");
    r.guidance_scale = field<double>(f.header, "guidance_scale");
    const auto space = field<std::string>(f.header, "space");
    if (space != "image" && space != "latent") throw ProtocolError(fmt::format("unknown space '{}'", space));
    r.space = parse_guidance_space(space);
    r.image = read_tensor(f.payload, h, w);
    if (!f.payload.empty()) throw ProtocolError(fmt::format("{} trailing bytes after request tensor", f.payload.size()));
    return r;
}

std::string encode_response(const GuidanceResponse& r) {
    const nlohmann::json header = {
        {"h", r.grad_image.height}, {"w", r.grad_image.width}, {"has_preview", r.x_hat_preview.has_value()}};
    if (r.x_hat_preview) return frame(header, {&r.grad_image, &*r.x_hat_preview});
    return frame(header, {&r.grad_image});
}

GuidanceResponse decode_response(std::string_view body, int expected_height, int expected_width) {
    Frame f = unframe(body);
    const auto [h, w] = shape(f.header);
    if (h != expected_height || w != expected_width) {
        throw ProtocolError(fmt::format("response shape {}x{} does not match request {}x{}", h, w, expected_height,
                                        expected_width));
    }
    const bool has_preview = field<bool>(f.header, "has_preview");
    GuidanceResponse r;
    r.grad_image = read_tensor(f.payload, h, w);
    if (has_preview) r.x_hat_preview = read_tensor(f.payload, h, w);
    if (!f.payload.empty()) throw ProtocolError(fmt::format("{} trailing bytes after response tensors", f.payload.size()));
    return r;
}

nlohmann::json health_document(const ProviderCapabilities& caps) {
    nlohmann::json spaces = nlohmann::json::array();
    for (auto s : caps.spaces) spaces.push_back(to_string(s));
    return {{"protocol", caps.protocol}, {"space", spaces}, {"resolution", caps.resolutions}, {"preview", caps.previews}};
}

ProviderCapabilities parse_health(std::string_view body) {
    const auto doc = nlohmann::json::parse(body, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw ProtocolError("health document is not a JSON object");
    const auto proto = field<std::string>(doc, "protocol");
    if (proto != kProtocol) {
        throw VersionMismatch(fmt::format("server speaks '{}', client speaks '{}'", proto, kProtocol));
    }
    ProviderCapabilities caps;
    caps.protocol = proto;
    for (const auto& s : field<std::vector<std::string>>(doc, "space")) {
        if (s != "image" && s != "latent") throw ProtocolError(fmt::format("unknown space '{}' in health", s));
        caps.spaces.push_back(parse_guidance_space(s));
    }
    caps.resolutions = field<std::vector<int>>(doc, "resolution");
    const auto preview = doc.find("preview");
    caps.previews = preview != doc.end() && preview->is_boolean() && preview->get<bool>();
    return caps;
}

} // namespace gdistill::wire
