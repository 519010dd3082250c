#pragma once

#include <json.hpp>

#include <cstddef>
#include <string>
#include <string_view>

#include "gdistill/guidance.hpp"

namespace gdistill::wire {

// gdp/1 framing, shared by requests and responses:
//   8 bytes   magic "GDPROTO1"
//   4 bytes   little-endian uint32 JSON header length
//   N bytes   UTF-8 JSON header
//   tensors   h·w·3 float32 little-endian, row-major, channels interleaved
//
// Request header:  {h, w, noise_fraction, seed, prompt, guidance_scale, space}
// Response header: {h, w, has_preview}; gradient tensor, then preview if any.

inline constexpr std::string_view kProtocol = "gdp/1";
inline constexpr std::string_view kMagic = "GDPROTO1";
inline constexpr std::string_view kGuidePath = "/v1/guide";
inline constexpr std::string_view kHealthPath = "/v1/health";
inline constexpr std::size_t kMaxHeaderBytes = 1 << 20;
inline constexpr int kMaxSide = 8192;

std::string encode_request(const GuidanceRequest& request);
/// Throws ProtocolError on any framing, header or size violation.
GuidanceRequest decode_request(std::string_view body);

std::string encode_response(const GuidanceResponse& response);
/// Throws ProtocolError on any framing, header or size violation, including
/// a shape different from the expected h×w.
GuidanceResponse decode_response(std::string_view body, int expected_height, int expected_width);

nlohmann::json health_document(const ProviderCapabilities& caps);
/// Throws ProtocolError on malformed documents, VersionMismatch when the
/// advertised protocol is not gdp/1.
ProviderCapabilities parse_health(std::string_view body);

} // namespace gdistill::wire
