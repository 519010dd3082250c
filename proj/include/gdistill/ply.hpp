#pragma once

#include <filesystem>

#include "gdistill/scene.hpp"

namespace gdistill {

/// Header comment identifying the vertex layout written by `export_ply`.
inline constexpr const char* kPlyFormatTag = "gauss-distill-ply-v1";

/// Binary little-endian PLY, 14 float32 properties per vertex:
/// x y z log_sx log_sy log_sz qw qx qy qz opacity_logit r g b.
void export_ply(const GaussianScene& scene, const std::filesystem::path& path);

/// Throws IoError (naming the offending vertex where applicable) on
/// unreadable or malformed files.
GaussianScene import_ply(const std::filesystem::path& path);

} // namespace gdistill
