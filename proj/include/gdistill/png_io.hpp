#pragma once

#include <filesystem>

#include "gdistill/image.hpp"

namespace gdistill {

/// 8-bit RGB PNG; values are clamped to [0, 1] and rounded to the nearest
/// level. Output bytes depend only on the pixels. Throws IoError.
void write_png(const std::filesystem::path& path, const ImageF& image);

/// Reads an 8-bit RGB or RGBA PNG into [0, 1] floats (alpha dropped).
ImageF read_png(const std::filesystem::path& path);

/// The value `write_png` would store for `v`, mapped back to [0, 1].
float quantize_unit(float v);

/// Horizontal concatenation of equally tall images.
ImageF side_by_side(const ImageF& left, const ImageF& right);

} // namespace gdistill
