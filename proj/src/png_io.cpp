#include "gdistill/png_io.hpp"

#include <fmt/format.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "gdistill/errors.hpp"

namespace gdistill {
namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

unsigned char to_byte(float v) {
    if (!std::isfinite(v)) v = 0.f;
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.f, 1.f) * 255.f));
}

struct ErrorSlot {
    char message[256] = {};
};

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
    auto* slot = static_cast<ErrorSlot*>(png_get_error_ptr(png));
    std::snprintf(slot->message, sizeof slot->message, "%s", msg);
    png_longjmp(png, 1);
}
void png_warning_fn(png_structp, png_const_charp) {}

} // namespace

float quantize_unit(float v) { return to_byte(v) / 255.f; }

void write_png(const std::filesystem::path& path, const ImageF& image) {
    if (image.width < 1 || image.height < 1) throw IoError(fmt::format("refusing to write empty image {}", path.string()));
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError(fmt::format("cannot open {} for writing", path.string()));

    ErrorSlot err;
    std::vector<unsigned char> rows(image.data.size());
    std::transform(image.data.begin(), image.data.end(), rows.begin(), to_byte);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp* p;
        png_infop* i;
        ~Guard() { png_destroy_write_struct(p, i); }
    } guard{&png, &info};
    if (!info) throw IoError("png_create_info_struct failed");
    if (setjmp(png_jmpbuf(png))) throw IoError(fmt::format("{}: {}", path.string(), err.message));

    png_init_io(png, f.get());
    png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < image.height; ++y) png_write_row(png, rows.data() + static_cast<std::size_t>(y) * image.width * 3);
    png_write_end(png, nullptr);
    if (std::fflush(f.get()) != 0) throw IoError(fmt::format("write to {} failed", path.string()));
}

ImageF read_png(const std::filesystem::path& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError(fmt::format("cannot open {}", path.string()));
    ErrorSlot err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp* p;
        png_infop* i;
        ~Guard() { png_destroy_read_struct(p, i, nullptr); }
    } guard{&png, &info};
    if (!info) throw IoError("png_create_info_struct failed");
    if (setjmp(png_jmpbuf(png))) throw IoError(fmt::format("{}: {}", path.string(), err.message));

    png_init_io(png, f.get());
    png_read_info(png, info);
    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const int color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) != 8 || (color != PNG_COLOR_TYPE_RGB && color != PNG_COLOR_TYPE_RGBA)) {
        throw IoError(fmt::format("{}: only 8-bit RGB/RGBA PNGs are supported", path.string()));
    }
    volatile const int channels = color == PNG_COLOR_TYPE_RGBA ? 4 : 3;
    std::vector<unsigned char> row(static_cast<std::size_t>(width) * channels);
    ImageF img(width, height);
    if (setjmp(png_jmpbuf(png))) throw IoError(fmt::format("{}: {}", path.string(), err.message));
    for (int y = 0; y < height; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = row[static_cast<std::size_t>(x) * channels + c] / 255.f;
        }
    }
    return img;
}

ImageF side_by_side(const ImageF& left, const ImageF& right) {
    if (left.height != right.height) throw InvalidParameter("side_by_side: heights differ");
    ImageF out(left.width + right.width, left.height);
    for (int y = 0; y < out.height; ++y) {
        for (int c = 0; c < 3; ++c) {
            for (int x = 0; x < left.width; ++x) out.at(x, y, c) = left.at(x, y, c);
            for (int x = 0; x < right.width; ++x) out.at(left.width + x, y, c) = right.at(x, y, c);
        }
    }
    return out;
}

} // namespace gdistill
