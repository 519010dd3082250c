#pragma once

#include <cstddef>
#include <vector>

namespace gdistill {

/// H×W RGB image, row-major with interleaved channels.
template <typename T> struct Image {
    int width = 0;
    int height = 0;
    std::vector<T> data;

    Image() = default;
    Image(int w, int h, T fill = T(0)) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    std::size_t index(int x, int y, int c) const { return (static_cast<std::size_t>(y) * width + x) * 3 + c; }

    T& at(int x, int y, int c) { return data[index(x, y, c)]; }
    const T& at(int x, int y, int c) const { return data[index(x, y, c)]; }

    bool same_shape(const Image& other) const { return width == other.width && height == other.height; }

    template <typename U> Image<U> cast() const {
        Image<U> out;
        out.width = width;
        out.height = height;
        out.data.assign(data.begin(), data.end());
        return out;
    }

    bool operator==(const Image&) const = default;
};

using ImageF = Image<float>;
using ImageD = Image<double>;

} // namespace gdistill
