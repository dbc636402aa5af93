#pragma once

/// Minimal grayscale image container plus binary PNM (PGM/PPM) I/O.
/// Images are stored row-major; pixel (x, y) has its center at real
/// coordinates (x, y). RGB inputs are converted to luminance on load.

#include <cstdint>
#include <string>
#include <vector>

#include "spherereg/error.hpp"

namespace spherereg {

template <typename T>
struct Image {
    int width = 0;
    int height = 0;
    std::vector<T> pixels;  // row-major, width*height

    Image() = default;
    Image(int w, int h, T fill = T{}) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

    T& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    const T& at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

    bool in_bounds(int x, int y) const {
        return x >= 0 && x < width && y >= 0 && y < height;
    }
};

using ImageU8 = Image<std::uint8_t>;
using ImageU16 = Image<std::uint16_t>;
using ImageF = Image<float>;

/// Loads a binary PGM (P5) or PPM (P6), 8- or 16-bit, as grayscale in
/// [0, 1]. PPM is reduced with Rec.601 luma weights.
ImageF load_image_gray(const std::string& path);

/// Loads a binary PGM as an 8-bit image (16-bit inputs are rescaled).
ImageU8 load_image_u8(const std::string& path);

/// Writes an 8-bit binary PGM (P5), maxval 255.
void save_pgm(const ImageU8& image, const std::string& path);

/// Rectangular window into a full image, used for per-marker crops.
struct CropWindow {
    int x0 = 0;
    int y0 = 0;
    int width = 0;
    int height = 0;
};

/// Extracts a crop clamped to the image bounds.
ImageF crop_image(const ImageF& image, const CropWindow& window);

}  // namespace spherereg
