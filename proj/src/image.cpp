#include "spherereg/image.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace spherereg {

namespace {

struct PnmHeader {
    int magic = 0;  // 5 = PGM, 6 = PPM
    int width = 0;
    int height = 0;
    int maxval = 0;
};

int next_header_token(std::istream& in, const std::string& path) {
    // Skips whitespace and '#' comments per the PNM grammar.
    for (;;) {
        int c = in.peek();
        if (c == EOF) raise(ErrorCode::ParseError, path + ": truncated PNM header");
        if (c == '#') {
            std::string line;
            std::getline(in, line);
            continue;
        }
        if (std::isspace(c)) {
            in.get();
            continue;
        }
        break;
    }
    int value = 0;
    if (!(in >> value)) raise(ErrorCode::ParseError, path + ": bad PNM header token");
    return value;
}

PnmHeader read_header(std::istream& in, const std::string& path) {
    char p = 0, digit = 0;
    in.get(p);
    in.get(digit);
    if (p != 'P' || (digit != '5' && digit != '6')) {
        raise(ErrorCode::UnsupportedFormat,
              path + ": expected binary PGM (P5) or PPM (P6)");
    }
    PnmHeader h;
    h.magic = digit - '0';
    h.width = next_header_token(in, path);
    h.height = next_header_token(in, path);
    h.maxval = next_header_token(in, path);
    if (h.width <= 0 || h.height <= 0 || h.maxval <= 0 || h.maxval > 65535) {
        raise(ErrorCode::ParseError, path + ": invalid PNM dimensions");
    }
    in.get();  // single whitespace before the raster
    return h;
}

std::vector<std::uint16_t> read_raster(std::istream& in, const PnmHeader& h,
                                       const std::string& path) {
    const int channels = h.magic == 6 ? 3 : 1;
    const std::size_t count =
        static_cast<std::size_t>(h.width) * h.height * channels;
    const bool wide = h.maxval > 255;
    std::vector<char> raw(count * (wide ? 2 : 1));
    in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
        raise(ErrorCode::ParseError, path + ": truncated PNM raster");
    }
    std::vector<std::uint16_t> out(count);
    if (wide) {
        for (std::size_t i = 0; i < count; ++i) {
            const auto hi = static_cast<std::uint8_t>(raw[2 * i]);
            const auto lo = static_cast<std::uint8_t>(raw[2 * i + 1]);
            out[i] = static_cast<std::uint16_t>((hi << 8) | lo);  // big-endian
        }
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            out[i] = static_cast<std::uint8_t>(raw[i]);
        }
    }
    return out;
}

}  // namespace

ImageF load_image_gray(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::Io, "cannot open " + path);
    const PnmHeader h = read_header(in, path);
    const auto raster = read_raster(in, h, path);
    ImageF img(h.width, h.height);
    const float scale = 1.0f / static_cast<float>(h.maxval);
    if (h.magic == 5) {
        for (std::size_t i = 0; i < img.pixels.size(); ++i) {
            img.pixels[i] = raster[i] * scale;
        }
    } else {
        for (std::size_t i = 0; i < img.pixels.size(); ++i) {
            const float r = raster[3 * i] * scale;
            const float g = raster[3 * i + 1] * scale;
            const float b = raster[3 * i + 2] * scale;
            img.pixels[i] = 0.299f * r + 0.587f * g + 0.114f * b;
        }
    }
    return img;
}

ImageU8 load_image_u8(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::Io, "cannot open " + path);
    const PnmHeader h = read_header(in, path);
    if (h.magic != 5) raise(ErrorCode::UnsupportedFormat, path + ": expected PGM");
    const auto raster = read_raster(in, h, path);
    ImageU8 img(h.width, h.height);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        img.pixels[i] = h.maxval > 255
                            ? static_cast<std::uint8_t>(raster[i] * 255 / h.maxval)
                            : static_cast<std::uint8_t>(raster[i]);
    }
    return img;
}

void save_pgm(const ImageU8& image, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCode::Io, "cannot write " + path);
    out << "P5\n" << image.width << " " << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()),
              static_cast<std::streamsize>(image.pixels.size()));
    if (!out) raise(ErrorCode::Io, "write failed for " + path);
}

ImageF crop_image(const ImageF& image, const CropWindow& window) {
    const int x0 = std::max(0, window.x0);
    const int y0 = std::max(0, window.y0);
    const int x1 = std::min(image.width, window.x0 + window.width);
    const int y1 = std::min(image.height, window.y0 + window.height);
    require(x1 > x0 && y1 > y0, "crop window outside image");
    ImageF out(x1 - x0, y1 - y0);
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            out.at(x - x0, y - y0) = image.at(x, y);
        }
    }
    return out;
}

}  // namespace spherereg
