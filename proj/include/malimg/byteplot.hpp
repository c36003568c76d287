#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "malimg/errors.hpp"

namespace malimg {

// 8-bit grayscale byteplot. Row-major, 0 = black, 255 = white.
struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;  // width * height

    std::uint8_t at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
};

// Normalized real-valued image, values in [0,1]. This is the space the
// detectors and the attacks operate on. Wavelet code reuses the same
// container for general real matrices.
struct PixelTensor {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values;  // row-major, height * width

    PixelTensor() = default;
    PixelTensor(std::size_t h, std::size_t w, double fill = 0.0)
        : height(h), width(w), values(h * w, fill) {}

    double& at(std::size_t r, std::size_t c) { return values[r * width + c]; }
    double at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
    std::size_t size() const { return values.size(); }
};

inline void validate_unit_range(const PixelTensor& t, const char* who) {
    for (double v : t.values) {
        if (!std::isfinite(v) || v < 0.0 || v > 1.0)
            throw ConfigError(std::string(who) + ": tensor value outside [0,1]");
    }
}

// Image width as a function of file size. The two small-file entries follow
// the usual byteplot convention; the remaining rungs extend it monotonically
// up through multi-megabyte files. 1 KB = 1024 bytes.
inline std::size_t width_for_size(std::size_t n_bytes) {
    if (n_bytes == 0) throw EmptyInput("width_for_size: zero-length input");
    if (n_bytes < 10 * 1024) return 32;
    if (n_bytes < 30 * 1024) return 64;
    if (n_bytes < 60 * 1024) return 128;
    if (n_bytes < 100 * 1024) return 256;
    if (n_bytes < 200 * 1024) return 384;
    if (n_bytes < 500 * 1024) return 512;
    if (n_bytes < 1000 * 1024) return 768;
    return 1024;
}

// Bytes -> grayscale image, one byte per pixel, row-major, ragged last row
// zero padded. Byte values are never altered.
inline GrayImage bytes_to_image(const std::vector<std::uint8_t>& bytes) {
    if (bytes.empty()) throw EmptyInput("bytes_to_image: empty byte sequence");
    GrayImage img;
    img.width = width_for_size(bytes.size());
    img.height = (bytes.size() + img.width - 1) / img.width;
    img.pixels.assign(img.width * img.height, 0);
    std::copy(bytes.begin(), bytes.end(), img.pixels.begin());
    return img;
}

// GrayImage -> [0,1] tensor without resampling.
inline PixelTensor normalize(const GrayImage& img) {
    PixelTensor t(img.height, img.width);
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        t.values[i] = static_cast<double>(img.pixels[i]) / 255.0;
    return t;
}

// Bilinear resample of pixel/255 onto a target grid. Pixel-center
// convention: target cell (r,c) samples source coordinate
// ((r+0.5)*h/th - 0.5, (c+0.5)*w/tw - 0.5), clamped to the source box, so
// matching sizes reproduce the input and constants stay constant.
inline PixelTensor resize(const GrayImage& img, std::size_t target_h, std::size_t target_w) {
    if (target_h == 0 || target_w == 0) throw SizeError("resize: target dimension is zero");
    if (img.width == 0 || img.height == 0) throw SizeError("resize: empty source image");

    PixelTensor out(target_h, target_w);
    const double sy = static_cast<double>(img.height) / static_cast<double>(target_h);
    const double sx = static_cast<double>(img.width) / static_cast<double>(target_w);
    for (std::size_t r = 0; r < target_h; ++r) {
        double fy = (static_cast<double>(r) + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t c = 0; c < target_w; ++c) {
            double fx = (static_cast<double>(c) + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - static_cast<double>(x0);
            const double top = (1.0 - wx) * img.at(y0, x0) + wx * img.at(y0, x1);
            const double bot = (1.0 - wx) * img.at(y1, x0) + wx * img.at(y1, x1);
            out.at(r, c) = ((1.0 - wy) * top + wy * bot) / 255.0;
        }
    }
    return out;
}

// Lossy numeric inverse: tensor -> bytes, round half up then clamp.
inline std::vector<std::uint8_t> image_to_bytes(const PixelTensor& t) {
    std::vector<std::uint8_t> bytes(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        double v = std::floor(t.values[i] * 255.0 + 0.5);
        v = std::clamp(v, 0.0, 255.0);
        bytes[i] = static_cast<std::uint8_t>(v);
    }
    return bytes;
}

// --- PGM (binary P5) ---------------------------------------------------

inline void write_pgm(const std::string& path, const GrayImage& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IngestError("write_pgm: cannot open " + path);
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw IngestError("write_pgm: short write to " + path);
}

namespace detail {
inline int pgm_token(std::istream& in) {
    // Skips whitespace and '#' comment lines, returns the next integer.
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    if (c == EOF) throw IngestError("read_pgm: truncated header");
    int value = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        any = true;
        c = in.get();
    }
    if (!any) throw IngestError("read_pgm: malformed header token");
    return value;
}
}  // namespace detail

inline GrayImage read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("read_pgm: cannot open " + path);
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != 'P' || m1 != '5') throw IngestError("read_pgm: not a binary PGM: " + path);
    GrayImage img;
    img.width = static_cast<std::size_t>(detail::pgm_token(in));
    img.height = static_cast<std::size_t>(detail::pgm_token(in));
    const int maxval = detail::pgm_token(in);
    if (maxval != 255) throw IngestError("read_pgm: unsupported maxval in " + path);
    if (img.width == 0 || img.height == 0) throw IngestError("read_pgm: empty image in " + path);
    img.pixels.resize(img.width * img.height);
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
        throw IngestError("read_pgm: truncated pixel data in " + path);
    return img;
}

}  // namespace malimg
