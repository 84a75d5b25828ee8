#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mvmcad/tensor.hpp"

namespace mvmcad {

// Bilinear interpolation without corner alignment: output pixel centers are
// mapped to input coordinates via (i + 0.5) * h_in / h_out - 0.5, clamped.
template <typename Real>
Tensor<Real> bilinear_upsample(const Tensor<Real>& x, std::size_t out_h, std::size_t out_w) {
    if (x.rank() != 2) throw ValidationError("bilinear_upsample expects a 2-d map");
    if (out_h < 1 || out_w < 1) throw ValidationError("bilinear_upsample output must be >= 1x1");
    std::size_t in_h = x.shape[0], in_w = x.shape[1];
    Tensor<Real> out({out_h, out_w});
    double sy = static_cast<double>(in_h) / static_cast<double>(out_h);
    double sx = static_cast<double>(in_w) / static_cast<double>(out_w);
    for (std::size_t i = 0; i < out_h; ++i) {
        double fy = (static_cast<double>(i) + 0.5) * sy - 0.5;
        double y0f = std::floor(fy);
        double wy = fy - y0f;
        long y0 = static_cast<long>(y0f);
        long y1 = y0 + 1;
        y0 = std::min(std::max(y0, 0L), static_cast<long>(in_h) - 1);
        y1 = std::min(std::max(y1, 0L), static_cast<long>(in_h) - 1);
        for (std::size_t j = 0; j < out_w; ++j) {
            double fx = (static_cast<double>(j) + 0.5) * sx - 0.5;
            double x0f = std::floor(fx);
            double wx = fx - x0f;
            long x0 = static_cast<long>(x0f);
            long x1 = x0 + 1;
            x0 = std::min(std::max(x0, 0L), static_cast<long>(in_w) - 1);
            x1 = std::min(std::max(x1, 0L), static_cast<long>(in_w) - 1);
            double v00 = x.data[static_cast<std::size_t>(y0) * in_w + static_cast<std::size_t>(x0)];
            double v01 = x.data[static_cast<std::size_t>(y0) * in_w + static_cast<std::size_t>(x1)];
            double v10 = x.data[static_cast<std::size_t>(y1) * in_w + static_cast<std::size_t>(x0)];
            double v11 = x.data[static_cast<std::size_t>(y1) * in_w + static_cast<std::size_t>(x1)];
            double top = v00 * (1.0 - wx) + v01 * wx;
            double bot = v10 * (1.0 - wx) + v11 * wx;
            out.data[i * out_w + j] = static_cast<Real>(top * (1.0 - wy) + bot * wy);
        }
    }
    return out;
}

// Separable Gaussian blur, kernel radius ceil(3*sigma), edge-clamped.
// sigma = 0 is the identity.
template <typename Real>
Tensor<Real> gaussian_blur(const Tensor<Real>& x, double sigma) {
    if (x.rank() != 2) throw ValidationError("gaussian_blur expects a 2-d map");
    if (sigma < 0) throw ValidationError("gaussian_blur requires sigma >= 0");
    if (sigma == 0.0) return x;
    long radius = static_cast<long>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (long k = -radius; k <= radius; ++k) {
        double v = std::exp(-0.5 * (static_cast<double>(k) / sigma) * (static_cast<double>(k) / sigma));
        kernel[static_cast<std::size_t>(k + radius)] = v;
        sum += v;
    }
    for (double& v : kernel) v /= sum;

    long h = static_cast<long>(x.shape[0]), w = static_cast<long>(x.shape[1]);
    auto clamp = [](long v, long hi) { return std::min(std::max(v, 0L), hi - 1); };
    Tensor<Real> tmp(x.shape), out(x.shape);
    for (long i = 0; i < h; ++i) {
        for (long j = 0; j < w; ++j) {
            double acc = 0.0;
            for (long k = -radius; k <= radius; ++k)
                acc += kernel[static_cast<std::size_t>(k + radius)] *
                       x.data[static_cast<std::size_t>(i * w + clamp(j + k, w))];
            tmp.data[static_cast<std::size_t>(i * w + j)] = static_cast<Real>(acc);
        }
    }
    for (long i = 0; i < h; ++i) {
        for (long j = 0; j < w; ++j) {
            double acc = 0.0;
            for (long k = -radius; k <= radius; ++k)
                acc += kernel[static_cast<std::size_t>(k + radius)] *
                       tmp.data[static_cast<std::size_t>(clamp(i + k, h) * w + j)];
            out.data[static_cast<std::size_t>(i * w + j)] = static_cast<Real>(acc);
        }
    }
    return out;
}

// ---- Netpbm I/O (binary P5 / P6) ---------------------------------------
// 8-bit PGM/PPM for dataset images, 16-bit PGM (big-endian per spec'd
// format) for exported heatmaps.

struct Image {
    std::size_t height = 0, width = 0, channels = 1;
    std::vector<std::uint8_t> pixels;  // row-major, interleaved channels

    std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c = 0) {
        return pixels[(y * width + x) * channels + c];
    }
    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c = 0) const {
        return pixels[(y * width + x) * channels + c];
    }
};

namespace netpbm {

inline int next_token(std::istream& is) {
    // Skips whitespace and '#' comments, returns next integer token.
    while (true) {
        int c = is.peek();
        if (c == '#') {
            std::string line;
            std::getline(is, line);
        } else if (std::isspace(c)) {
            is.get();
        } else {
            break;
        }
    }
    int v;
    is >> v;
    if (!is) throw IoError("malformed netpbm header");
    return v;
}

inline Image read_image(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open image: " + path);
    char p, kind;
    is.get(p).get(kind);
    if (p != 'P' || (kind != '5' && kind != '6')) throw IoError("unsupported netpbm type in " + path);
    Image img;
    img.channels = (kind == '6') ? 3 : 1;
    img.width = static_cast<std::size_t>(next_token(is));
    img.height = static_cast<std::size_t>(next_token(is));
    int maxval = next_token(is);
    if (maxval != 255) throw IoError("expected 8-bit netpbm (maxval 255) in " + path);
    is.get();  // single whitespace after maxval
    img.pixels.resize(img.width * img.height * img.channels);
    is.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (!is) throw IoError("truncated pixel data in " + path);
    return img;
}

inline void write_image(const std::string& path, const Image& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << (img.channels == 3 ? "P6" : "P5") << "\n"
       << img.width << " " << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.pixels.data()),
             static_cast<std::streamsize>(img.pixels.size()));
    if (!os) throw IoError("failed writing image: " + path);
}

// 16-bit grayscale PGM, most significant byte first (netpbm convention).
inline void write_pgm16(const std::string& path, const std::vector<std::uint16_t>& pixels,
                        std::size_t height, std::size_t width) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "P5\n" << width << " " << height << "\n65535\n";
    for (std::uint16_t v : pixels) {
        char hi = static_cast<char>(v >> 8), lo = static_cast<char>(v & 0xff);
        os.put(hi).put(lo);
    }
    if (!os) throw IoError("failed writing image: " + path);
}

inline std::vector<std::uint16_t> read_pgm16(const std::string& path, std::size_t& height,
                                             std::size_t& width) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open image: " + path);
    char p, kind;
    is.get(p).get(kind);
    if (p != 'P' || kind != '5') throw IoError("expected P5 in " + path);
    width = static_cast<std::size_t>(next_token(is));
    height = static_cast<std::size_t>(next_token(is));
    int maxval = next_token(is);
    if (maxval != 65535) throw IoError("expected 16-bit PGM in " + path);
    is.get();
    std::vector<std::uint16_t> out(width * height);
    for (auto& v : out) {
        int hi = is.get(), lo = is.get();
        if (hi < 0 || lo < 0) throw IoError("truncated pixel data in " + path);
        v = static_cast<std::uint16_t>((hi << 8) | lo);
    }
    return out;
}

}  // namespace netpbm

// Converts an 8-bit image to a [C,H,W] tensor scaled to [0,1].
template <typename Real>
Tensor<Real> image_to_tensor(const Image& img) {
    Tensor<Real> t({img.channels, img.height, img.width});
    for (std::size_t c = 0; c < img.channels; ++c)
        for (std::size_t y = 0; y < img.height; ++y)
            for (std::size_t x = 0; x < img.width; ++x)
                t.data[(c * img.height + y) * img.width + x] =
                    static_cast<Real>(img.at(y, x, c)) / Real(255);
    return t;
}

}  // namespace mvmcad
