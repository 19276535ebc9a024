#pragma once

// Pixel grids and PNG/feature-map file I/O.

#include "artshape/errors.hpp"

#include <Eigen/Dense>
#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace artshape {

// Scalar grid indexed (row = y, col = x).
using Grid = Eigen::MatrixXd;
using ByteGrid = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

// Per-pixel vectors; column y * width + x holds the pixel's descriptor.
struct FeatureMap {
    int height = 0;
    int width = 0;
    int dim = 0;
    Eigen::MatrixXd data; // dim x (height * width)

    [[nodiscard]] auto at(int y, int x) const { return data.col(static_cast<Eigen::Index>(y) * width + x); }
    [[nodiscard]] auto at(int y, int x) { return data.col(static_cast<Eigen::Index>(y) * width + x); }
};

// RGB in [0, 1]; column y * width + x.
struct RgbImage {
    int height = 0;
    int width = 0;
    Eigen::Matrix3Xd data;

    [[nodiscard]] auto at(int y, int x) const { return data.col(static_cast<Eigen::Index>(y) * width + x); }
};

inline Grid to_grid(const ByteGrid& m)
{
    return m.cast<double>();
}

// Binary foreground grid (1/0) from a scalar grid.
inline ByteGrid threshold(const Grid& g, double t = 0.5)
{
    return (g.array() > t).cast<std::uint8_t>().matrix();
}

namespace png_io {

inline ByteGrid read_gray(const std::filesystem::path& path)
{
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_file(&img, path.string().c_str()) == 0) {
        throw IoError("cannot read PNG " + path.string() + ": " + img.message);
    }
    img.format = PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr) == 0) {
        throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
    }
    ByteGrid out(img.height, img.width);
    for (png_uint_32 y = 0; y < img.height; ++y) {
        for (png_uint_32 x = 0; x < img.width; ++x) {
            out(y, x) = buf[y * img.width + x];
        }
    }
    return out;
}

inline RgbImage read_rgb(const std::filesystem::path& path)
{
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_file(&img, path.string().c_str()) == 0) {
        throw IoError("cannot read PNG " + path.string() + ": " + img.message);
    }
    img.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr) == 0) {
        throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
    }
    RgbImage out;
    out.height = static_cast<int>(img.height);
    out.width = static_cast<int>(img.width);
    out.data.resize(3, static_cast<Eigen::Index>(img.height) * img.width);
    for (Eigen::Index p = 0; p < out.data.cols(); ++p) {
        for (int c = 0; c < 3; ++c) {
            out.data(c, p) = buf[static_cast<std::size_t>(p) * 3 + c] / 255.0;
        }
    }
    return out;
}

inline void write_gray(const std::filesystem::path& path, const ByteGrid& g)
{
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(g.cols());
    img.height = static_cast<png_uint_32>(g.rows());
    img.format = PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(g.size()));
    for (Eigen::Index y = 0; y < g.rows(); ++y) {
        for (Eigen::Index x = 0; x < g.cols(); ++x) {
            buf[y * g.cols() + x] = g(y, x);
        }
    }
    if (png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr) == 0) {
        throw IoError("cannot write PNG " + path.string() + ": " + img.message);
    }
}

// Scalar grid in [0, 1] written as 8-bit gray.
inline void write_gray(const std::filesystem::path& path, const Grid& g)
{
    ByteGrid b = (g.array().max(0.0).min(1.0) * 255.0).round().cast<std::uint8_t>().matrix();
    write_gray(path, b);
}

inline void write_rgb(const std::filesystem::path& path, const RgbImage& rgb)
{
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(rgb.width);
    img.height = static_cast<png_uint_32>(rgb.height);
    img.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(rgb.data.cols()) * 3);
    for (Eigen::Index p = 0; p < rgb.data.cols(); ++p) {
        for (int c = 0; c < 3; ++c) {
            buf[static_cast<std::size_t>(p) * 3 + c] =
                static_cast<std::uint8_t>(std::lround(std::clamp(rgb.data(c, p), 0.0, 1.0) * 255.0));
        }
    }
    if (png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr) == 0) {
        throw IoError("cannot write PNG " + path.string() + ": " + img.message);
    }
}

} // namespace png_io

// Binary feature map: magic "HLFM", u32 h, u32 w, u32 d, then h*w*d
// little-endian f32, row-major (pixel-major, descriptor innermost).
namespace feature_io {

inline constexpr std::array<char, 4> kMagic = {'H', 'L', 'F', 'M'};

namespace detail {

inline std::uint32_t read_u32(std::istream& in)
{
    std::array<unsigned char, 4> b{};
    in.read(reinterpret_cast<char*>(b.data()), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_u32(std::ostream& out, std::uint32_t v)
{
    const std::array<unsigned char, 4> b = {static_cast<unsigned char>(v & 0xff),
                                            static_cast<unsigned char>((v >> 8) & 0xff),
                                            static_cast<unsigned char>((v >> 16) & 0xff),
                                            static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b.data()), 4);
}

} // namespace detail

inline FeatureMap read(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open feature map " + path.string());
    }
    std::array<char, 4> magic{};
    in.read(magic.data(), 4);
    if (!in || magic != kMagic) {
        throw ValidationError("feature map " + path.string() + ": bad magic (expected HLFM)");
    }
    FeatureMap fm;
    fm.height = static_cast<int>(detail::read_u32(in));
    fm.width = static_cast<int>(detail::read_u32(in));
    fm.dim = static_cast<int>(detail::read_u32(in));
    if (!in || fm.height <= 0 || fm.width <= 0 || fm.dim <= 0) {
        throw ValidationError("feature map " + path.string() + ": invalid header");
    }
    const std::size_t n = static_cast<std::size_t>(fm.height) * fm.width * fm.dim;
    std::vector<unsigned char> raw(n * 4);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
        throw ValidationError("feature map " + path.string() + ": truncated payload");
    }
    fm.data.resize(fm.dim, static_cast<Eigen::Index>(fm.height) * fm.width);
    for (std::size_t k = 0; k < n; ++k) {
        const std::uint32_t bits = static_cast<std::uint32_t>(raw[4 * k]) |
                                   (static_cast<std::uint32_t>(raw[4 * k + 1]) << 8) |
                                   (static_cast<std::uint32_t>(raw[4 * k + 2]) << 16) |
                                   (static_cast<std::uint32_t>(raw[4 * k + 3]) << 24);
        float f;
        std::memcpy(&f, &bits, 4);
        fm.data(static_cast<Eigen::Index>(k % fm.dim), static_cast<Eigen::Index>(k / fm.dim)) = f;
    }
    return fm;
}

inline void write(const std::filesystem::path& path, const FeatureMap& fm)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write feature map " + path.string());
    }
    out.write(kMagic.data(), 4);
    detail::write_u32(out, static_cast<std::uint32_t>(fm.height));
    detail::write_u32(out, static_cast<std::uint32_t>(fm.width));
    detail::write_u32(out, static_cast<std::uint32_t>(fm.dim));
    for (Eigen::Index p = 0; p < fm.data.cols(); ++p) {
        for (Eigen::Index c = 0; c < fm.dim; ++c) {
            const float f = static_cast<float>(fm.data(c, p));
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            detail::write_u32(out, bits);
        }
    }
    if (!out) {
        throw IoError("short write on " + path.string());
    }
}

} // namespace feature_io

} // namespace artshape
