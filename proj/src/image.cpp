#include "pvd/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "pvd/common.hpp"

namespace pvd {

std::uint8_t to_byte(float v) {
    const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
    return static_cast<std::uint8_t>(std::floor(255.0 * c + 0.5));
}

namespace {

std::vector<std::uint8_t> quantize_rgb(const Image& img) {
    require(img.channels == 3, ErrorKind::Shape, "expected a 3-channel image");
    std::vector<std::uint8_t> bytes(img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i) bytes[i] = to_byte(img.data[i]);
    return bytes;
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& rgb) {
    std::vector<std::uint8_t> bytes = quantize_rgb(rgb);
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(rgb.width);
    img.height = static_cast<png_uint_32>(rgb.height);
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, bytes.data(), 0, nullptr)) {
        fail(ErrorKind::Io, "cannot write " + path.string() + ": " + img.message);
    }
}

void write_ppm(const std::filesystem::path& path, const Image& rgb) {
    std::vector<std::uint8_t> bytes = quantize_rgb(rgb);
    std::ofstream out(path);
    require(bool(out), ErrorKind::Io, "cannot write " + path.string());
    out << "P3\n" << rgb.width << ' ' << rgb.height << "\n255\n";
    for (int y = 0; y < rgb.height; ++y) {
        for (int x = 0; x < rgb.width; ++x) {
            const std::size_t i = (std::size_t(y) * rgb.width + x) * 3;
            out << int(bytes[i]) << ' ' << int(bytes[i + 1]) << ' ' << int(bytes[i + 2]) << (x + 1 < rgb.width ? ' ' : '\n');
        }
    }
    require(bool(out), ErrorKind::Io, "write failed for " + path.string());
}

void write_depth_png(const std::filesystem::path& path, const Image& depth, double near, double far) {
    require(depth.channels == 1, ErrorKind::Shape, "depth image must have one channel");
    require(far > near, ErrorKind::Config, "depth range needs far > near");
    std::vector<std::uint16_t> px(depth.data.size());
    for (std::size_t i = 0; i < px.size(); ++i) {
        const double u = std::clamp((depth.data[i] - near) / (far - near), 0.0, 1.0);
        px[i] = static_cast<std::uint16_t>(std::floor(65535.0 * u + 0.5));
    }
    // PNG stores 16-bit samples big-endian
    std::vector<png_byte> row(std::size_t(depth.width) * 2);
    FILE* fp = std::fopen(path.c_str(), "wb");
    require(fp != nullptr, ErrorKind::Io, "cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        fail(ErrorKind::Io, "libpng failed writing " + path.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, depth.width, depth.height, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < depth.height; ++y) {
        for (int x = 0; x < depth.width; ++x) {
            const std::uint16_t v = px[std::size_t(y) * depth.width + x];
            row[2 * x] = static_cast<png_byte>(v >> 8);
            row[2 * x + 1] = static_cast<png_byte>(v & 0xFF);
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

Image read_png(const std::filesystem::path& path) {
    require(std::filesystem::exists(path), ErrorKind::Io, "missing image " + path.string());
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        fail(ErrorKind::Parse, "cannot read png " + path.string() + ": " + img.message);
    }
    img.format = PNG_FORMAT_RGBA;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        fail(ErrorKind::Parse, "cannot decode png " + path.string() + ": " + img.message);
    }
    Image out(static_cast<int>(img.width), static_cast<int>(img.height), 3);
    const std::size_t n = std::size_t(out.width) * out.height;
    for (std::size_t i = 0; i < n; ++i) {
        const float a = buf[4 * i + 3] / 255.0f;
        for (int c = 0; c < 3; ++c) {
            const float v = buf[4 * i + c] / 255.0f;
            out.data[3 * i + c] = v * a + (1.0f - a);
        }
    }
    return out;
}

std::vector<std::uint16_t> read_png16_gray(const std::filesystem::path& path, int& width, int& height) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    require(fp != nullptr, ErrorKind::Io, "cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        fail(ErrorKind::Parse, "libpng failed reading " + path.string());
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    width = static_cast<int>(png_get_image_width(png, info));
    height = static_cast<int>(png_get_image_height(png, info));
    const int depth = png_get_bit_depth(png, info);
    const int type = png_get_color_type(png, info);
    if (depth != 16 || type != PNG_COLOR_TYPE_GRAY) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        fail(ErrorKind::Parse, path.string() + " is not a 16-bit grayscale png");
    }
    std::vector<std::uint16_t> out(std::size_t(width) * height);
    std::vector<png_byte> row(std::size_t(width) * 2);
    for (int y = 0; y < height; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < width; ++x) out[std::size_t(y) * width + x] = std::uint16_t(row[2 * x] << 8 | row[2 * x + 1]);
    }
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return out;
}

}  // namespace pvd
