#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace pvd {

/// Interleaved float image, row-major from the top-left pixel.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, int c, float fill = 0.0f)
        : width(w), height(h), channels(c), data(std::size_t(w) * h * c, fill) {}

    float& at(int x, int y, int c) { return data[(std::size_t(y) * width + x) * channels + c]; }
    float at(int x, int y, int c) const { return data[(std::size_t(y) * width + x) * channels + c]; }
};

/// Round-half-up of 255 * clamp(v, 0, 1).
std::uint8_t to_byte(float v);

void write_png(const std::filesystem::path& path, const Image& rgb);
/// Plain-text P3 with the same 8-bit quantization as write_png.
void write_ppm(const std::filesystem::path& path, const Image& rgb);
/// Single-channel depth normalized from [near, far] to 16-bit.
void write_depth_png(const std::filesystem::path& path, const Image& depth, double near, double far);

/// Loads an 8-bit PNG as linear [0,1] RGB; alpha is composited onto white.
Image read_png(const std::filesystem::path& path);
/// Loads a 16-bit grayscale PNG as raw 0..65535 values.
std::vector<std::uint16_t> read_png16_gray(const std::filesystem::path& path, int& width, int& height);

}  // namespace pvd
