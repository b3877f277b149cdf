#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "orchard/tensor.hpp"

namespace orchard {

// Decoded raster image, planar channel-major floats in [0,1].
struct Image {
    size_t width = 0;
    size_t height = 0;
    size_t channels = 0;  // 1 (grayscale) or 3 (RGB)
    std::vector<float> pixels;

    float at(size_t c, size_t y, size_t x) const {
        return pixels[(c * height + y) * width + x];
    }
    float& at(size_t c, size_t y, size_t x) {
        return pixels[(c * height + y) * width + x];
    }
};

// Netpbm reader: P6/P5 binary and P3/P2 ASCII, 8-bit samples.
// Grayscale files decode to a single channel.
Image read_pnm(const std::filesystem::path& path);

// P6 writer used by tooling and test fixtures.
void write_ppm(const std::filesystem::path& path, const Image& image);

// Half-pixel-center bilinear resampling with edge clamping.
Image bilinear_resize(const Image& image, size_t out_width, size_t out_height);

// Fixed normalization constants for the transfer-learning input convention.
inline constexpr std::array<float, 3> kChannelMean{0.485f, 0.456f, 0.406f};
inline constexpr std::array<float, 3> kChannelStd{0.229f, 0.224f, 0.225f};

// RGB image -> [3,H,W] tensor, optionally (value - mean) / std per channel.
Tensor<float> image_to_tensor(const Image& rgb, bool normalize = true);

// Decode, bilinear-resize to size x size, scale to [0,1], normalize.
// Grayscale inputs are replicated to three channels.
Tensor<float> load_and_resize(const std::filesystem::path& path, size_t size = 224);

}  // namespace orchard
