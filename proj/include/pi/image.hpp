#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "pi/tensor.hpp"

namespace pi {

/// Planar channels x height x width image with f32 pixels.
struct Image {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> pixels;

    std::size_t size() const { return channels * height * width; }
    float& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
    float at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }

    static Image blank(std::size_t channels, std::size_t height, std::size_t width, float value = 0.0f) {
        return Image{channels, height, width, std::vector<float>(channels * height * width, value)};
    }

    bool operator==(const Image&) const = default;
};

/// Per-channel normalization constants (CLIP's published values).
inline constexpr std::array<double, 3> image_mean{0.48145466, 0.4578275, 0.40821073};
inline constexpr std::array<double, 3> image_std{0.26862954, 0.26130258, 0.27577711};

/// Packs equally sized images into a (B, C, H, W) tensor, optionally
/// normalizing 3-channel pixels with image_mean / image_std.
Tensor stack_images(const std::vector<const Image*>& images, bool normalize = false);

}  // namespace pi
