#pragma once

#include <cstdint>
#include <vector>

namespace vithd {

/// Interleaved 8-bit RGB, row-major.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels; // size 3 * width * height

    RgbImage() = default;
    RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(3) * w * h, 0) {}

    std::uint8_t at(int x, int y, int c) const noexcept
    {
        return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    bool operator==(const RgbImage&) const = default;
};

} // namespace vithd
