#pragma once

// Random inputs and brute-force reference implementations shared by the tests.
// The oracles deliberately avoid the library code paths they check.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "vithd/image.hpp"
#include "vithd/mask.hpp"

namespace vithd::test {

using Gen = std::mt19937_64;

inline int rand_int(Gen& g, int lo, int hi)
{
    return std::uniform_int_distribution<int>(lo, hi)(g);
}

inline double rand_real(Gen& g, double lo, double hi)
{
    return std::uniform_real_distribution<double>(lo, hi)(g);
}

inline BinaryMask random_mask(Gen& g, int w, int h, double density)
{
    BinaryMask m(w, h);
    std::bernoulli_distribution bit(density);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (bit(g))
                m.set(x, y, true);
    return m;
}

inline RgbImage random_image(Gen& g, int w, int h)
{
    RgbImage img(w, h);
    for (auto& p : img.pixels)
        p = static_cast<std::uint8_t>(rand_int(g, 0, 255));
    return img;
}

/// Crossing-number test of a single point, written from the textbook definition.
inline bool point_in_polygon(const std::vector<Point2>& v, double px, double py)
{
    bool inside = false;
    for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
        const double xi = v[i].x, yi = v[i].y, xj = v[j].x, yj = v[j].y;
        if ((yi > py) != (yj > py)) {
            const double xcross = xi + (py - yi) * (xj - xi) / (yj - yi);
            if (px < xcross)
                inside = !inside;
        }
    }
    return inside;
}

inline BinaryMask brute_rasterize(const std::vector<Point2>& v, int w, int h)
{
    BinaryMask m(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (point_in_polygon(v, x + 0.5, y + 0.5))
                m.set(x, y, true);
    return m;
}

/// Component label per pixel (-1 for unset) via recursive-free stack flood fill.
inline std::vector<int> flood_labels(const BinaryMask& m, bool eight, int& count)
{
    const int w = m.width(), h = m.height();
    std::vector<int> label(static_cast<std::size_t>(w) * h, -1);
    count = 0;
    for (int y0 = 0; y0 < h; ++y0)
        for (int x0 = 0; x0 < w; ++x0) {
            if (!m.at(x0, y0) || label[static_cast<std::size_t>(y0) * w + x0] >= 0)
                continue;
            std::vector<std::pair<int, int>> stack{{x0, y0}};
            label[static_cast<std::size_t>(y0) * w + x0] = count;
            while (!stack.empty()) {
                auto [x, y] = stack.back();
                stack.pop_back();
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if ((dx == 0 && dy == 0) || (!eight && dx != 0 && dy != 0))
                            continue;
                        const int nx = x + dx, ny = y + dy;
                        if (nx < 0 || ny < 0 || nx >= w || ny >= h || !m.at(nx, ny))
                            continue;
                        auto& l = label[static_cast<std::size_t>(ny) * w + nx];
                        if (l < 0) {
                            l = count;
                            stack.push_back({nx, ny});
                        }
                    }
            }
            ++count;
        }
    return label;
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag)
    {
        std::random_device rd;
        path = std::filesystem::temp_directory_path() /
               ("vithd-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

} // namespace vithd::test
