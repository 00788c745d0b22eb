#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace vithd {

/// Row-major boolean grid. One byte per pixel (0 or 1).
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(int width, int height);
    BinaryMask(int width, int height, std::vector<std::uint8_t> bits);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return bits_.size(); }
    bool empty_canvas() const noexcept { return bits_.empty(); }

    bool at(int x, int y) const noexcept { return bits_[index(x, y)] != 0; }
    void set(int x, int y, bool value = true) noexcept { bits_[index(x, y)] = value ? 1 : 0; }

    std::span<const std::uint8_t> bits() const noexcept { return bits_; }
    std::span<std::uint8_t> bits() noexcept { return bits_; }

    std::size_t count() const noexcept;
    bool any() const noexcept;
    bool same_shape(const BinaryMask& other) const noexcept
    {
        return width_ == other.width_ && height_ == other.height_;
    }

    /// In-place union with a mask of the same shape.
    BinaryMask& operator|=(const BinaryMask& other);

    bool operator==(const BinaryMask& other) const = default;

private:
    std::size_t index(int x, int y) const noexcept
    {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> bits_;
};

struct Point2 {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Point2&) const = default;
};

struct Pixel {
    int x = 0;
    int y = 0;
    bool operator==(const Pixel&) const = default;
};

/// Closed polygon in continuous pixel coordinates (pixel (i, j) spans [i, i+1) x [j, j+1)).
struct Polygon {
    std::vector<Point2> vertices;

    /// Throws InvalidPolygonError on fewer than 3 vertices or a non-finite coordinate.
    void validate() const;
    bool operator==(const Polygon&) const = default;
};

/// Half-open pixel box: [x0, x1) x [y0, y1).
struct Box {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    int width() const noexcept { return x1 - x0; }
    int height() const noexcept { return y1 - y0; }
    long area() const noexcept { return static_cast<long>(width()) * height(); }
    bool operator==(const Box&) const = default;
};

struct ComponentRegion {
    std::size_t pixel_count = 0;
    Box bounding_box;
    std::vector<Pixel> pixels; // row-major order
};

enum class Connectivity { Four = 4, Eight = 8 };

/// Sets pixel (i, j) iff its center (i+0.5, j+0.5) is inside `poly` under the
/// even-odd rule. Geometry outside the canvas is clipped.
BinaryMask rasterize_polygon(const Polygon& poly, int width, int height);

/// Maximal connected regions of set pixels, sorted by (min y, min x) of the
/// bounding box.
std::vector<ComponentRegion> connected_components(const BinaryMask& mask,
                                                  Connectivity connectivity = Connectivity::Eight);

/// Tight box per 8-connected component, same order as connected_components.
std::vector<Box> mask_to_boxes(const BinaryMask& mask);

/// Union of box interiors. Throws InvalidBoxError for inverted or out-of-bounds boxes.
BinaryMask boxes_to_mask(std::span<const Box> boxes, int width, int height);

/// Convex hull (counter-clockwise in a y-down frame is not guaranteed; orientation
/// is irrelevant under the even-odd rule). Collinear points are dropped.
Polygon convex_hull(std::vector<Point2> points);

} // namespace vithd
