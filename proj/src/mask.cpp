#include "vithd/mask.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <string>

#include "vithd/error.hpp"

namespace vithd {

BinaryMask::BinaryMask(int width, int height)
    : width_(width), height_(height)
{
    if (width <= 0 || height <= 0)
        throw ValidationError("mask dimensions must be positive, got " + std::to_string(width) + "x"
                              + std::to_string(height));
    bits_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0);
}

BinaryMask::BinaryMask(int width, int height, std::vector<std::uint8_t> bits)
    : BinaryMask(width, height)
{
    if (bits.size() != bits_.size())
        throw DimensionMismatchError("mask bit count " + std::to_string(bits.size()) + " != "
                                     + std::to_string(bits_.size()));
    for (auto& b : bits)
        b = b ? 1 : 0;
    bits_ = std::move(bits);
}

std::size_t BinaryMask::count() const noexcept
{
    std::size_t n = 0;
    for (auto b : bits_)
        n += b;
    return n;
}

bool BinaryMask::any() const noexcept
{
    return std::any_of(bits_.begin(), bits_.end(), [](std::uint8_t b) { return b != 0; });
}

BinaryMask& BinaryMask::operator|=(const BinaryMask& other)
{
    if (!same_shape(other))
        throw DimensionMismatchError("mask union: shape mismatch");
    for (std::size_t i = 0; i < bits_.size(); ++i)
        bits_[i] |= other.bits_[i];
    return *this;
}

void Polygon::validate() const
{
    if (vertices.size() < 3)
        throw InvalidPolygonError("polygon needs at least 3 vertices, got " + std::to_string(vertices.size()));
    for (const auto& v : vertices)
        if (!std::isfinite(v.x) || !std::isfinite(v.y))
            throw InvalidPolygonError("polygon has a non-finite coordinate");
}

BinaryMask rasterize_polygon(const Polygon& poly, int width, int height)
{
    poly.validate();
    BinaryMask mask(width, height);

    double min_y = poly.vertices.front().y;
    double max_y = min_y;
    for (const auto& v : poly.vertices) {
        min_y = std::min(min_y, v.y);
        max_y = std::max(max_y, v.y);
    }
    const int row_begin = std::max(0, static_cast<int>(std::floor(min_y - 0.5)));
    const int row_end = std::min(height, static_cast<int>(std::ceil(max_y + 0.5)) + 1);

    const std::size_t n = poly.vertices.size();
    std::vector<double> crossings;
    crossings.reserve(n);
    for (int row = row_begin; row < row_end; ++row) {
        const double y = row + 0.5;
        crossings.clear();
        for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
            const Point2& a = poly.vertices[i];
            const Point2& b = poly.vertices[j];
            if ((a.y > y) != (b.y > y))
                crossings.push_back((b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x);
        }
        if (crossings.empty())
            continue;
        std::sort(crossings.begin(), crossings.end());
        // Center x is inside iff an odd number of crossings lie strictly to its right.
        std::size_t right = crossings.size();
        std::size_t first = 0;
        for (int col = 0; col < width; ++col) {
            const double x = col + 0.5;
            while (first < crossings.size() && !(x < crossings[first]))
                ++first;
            right = crossings.size() - first;
            if (right % 2 == 1)
                mask.set(col, row);
            if (first == crossings.size())
                break;
        }
    }
    return mask;
}

std::vector<ComponentRegion> connected_components(const BinaryMask& mask, Connectivity connectivity)
{
    std::vector<ComponentRegion> regions;
    if (mask.empty_canvas())
        return regions;
    const int w = mask.width();
    const int h = mask.height();
    std::vector<std::uint8_t> visited(mask.size(), 0);
    std::deque<Pixel> queue;

    static constexpr int dx8[] = {1, -1, 0, 0, 1, 1, -1, -1};
    static constexpr int dy8[] = {0, 0, 1, -1, 1, -1, 1, -1};
    const int neighbours = connectivity == Connectivity::Eight ? 8 : 4;

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t idx = static_cast<std::size_t>(y) * w + x;
            if (!mask.at(x, y) || visited[idx])
                continue;
            ComponentRegion region;
            region.bounding_box = {x, y, x + 1, y + 1};
            visited[idx] = 1;
            queue.push_back({x, y});
            while (!queue.empty()) {
                const Pixel p = queue.front();
                queue.pop_front();
                region.pixels.push_back(p);
                Box& bb = region.bounding_box;
                bb.x0 = std::min(bb.x0, p.x);
                bb.y0 = std::min(bb.y0, p.y);
                bb.x1 = std::max(bb.x1, p.x + 1);
                bb.y1 = std::max(bb.y1, p.y + 1);
                for (int k = 0; k < neighbours; ++k) {
                    const int nx = p.x + dx8[k];
                    const int ny = p.y + dy8[k];
                    if (nx < 0 || ny < 0 || nx >= w || ny >= h)
                        continue;
                    const std::size_t nidx = static_cast<std::size_t>(ny) * w + nx;
                    if (mask.at(nx, ny) && !visited[nidx]) {
                        visited[nidx] = 1;
                        queue.push_back({nx, ny});
                    }
                }
            }
            std::sort(region.pixels.begin(), region.pixels.end(),
                      [](const Pixel& a, const Pixel& b) { return a.y != b.y ? a.y < b.y : a.x < b.x; });
            region.pixel_count = region.pixels.size();
            regions.push_back(std::move(region));
        }
    }
    // Discovery order already breaks ties between equal bounding-box corners.
    std::stable_sort(regions.begin(), regions.end(), [](const ComponentRegion& a, const ComponentRegion& b) {
        if (a.bounding_box.y0 != b.bounding_box.y0)
            return a.bounding_box.y0 < b.bounding_box.y0;
        return a.bounding_box.x0 < b.bounding_box.x0;
    });
    return regions;
}

std::vector<Box> mask_to_boxes(const BinaryMask& mask)
{
    std::vector<Box> boxes;
    for (const auto& region : connected_components(mask, Connectivity::Eight))
        boxes.push_back(region.bounding_box);
    return boxes;
}

BinaryMask boxes_to_mask(std::span<const Box> boxes, int width, int height)
{
    BinaryMask mask(width, height);
    for (const Box& b : boxes) {
        if (b.x0 >= b.x1 || b.y0 >= b.y1)
            throw InvalidBoxError("inverted or empty box");
        if (b.x0 < 0 || b.y0 < 0 || b.x1 > width || b.y1 > height)
            throw InvalidBoxError("box outside " + std::to_string(width) + "x" + std::to_string(height) + " canvas");
        for (int y = b.y0; y < b.y1; ++y)
            for (int x = b.x0; x < b.x1; ++x)
                mask.set(x, y);
    }
    return mask;
}

Polygon convex_hull(std::vector<Point2> points)
{
    std::sort(points.begin(), points.end(),
              [](const Point2& a, const Point2& b) { return a.x != b.x ? a.x < b.x : a.y < b.y; });
    points.erase(std::unique(points.begin(), points.end()), points.end());
    if (points.size() < 3)
        return Polygon{points};

    auto cross = [](const Point2& o, const Point2& a, const Point2& b) {
        return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    };
    std::vector<Point2> hull(2 * points.size());
    std::size_t k = 0;
    for (const auto& p : points) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0)
            --k;
        hull[k++] = p;
    }
    for (std::size_t i = points.size() - 1, t = k + 1; i > 0; --i) {
        const Point2& p = points[i - 1];
        while (k >= t && cross(hull[k - 2], hull[k - 1], p) <= 0)
            --k;
        hull[k++] = p;
    }
    hull.resize(k - 1);
    return Polygon{std::move(hull)};
}

} // namespace vithd
