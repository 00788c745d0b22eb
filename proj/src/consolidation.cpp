#include "vithd/consolidation.hpp"

#include <algorithm>
#include <set>

#include "vithd/error.hpp"

namespace vithd {

std::string_view to_string(DistortionType type) noexcept
{
    switch (type) {
    case DistortionType::Proliferation: return "proliferation";
    case DistortionType::Absence: return "absence";
    case DistortionType::Deformation: return "deformation";
    case DistortionType::Fusion: return "fusion";
    case DistortionType::Uncertain: return "uncertain";
    }
    return "uncertain";
}

std::optional<DistortionType> parse_distortion_type(std::string_view name) noexcept
{
    for (auto t : {DistortionType::Proliferation, DistortionType::Absence, DistortionType::Deformation,
                   DistortionType::Fusion, DistortionType::Uncertain})
        if (to_string(t) == name)
            return t;
    return std::nullopt;
}

std::string_view to_string(Split split) noexcept
{
    switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    }
    return "train";
}

std::optional<Split> parse_split(std::string_view name) noexcept
{
    for (auto s : {Split::Train, Split::Val, Split::Test})
        if (to_string(s) == name)
            return s;
    return std::nullopt;
}

Histogram Histogram::uniform(std::size_t bins, double lo, double hi)
{
    Histogram h;
    for (std::size_t i = 0; i <= bins; ++i)
        h.edges.push_back(i == bins ? hi : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins));
    h.counts.assign(bins, 0);
    return h;
}

bool Histogram::add(double value)
{
    if (edges.size() < 2 || value < edges.front() || value > edges.back())
        return false;
    auto it = std::upper_bound(edges.begin(), edges.end(), value);
    std::size_t bin = static_cast<std::size_t>(it - edges.begin()) - 1;
    bin = std::min(bin, counts.size() - 1);
    ++counts[bin];
    return true;
}

std::size_t Histogram::total() const noexcept
{
    std::size_t n = 0;
    for (auto c : counts)
        n += c;
    return n;
}

BinaryMask consensus_mask(std::span<const BinaryMask> masks)
{
    if (masks.size() != kAnnotatorCount)
        throw ValidationError("consensus needs exactly 3 masks, got " + std::to_string(masks.size()));
    if (!masks[0].same_shape(masks[1]) || !masks[0].same_shape(masks[2]))
        throw DimensionMismatchError("consensus: annotator masks differ in dimensions");
    BinaryMask out(masks[0].width(), masks[0].height());
    auto dst = out.bits();
    auto a = masks[0].bits();
    auto b = masks[1].bits();
    auto c = masks[2].bits();
    for (std::size_t i = 0; i < dst.size(); ++i)
        dst[i] = (a[i] + b[i] + c[i]) >= 2 ? 1 : 0;
    return out;
}

BinaryMask annotator_mask(std::span<const PolygonAnnotation> annotations, int width, int height)
{
    BinaryMask mask(width, height);
    for (const auto& a : annotations)
        mask |= rasterize_polygon(a.polygon, width, height);
    return mask;
}

std::vector<TypedRegion> consensus_types(const std::array<AnnotationSet, kAnnotatorCount>& sets,
                                         const BinaryMask& consensus)
{
    const int w = consensus.width();
    const int h = consensus.height();

    // Label image: component index + 1 per consensus pixel.
    auto components = connected_components(consensus, Connectivity::Eight);
    std::vector<int> label(consensus.size(), 0);
    for (std::size_t c = 0; c < components.size(); ++c)
        for (const auto& p : components[c].pixels)
            label[static_cast<std::size_t>(p.y) * w + p.x] = static_cast<int>(c) + 1;

    std::vector<std::set<DistortionType>> types(components.size());
    std::vector<std::array<bool, kAnnotatorCount>> voiced(components.size(), {false, false, false});
    for (int k = 0; k < kAnnotatorCount; ++k) {
        for (const auto& annotation : sets[k]) {
            const BinaryMask raster = rasterize_polygon(annotation.polygon, w, h);
            std::vector<bool> touched(components.size(), false);
            const auto bits = raster.bits();
            for (std::size_t i = 0; i < bits.size(); ++i)
                if (bits[i] && label[i] > 0)
                    touched[label[i] - 1] = true;
            for (std::size_t c = 0; c < components.size(); ++c) {
                if (!touched[c])
                    continue;
                types[c].insert(annotation.type);
                voiced[c][k] = true;
            }
        }
    }

    std::vector<TypedRegion> out;
    out.reserve(components.size());
    for (std::size_t c = 0; c < components.size(); ++c) {
        const bool all_voiced = std::all_of(voiced[c].begin(), voiced[c].end(), [](bool v) { return v; });
        DistortionType type = DistortionType::Uncertain;
        if (all_voiced && types[c].size() == 1)
            type = *types[c].begin();
        out.push_back({std::move(components[c]), type});
    }
    return out;
}

void consolidate(AnnotatedSample& sample, int width, int height)
{
    std::array<BinaryMask, kAnnotatorCount> masks;
    for (int k = 0; k < kAnnotatorCount; ++k)
        masks[k] = annotator_mask(sample.annotation_sets[k], width, height);
    sample.consensus_mask = consensus_mask(masks);
    sample.typed_regions = consensus_types(sample.annotation_sets, sample.consensus_mask);
}

std::vector<double> default_area_edges()
{
    return Histogram::uniform(20, 0.0, 1.0).edges;
}

DatasetStats dataset_stats(std::span<const AnnotatedSample> samples, std::span<const double> edges)
{
    if (samples.empty())
        throw ValidationError("dataset_stats: no samples");
    if (edges.size() < 2 || !std::is_sorted(edges.begin(), edges.end()))
        throw ValidationError("dataset_stats: histogram edges must be ascending with at least 2 entries");

    DatasetStats stats;
    stats.sample_count = samples.size();
    stats.relative_area_histogram.edges.assign(edges.begin(), edges.end());
    stats.relative_area_histogram.counts.assign(edges.size() - 1, 0);

    std::map<DistortionType, std::size_t> type_counts;
    for (const auto& s : samples) {
        const std::size_t set = s.consensus_mask.count();
        if (set == 0)
            continue;
        ++stats.positive_count;
        stats.relative_area_histogram.add(static_cast<double>(set) / static_cast<double>(s.consensus_mask.size()));
        for (const auto& r : s.typed_regions)
            ++type_counts[r.type];
        stats.region_count += s.typed_regions.size();
    }
    stats.positive_rate = static_cast<double>(stats.positive_count) / static_cast<double>(stats.sample_count);
    if (stats.region_count > 0)
        for (const auto& [type, n] : type_counts)
            stats.type_distribution[type] = static_cast<double>(n) / static_cast<double>(stats.region_count);
    return stats;
}

} // namespace vithd
