#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vithd/mask.hpp"

namespace vithd {

enum class DistortionType { Proliferation, Absence, Deformation, Fusion, Uncertain };

inline constexpr std::array<DistortionType, 4> kConcreteTypes = {
    DistortionType::Proliferation, DistortionType::Absence, DistortionType::Deformation, DistortionType::Fusion};

std::string_view to_string(DistortionType type) noexcept;
std::optional<DistortionType> parse_distortion_type(std::string_view name) noexcept;

struct PolygonAnnotation {
    Polygon polygon;
    DistortionType type = DistortionType::Deformation; // never Uncertain
    int annotator_id = 0;
    bool operator==(const PolygonAnnotation&) const = default;
};

using AnnotationSet = std::vector<PolygonAnnotation>;
inline constexpr int kAnnotatorCount = 3;

struct TypedRegion {
    ComponentRegion region;
    DistortionType type = DistortionType::Uncertain;
};

enum class Split { Train, Val, Test };
std::string_view to_string(Split split) noexcept;
std::optional<Split> parse_split(std::string_view name) noexcept;

struct AnnotatedSample {
    std::string sample_id;
    std::string image_ref;
    std::array<AnnotationSet, kAnnotatorCount> annotation_sets;
    BinaryMask consensus_mask;
    std::vector<TypedRegion> typed_regions;
    Split split = Split::Train;
};

/// Histogram over [edges[i], edges[i+1]); the last bin is closed on the right.
struct Histogram {
    std::vector<double> edges;
    std::vector<std::size_t> counts;

    static Histogram uniform(std::size_t bins, double lo, double hi);
    /// Returns false (and counts nothing) when `value` lies outside [front, back].
    bool add(double value);
    std::size_t total() const noexcept;
};

struct DatasetStats {
    std::size_t sample_count = 0;
    std::size_t positive_count = 0;
    double positive_rate = 0.0;
    std::size_t region_count = 0;
    std::map<DistortionType, double> type_distribution;
    Histogram relative_area_histogram;
};

/// Pixel is set iff at least two of the three masks set it.
BinaryMask consensus_mask(std::span<const BinaryMask> masks);

/// Union of one annotator's rasterized polygons.
BinaryMask annotator_mask(std::span<const PolygonAnnotation> annotations, int width, int height);

/// Types each 8-connected consensus component. A component receives a concrete
/// type only when all three annotators have an overlapping polygon and every
/// overlapping polygon carries that same type; otherwise Uncertain.
std::vector<TypedRegion> consensus_types(const std::array<AnnotationSet, kAnnotatorCount>& sets,
                                         const BinaryMask& consensus);

/// Fills consensus_mask and typed_regions from annotation_sets.
void consolidate(AnnotatedSample& sample, int width, int height);

/// Default binning: 20 equal-width bins over [0, 1].
std::vector<double> default_area_edges();

DatasetStats dataset_stats(std::span<const AnnotatedSample> samples, std::span<const double> edges);

} // namespace vithd
