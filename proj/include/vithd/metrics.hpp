#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vithd/consolidation.hpp"
#include "vithd/image.hpp"
#include "vithd/io.hpp"
#include "vithd/mask.hpp"
#include "vithd/model.hpp"

namespace vithd {

struct CorpusManifest;

struct ConfusionCounts {
    std::uint64_t true_positives = 0;
    std::uint64_t false_positives = 0;
    std::uint64_t false_negatives = 0;
    std::uint64_t true_negatives = 0;

    ConfusionCounts& operator+=(const ConfusionCounts& o) noexcept
    {
        true_positives += o.true_positives;
        false_positives += o.false_positives;
        false_negatives += o.false_negatives;
        true_negatives += o.true_negatives;
        return *this;
    }
    std::uint64_t total() const noexcept
    {
        return true_positives + false_positives + false_negatives + true_negatives;
    }
    bool operator==(const ConfusionCounts&) const = default;
};

struct PrecisionRecallF1 {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct Overlap {
    double iou = 0.0;
    double dice = 0.0;
};

/// P = 1 when nothing is predicted, R = 1 when nothing is true, F1 = 0 when P + R = 0.
/// With TP > 0 the F1 is evaluated as 2TP / (2TP + FP + FN).
PrecisionRecallF1 prf_from_counts(const ConfusionCounts& c) noexcept;
/// Both 1 when prediction and truth are empty.
Overlap overlap_from_counts(const ConfusionCounts& c) noexcept;

/// Throws DimensionMismatchError.
ConfusionCounts pixel_confusion(const BinaryMask& prediction, const BinaryMask& truth);
ConfusionCounts pixel_confusion(std::span<const BinaryMask> predictions, std::span<const BinaryMask> truths);
ConfusionCounts image_confusion(std::span<const BinaryMask> predictions, std::span<const BinaryMask> truths);

/// Micro-aggregated over every pixel of every image.
PrecisionRecallF1 pixel_prf(std::span<const BinaryMask> predictions, std::span<const BinaryMask> truths);
/// Global IoU and Dice from pooled counts.
Overlap overlap_metrics(std::span<const BinaryMask> predictions, std::span<const BinaryMask> truths);
/// An image is positive iff its mask has at least one set pixel.
PrecisionRecallF1 image_level_prf(std::span<const BinaryMask> predictions, std::span<const BinaryMask> truths);

struct PerImageMetrics {
    std::string sample_id;
    double iou = 0.0;
    double dice = 0.0;
    bool predicted_positive = false;
    bool gt_positive = false;
    double predicted_relative_area = 0.0;
};

struct MetricsReport {
    PrecisionRecallF1 pixel;
    Overlap area;
    PrecisionRecallF1 image;
    ConfusionCounts pixel_counts;
    ConfusionCounts image_counts;
    std::vector<PerImageMetrics> per_image; // ordered by sample id
};

/// Builds a report from aligned (id, prediction, truth) triples.
MetricsReport evaluate_masks(std::span<const std::string> sample_ids, std::span<const BinaryMask> predictions,
                             std::span<const BinaryMask> truths);

/// Where predictions come from: a trained model or files written by an external predictor.
class PredictionSource {
public:
    virtual ~PredictionSource() = default;
    virtual BinaryMask predict(const std::string& sample_id, const RgbImage& image) const = 0;
    virtual bool needs_image() const { return true; }
    virtual std::string describe() const = 0;
};

class ModelPredictor final : public PredictionSource {
public:
    explicit ModelPredictor(Model<double> model, double threshold = 0.5)
        : model_(std::move(model)), threshold_(threshold)
    {
    }
    BinaryMask predict(const std::string& sample_id, const RgbImage& image) const override;
    std::string describe() const override { return "model"; }

private:
    Model<double> model_;
    double threshold_;
};

/// Reads `<dir>/<sampleId>.png` (mask) or, failing that, `<dir>/<sampleId>.boxes.json`
/// (box list rasterized with boxes_to_mask). Throws MissingPredictionError.
class DirectoryPredictor final : public PredictionSource {
public:
    DirectoryPredictor(std::filesystem::path dir, int width, int height)
        : dir_(std::move(dir)), width_(width), height_(height)
    {
    }
    BinaryMask predict(const std::string& sample_id, const RgbImage& image) const override;
    bool needs_image() const override { return false; }
    std::string describe() const override { return "directory:" + dir_.string(); }

private:
    std::filesystem::path dir_;
    int width_;
    int height_;
};

/// Box-list file: {"schema":"vithd.boxes","version":1,"sampleId":..,"boxes":[[x0,y0,x1,y1],..]}
nlohmann::json boxes_to_json(const std::string& sample_id, std::span<const Box> boxes);
std::vector<Box> boxes_from_json(const nlohmann::json& j);

/// Scores every sample of `split`, against the consensus masks.
MetricsReport evaluate(const PredictionSource& source, const CorpusManifest& manifest, Split split);

nlohmann::json report_to_json(const MetricsReport& report, const Provenance& prov);
/// CSV with a leading `# ` provenance comment line, then a header row.
std::string csv_provenance_line(const Provenance& prov);
std::string per_image_csv(const MetricsReport& report, const Provenance& prov);

} // namespace vithd
