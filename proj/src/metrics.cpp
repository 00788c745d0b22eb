#include "vithd/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "vithd/error.hpp"
#include "vithd/parallel.hpp"
#include "vithd/synth.hpp"

namespace vithd {

PrecisionRecallF1 prf_from_counts(const ConfusionCounts& c) noexcept
{
    const double tp = static_cast<double>(c.true_positives);
    const double fp = static_cast<double>(c.false_positives);
    const double fn = static_cast<double>(c.false_negatives);
    PrecisionRecallF1 r;
    r.precision = (c.true_positives + c.false_positives) == 0 ? 1.0 : tp / (tp + fp);
    r.recall = (c.true_positives + c.false_negatives) == 0 ? 1.0 : tp / (tp + fn);
    if (c.true_positives > 0)
        r.f1 = 2.0 * tp / (2.0 * tp + fp + fn);
    else if (r.precision + r.recall == 0.0)
        r.f1 = 0.0;
    else
        r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
    return r;
}

Overlap overlap_from_counts(const ConfusionCounts& c) noexcept
{
    const double tp = static_cast<double>(c.true_positives);
    const double fp = static_cast<double>(c.false_positives);
    const double fn = static_cast<double>(c.false_negatives);
    if (c.true_positives + c.false_positives + c.false_negatives == 0)
        return {1.0, 1.0};
    return {tp / (tp + fp + fn), 2.0 * tp / (2.0 * tp + fp + fn)};
}

ConfusionCounts pixel_confusion(const BinaryMask& prediction, const BinaryMask& truth)
{
    if (!prediction.same_shape(truth))
        throw DimensionMismatchError("prediction is " + std::to_string(prediction.width()) + "x"
                                     + std::to_string(prediction.height()) + ", ground truth is "
                                     + std::to_string(truth.width()) + "x" + std::to_string(truth.height()));
    ConfusionCounts c;
    auto p = prediction.bits();
    auto t = truth.bits();
    for (std::size_t i = 0; i < p.size(); ++i) {
        c.true_positives += p[i] & t[i];
        c.false_positives += p[i] & (t[i] ^ 1);
        c.false_negatives += (p[i] ^ 1) & t[i];
    }
    c.true_negatives = p.size() - c.true_positives - c.false_positives - c.false_negatives;
    return c;
}

namespace {

void check_pairs(std::span<const BinaryMask> predictions, std::span<const BinaryMask> truths)
{
    if (predictions.size() != truths.size())
        throw DimensionMismatchError("prediction count " + std::to_string(predictions.size())
                                     + " != ground-truth count " + std::to_string(truths.size()));
    if (predictions.empty())
        throw ValidationError("no images to score");
}

} // namespace

ConfusionCounts pixel_confusion(std::span<const BinaryMask> predictions, std::span<const BinaryMask> truths)
{
    check_pairs(predictions, truths);
    const long n = static_cast<long>(predictions.size());
    std::vector<ConfusionCounts> per(static_cast<std::size_t>(n));
    parallel_for(n, [&](long i) { per[i] = pixel_confusion(predictions[i], truths[i]); });
    ConfusionCounts total;
    for (const auto& c : per)
        total += c;
    return total;
}

ConfusionCounts image_confusion(std::span<const BinaryMask> predictions, std::span<const BinaryMask> truths)
{
    check_pairs(predictions, truths);
    ConfusionCounts c;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const bool p = predictions[i].any();
        const bool t = truths[i].any();
        c.true_positives += p && t;
        c.false_positives += p && !t;
        c.false_negatives += !p && t;
        c.true_negatives += !p && !t;
    }
    return c;
}

PrecisionRecallF1 pixel_prf(std::span<const BinaryMask> predictions, std::span<const BinaryMask> truths)
{
    return prf_from_counts(pixel_confusion(predictions, truths));
}

Overlap overlap_metrics(std::span<const BinaryMask> predictions, std::span<const BinaryMask> truths)
{
    return overlap_from_counts(pixel_confusion(predictions, truths));
}

PrecisionRecallF1 image_level_prf(std::span<const BinaryMask> predictions, std::span<const BinaryMask> truths)
{
    return prf_from_counts(image_confusion(predictions, truths));
}

MetricsReport evaluate_masks(std::span<const std::string> sample_ids, std::span<const BinaryMask> predictions,
                             std::span<const BinaryMask> truths)
{
    check_pairs(predictions, truths);
    if (sample_ids.size() != predictions.size())
        throw DimensionMismatchError("sample id count does not match prediction count");

    MetricsReport report;
    report.pixel_counts = pixel_confusion(predictions, truths);
    report.image_counts = image_confusion(predictions, truths);
    report.pixel = prf_from_counts(report.pixel_counts);
    report.area = overlap_from_counts(report.pixel_counts);
    report.image = prf_from_counts(report.image_counts);

    std::vector<std::size_t> order(sample_ids.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sample_ids[a] < sample_ids[b]; });
    for (std::size_t i : order) {
        const auto c = pixel_confusion(predictions[i], truths[i]);
        const auto o = overlap_from_counts(c);
        PerImageMetrics m;
        m.sample_id = sample_ids[i];
        m.iou = o.iou;
        m.dice = o.dice;
        m.predicted_positive = predictions[i].any();
        m.gt_positive = truths[i].any();
        m.predicted_relative_area =
            static_cast<double>(predictions[i].count()) / static_cast<double>(predictions[i].size());
        report.per_image.push_back(std::move(m));
    }
    return report;
}

BinaryMask ModelPredictor::predict(const std::string&, const RgbImage& image) const
{
    return predict_mask(model_, image, threshold_);
}

nlohmann::json boxes_to_json(const std::string& sample_id, std::span<const Box> boxes)
{
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& b : boxes)
        arr.push_back({b.x0, b.y0, b.x1, b.y1});
    return {{"schema", "vithd.boxes"}, {"version", 1}, {"sampleId", sample_id}, {"boxes", arr}};
}

std::vector<Box> boxes_from_json(const nlohmann::json& j)
{
    std::vector<Box> boxes;
    for (const auto& b : j.at("boxes"))
        boxes.push_back({b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()});
    return boxes;
}

BinaryMask DirectoryPredictor::predict(const std::string& sample_id, const RgbImage&) const
{
    const auto png = dir_ / (sample_id + ".png");
    const auto boxes = dir_ / (sample_id + ".boxes.json");
    if (std::filesystem::exists(png)) {
        BinaryMask m = read_mask_png(png);
        if (m.width() != width_ || m.height() != height_)
            throw DimensionMismatchError("prediction " + png.string() + " has the wrong dimensions");
        return m;
    }
    if (std::filesystem::exists(boxes)) {
        try {
            const auto j = nlohmann::json::parse(read_text_file(boxes));
            const auto list = boxes_from_json(j);
            return boxes_to_mask(list, width_, height_);
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("malformed box file " + boxes.string() + ": " + e.what());
        }
    }
    throw MissingPredictionError(sample_id, "no prediction for sample " + sample_id + " in " + dir_.string());
}

MetricsReport evaluate(const PredictionSource& source, const CorpusManifest& manifest, Split split)
{
    const auto entries = manifest.entries_for(split);
    if (entries.empty())
        throw ValidationError("split '" + std::string(to_string(split)) + "' is empty");
    const long n = static_cast<long>(entries.size());
    std::vector<std::string> ids(entries.size());
    std::vector<BinaryMask> preds(entries.size());
    std::vector<BinaryMask> truths(entries.size());

    // Missing predictions are reported for the first sample in order, independent of scheduling.
    for (long i = 0; i < n; ++i)
        ids[i] = entries[i]->sample_id;
    if (!source.needs_image())
        for (long i = 0; i < n; ++i)
            preds[i] = source.predict(ids[i], RgbImage{});

    parallel_for(n, [&](long i) {
        truths[i] = read_mask_png(manifest.root / entries[i]->consensus_mask_path);
        if (source.needs_image())
            preds[i] = source.predict(ids[i], read_png(manifest.root / entries[i]->image_path));
    });
    return evaluate_masks(ids, preds, truths);
}

nlohmann::json report_to_json(const MetricsReport& r, const Provenance& prov)
{
    auto counts = [](const ConfusionCounts& c) {
        return nlohmann::json{{"tp", c.true_positives}, {"fp", c.false_positives}, {"fn", c.false_negatives},
                              {"tn", c.true_negatives}};
    };
    return {{"schema", "vithd.metrics"},
            {"version", 1},
            {"provenance", prov.to_json()},
            {"imageCount", r.per_image.size()},
            {"pixel", {{"precision", r.pixel.precision}, {"recall", r.pixel.recall}, {"f1", r.pixel.f1}}},
            {"area", {{"iou", r.area.iou}, {"dice", r.area.dice}}},
            {"image", {{"precision", r.image.precision}, {"recall", r.image.recall}, {"f1", r.image.f1}}},
            {"pixelCounts", counts(r.pixel_counts)},
            {"imageCounts", counts(r.image_counts)}};
}

std::string csv_provenance_line(const Provenance& prov)
{
    return "# configDigest=" + prov.config_digest + " codeVersion=" + prov.code_version
           + " masterSeed=" + std::to_string(prov.master_seed) + "\n";
}

std::string per_image_csv(const MetricsReport& r, const Provenance& prov)
{
    std::ostringstream out;
    out << csv_provenance_line(prov);
    out << "sampleId,iou,dice,predictedPositive,gtPositive,predictedRelativeArea\n";
    char buf[256];
    for (const auto& m : r.per_image) {
        std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%d,%d,%.17g\n", m.sample_id.c_str(), m.iou, m.dice,
                      m.predicted_positive ? 1 : 0, m.gt_positive ? 1 : 0, m.predicted_relative_area);
        out << buf;
    }
    return out.str();
}

} // namespace vithd
