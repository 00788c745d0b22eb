#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vithd/error.hpp"
#include "vithd/image.hpp"
#include "vithd/mask.hpp"
#include "vithd/model.hpp"
#include "vithd/synth.hpp"

namespace vithd {

struct TrainConfig {
    int batch_size = 32;
    int stage1_epochs = 3;
    int stage2_max_epochs = 8;
    std::vector<double> lr_grid = {1e-3, 5e-3, 1e-4, 5e-4, 1e-5, 5e-5, 1e-6};
    double weight_decay = 0.01;
    double warmup_fraction = 0.1;
    int early_stop_patience = 2;
    std::uint64_t shuffle_seed = 7;
    /// Weight on positive targets in the BCE; 1 disables reweighting.
    double positive_weight = 1.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
    nlohmann::json to_json() const;
};

enum class Level { Patch, Pixel };

struct LabeledImage {
    std::string sample_id;
    RgbImage image;
    BinaryMask label; // consensus mask
};

using PatchLabelGrid = Grid<std::uint8_t>;

/// A patch is distorted iff strictly more than half of its pixels (> 98 of 196)
/// are set. Pixels in the zero padding count as normal.
PatchLabelGrid patch_labels(const BinaryMask& mask, int patch_size = kPatchSize);

/// Mean binary cross-entropy over positions where exclude == 0, in the stable
/// form max(z, 0) - z y + log(1 + exp(-|z|)). Throws ValidationError when every
/// position is excluded. An empty `exclude` excludes nothing.
double bce_loss(std::span<const double> logits, std::span<const std::uint8_t> labels,
                std::span<const std::uint8_t> exclude = {}, double positive_weight = 1.0);

/// Linear warmup from 0 to base_lr over ceil(warmup_fraction * total_steps)
/// steps, then linear decay to 0 at total_steps. Defined for 0 <= step <= total_steps.
double lr_schedule(long step, long total_steps, double base_lr, double warmup_fraction = 0.1);

struct StepRecord {
    long step = 0;
    int stage = 0;
    int epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
};

struct EpochRecord {
    int stage = 0;
    int epoch = 0;
    double mean_loss = 0.0;
    double val_pixel_f1 = 0.0;
};

struct GridOutcome {
    double lr = 0.0;
    double val_pixel_f1 = 0.0;
    double val_pixel_loss = 0.0;
    bool diverged = false;
    std::string message;
};

struct TrainHistory {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
    std::vector<GridOutcome> grid;
    double chosen_lr = 0.0;
    /// First step index of each stage that ran.
    std::vector<long> stage_boundaries;
    /// Index into `epochs` of the returned checkpoint, -1 if the final parameters were returned.
    int best_epoch_index = -1;

    nlohmann::json to_json() const;
};

/// Non-finite loss or parameters during training.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, TrainHistory history) : Error(what), history_(std::move(history)) {}
    const TrainHistory& history() const noexcept { return history_; }

private:
    TrainHistory history_;
};

/// Adam moments with decoupled weight decay; only groups flagged `decay` are decayed.
class AdamW {
public:
    AdamW(const ParamLayout& layout, const TrainConfig& config);
    void step(std::span<double> params, std::span<const double> grad, double lr);
    long steps_taken() const noexcept { return t_; }

private:
    const ParamLayout* layout_;
    double beta1_, beta2_, eps_, weight_decay_;
    std::vector<double> m_, v_;
    long t_ = 0;
};

/// Sum (not mean) of the per-position BCE for one sample, its position count, and
/// optionally the gradient of that sum accumulated into `grad`.
struct SampleLoss {
    double loss_sum = 0.0;
    std::size_t count = 0;
};
SampleLoss sample_loss(const Model<double>& model, const LabeledImage& sample, Level level, double positive_weight,
                       std::span<double> grad = {});

/// Pixel F1 (micro) of threshold-0.5 predictions against labels.
double validation_pixel_f1(const Model<double>& model, std::span<const LabeledImage> data);
/// Mean pixel-level BCE over every pixel of `data`.
double validation_pixel_loss(const Model<double>& model, std::span<const LabeledImage> data, double positive_weight = 1.0);

struct StageOptions {
    Level level = Level::Patch;
    int epochs = 0;
    bool early_stopping = false;
    int stage_index = 1;
};

/// Runs one curriculum stage in place. With early stopping, stops after
/// `early_stop_patience` epochs without a validation-F1 improvement and
/// restores the best epoch's parameters. Throws DivergenceError.
void train_stage(Model<double>& model, std::span<const LabeledImage> train, std::span<const LabeledImage> val,
                 const StageOptions& options, const TrainConfig& config, double base_lr, TrainHistory& history);

struct TrainResult {
    Model<double> model;
    TrainHistory history;
};

/// Best validation pixel-F1 among the non-diverged outcomes. Equal F1 (typically
/// every proxy still predicting nothing) falls back to the lower validation loss;
/// losses equal to 1e-9 relative go to the smaller rate. Null if all diverged.
const GridOutcome* select_grid_outcome(std::span<const GridOutcome> outcomes);

/// One patch epoch plus one pixel epoch per candidate, chosen by
/// select_grid_outcome. Throws Error if every candidate diverges.
double grid_search_lr(const ModelConfig& model_config, const TrainConfig& config,
                      std::span<const LabeledImage> train, std::span<const LabeledImage> val,
                      std::vector<GridOutcome>* outcomes = nullptr);

/// Patch-level stage, then pixel-level fine-tuning, at the grid-searched rate
/// (or `fixed_lr` when positive). Returns the best-validation checkpoint.
TrainResult two_stage_train(const ModelConfig& model_config, const TrainConfig& config,
                            std::span<const LabeledImage> train, std::span<const LabeledImage> val,
                            double fixed_lr = 0.0);

/// Pixel-level training only, for stage1_epochs + stage2_max_epochs epochs with the same early stopping.
TrainResult pixel_only_train(const ModelConfig& model_config, const TrainConfig& config,
                             std::span<const LabeledImage> train, std::span<const LabeledImage> val, double lr);

/// Images paired with their consensus masks, in manifest order.
std::vector<LabeledImage> labeled_split(const Corpus& corpus, Split split);
std::vector<LabeledImage> load_labeled_split(const CorpusManifest& manifest, Split split);

/// Fraction of set pixels over the training labels, clamped to [1e-3, 0.5].
double positive_pixel_rate(std::span<const LabeledImage> data);

} // namespace vithd
