#include "vithd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <omp.h>

#include "vithd/io.hpp"
#include "vithd/metrics.hpp"
#include "vithd/parallel.hpp"
#include "vithd/rng.hpp"

namespace vithd {

void TrainConfig::validate() const
{
    if (batch_size < 1)
        throw ConfigError("batchSize must be >= 1");
    if (stage1_epochs < 0 || stage2_max_epochs < 0)
        throw ConfigError("epoch counts must be >= 0");
    if (lr_grid.empty())
        throw ConfigError("lrGrid must not be empty");
    for (double lr : lr_grid)
        if (!(lr > 0.0) || !std::isfinite(lr))
            throw ConfigError("lrGrid entries must be finite and positive");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0))
        throw ConfigError("warmupFraction must lie in [0, 1)");
    if (!(weight_decay >= 0.0))
        throw ConfigError("weightDecay must be >= 0");
    if (early_stop_patience < 1)
        throw ConfigError("earlyStopPatience must be >= 1");
    if (!(positive_weight > 0.0))
        throw ConfigError("positiveWeight must be > 0");
}

nlohmann::json TrainConfig::to_json() const
{
    return {{"batchSize", batch_size},
            {"stage1Epochs", stage1_epochs},
            {"stage2MaxEpochs", stage2_max_epochs},
            {"lrGrid", lr_grid},
            {"weightDecay", weight_decay},
            {"warmupFraction", warmup_fraction},
            {"earlyStopPatience", early_stop_patience},
            {"shuffleSeed", shuffle_seed},
            {"positiveWeight", positive_weight}};
}

PatchLabelGrid patch_labels(const BinaryMask& mask, int patch_size)
{
    if (patch_size < 1)
        throw ValidationError("patch size must be >= 1");
    const int rows = (mask.height() + patch_size - 1) / patch_size;
    const int cols = (mask.width() + patch_size - 1) / patch_size;
    std::vector<int> counts(static_cast<std::size_t>(rows) * cols, 0);
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            if (mask.at(x, y))
                ++counts[static_cast<std::size_t>(y / patch_size) * cols + x / patch_size];
    PatchLabelGrid out(rows, cols, 0);
    const int area = patch_size * patch_size;
    for (std::size_t i = 0; i < counts.size(); ++i)
        out.values[i] = 2 * counts[i] > area ? 1 : 0;
    return out;
}

namespace {

inline double softplus(double z)
{
    return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

inline double sigmoid(double z)
{
    if (z >= 0)
        return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// -[w y log p + (1 - y) log(1 - p)] with log p = -softplus(-z), log(1 - p) = -softplus(z).
inline double bce_term(double z, bool y, double w)
{
    return y ? w * softplus(-z) : softplus(z);
}

inline double bce_grad(double z, bool y, double w)
{
    const double p = sigmoid(z);
    return y ? w * (p - 1.0) : p;
}

} // namespace

double bce_loss(std::span<const double> logits, std::span<const std::uint8_t> labels,
                std::span<const std::uint8_t> exclude, double positive_weight)
{
    if (logits.size() != labels.size() || (!exclude.empty() && exclude.size() != logits.size()))
        throw DimensionMismatchError("bce_loss: logits, labels and exclude mask differ in size");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (!exclude.empty() && exclude[i])
            continue;
        sum += bce_term(logits[i], labels[i] != 0, positive_weight);
        ++n;
    }
    if (n == 0)
        throw ValidationError("bce_loss: every position is excluded");
    return sum / static_cast<double>(n);
}

double lr_schedule(long step, long total_steps, double base_lr, double warmup_fraction)
{
    if (total_steps < 1)
        throw ValidationError("lr_schedule: totalSteps must be >= 1");
    if (step < 0 || step > total_steps)
        throw ValidationError("lr_schedule: step " + std::to_string(step) + " outside [0, " +
                              std::to_string(total_steps) + "]");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0))
        throw ValidationError("lr_schedule: warmupFraction must lie in [0, 1)");
    const long warmup = static_cast<long>(std::ceil(warmup_fraction * static_cast<double>(total_steps)));
    if (step < warmup)
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
    if (warmup >= total_steps)
        return step == total_steps ? 0.0 : base_lr;
    return base_lr * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
}

nlohmann::json TrainHistory::to_json() const
{
    nlohmann::json j;
    j["chosenLr"] = chosen_lr;
    j["stageBoundaries"] = stage_boundaries;
    j["bestEpochIndex"] = best_epoch_index;
    auto& s = j["steps"] = nlohmann::json::array();
    for (const auto& r : steps)
        s.push_back({{"step", r.step}, {"stage", r.stage}, {"epoch", r.epoch}, {"lr", r.lr}, {"loss", r.loss}});
    auto& e = j["epochs"] = nlohmann::json::array();
    for (const auto& r : epochs)
        e.push_back({{"stage", r.stage}, {"epoch", r.epoch}, {"meanLoss", r.mean_loss}, {"valPixelF1", r.val_pixel_f1}});
    auto& g = j["grid"] = nlohmann::json::array();
    for (const auto& r : grid)
        g.push_back({{"lr", r.lr}, {"valPixelF1", r.val_pixel_f1}, {"valPixelLoss", r.val_pixel_loss}, {"diverged", r.diverged}, {"message", r.message}});
    return j;
}

AdamW::AdamW(const ParamLayout& layout, const TrainConfig& config)
    : layout_(&layout),
      beta1_(config.beta1),
      beta2_(config.beta2),
      eps_(config.adam_eps),
      weight_decay_(config.weight_decay),
      m_(layout.total, 0.0),
      v_(layout.total, 0.0)
{
}

void AdamW::step(std::span<double> params, std::span<const double> grad, double lr)
{
    if (params.size() != layout_->total || grad.size() != layout_->total)
        throw DimensionMismatchError("AdamW: parameter/gradient size does not match layout");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& group : layout_->groups) {
        const double shrink = group.decay ? 1.0 - lr * weight_decay_ : 1.0;
        const std::size_t end = group.offset + group.size();
        for (std::size_t i = group.offset; i < end; ++i) {
            const double g = grad[i];
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
            const double mhat = m_[i] / c1;
            const double vhat = v_[i] / c2;
            params[i] = params[i] * shrink - lr * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

SampleLoss sample_loss(const Model<double>& model, const LabeledImage& sample, Level level, double positive_weight,
                       std::span<double> grad)
{
    const auto patches = patchify<double>(sample.image);
    if (sample.label.width() != sample.image.width || sample.label.height() != sample.image.height)
        throw DimensionMismatchError("label mask does not match image size for " + sample.sample_id);
    ForwardCache<double> cache;
    const auto logits = forward(model, patches, grad.empty() ? nullptr : &cache);
    SampleLoss out;
    std::vector<double> dlogits;
    if (level == Level::Patch) {
        const auto labels = patch_labels(sample.label);
        dlogits.resize(logits.values.size());
        for (std::size_t i = 0; i < logits.values.size(); ++i) {
            const bool y = labels.values[i] != 0;
            out.loss_sum += bce_term(logits.values[i], y, positive_weight);
            dlogits[i] = bce_grad(logits.values[i], y, positive_weight);
        }
        out.count = logits.values.size();
    } else {
        const int h = sample.image.height, w = sample.image.width;
        const auto pixel = upsample_logits(logits, h, w);
        PixelLogits<double> dpixel(h, w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const bool t = sample.label.at(x, y);
                const double z = pixel.at(y, x);
                out.loss_sum += bce_term(z, t, positive_weight);
                dpixel.at(y, x) = bce_grad(z, t, positive_weight);
            }
        out.count = static_cast<std::size_t>(h) * w;
        if (!grad.empty())
            dlogits = upsample_backward(dpixel, logits.rows, logits.cols).values;
    }
    if (!grad.empty())
        backward<double>(model, cache, dlogits, grad);
    return out;
}

double validation_pixel_f1(const Model<double>& model, std::span<const LabeledImage> data)
{
    if (data.empty())
        return 0.0;
    std::vector<BinaryMask> predictions(data.size(), BinaryMask(1, 1));
    std::vector<BinaryMask> truths;
    truths.reserve(data.size());
    for (const auto& s : data)
        truths.push_back(s.label);
    parallel_for(static_cast<long>(data.size()),
                 [&](long i) { predictions[static_cast<std::size_t>(i)] = predict_mask(model, data[static_cast<std::size_t>(i)].image); });
    return pixel_prf(predictions, truths).f1;
}

double validation_pixel_loss(const Model<double>& model, std::span<const LabeledImage> data, double positive_weight)
{
    if (data.empty())
        return 0.0;
    std::vector<SampleLoss> parts(data.size());
    parallel_for(static_cast<long>(data.size()), [&](long i) {
        parts[static_cast<std::size_t>(i)] =
            sample_loss(model, data[static_cast<std::size_t>(i)], Level::Pixel, positive_weight);
    });
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& p : parts) {
        sum += p.loss_sum;
        count += p.count;
    }
    return sum / static_cast<double>(count);
}

namespace {

std::string format_lr(double lr)
{
    std::ostringstream os;
    os << lr;
    return os.str();
}

} // namespace

void train_stage(Model<double>& model, std::span<const LabeledImage> train, std::span<const LabeledImage> val,
                 const StageOptions& options, const TrainConfig& config, double base_lr, TrainHistory& history)
{
    config.validate();
    if (options.epochs <= 0)
        return;
    if (train.empty())
        throw ValidationError("train_stage: empty training split");

    const long n = static_cast<long>(train.size());
    const long batches_per_epoch = (n + config.batch_size - 1) / config.batch_size;
    const long total_steps = batches_per_epoch * options.epochs;
    const std::size_t nparams = model.layout().total;
    const long slots = std::max(1, omp_get_max_threads());

    AdamW optimizer(model.layout(), config);
    std::vector<double> grad(nparams);
    std::vector<std::vector<double>> slot_grads(static_cast<std::size_t>(slots), std::vector<double>(nparams));
    std::vector<SampleLoss> slot_loss(static_cast<std::size_t>(slots));

    std::vector<long> order(static_cast<std::size_t>(n));
    std::vector<double> best_params;
    double best_f1 = -1.0;
    int best_epoch_index = -1;
    int epochs_without_gain = 0;
    long stage_step = 0;
    history.stage_boundaries.push_back(static_cast<long>(history.steps.size()));

    auto diverge = [&](const std::string& why) {
        throw DivergenceError("training diverged at lr " + format_lr(base_lr) + ": " + why, history);
    };

    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0L);
        Rng rng(derive_seed(config.shuffle_seed, static_cast<std::uint64_t>(options.stage_index),
                            static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);

        double epoch_loss = 0.0;
        for (long b = 0; b < batches_per_epoch; ++b) {
            const long begin = b * config.batch_size;
            const long end = std::min(n, begin + config.batch_size);
            std::fill(grad.begin(), grad.end(), 0.0);
            double loss_sum = 0.0;
            std::size_t count = 0;
            for (long chunk = begin; chunk < end; chunk += slots) {
                const long m = std::min(slots, end - chunk);
                try {
                    parallel_for(m, [&](long j) {
                        auto& g = slot_grads[static_cast<std::size_t>(j)];
                        std::fill(g.begin(), g.end(), 0.0);
                        slot_loss[static_cast<std::size_t>(j)] =
                            sample_loss(model, train[static_cast<std::size_t>(order[static_cast<std::size_t>(chunk + j)])],
                                        options.level, config.positive_weight, g);
                    });
                } catch (const NumericError& e) {
                    diverge(e.what());
                }
                // Summed in sample order so the result does not depend on the thread count.
                for (long j = 0; j < m; ++j) {
                    const auto& g = slot_grads[static_cast<std::size_t>(j)];
                    for (std::size_t i = 0; i < nparams; ++i)
                        grad[i] += g[i];
                    loss_sum += slot_loss[static_cast<std::size_t>(j)].loss_sum;
                    count += slot_loss[static_cast<std::size_t>(j)].count;
                }
            }
            const double loss = loss_sum / static_cast<double>(count);
            const double inv = 1.0 / static_cast<double>(count);
            for (auto& g : grad)
                g *= inv;
            if (!std::isfinite(loss))
                diverge("non-finite loss");
            const double lr = lr_schedule(stage_step, total_steps, base_lr, config.warmup_fraction);
            optimizer.step(model.params(), grad, lr);
            history.steps.push_back({static_cast<long>(history.steps.size()), options.stage_index, epoch, lr, loss});
            if (!model.all_finite())
                diverge("non-finite parameters");
            epoch_loss += loss;
            ++stage_step;
        }

        double f1 = 0.0;
        try {
            f1 = validation_pixel_f1(model, val);
        } catch (const NumericError& e) {
            diverge(e.what());
        }
        history.epochs.push_back({options.stage_index, epoch, epoch_loss / static_cast<double>(batches_per_epoch), f1});

        if (options.early_stopping) {
            if (f1 > best_f1) {
                best_f1 = f1;
                best_params.assign(model.params().begin(), model.params().end());
                best_epoch_index = static_cast<int>(history.epochs.size()) - 1;
                epochs_without_gain = 0;
            } else if (++epochs_without_gain >= config.early_stop_patience) {
                break;
            }
        }
    }

    if (options.early_stopping && !best_params.empty()) {
        std::copy(best_params.begin(), best_params.end(), model.params().begin());
        history.best_epoch_index = best_epoch_index;
    }
}

const GridOutcome* select_grid_outcome(std::span<const GridOutcome> outcomes)
{
    auto better = [](const GridOutcome& a, const GridOutcome& b) {
        if (a.val_pixel_f1 != b.val_pixel_f1)
            return a.val_pixel_f1 > b.val_pixel_f1;
        const double scale = std::max(std::abs(a.val_pixel_loss), std::abs(b.val_pixel_loss));
        if (std::abs(a.val_pixel_loss - b.val_pixel_loss) > 1e-9 * scale)
            return a.val_pixel_loss < b.val_pixel_loss;
        return a.lr < b.lr;
    };
    const GridOutcome* best = nullptr;
    for (const auto& r : outcomes)
        if (!r.diverged && (!best || better(r, *best)))
            best = &r;
    return best;
}

double grid_search_lr(const ModelConfig& model_config, const TrainConfig& config,
                      std::span<const LabeledImage> train, std::span<const LabeledImage> val,
                      std::vector<GridOutcome>* outcomes)
{
    config.validate();
    if (config.lr_grid.size() == 1) {
        if (outcomes)
            outcomes->clear();
        return config.lr_grid.front();
    }
    std::vector<GridOutcome> results;
    for (double lr : config.lr_grid) {
        GridOutcome outcome;
        outcome.lr = lr;
        try {
            Model<double> model = init_model<double>(model_config);
            TrainHistory scratch;
            train_stage(model, train, val, {Level::Patch, 1, false, 1}, config, lr, scratch);
            train_stage(model, train, val, {Level::Pixel, 1, false, 2}, config, lr, scratch);
            outcome.val_pixel_f1 = scratch.epochs.back().val_pixel_f1;
            outcome.val_pixel_loss = validation_pixel_loss(model, val, config.positive_weight);
        } catch (const DivergenceError& e) {
            outcome.diverged = true;
            outcome.message = e.what();
        }
        results.push_back(outcome);
    }
    const GridOutcome* best = select_grid_outcome(results);
    if (outcomes)
        *outcomes = results;
    if (!best) {
        std::string msg = "every learning rate diverged:";
        for (const auto& r : results)
            msg += "\n  lr " + format_lr(r.lr) + ": " + r.message;
        throw Error(msg);
    }
    return best->lr;
}

TrainResult two_stage_train(const ModelConfig& model_config, const TrainConfig& config,
                            std::span<const LabeledImage> train, std::span<const LabeledImage> val, double fixed_lr)
{
    model_config.validate();
    config.validate();
    if (train.empty() || val.empty())
        throw ValidationError("two_stage_train needs non-empty train and val splits");
    TrainResult result{init_model<double>(model_config), {}};
    if (fixed_lr > 0.0)
        result.history.chosen_lr = fixed_lr;
    else
        result.history.chosen_lr = grid_search_lr(model_config, config, train, val, &result.history.grid);
    const double lr = result.history.chosen_lr;
    train_stage(result.model, train, val, {Level::Patch, config.stage1_epochs, false, 1}, config, lr, result.history);
    train_stage(result.model, train, val, {Level::Pixel, config.stage2_max_epochs, true, 2}, config, lr,
                result.history);
    return result;
}

TrainResult pixel_only_train(const ModelConfig& model_config, const TrainConfig& config,
                             std::span<const LabeledImage> train, std::span<const LabeledImage> val, double lr)
{
    model_config.validate();
    config.validate();
    if (train.empty() || val.empty())
        throw ValidationError("pixel_only_train needs non-empty train and val splits");
    TrainResult result{init_model<double>(model_config), {}};
    result.history.chosen_lr = lr;
    train_stage(result.model, train, val,
                {Level::Pixel, config.stage1_epochs + config.stage2_max_epochs, true, 2}, config, lr, result.history);
    return result;
}

std::vector<LabeledImage> labeled_split(const Corpus& corpus, Split split)
{
    std::vector<LabeledImage> out;
    for (const auto& s : corpus.samples)
        if (s.annotated.split == split)
            out.push_back({s.synthetic.sample_id, s.synthetic.image, s.annotated.consensus_mask});
    return out;
}

std::vector<LabeledImage> load_labeled_split(const CorpusManifest& manifest, Split split)
{
    const auto entries = manifest.entries_for(split);
    std::vector<LabeledImage> out(entries.size());
    parallel_for(static_cast<long>(entries.size()), [&](long i) {
        const auto& e = *entries[static_cast<std::size_t>(i)];
        auto& li = out[static_cast<std::size_t>(i)];
        li.sample_id = e.sample_id;
        li.image = read_png(manifest.root / e.image_path);
        li.label = read_mask_png(manifest.root / e.consensus_mask_path);
        if (li.label.width() != li.image.width || li.label.height() != li.image.height)
            throw DimensionMismatchError("consensus mask and image differ in size for " + e.sample_id);
    });
    return out;
}

double positive_pixel_rate(std::span<const LabeledImage> data)
{
    std::uint64_t set = 0, total = 0;
    for (const auto& s : data) {
        set += s.label.count();
        total += static_cast<std::uint64_t>(s.label.width()) * s.label.height();
    }
    if (total == 0)
        return 0.05;
    return std::clamp(static_cast<double>(set) / static_cast<double>(total), 1e-3, 0.5);
}

} // namespace vithd
