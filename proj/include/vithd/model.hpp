#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vithd/image.hpp"
#include "vithd/mask.hpp"

namespace vithd {

inline constexpr int kPatchSize = 14;
inline constexpr int kChannels = 3;
inline constexpr int kPatchDim = kChannels * kPatchSize * kPatchSize;

struct ModelConfig {
    int patch_size = kPatchSize; // fixed
    int embed_dim = 64;
    int depth = 4;
    int num_heads = 4;
    int head_hidden_dim = 128;
    int ffn_dim = 128;
    /// Initial distorted probability the head bias is set to.
    double output_prior = 0.05;
    std::uint64_t init_seed = 1;

    /// Throws ConfigError.
    void validate() const;
    nlohmann::json to_json() const;
    bool operator==(const ModelConfig&) const = default;
};

/// Real-valued grid (patch or pixel resolution), row-major.
template <typename T>
struct Grid {
    int rows = 0;
    int cols = 0;
    std::vector<T> values;

    Grid() = default;
    Grid(int r, int c, T fill = T(0)) : rows(r), cols(c), values(static_cast<std::size_t>(r) * c, fill) {}
    T& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols + c]; }
    T at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
};

template <typename T>
using PatchLogits = Grid<T>;
template <typename T>
using PixelLogits = Grid<T>;

/// Zero-padded (bottom/right) image tiled into 14x14 patches, row-major. Each
/// patch vector is pixel-major with interleaved channels, scaled to [-1, 1].
template <typename T>
struct PatchGrid {
    int rows = 0;
    int cols = 0;
    int image_height = 0;
    int image_width = 0;
    std::vector<T> data; // rows * cols * kPatchDim

    int count() const noexcept { return rows * cols; }
    const T* patch(int index) const { return data.data() + static_cast<std::size_t>(index) * kPatchDim; }
};

template <typename T>
PatchGrid<T> patchify(const RgbImage& image);

struct ParamGroup {
    std::string name;
    std::size_t offset = 0;
    int rows = 0;
    int cols = 0;
    bool decay = false; // matrices decay; biases and norm parameters do not

    std::size_t size() const noexcept { return static_cast<std::size_t>(rows) * cols; }
};

/// Offsets of every tensor inside the flat parameter vector, in checkpoint order.
struct ParamLayout {
    struct Block {
        std::size_t ln1_gain, ln1_bias, wq, bq, wk, bk, wv, bv, wo, bo;
        std::size_t ln2_gain, ln2_bias, ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    };
    std::size_t patch_w = 0, patch_b = 0;
    std::vector<Block> blocks;
    std::size_t final_gain = 0, final_bias = 0;
    std::size_t head_w1 = 0, head_b1 = 0, head_w2 = 0, head_b2 = 0;
    std::vector<ParamGroup> groups;
    std::size_t total = 0;

    static ParamLayout build(const ModelConfig& config);
};

template <typename T>
class Model {
public:
    Model() = default;
    explicit Model(const ModelConfig& config);

    const ModelConfig& config() const noexcept { return config_; }
    const ParamLayout& layout() const noexcept { return layout_; }
    std::span<T> params() noexcept { return params_; }
    std::span<const T> params() const noexcept { return params_; }
    T* at(std::size_t offset) noexcept { return params_.data() + offset; }
    const T* at(std::size_t offset) const noexcept { return params_.data() + offset; }

    template <typename U>
    Model<U> cast() const
    {
        Model<U> out(config_);
        auto dst = out.params();
        for (std::size_t i = 0; i < params_.size(); ++i)
            dst[i] = static_cast<U>(params_[i]);
        return out;
    }

    bool all_finite() const noexcept;

private:
    ModelConfig config_;
    ParamLayout layout_;
    std::vector<T> params_;
};

/// Deterministic from config.init_seed. Weights ~ N(0, 1/fan_in); the last head
/// layer is scaled down and its bias set to logit(output_prior).
template <typename T>
Model<T> init_model(const ModelConfig& config);

/// Intermediate activations of one forward pass, kept for backward.
template <typename T>
struct ForwardCache {
    struct Block {
        std::vector<T> x_in, xhat1, rstd1, a, q, k, v, probs, o;
        std::vector<T> x_mid, xhat2, rstd2, c, u, g;
    };
    int tokens = 0;
    std::vector<T> patches;
    std::vector<Block> blocks;
    std::vector<T> x_out, xhat_f, rstd_f, z, head_pre, head_act;

    /// Softmax probabilities of one head, tokens x tokens.
    std::span<const T> attention(int layer, int head) const;
};

/// 2-D sinusoidal encoding: first half of the channels encodes the row, second half the column.
template <typename T>
std::vector<T> position_encoding(int rows, int cols, int embed_dim);

/// One logit per patch. Throws NumericError on non-finite output.
template <typename T>
PatchLogits<T> forward(const Model<T>& model, const PatchGrid<T>& patches, ForwardCache<T>* cache = nullptr);
template <typename T>
PatchLogits<T> forward(const Model<T>& model, const RgbImage& image);

/// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(patch logits).
template <typename T>
void backward(const Model<T>& model, const ForwardCache<T>& cache, std::span<const T> dlogits, std::span<T> grad);

/// Bilinear evaluation of the patch grid at continuous pixel coordinates
/// (patch centers sit at ((r + 0.5) * 14, (c + 0.5) * 14)); clamped at the border.
template <typename T>
T interpolate_at(const PatchLogits<T>& grid, double y, double x, int patch_size = kPatchSize);

/// Pixel (y, x) samples the grid at its center (y + 0.5, x + 0.5). Output is
/// target_h x target_w, i.e. padding is cropped away.
template <typename T>
PixelLogits<T> upsample_logits(const PatchLogits<T>& grid, int target_h, int target_w, int patch_size = kPatchSize);

/// Adjoint of upsample_logits: scatters pixel gradients back onto the patch grid.
template <typename T>
PatchLogits<T> upsample_backward(const PixelLogits<T>& dpixel, int rows, int cols, int patch_size = kPatchSize);

/// Pixel set iff logistic(logit) > threshold; at 0.5 this is the sign test logit > 0.
template <typename T>
BinaryMask mask_from_logits(const PixelLogits<T>& logits, double threshold = 0.5);

template <typename T>
BinaryMask predict_mask(const Model<T>& model, const RgbImage& image, double threshold = 0.5);

} // namespace vithd
