#include "vithd/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vithd/error.hpp"
#include "vithd/kernels.hpp"
#include "vithd/rng.hpp"

namespace vithd {

namespace k = kernels;

void ModelConfig::validate() const
{
    if (patch_size != kPatchSize)
        throw ConfigError("patchSize is fixed at 14, got " + std::to_string(patch_size));
    if (embed_dim < 4 || embed_dim % 4 != 0)
        throw ConfigError("embedDim must be a positive multiple of 4 (2-D sinusoidal encoding), got "
                          + std::to_string(embed_dim));
    if (num_heads < 1 || embed_dim % num_heads != 0)
        throw ConfigError("embedDim " + std::to_string(embed_dim) + " is not divisible by numHeads "
                          + std::to_string(num_heads));
    if (depth < 0)
        throw ConfigError("depth must be >= 0");
    if (head_hidden_dim < 1 || ffn_dim < 1)
        throw ConfigError("headHiddenDim and ffnDim must be >= 1");
    if (!(output_prior > 0.0 && output_prior < 1.0))
        throw ConfigError("outputPrior must lie in (0, 1)");
}

nlohmann::json ModelConfig::to_json() const
{
    return {{"patchSize", patch_size},         {"embedDim", embed_dim}, {"depth", depth},
            {"numHeads", num_heads},           {"headHiddenDim", head_hidden_dim},
            {"ffnDim", ffn_dim},               {"outputPrior", output_prior},
            {"initSeed", init_seed}};
}

ParamLayout ParamLayout::build(const ModelConfig& cfg)
{
    cfg.validate();
    ParamLayout l;
    const int d = cfg.embed_dim;
    auto add = [&](const std::string& name, int rows, int cols, bool decay) {
        l.groups.push_back({name, l.total, rows, cols, decay});
        l.total += static_cast<std::size_t>(rows) * cols;
        return l.groups.back().offset;
    };
    l.patch_w = add("patch.weight", kPatchDim, d, true);
    l.patch_b = add("patch.bias", 1, d, false);
    for (int b = 0; b < cfg.depth; ++b) {
        const std::string p = "blocks." + std::to_string(b) + ".";
        Block blk{};
        blk.ln1_gain = add(p + "ln1.gain", 1, d, false);
        blk.ln1_bias = add(p + "ln1.bias", 1, d, false);
        blk.wq = add(p + "attn.wq", d, d, true);
        blk.bq = add(p + "attn.bq", 1, d, false);
        blk.wk = add(p + "attn.wk", d, d, true);
        blk.bk = add(p + "attn.bk", 1, d, false);
        blk.wv = add(p + "attn.wv", d, d, true);
        blk.bv = add(p + "attn.bv", 1, d, false);
        blk.wo = add(p + "attn.wo", d, d, true);
        blk.bo = add(p + "attn.bo", 1, d, false);
        blk.ln2_gain = add(p + "ln2.gain", 1, d, false);
        blk.ln2_bias = add(p + "ln2.bias", 1, d, false);
        blk.ffn_w1 = add(p + "ffn.w1", d, cfg.ffn_dim, true);
        blk.ffn_b1 = add(p + "ffn.b1", 1, cfg.ffn_dim, false);
        blk.ffn_w2 = add(p + "ffn.w2", cfg.ffn_dim, d, true);
        blk.ffn_b2 = add(p + "ffn.b2", 1, d, false);
        l.blocks.push_back(blk);
    }
    l.final_gain = add("final_ln.gain", 1, d, false);
    l.final_bias = add("final_ln.bias", 1, d, false);
    l.head_w1 = add("head.w1", d, cfg.head_hidden_dim, true);
    l.head_b1 = add("head.b1", 1, cfg.head_hidden_dim, false);
    l.head_w2 = add("head.w2", cfg.head_hidden_dim, 1, true);
    l.head_b2 = add("head.b2", 1, 1, false);
    return l;
}

template <typename T>
Model<T>::Model(const ModelConfig& config)
    : config_(config), layout_(ParamLayout::build(config)), params_(layout_.total, T(0))
{
}

template <typename T>
bool Model<T>::all_finite() const noexcept
{
    return std::all_of(params_.begin(), params_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
Model<T> init_model(const ModelConfig& config)
{
    Model<double> m(config);
    Rng rng(config.init_seed);
    const auto& l = m.layout();
    for (const auto& g : l.groups) {
        double* p = m.at(g.offset);
        const bool gain = g.name.ends_with(".gain");
        if (gain) {
            std::fill(p, p + g.size(), 1.0);
        } else if (g.decay) {
            double std = 1.0 / std::sqrt(static_cast<double>(g.rows));
            if (g.name == "head.w2")
                std *= 0.1;
            for (std::size_t i = 0; i < g.size(); ++i)
                p[i] = normal(rng, 0.0, std);
        }
    }
    *m.at(l.head_b2) = std::log(config.output_prior / (1.0 - config.output_prior));
    if constexpr (std::is_same_v<T, double>)
        return m;
    else
        return m.template cast<T>();
}

template <typename T>
PatchGrid<T> patchify(const RgbImage& image)
{
    if (image.width <= 0 || image.height <= 0)
        throw ValidationError("patchify: empty image");
    PatchGrid<T> g;
    g.image_height = image.height;
    g.image_width = image.width;
    g.rows = (image.height + kPatchSize - 1) / kPatchSize;
    g.cols = (image.width + kPatchSize - 1) / kPatchSize;
    g.data.assign(static_cast<std::size_t>(g.count()) * kPatchDim, T(0));
    for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) {
            T* dst = g.data.data() + static_cast<std::size_t>(r * g.cols + c) * kPatchDim;
            for (int dy = 0; dy < kPatchSize; ++dy) {
                const int y = r * kPatchSize + dy;
                if (y >= image.height)
                    break;
                for (int dx = 0; dx < kPatchSize; ++dx) {
                    const int x = c * kPatchSize + dx;
                    if (x >= image.width)
                        break;
                    for (int ch = 0; ch < kChannels; ++ch)
                        dst[(dy * kPatchSize + dx) * kChannels + ch] =
                            static_cast<T>(image.at(x, y, ch)) / T(127.5) - T(1);
                }
            }
        }
    return g;
}

template <typename T>
std::span<const T> ForwardCache<T>::attention(int layer, int head) const
{
    const std::size_t nn = static_cast<std::size_t>(tokens) * tokens;
    return std::span<const T>(blocks.at(layer).probs).subspan(nn * head, nn);
}

template <typename T>
std::vector<T> position_encoding(int rows, int cols, int embed_dim)
{
    const int half = embed_dim / 2;
    const int pairs = half / 2;
    std::vector<T> pe(static_cast<std::size_t>(rows) * cols * embed_dim);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            T* e = pe.data() + static_cast<std::size_t>(r * cols + c) * embed_dim;
            for (int i = 0; i < pairs; ++i) {
                const double freq = std::pow(10000.0, -2.0 * i / half);
                e[2 * i] = static_cast<T>(std::sin(r * freq));
                e[2 * i + 1] = static_cast<T>(std::cos(r * freq));
                e[half + 2 * i] = static_cast<T>(std::sin(c * freq));
                e[half + 2 * i + 1] = static_cast<T>(std::cos(c * freq));
            }
        }
    return pe;
}

namespace {

template <typename T>
constexpr T kLnEps = T(1e-5);

template <typename T>
void layer_norm(const T* x, const T* gain, const T* bias, T* xhat, T* rstd, T* y, int n, int d)
{
    for (int i = 0; i < n; ++i) {
        const T* xi = x + static_cast<std::size_t>(i) * d;
        T mean = 0;
        for (int j = 0; j < d; ++j)
            mean += xi[j];
        mean /= T(d);
        T var = 0;
        for (int j = 0; j < d; ++j)
            var += (xi[j] - mean) * (xi[j] - mean);
        var /= T(d);
        const T rs = T(1) / std::sqrt(var + kLnEps<T>);
        rstd[i] = rs;
        for (int j = 0; j < d; ++j) {
            const T h = (xi[j] - mean) * rs;
            xhat[i * d + j] = h;
            y[i * d + j] = h * gain[j] + bias[j];
        }
    }
}

/// dx = rstd * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)), dxhat = dy * gain. Adds into dx.
template <typename T>
void layer_norm_backward(const T* dy, const T* xhat, const T* rstd, const T* gain, T* dx, T* dgain, T* dbias, int n,
                         int d)
{
    for (int i = 0; i < n; ++i) {
        const T* dyi = dy + static_cast<std::size_t>(i) * d;
        const T* hi = xhat + static_cast<std::size_t>(i) * d;
        T mean_dh = 0, mean_dh_h = 0;
        for (int j = 0; j < d; ++j) {
            const T dh = dyi[j] * gain[j];
            mean_dh += dh;
            mean_dh_h += dh * hi[j];
            dgain[j] += dyi[j] * hi[j];
            dbias[j] += dyi[j];
        }
        mean_dh /= T(d);
        mean_dh_h /= T(d);
        for (int j = 0; j < d; ++j)
            dx[i * d + j] += rstd[i] * (dyi[j] * gain[j] - mean_dh - hi[j] * mean_dh_h);
    }
}

template <typename T>
T gelu(T x)
{
    return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_grad(T x)
{
    const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
    const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    return cdf + x * pdf;
}

template <typename T>
void add_bias(T* y, const T* bias, int n, int d)
{
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            y[i * d + j] += bias[j];
}

template <typename T>
void column_sum_acc(const T* x, T* out, int n, int d)
{
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            out[j] += x[i * d + j];
}

template <typename T>
void copy_head(const T* full, T* head, int n, int d, int dh, int h)
{
    for (int i = 0; i < n; ++i)
        std::copy_n(full + static_cast<std::size_t>(i) * d + h * dh, dh, head + static_cast<std::size_t>(i) * dh);
}

template <typename T>
void scatter_head(const T* head, T* full, int n, int d, int dh, int h)
{
    for (int i = 0; i < n; ++i)
        std::copy_n(head + static_cast<std::size_t>(i) * dh, dh, full + static_cast<std::size_t>(i) * d + h * dh);
}

} // namespace

template <typename T>
PatchLogits<T> forward(const Model<T>& model, const PatchGrid<T>& patches, ForwardCache<T>* cache)
{
    const ModelConfig& cfg = model.config();
    const ParamLayout& l = model.layout();
    const int n = patches.count();
    const int d = cfg.embed_dim;
    const int f = cfg.ffn_dim;
    const int hd = cfg.head_hidden_dim;
    const int heads = cfg.num_heads;
    const int dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    const std::size_t nd = static_cast<std::size_t>(n) * d;

    ForwardCache<T> local;
    ForwardCache<T>& fc = cache ? *cache : local;
    fc.tokens = n;
    fc.patches = patches.data;
    fc.blocks.resize(static_cast<std::size_t>(cfg.depth));

    std::vector<T> x(nd);
    k::gemm(patches.data.data(), model.at(l.patch_w), x.data(), n, kPatchDim, d, false);
    add_bias(x.data(), model.at(l.patch_b), n, d);
    const auto pe = position_encoding<T>(patches.rows, patches.cols, d);
    for (std::size_t i = 0; i < nd; ++i)
        x[i] += pe[i];

    std::vector<T> qh(static_cast<std::size_t>(n) * dh), kh(qh.size()), vh(qh.size()), oh(qh.size());
    std::vector<T> tmp(nd), ffn_out(nd);
    for (int b = 0; b < cfg.depth; ++b) {
        const auto& lb = l.blocks[b];
        auto& c = fc.blocks[b];
        c.x_in = x;
        c.xhat1.resize(nd);
        c.rstd1.resize(n);
        c.a.resize(nd);
        layer_norm(x.data(), model.at(lb.ln1_gain), model.at(lb.ln1_bias), c.xhat1.data(), c.rstd1.data(),
                   c.a.data(), n, d);
        c.q.resize(nd);
        c.k.resize(nd);
        c.v.resize(nd);
        k::gemm(c.a.data(), model.at(lb.wq), c.q.data(), n, d, d, false);
        k::gemm(c.a.data(), model.at(lb.wk), c.k.data(), n, d, d, false);
        k::gemm(c.a.data(), model.at(lb.wv), c.v.data(), n, d, d, false);
        add_bias(c.q.data(), model.at(lb.bq), n, d);
        add_bias(c.k.data(), model.at(lb.bk), n, d);
        add_bias(c.v.data(), model.at(lb.bv), n, d);

        c.probs.resize(static_cast<std::size_t>(heads) * n * n);
        c.o.resize(nd);
        for (int h = 0; h < heads; ++h) {
            copy_head(c.q.data(), qh.data(), n, d, dh, h);
            copy_head(c.k.data(), kh.data(), n, d, dh, h);
            copy_head(c.v.data(), vh.data(), n, d, dh, h);
            T* p = c.probs.data() + static_cast<std::size_t>(h) * n * n;
            k::gemm_nt(qh.data(), kh.data(), p, n, dh, n, false);
            for (int i = 0; i < n; ++i) {
                T* row = p + static_cast<std::size_t>(i) * n;
                T mx = row[0] * scale;
                for (int j = 0; j < n; ++j)
                    mx = std::max(mx, row[j] * scale);
                T sum = 0;
                for (int j = 0; j < n; ++j) {
                    row[j] = std::exp(row[j] * scale - mx);
                    sum += row[j];
                }
                for (int j = 0; j < n; ++j)
                    row[j] /= sum;
            }
            k::gemm(p, vh.data(), oh.data(), n, n, dh, false);
            scatter_head(oh.data(), c.o.data(), n, d, dh, h);
        }
        k::gemm(c.o.data(), model.at(lb.wo), tmp.data(), n, d, d, false);
        add_bias(tmp.data(), model.at(lb.bo), n, d);
        for (std::size_t i = 0; i < nd; ++i)
            x[i] += tmp[i];
        c.x_mid = x;

        c.xhat2.resize(nd);
        c.rstd2.resize(n);
        c.c.resize(nd);
        layer_norm(x.data(), model.at(lb.ln2_gain), model.at(lb.ln2_bias), c.xhat2.data(), c.rstd2.data(),
                   c.c.data(), n, d);
        c.u.resize(static_cast<std::size_t>(n) * f);
        c.g.resize(c.u.size());
        k::gemm(c.c.data(), model.at(lb.ffn_w1), c.u.data(), n, d, f, false);
        add_bias(c.u.data(), model.at(lb.ffn_b1), n, f);
        for (std::size_t i = 0; i < c.u.size(); ++i)
            c.g[i] = gelu(c.u[i]);
        k::gemm(c.g.data(), model.at(lb.ffn_w2), ffn_out.data(), n, f, d, false);
        add_bias(ffn_out.data(), model.at(lb.ffn_b2), n, d);
        for (std::size_t i = 0; i < nd; ++i)
            x[i] += ffn_out[i];
    }

    fc.x_out = x;
    fc.xhat_f.resize(nd);
    fc.rstd_f.resize(n);
    fc.z.resize(nd);
    layer_norm(x.data(), model.at(l.final_gain), model.at(l.final_bias), fc.xhat_f.data(), fc.rstd_f.data(),
               fc.z.data(), n, d);
    fc.head_pre.resize(static_cast<std::size_t>(n) * hd);
    fc.head_act.resize(fc.head_pre.size());
    k::gemm(fc.z.data(), model.at(l.head_w1), fc.head_pre.data(), n, d, hd, false);
    add_bias(fc.head_pre.data(), model.at(l.head_b1), n, hd);
    for (std::size_t i = 0; i < fc.head_pre.size(); ++i)
        fc.head_act[i] = gelu(fc.head_pre[i]);

    PatchLogits<T> out(patches.rows, patches.cols);
    k::gemm(fc.head_act.data(), model.at(l.head_w2), out.values.data(), n, hd, 1, false);
    const T b2 = *model.at(l.head_b2);
    for (auto& v : out.values) {
        v += b2;
        if (!std::isfinite(v))
            throw NumericError("forward produced a non-finite logit");
    }
    return out;
}

template <typename T>
PatchLogits<T> forward(const Model<T>& model, const RgbImage& image)
{
    return forward(model, patchify<T>(image), static_cast<ForwardCache<T>*>(nullptr));
}

template <typename T>
void backward(const Model<T>& model, const ForwardCache<T>& fc, std::span<const T> dlogits, std::span<T> grad)
{
    const ModelConfig& cfg = model.config();
    const ParamLayout& l = model.layout();
    const int n = fc.tokens;
    const int d = cfg.embed_dim;
    const int f = cfg.ffn_dim;
    const int hd = cfg.head_hidden_dim;
    const int heads = cfg.num_heads;
    const int dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    const std::size_t nd = static_cast<std::size_t>(n) * d;
    if (dlogits.size() != static_cast<std::size_t>(n) || grad.size() != l.total)
        throw DimensionMismatchError("backward: gradient buffer shape mismatch");
    T* g = grad.data();

    // Head.
    k::gemm_tn_acc(fc.head_act.data(), dlogits.data(), g + l.head_w2, n, hd, 1);
    for (int i = 0; i < n; ++i)
        g[l.head_b2] += dlogits[i];
    std::vector<T> dpre(static_cast<std::size_t>(n) * hd);
    const T* w2 = model.at(l.head_w2);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < hd; ++j)
            dpre[i * hd + j] = dlogits[i] * w2[j] * gelu_grad(fc.head_pre[i * hd + j]);
    k::gemm_tn_acc(fc.z.data(), dpre.data(), g + l.head_w1, n, d, hd);
    column_sum_acc(dpre.data(), g + l.head_b1, n, hd);
    std::vector<T> dz(nd);
    k::gemm_nt(dpre.data(), model.at(l.head_w1), dz.data(), n, hd, d, false);

    std::vector<T> dx(nd, T(0));
    layer_norm_backward(dz.data(), fc.xhat_f.data(), fc.rstd_f.data(), model.at(l.final_gain), dx.data(),
                        g + l.final_gain, g + l.final_bias, n, d);

    std::vector<T> du, dc(nd), dmid(nd), d_o(nd), dq(nd), dk(nd), dv(nd), da(nd);
    std::vector<T> doh(static_cast<std::size_t>(n) * dh), qh(doh.size()), kh(doh.size()), vh(doh.size());
    std::vector<T> dqh(doh.size()), dkh(doh.size()), dvh(doh.size());
    std::vector<T> dp(static_cast<std::size_t>(n) * n);
    for (int b = cfg.depth - 1; b >= 0; --b) {
        const auto& lb = l.blocks[b];
        const auto& c = fc.blocks[b];

        // x_out = x_mid + ffn(ln2(x_mid))
        k::gemm_tn_acc(c.g.data(), dx.data(), g + lb.ffn_w2, n, f, d);
        column_sum_acc(dx.data(), g + lb.ffn_b2, n, d);
        du.resize(static_cast<std::size_t>(n) * f);
        k::gemm_nt(dx.data(), model.at(lb.ffn_w2), du.data(), n, d, f, false);
        for (std::size_t i = 0; i < du.size(); ++i)
            du[i] *= gelu_grad(c.u[i]);
        k::gemm_tn_acc(c.c.data(), du.data(), g + lb.ffn_w1, n, d, f);
        column_sum_acc(du.data(), g + lb.ffn_b1, n, f);
        k::gemm_nt(du.data(), model.at(lb.ffn_w1), dc.data(), n, f, d, false);
        dmid = dx;
        layer_norm_backward(dc.data(), c.xhat2.data(), c.rstd2.data(), model.at(lb.ln2_gain), dmid.data(),
                            g + lb.ln2_gain, g + lb.ln2_bias, n, d);

        // x_mid = x_in + attn(ln1(x_in))
        k::gemm_tn_acc(c.o.data(), dmid.data(), g + lb.wo, n, d, d);
        column_sum_acc(dmid.data(), g + lb.bo, n, d);
        k::gemm_nt(dmid.data(), model.at(lb.wo), d_o.data(), n, d, d, false);
        for (int h = 0; h < heads; ++h) {
            copy_head(d_o.data(), doh.data(), n, d, dh, h);
            copy_head(c.q.data(), qh.data(), n, d, dh, h);
            copy_head(c.k.data(), kh.data(), n, d, dh, h);
            copy_head(c.v.data(), vh.data(), n, d, dh, h);
            const T* p = c.probs.data() + static_cast<std::size_t>(h) * n * n;
            k::gemm_nt(doh.data(), vh.data(), dp.data(), n, dh, n, false);
            std::fill(dvh.begin(), dvh.end(), T(0));
            k::gemm_tn_acc(p, doh.data(), dvh.data(), n, n, dh);
            for (int i = 0; i < n; ++i) {
                const T* pi = p + static_cast<std::size_t>(i) * n;
                T* dpi = dp.data() + static_cast<std::size_t>(i) * n;
                T dot = 0;
                for (int j = 0; j < n; ++j)
                    dot += pi[j] * dpi[j];
                for (int j = 0; j < n; ++j)
                    dpi[j] = pi[j] * (dpi[j] - dot) * scale;
            }
            k::gemm(dp.data(), kh.data(), dqh.data(), n, n, dh, false);
            std::fill(dkh.begin(), dkh.end(), T(0));
            k::gemm_tn_acc(dp.data(), qh.data(), dkh.data(), n, n, dh);
            scatter_head(dqh.data(), dq.data(), n, d, dh, h);
            scatter_head(dkh.data(), dk.data(), n, d, dh, h);
            scatter_head(dvh.data(), dv.data(), n, d, dh, h);
        }
        k::gemm_tn_acc(c.a.data(), dq.data(), g + lb.wq, n, d, d);
        k::gemm_tn_acc(c.a.data(), dk.data(), g + lb.wk, n, d, d);
        k::gemm_tn_acc(c.a.data(), dv.data(), g + lb.wv, n, d, d);
        column_sum_acc(dq.data(), g + lb.bq, n, d);
        column_sum_acc(dk.data(), g + lb.bk, n, d);
        column_sum_acc(dv.data(), g + lb.bv, n, d);
        k::gemm_nt(dq.data(), model.at(lb.wq), da.data(), n, d, d, false);
        k::gemm_nt(dk.data(), model.at(lb.wk), da.data(), n, d, d, true);
        k::gemm_nt(dv.data(), model.at(lb.wv), da.data(), n, d, d, true);
        dx = dmid;
        layer_norm_backward(da.data(), c.xhat1.data(), c.rstd1.data(), model.at(lb.ln1_gain), dx.data(),
                            g + lb.ln1_gain, g + lb.ln1_bias, n, d);
    }

    // Patch embedding; the input image needs no gradient.
    k::gemm_tn_acc(fc.patches.data(), dx.data(), g + l.patch_w, n, kPatchDim, d);
    column_sum_acc(dx.data(), g + l.patch_b, n, d);
}

template <typename T>
T interpolate_at(const PatchLogits<T>& grid, double y, double x, int patch_size)
{
    auto coord = [&](double p, int extent, int& i0, int& i1, T& w) {
        double u = p / patch_size - 0.5;
        u = std::clamp(u, 0.0, static_cast<double>(extent - 1));
        i0 = static_cast<int>(std::floor(u));
        i1 = std::min(i0 + 1, extent - 1);
        w = static_cast<T>(u - i0);
    };
    int r0, r1, c0, c1;
    T wy, wx;
    coord(y, grid.rows, r0, r1, wy);
    coord(x, grid.cols, c0, c1, wx);
    const T top = (T(1) - wx) * grid.at(r0, c0) + wx * grid.at(r0, c1);
    const T bottom = (T(1) - wx) * grid.at(r1, c0) + wx * grid.at(r1, c1);
    return (T(1) - wy) * top + wy * bottom;
}

namespace {

struct Tap {
    int i0, i1;
    double w;
};

std::vector<Tap> taps(int pixels, int extent, int patch_size)
{
    std::vector<Tap> t(static_cast<std::size_t>(pixels));
    for (int p = 0; p < pixels; ++p) {
        double u = (p + 0.5) / patch_size - 0.5;
        u = std::clamp(u, 0.0, static_cast<double>(extent - 1));
        const int i0 = static_cast<int>(std::floor(u));
        t[p] = {i0, std::min(i0 + 1, extent - 1), u - i0};
    }
    return t;
}

} // namespace

template <typename T>
PixelLogits<T> upsample_logits(const PatchLogits<T>& grid, int target_h, int target_w, int patch_size)
{
    const auto ty = taps(target_h, grid.rows, patch_size);
    const auto tx = taps(target_w, grid.cols, patch_size);
    PixelLogits<T> out(target_h, target_w);
    for (int y = 0; y < target_h; ++y) {
        const T wy = static_cast<T>(ty[y].w);
        for (int x = 0; x < target_w; ++x) {
            const T wx = static_cast<T>(tx[x].w);
            const T top = (T(1) - wx) * grid.at(ty[y].i0, tx[x].i0) + wx * grid.at(ty[y].i0, tx[x].i1);
            const T bottom = (T(1) - wx) * grid.at(ty[y].i1, tx[x].i0) + wx * grid.at(ty[y].i1, tx[x].i1);
            out.at(y, x) = (T(1) - wy) * top + wy * bottom;
        }
    }
    return out;
}

template <typename T>
PatchLogits<T> upsample_backward(const PixelLogits<T>& dpixel, int rows, int cols, int patch_size)
{
    const auto ty = taps(dpixel.rows, rows, patch_size);
    const auto tx = taps(dpixel.cols, cols, patch_size);
    PatchLogits<T> out(rows, cols);
    for (int y = 0; y < dpixel.rows; ++y) {
        const T wy = static_cast<T>(ty[y].w);
        for (int x = 0; x < dpixel.cols; ++x) {
            const T wx = static_cast<T>(tx[x].w);
            const T gval = dpixel.at(y, x);
            out.at(ty[y].i0, tx[x].i0) += (T(1) - wy) * (T(1) - wx) * gval;
            out.at(ty[y].i0, tx[x].i1) += (T(1) - wy) * wx * gval;
            out.at(ty[y].i1, tx[x].i0) += wy * (T(1) - wx) * gval;
            out.at(ty[y].i1, tx[x].i1) += wy * wx * gval;
        }
    }
    return out;
}

template <typename T>
BinaryMask mask_from_logits(const PixelLogits<T>& logits, double threshold)
{
    BinaryMask mask(logits.cols, logits.rows);
    auto bits = mask.bits();
    for (std::size_t i = 0; i < logits.values.size(); ++i) {
        const double z = static_cast<double>(logits.values[i]);
        bits[i] = threshold == 0.5 ? (z > 0.0) : (1.0 / (1.0 + std::exp(-z)) > threshold);
    }
    return mask;
}

template <typename T>
BinaryMask predict_mask(const Model<T>& model, const RgbImage& image, double threshold)
{
    const auto patch_logits = forward(model, image);
    return mask_from_logits(upsample_logits(patch_logits, image.height, image.width), threshold);
}

#define VITHD_INSTANTIATE(T)                                                                                           \
    template class Model<T>;                                                                                           \
    template Model<T> init_model<T>(const ModelConfig&);                                                               \
    template PatchGrid<T> patchify<T>(const RgbImage&);                                                                \
    template struct ForwardCache<T>;                                                                                   \
    template std::vector<T> position_encoding<T>(int, int, int);                                                       \
    template PatchLogits<T> forward<T>(const Model<T>&, const PatchGrid<T>&, ForwardCache<T>*);                        \
    template PatchLogits<T> forward<T>(const Model<T>&, const RgbImage&);                                              \
    template void backward<T>(const Model<T>&, const ForwardCache<T>&, std::span<const T>, std::span<T>);              \
    template T interpolate_at<T>(const PatchLogits<T>&, double, double, int);                                          \
    template PixelLogits<T> upsample_logits<T>(const PatchLogits<T>&, int, int, int);                                  \
    template PatchLogits<T> upsample_backward<T>(const PixelLogits<T>&, int, int, int);                                \
    template BinaryMask mask_from_logits<T>(const PixelLogits<T>&, double);                                            \
    template BinaryMask predict_mask<T>(const Model<T>&, const RgbImage&, double);

VITHD_INSTANTIATE(float)
VITHD_INSTANTIATE(double)

#undef VITHD_INSTANTIATE

} // namespace vithd
