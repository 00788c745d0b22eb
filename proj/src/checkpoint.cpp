#include "vithd/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "vithd/error.hpp"

namespace vithd {

namespace {

class Writer {
public:
    template <typename U>
    void put(U value)
    {
        static_assert(std::is_integral_v<U>);
        using Unsigned = std::make_unsigned_t<U>;
        auto bits = static_cast<Unsigned>(value);
        for (std::size_t i = 0; i < sizeof(U); ++i)
            out_.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
    void put_f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
    void put_f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
    void put_bytes(std::string_view s) { out_.append(s); }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(std::string_view in) : in_(in) {}

    template <typename U>
    U get()
    {
        static_assert(std::is_integral_v<U>);
        need(sizeof(U));
        std::make_unsigned_t<U> bits = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i)
            bits |= static_cast<std::make_unsigned_t<U>>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
        pos_ += sizeof(U);
        return static_cast<U>(bits);
    }
    float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
    double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
    std::string_view get_bytes(std::size_t n)
    {
        need(n);
        auto s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const noexcept { return pos_ == in_.size(); }

private:
    void need(std::size_t n) const
    {
        if (in_.size() - pos_ < n)
            throw ValidationError("checkpoint truncated");
    }
    std::string_view in_;
    std::size_t pos_ = 0;
};

} // namespace

template <typename T>
std::string encode_checkpoint(const Model<T>& model, ScalarWidth width, const Provenance& prov)
{
    const ModelConfig& c = model.config();
    Writer w;
    w.put_bytes("VTHD");
    w.put(kCheckpointVersion);
    w.put(static_cast<std::int32_t>(c.patch_size));
    w.put(static_cast<std::int32_t>(c.embed_dim));
    w.put(static_cast<std::int32_t>(c.depth));
    w.put(static_cast<std::int32_t>(c.num_heads));
    w.put(static_cast<std::int32_t>(c.head_hidden_dim));
    w.put(static_cast<std::int32_t>(c.ffn_dim));
    w.put_f64(c.output_prior);
    w.put(c.init_seed);
    w.put(static_cast<std::uint32_t>(width));
    const std::string prov_json = prov.to_json().dump();
    w.put(static_cast<std::uint32_t>(prov_json.size()));
    w.put_bytes(prov_json);
    const auto params = model.params();
    w.put(static_cast<std::uint64_t>(params.size()));
    for (T v : params) {
        if (width == ScalarWidth::F32)
            w.put_f32(static_cast<float>(v));
        else
            w.put_f64(static_cast<double>(v));
    }
    return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes)
{
    Reader r(bytes);
    if (r.get_bytes(4) != "VTHD")
        throw ValidationError("not a checkpoint (bad magic)");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw ValidationError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ck;
    ck.config.patch_size = r.get<std::int32_t>();
    ck.config.embed_dim = r.get<std::int32_t>();
    ck.config.depth = r.get<std::int32_t>();
    ck.config.num_heads = r.get<std::int32_t>();
    ck.config.head_hidden_dim = r.get<std::int32_t>();
    ck.config.ffn_dim = r.get<std::int32_t>();
    ck.config.output_prior = r.get_f64();
    ck.config.init_seed = r.get<std::uint64_t>();
    ck.config.validate();
    const auto width = r.get<std::uint32_t>();
    if (width != 4 && width != 8)
        throw ValidationError("bad checkpoint scalar width " + std::to_string(width));
    ck.width = static_cast<ScalarWidth>(width);
    const auto prov_len = r.get<std::uint32_t>();
    try {
        ck.provenance = Provenance::from_json(nlohmann::json::parse(r.get_bytes(prov_len)));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad checkpoint provenance: ") + e.what());
    }
    const auto count = r.get<std::uint64_t>();
    const auto expected = ParamLayout::build(ck.config).total;
    if (count != expected)
        throw ValidationError("checkpoint holds " + std::to_string(count) + " parameters, config implies "
                              + std::to_string(expected));
    ck.params.resize(count);
    for (auto& p : ck.params)
        p = ck.width == ScalarWidth::F32 ? static_cast<double>(r.get_f32()) : r.get_f64();
    if (!r.done())
        throw ValidationError("trailing bytes after checkpoint parameters");
    return ck;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model, ScalarWidth width,
                     const Provenance& prov, const OutputPolicy& policy)
{
    write_text_file(path, encode_checkpoint(model, width, prov), policy);
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    try {
        return decode_checkpoint(read_text_file(path));
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

template std::string encode_checkpoint<float>(const Model<float>&, ScalarWidth, const Provenance&);
template std::string encode_checkpoint<double>(const Model<double>&, ScalarWidth, const Provenance&);
template void save_checkpoint<float>(const std::filesystem::path&, const Model<float>&, ScalarWidth,
                                     const Provenance&, const OutputPolicy&);
template void save_checkpoint<double>(const std::filesystem::path&, const Model<double>&, ScalarWidth,
                                      const Provenance&, const OutputPolicy&);

} // namespace vithd
