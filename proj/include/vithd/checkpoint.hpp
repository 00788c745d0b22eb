#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "vithd/io.hpp"
#include "vithd/model.hpp"

namespace vithd {

/// Checkpoint layout (all integers and floats little-endian):
///   "VTHD" | u32 version | ModelConfig echo (6 x i32, f64 prior, u64 seed)
///   | u32 scalar width (4 or 8) | u32 n + n bytes provenance JSON
///   | u64 parameter count | parameters in ParamLayout order
enum class ScalarWidth : std::uint32_t { F32 = 4, F64 = 8 };

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelConfig config;
    ScalarWidth width = ScalarWidth::F64;
    Provenance provenance;
    std::vector<double> params;

    template <typename T>
    Model<T> model() const
    {
        Model<T> m(config);
        auto dst = m.params();
        for (std::size_t i = 0; i < params.size(); ++i)
            dst[i] = static_cast<T>(params[i]);
        return m;
    }
};

template <typename T>
std::string encode_checkpoint(const Model<T>& model, ScalarWidth width, const Provenance& prov);
Checkpoint decode_checkpoint(std::string_view bytes);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model, ScalarWidth width,
                     const Provenance& prov, const OutputPolicy& policy);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace vithd
