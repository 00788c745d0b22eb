#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vithd/image.hpp"
#include "vithd/mask.hpp"

namespace vithd {

inline constexpr std::string_view kCodeVersion = "0.1.0";

/// Stamped into every artifact: identical triples produce identical artifacts.
struct Provenance {
    std::string config_digest;
    std::string code_version{kCodeVersion};
    std::uint64_t master_seed = 0;

    nlohmann::json to_json() const;
    static Provenance from_json(const nlohmann::json& j);
};

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);

/// Output files are write-once unless `overwrite` is set.
class OutputPolicy {
public:
    explicit OutputPolicy(bool overwrite = false) : overwrite_(overwrite) {}
    /// Throws IoError if `path` exists and overwriting is not allowed; creates parent directories.
    void prepare(const std::filesystem::path& path) const;
    bool overwrite() const noexcept { return overwrite_; }

private:
    bool overwrite_;
};

void write_text_file(const std::filesystem::path& path, std::string_view text, const OutputPolicy& policy);

/// One JSON document per line.
std::string to_jsonl(const std::vector<nlohmann::json>& records);
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

/// PNG text chunks carry the provenance fields.
void write_png(const std::filesystem::path& path, const RgbImage& image, const Provenance& prov,
               const OutputPolicy& policy);
/// Single channel, 0 = normal, 255 = distorted.
void write_mask_png(const std::filesystem::path& path, const BinaryMask& mask, const Provenance& prov,
                    const OutputPolicy& policy);

/// Any PNG color type is converted to 8-bit RGB.
RgbImage read_png(const std::filesystem::path& path);
/// Any nonzero gray level (after conversion to gray) counts as distorted.
BinaryMask read_mask_png(const std::filesystem::path& path);

} // namespace vithd
