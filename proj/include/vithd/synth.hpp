#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "vithd/consolidation.hpp"
#include "vithd/image.hpp"
#include "vithd/io.hpp"
#include "vithd/mask.hpp"

namespace vithd {

struct AnnotatorNoise {
    double vertex_jitter_std = 1.0; // pixels
    double miss_probability = 0.1;
};

struct SynthConfig {
    int sample_count = 640;
    int image_width = 112;
    int image_height = 112;
    double positive_fraction = 0.72;
    /// Indexed like kConcreteTypes.
    std::array<double, 4> type_mix = {0.25, 0.25, 0.25, 0.25};
    AnnotatorNoise annotator_noise;
    /// Relative train/val/test weights.
    std::array<double, 3> split_ratio = {4000.0, 300.0, 400.0};
    std::uint64_t master_seed = 20250101;

    /// Throws ConfigError.
    void validate() const;
    nlohmann::json to_json() const;
};

struct InjectedRecord {
    DistortionType type = DistortionType::Deformation;
    Polygon polygon;
    bool operator==(const InjectedRecord&) const = default;
};

struct SyntheticSample {
    std::string sample_id;
    int style = 0; // 0 = naturalistic palette, 1 = flat "anime" palette
    RgbImage image;
    BinaryMask gt_mask;
    std::vector<InjectedRecord> injected;
};

std::string sample_id_for(int index);

/// Deterministic in (master_seed, index).
SyntheticSample generate_scene(int index, const SynthConfig& config);

/// One simulated annotator: per injected record, drop it with miss_probability,
/// otherwise emit the polygon with Gaussian vertex jitter (clamped to the canvas)
/// and the true type, mislabelled with probability 0.1 * miss_probability.
AnnotationSet simulate_annotator(const SyntheticSample& sample, std::uint64_t annotator_seed,
                                 const AnnotatorNoise& noise, int annotator_id);

std::uint64_t annotator_seed_for(std::uint64_t master_seed, const std::string& sample_id, int annotator);

/// Largest-remainder apportionment of `n` items to the given weights.
std::array<int, 3> split_sizes(int n, const std::array<double, 3>& ratio);

/// Splits assigned by ranking a seeded hash of each sample id.
std::vector<Split> assign_splits(const std::vector<std::string>& sample_ids, const std::array<double, 3>& ratio,
                                 std::uint64_t master_seed);

struct CorpusSample {
    SyntheticSample synthetic;
    AnnotatedSample annotated;
};

struct Corpus {
    SynthConfig config;
    std::vector<CorpusSample> samples;
};

/// Generates, annotates (three simulated annotators), consolidates and splits, in memory.
Corpus generate_corpus(const SynthConfig& config);

struct ManifestEntry {
    std::string sample_id;
    std::string image_path;
    std::string gt_mask_path;
    std::string consensus_mask_path;
    std::string annotations_path;
    Split split = Split::Train;
    bool positive = false;
};

struct CorpusManifest {
    std::filesystem::path root;
    int width = 0;
    int height = 0;
    Provenance provenance;
    std::vector<ManifestEntry> entries;
    std::map<Split, int> split_counts;

    std::vector<const ManifestEntry*> entries_for(Split split) const;
};

inline constexpr std::string_view kManifestFile = "manifest.jsonl";

CorpusManifest write_corpus(const Corpus& corpus, const std::filesystem::path& out_dir, const Provenance& prov,
                            const OutputPolicy& policy);
CorpusManifest build_corpus(const SynthConfig& config, const std::filesystem::path& out_dir, const Provenance& prov,
                            const OutputPolicy& policy);
CorpusManifest read_manifest(const std::filesystem::path& corpus_dir);

/// Annotation file: per-annotator polygons, the injected ground truth and the typed consensus regions.
AnnotatedSample read_annotations(const std::filesystem::path& path, int& width, int& height);
nlohmann::json annotation_file_header(const std::string& sample_id, int width, int height, const Provenance& prov);

} // namespace vithd
