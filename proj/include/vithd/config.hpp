#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "vithd/io.hpp"
#include "vithd/model.hpp"
#include "vithd/synth.hpp"
#include "vithd/trainer.hpp"

namespace vithd {

struct BenchSettings {
    int generated_prompt_count = 250;
    double self_check_threshold = 0.8;
    int max_refine_attempts = 5;
    int top_words = 100;
    std::string generator = "template"; // template | llm
    std::string catalog_path;           // empty: bundled asset
    std::string stopwords_path;         // empty: bundled asset
    std::string real_prompts_path;      // empty: bundled asset
};

struct PathSettings {
    std::string output_root = "out";
    std::string corpus_dir = "corpus"; // relative to output_root
};

/// Everything the command line needs. Component seeds are derived from master_seed.
struct PipelineConfig {
    std::uint64_t master_seed = 20250101;
    SynthConfig synth;
    ModelConfig model;
    TrainConfig train;
    /// Positive: skip the grid search and train at this rate.
    double fixed_lr = 0.0;
    /// Set the head's initial prior from the training masks unless outputPrior is given.
    bool output_prior_from_data = true;
    BenchSettings bench;
    PathSettings paths;
    std::string digest;

    /// Copies master_seed into the component configs.
    void derive_seeds();
    void validate() const;
    /// Canonical echo with keys in sorted order; the digest is its SHA-256.
    nlohmann::json echo() const;
    std::string compute_digest() const;
    Provenance provenance() const;
    std::filesystem::path output_root() const { return paths.output_root; }
    std::filesystem::path corpus_root() const;
};

/// `key = value` lines; `#` starts a comment; `[section]` headers are allowed and
/// ignored. Lists are comma separated. Throws ConfigError naming the key and line.
PipelineConfig parse_config(const std::string& text, const std::string& origin = "<string>");
PipelineConfig load_config(const std::filesystem::path& path);
PipelineConfig default_config();

} // namespace vithd
