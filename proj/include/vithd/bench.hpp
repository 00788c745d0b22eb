#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vithd/consolidation.hpp"
#include "vithd/error.hpp"
#include "vithd/io.hpp"
#include "vithd/model.hpp"

namespace vithd {

/// One catalog value. `surface` is what a prompt must mention; `synonyms` are also
/// accepted by the self-check; `plural` is used for gender nouns when humanCount > 1;
/// `phrase` is the text rendered into a sentence (defaults to `surface`).
struct CatalogValue {
    std::string value;
    std::string surface;
    std::vector<std::string> synonyms;
    std::string plural;
    std::string phrase;
};

struct PromptCatalog {
    int version = 1;
    std::vector<CatalogValue> human_count, age_group, gender, artistic_style, activity, setting;
    /// Sentence frames with {count} {age} {gender} {style} {activity} {setting} slots.
    std::vector<std::string> templates;

    /// Throws ValidationError when a required attribute list or the template list is empty.
    void validate() const;
    static PromptCatalog from_json(const nlohmann::json& j);
    static PromptCatalog load(const std::filesystem::path& path);
};

struct MetaAttributes {
    int human_count = 1;
    std::string age_group;
    std::string gender;
    std::string artistic_style;
    std::string activity;
    std::optional<std::string> setting;

    nlohmann::json to_json() const;
    bool operator==(const MetaAttributes&) const = default;
};

/// Independent uniform draw per attribute from Rng(seed). The setting slot is drawn
/// whenever the catalog lists settings.
MetaAttributes sample_meta_attributes(std::uint64_t seed, const PromptCatalog& catalog);

enum class PromptSource { Generated, RealWorld };
std::string_view to_string(PromptSource source) noexcept;

struct PromptRecord {
    std::string prompt_id;
    std::string text;
    PromptSource source = PromptSource::Generated;
    std::optional<MetaAttributes> attributes;
    std::optional<double> self_check_score; // absent for real-world prompts

    nlohmann::json to_json() const;
};

/// Raised when a text generator fails; carries the number of attempts made.
class GeneratorError : public Error {
public:
    GeneratorError(const std::string& what, int attempts) : Error(what), attempts_(attempts) {}
    int attempts() const noexcept { return attempts_; }
    bool retryable() const noexcept { return true; }

private:
    int attempts_;
};

class PromptGenerator {
public:
    virtual ~PromptGenerator() = default;
    virtual std::string generate(const MetaAttributes& attrs, const PromptCatalog& catalog, std::uint64_t seed) = 0;
    virtual std::string name() const = 0;
};

/// Fills the attribute phrases into a seed-chosen sentence frame.
class TemplateGenerator final : public PromptGenerator {
public:
    std::string generate(const MetaAttributes& attrs, const PromptCatalog& catalog, std::uint64_t seed) override;
    std::string name() const override { return "template"; }
};

struct LlmClientOptions {
    std::string endpoint; // e.g. http://host:port/v1/chat/completions
    std::string api_key;
    std::string model = "default";
    double timeout_seconds = 30.0;
    int max_attempts = 3;

    /// VITHD_LLM_ENDPOINT (required), VITHD_LLM_KEY, VITHD_LLM_MODEL, VITHD_LLM_TIMEOUT.
    /// Returns nullopt when no endpoint is configured.
    static std::optional<LlmClientOptions> from_environment();
};

/// Chat-completions style HTTP client. Throws GeneratorError after max_attempts failures.
class LlmGenerator final : public PromptGenerator {
public:
    explicit LlmGenerator(LlmClientOptions options) : options_(std::move(options)) {}
    std::string generate(const MetaAttributes& attrs, const PromptCatalog& catalog, std::uint64_t seed) override;
    std::string name() const override { return "llm"; }

private:
    LlmClientOptions options_;
};

/// Asks the generator for text and wraps it into a generated record with its
/// self-check score. Throws GeneratorError on empty output.
PromptRecord render_prompt(const MetaAttributes& attrs, PromptGenerator& generator, const PromptCatalog& catalog,
                           std::uint64_t seed, const std::string& prompt_id);

struct SelfCheck {
    bool passed = false;
    double score = 0.0;
};

/// Fraction of attributes (five, plus the setting when present) whose surface form
/// or a synonym occurs in `text` as a whole-word, case-insensitive phrase.
SelfCheck self_check(const std::string& text, const MetaAttributes& attrs, const PromptCatalog& catalog,
                     double threshold = 0.8);

struct GenerationResult {
    std::vector<PromptRecord> records;
    int rejected = 0;        // candidates that failed every attempt
    int total_attempts = 0;
};

/// Draws candidates from derive_seed(seed, i) until `count` pass the self-check;
/// each failing candidate is re-rendered with a fresh seed up to `max_attempts` times.
GenerationResult generate_prompts(int count, std::uint64_t seed, const PromptCatalog& catalog,
                                  PromptGenerator& generator, double threshold = 0.8, int max_attempts = 5);

/// One prompt per line; blank lines skipped; order preserved. Throws IoError.
std::vector<PromptRecord> ingest_prompts(const std::filesystem::path& path);

/// Lowercased whitespace tokens with leading/trailing punctuation removed; empty tokens dropped.
std::vector<std::string> prompt_words(const std::string& text);

struct StopwordList {
    std::string version;
    std::vector<std::string> words; // sorted
    bool contains(const std::string& w) const;
    static StopwordList load(const std::filesystem::path& path);
};

struct PromptStats {
    std::map<int, int> word_count_histogram;
    std::vector<std::pair<std::string, int>> top_words; // count descending, then word ascending
    nlohmann::json to_json() const;
};

/// Throws ValidationError on an empty prompt list.
PromptStats prompt_stats(std::span<const PromptRecord> prompts, const StopwordList& stopwords, int top_k = 100);

/// Digest over the canonical serialization of the records (provenance excluded).
std::string prompts_digest(std::span<const PromptRecord> prompts);

struct SkippedImage {
    std::string model_name;
    std::string path;
    std::string reason;
};

struct ModelBenchmark {
    std::string model_name;
    int image_count = 0;
    int undistorted_count = 0;
    double non_distortion_rate = 0.0;
    Histogram relative_area_histogram;
    double mean_relative_area = 0.0;
};

struct BenchmarkReport {
    std::vector<ModelBenchmark> models;
    std::vector<SkippedImage> skipped;
    std::optional<PromptStats> prompt_stats;

    nlohmann::json to_json(const Provenance& prov) const;
};

/// Scores explicit image lists per model name. An image is undistorted iff its
/// predicted mask is empty. With no readable images the rate is reported as 1.
BenchmarkReport benchmark_image_sets(const std::map<std::string, std::vector<std::filesystem::path>>& sets,
                                     const Model<double>& model, std::span<const double> area_edges);

/// Every *.png file in each directory, sorted by file name.
BenchmarkReport benchmark_models(const std::map<std::string, std::filesystem::path>& model_image_dirs,
                                 const Model<double>& model, std::span<const double> area_edges);

std::string histogram_csv(const Histogram& h, const Provenance& prov);
std::string word_count_csv(const PromptStats& stats, const Provenance& prov);
std::string top_words_csv(const PromptStats& stats, const Provenance& prov);

std::filesystem::path default_asset_dir();

} // namespace vithd
