#include "vithd/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include "vithd/rng.hpp"

namespace vithd {

void PipelineConfig::derive_seeds()
{
    synth.master_seed = master_seed;
    model.init_seed = derive_seed(master_seed, hash_label("model-init"));
    train.shuffle_seed = derive_seed(master_seed, hash_label("shuffle"));
}

void PipelineConfig::validate() const
{
    synth.validate();
    model.validate();
    train.validate();
    if (fixed_lr < 0.0)
        throw ConfigError("fixedLr must be >= 0");
    if (bench.generated_prompt_count < 0)
        throw ConfigError("benchPromptCount must be >= 0");
    if (!(bench.self_check_threshold >= 0.0 && bench.self_check_threshold <= 1.0))
        throw ConfigError("selfCheckThreshold must lie in [0, 1]");
    if (bench.max_refine_attempts < 1)
        throw ConfigError("maxRefineAttempts must be >= 1");
    if (bench.top_words < 1)
        throw ConfigError("topWords must be >= 1");
    if (bench.generator != "template" && bench.generator != "llm")
        throw ConfigError("generator must be 'template' or 'llm'");
    if (paths.output_root.empty())
        throw ConfigError("outputRoot must not be empty");
}

nlohmann::json PipelineConfig::echo() const
{
    // nlohmann::json objects are std::map backed, so dump() emits sorted keys.
    nlohmann::json j;
    j["masterSeed"] = master_seed;
    j["synth"] = synth.to_json();
    j["model"] = model.to_json();
    j["train"] = train.to_json();
    j["fixedLr"] = fixed_lr;
    j["outputPriorFromData"] = output_prior_from_data;
    j["bench"] = {{"benchPromptCount", bench.generated_prompt_count},
                  {"selfCheckThreshold", bench.self_check_threshold},
                  {"maxRefineAttempts", bench.max_refine_attempts},
                  {"topWords", bench.top_words},
                  {"generator", bench.generator},
                  {"catalogPath", bench.catalog_path},
                  {"stopwordsPath", bench.stopwords_path},
                  {"realPromptsPath", bench.real_prompts_path}};
    j["paths"] = {{"outputRoot", paths.output_root}, {"corpusDir", paths.corpus_dir}};
    return j;
}

std::string PipelineConfig::compute_digest() const
{
    return sha256_hex(echo().dump());
}

Provenance PipelineConfig::provenance() const
{
    Provenance p;
    p.config_digest = digest.empty() ? compute_digest() : digest;
    p.master_seed = master_seed;
    return p;
}

std::filesystem::path PipelineConfig::corpus_root() const
{
    return std::filesystem::path(paths.output_root) / paths.corpus_dir;
}

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

struct Location {
    std::string origin;
    int line;
    std::string key;

    [[noreturn]] void fail(const std::string& what) const
    {
        throw ConfigError(origin + ":" + std::to_string(line) + ": key '" + key + "': " + what);
    }
};

template <typename T>
T parse_number(const std::string& text, const Location& loc)
{
    T v{};
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end || text.empty())
        loc.fail("expected " + std::string(std::is_integral_v<T> ? "an integer" : "a number") + ", got '" + text + "'");
    return v;
}

std::vector<double> parse_list(const std::string& text, const Location& loc)
{
    std::vector<double> out;
    std::string item;
    std::istringstream is(text);
    while (std::getline(is, item, ','))
        out.push_back(parse_number<double>(trim(item), loc));
    if (out.empty())
        loc.fail("expected a comma-separated list");
    return out;
}

template <std::size_t N>
std::array<double, N> parse_array(const std::string& text, const Location& loc)
{
    const auto v = parse_list(text, loc);
    if (v.size() != N)
        loc.fail("expected " + std::to_string(N) + " comma-separated numbers");
    std::array<double, N> a{};
    std::copy(v.begin(), v.end(), a.begin());
    return a;
}

std::string parse_string(const std::string& text)
{
    if (text.size() >= 2 && text.front() == '"' && text.back() == '"')
        return text.substr(1, text.size() - 2);
    return text;
}

using Setter = std::function<void(PipelineConfig&, const std::string&, const Location&)>;

const std::map<std::string, Setter>& setters()
{
    static const std::map<std::string, Setter> table = {
        {"masterSeed", [](auto& c, auto& v, auto& l) { c.master_seed = parse_number<std::uint64_t>(v, l); }},
        // synthetic corpus
        {"sampleCount", [](auto& c, auto& v, auto& l) { c.synth.sample_count = parse_number<int>(v, l); }},
        {"imageWidth", [](auto& c, auto& v, auto& l) { c.synth.image_width = parse_number<int>(v, l); }},
        {"imageHeight", [](auto& c, auto& v, auto& l) { c.synth.image_height = parse_number<int>(v, l); }},
        {"positiveFraction", [](auto& c, auto& v, auto& l) { c.synth.positive_fraction = parse_number<double>(v, l); }},
        {"typeMix", [](auto& c, auto& v, auto& l) { c.synth.type_mix = parse_array<4>(v, l); }},
        {"vertexJitterStd",
         [](auto& c, auto& v, auto& l) { c.synth.annotator_noise.vertex_jitter_std = parse_number<double>(v, l); }},
        {"missProbability",
         [](auto& c, auto& v, auto& l) { c.synth.annotator_noise.miss_probability = parse_number<double>(v, l); }},
        {"splitRatio", [](auto& c, auto& v, auto& l) { c.synth.split_ratio = parse_array<3>(v, l); }},
        // model
        {"patchSize", [](auto& c, auto& v, auto& l) { c.model.patch_size = parse_number<int>(v, l); }},
        {"embedDim", [](auto& c, auto& v, auto& l) { c.model.embed_dim = parse_number<int>(v, l); }},
        {"depth", [](auto& c, auto& v, auto& l) { c.model.depth = parse_number<int>(v, l); }},
        {"numHeads", [](auto& c, auto& v, auto& l) { c.model.num_heads = parse_number<int>(v, l); }},
        {"headHiddenDim", [](auto& c, auto& v, auto& l) { c.model.head_hidden_dim = parse_number<int>(v, l); }},
        {"ffnDim", [](auto& c, auto& v, auto& l) { c.model.ffn_dim = parse_number<int>(v, l); }},
        {"outputPrior",
         [](auto& c, auto& v, auto& l) {
             c.model.output_prior = parse_number<double>(v, l);
             c.output_prior_from_data = false;
         }},
        // training
        {"batchSize", [](auto& c, auto& v, auto& l) { c.train.batch_size = parse_number<int>(v, l); }},
        {"stage1Epochs", [](auto& c, auto& v, auto& l) { c.train.stage1_epochs = parse_number<int>(v, l); }},
        {"stage2MaxEpochs", [](auto& c, auto& v, auto& l) { c.train.stage2_max_epochs = parse_number<int>(v, l); }},
        {"lrGrid", [](auto& c, auto& v, auto& l) { c.train.lr_grid = parse_list(v, l); }},
        {"weightDecay", [](auto& c, auto& v, auto& l) { c.train.weight_decay = parse_number<double>(v, l); }},
        {"warmupFraction", [](auto& c, auto& v, auto& l) { c.train.warmup_fraction = parse_number<double>(v, l); }},
        {"earlyStopPatience", [](auto& c, auto& v, auto& l) { c.train.early_stop_patience = parse_number<int>(v, l); }},
        {"positiveWeight", [](auto& c, auto& v, auto& l) { c.train.positive_weight = parse_number<double>(v, l); }},
        {"fixedLr", [](auto& c, auto& v, auto& l) { c.fixed_lr = parse_number<double>(v, l); }},
        // benchmark
        {"benchPromptCount", [](auto& c, auto& v, auto& l) { c.bench.generated_prompt_count = parse_number<int>(v, l); }},
        {"selfCheckThreshold", [](auto& c, auto& v, auto& l) { c.bench.self_check_threshold = parse_number<double>(v, l); }},
        {"maxRefineAttempts", [](auto& c, auto& v, auto& l) { c.bench.max_refine_attempts = parse_number<int>(v, l); }},
        {"topWords", [](auto& c, auto& v, auto& l) { c.bench.top_words = parse_number<int>(v, l); }},
        {"generator", [](auto& c, auto& v, auto&) { c.bench.generator = parse_string(v); }},
        {"catalogPath", [](auto& c, auto& v, auto&) { c.bench.catalog_path = parse_string(v); }},
        {"stopwordsPath", [](auto& c, auto& v, auto&) { c.bench.stopwords_path = parse_string(v); }},
        {"realPromptsPath", [](auto& c, auto& v, auto&) { c.bench.real_prompts_path = parse_string(v); }},
        // paths
        {"outputRoot", [](auto& c, auto& v, auto&) { c.paths.output_root = parse_string(v); }},
        {"corpusDir", [](auto& c, auto& v, auto&) { c.paths.corpus_dir = parse_string(v); }},
    };
    return table;
}

// Validation messages that do not spell out the config key they concern.
const std::vector<std::pair<std::string, std::string>>& constraint_keys()
{
    static const std::vector<std::pair<std::string, std::string>> m = {
        {"imageSize", "imageWidth"}, {"imageSize", "imageHeight"}, {"split ratios", "splitRatio"}};
    return m;
}

} // namespace

PipelineConfig default_config()
{
    PipelineConfig c;
    c.derive_seeds();
    c.digest = c.compute_digest();
    return c;
}

PipelineConfig parse_config(const std::string& text, const std::string& origin)
{
    PipelineConfig c;
    std::map<std::string, int> seen;
    std::istringstream is(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(is, raw)) {
        ++line_no;
        const auto hash = raw.find('#');
        std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty())
            continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": malformed section header");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const Location loc{origin, line_no, key};
        const auto it = setters().find(key);
        if (it == setters().end())
            loc.fail("unknown key");
        if (auto [pos, fresh] = seen.emplace(key, line_no); !fresh)
            loc.fail("duplicate key (first set on line " + std::to_string(pos->second) + ")");
        it->second(c, value, loc);
    }
    c.derive_seeds();
    try {
        c.validate();
    } catch (const ConfigError& e) {
        // Point at the offending line when the message names a key that was set explicitly.
        const std::string msg = e.what();
        for (const auto& [key, line] : seen)
            if (msg.find(key) != std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(line) + ": key '" + key + "': " + msg);
        for (const auto& [needle, key] : constraint_keys())
            if (msg.find(needle) != std::string::npos && seen.count(key))
                throw ConfigError(origin + ":" + std::to_string(seen[key]) + ": key '" + key + "': " + msg);
        throw ConfigError(origin + ": " + msg);
    }
    c.digest = c.compute_digest();
    return c;
}

PipelineConfig load_config(const std::filesystem::path& path)
{
    return parse_config(read_text_file(path), path.string());
}

} // namespace vithd
