#include "vithd/bench.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "vithd/metrics.hpp"
#include "vithd/parallel.hpp"
#include "vithd/rng.hpp"

namespace vithd {

namespace {

std::vector<CatalogValue> parse_values(const nlohmann::json& j, const char* key, bool required)
{
    std::vector<CatalogValue> out;
    if (!j.contains(key)) {
        if (required)
            throw ValidationError(std::string("catalog is missing attribute list '") + key + "'");
        return out;
    }
    for (const auto& v : j.at(key)) {
        CatalogValue c;
        if (v.is_string()) {
            c.value = c.surface = v.get<std::string>();
        } else {
            c.value = v.at("value").get<std::string>();
            c.surface = v.value("surface", c.value);
            c.synonyms = v.value("synonyms", std::vector<std::string>{});
            c.plural = v.value("plural", std::string{});
            c.phrase = v.value("phrase", std::string{});
        }
        if (c.phrase.empty())
            c.phrase = c.surface;
        out.push_back(std::move(c));
    }
    return out;
}

const CatalogValue* find_value(const std::vector<CatalogValue>& list, const std::string& value)
{
    for (const auto& c : list)
        if (c.value == value)
            return &c;
    return nullptr;
}

const CatalogValue& require_value(const std::vector<CatalogValue>& list, const std::string& value, const char* what)
{
    if (const auto* c = find_value(list, value))
        return *c;
    throw ValidationError(std::string("attribute ") + what + " value '" + value + "' is not in the catalog");
}

std::string lower(std::string s)
{
    for (auto& ch : s)
        ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return s;
}

// Alphanumeric runs, lowercased. Phrase matching works on these tokens.
std::vector<std::string> alnum_tokens(const std::string& text)
{
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char ch : text) {
        if (std::isalnum(ch)) {
            cur.push_back(static_cast<char>(std::tolower(ch)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty())
        out.push_back(std::move(cur));
    return out;
}

bool contains_phrase(const std::vector<std::string>& tokens, const std::string& phrase)
{
    const auto needle = alnum_tokens(phrase);
    if (needle.empty() || needle.size() > tokens.size())
        return false;
    return std::search(tokens.begin(), tokens.end(), needle.begin(), needle.end()) != tokens.end();
}

bool mentions(const std::vector<std::string>& tokens, const CatalogValue& c)
{
    if (contains_phrase(tokens, c.surface))
        return true;
    if (!c.plural.empty() && contains_phrase(tokens, c.plural))
        return true;
    return std::any_of(c.synonyms.begin(), c.synonyms.end(),
                       [&](const std::string& s) { return contains_phrase(tokens, s); });
}

void replace_all(std::string& s, const std::string& from, const std::string& to)
{
    for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
        s.replace(pos, from.size(), to);
}

} // namespace

void PromptCatalog::validate() const
{
    const std::pair<const char*, const std::vector<CatalogValue>*> required[] = {
        {"humanCount", &human_count}, {"ageGroup", &age_group}, {"gender", &gender},
        {"artisticStyle", &artistic_style}, {"activity", &activity}};
    for (const auto& [name, list] : required)
        if (list->empty())
            throw ValidationError(std::string("catalog attribute '") + name + "' is empty");
    for (const auto& c : human_count) {
        int n = 0;
        try {
            n = std::stoi(c.value);
        } catch (const std::exception&) {
            throw ValidationError("humanCount catalog value '" + c.value + "' is not an integer");
        }
        if (n < 1)
            throw ValidationError("humanCount catalog values must be >= 1");
    }
    if (templates.empty())
        throw ValidationError("catalog has no sentence templates");
}

PromptCatalog PromptCatalog::from_json(const nlohmann::json& j)
{
    PromptCatalog c;
    c.version = j.value("version", 1);
    const auto& a = j.at("attributes");
    c.human_count = parse_values(a, "humanCount", true);
    c.age_group = parse_values(a, "ageGroup", true);
    c.gender = parse_values(a, "gender", true);
    c.artistic_style = parse_values(a, "artisticStyle", true);
    c.activity = parse_values(a, "activity", true);
    c.setting = parse_values(a, "setting", false);
    c.templates = j.value("templates", std::vector<std::string>{});
    c.validate();
    return c;
}

PromptCatalog PromptCatalog::load(const std::filesystem::path& path)
{
    try {
        return from_json(nlohmann::json::parse(read_text_file(path)));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed catalog " + path.string() + ": " + e.what());
    }
}

nlohmann::json MetaAttributes::to_json() const
{
    nlohmann::json j{{"humanCount", human_count},
                     {"ageGroup", age_group},
                     {"gender", gender},
                     {"artisticStyle", artistic_style},
                     {"activity", activity}};
    j["setting"] = setting ? nlohmann::json(*setting) : nlohmann::json(nullptr);
    return j;
}

MetaAttributes sample_meta_attributes(std::uint64_t seed, const PromptCatalog& catalog)
{
    catalog.validate();
    Rng rng(seed);
    auto pick = [&](const std::vector<CatalogValue>& list) -> const CatalogValue& {
        return list[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(list.size()) - 1))];
    };
    MetaAttributes m;
    m.human_count = std::stoi(pick(catalog.human_count).value);
    m.age_group = pick(catalog.age_group).value;
    m.gender = pick(catalog.gender).value;
    m.artistic_style = pick(catalog.artistic_style).value;
    m.activity = pick(catalog.activity).value;
    if (!catalog.setting.empty())
        m.setting = pick(catalog.setting).value;
    return m;
}

std::string_view to_string(PromptSource source) noexcept
{
    return source == PromptSource::Generated ? "generated" : "realWorld";
}

nlohmann::json PromptRecord::to_json() const
{
    nlohmann::json j{{"promptId", prompt_id}, {"text", text}, {"source", to_string(source)}};
    j["attributes"] = attributes ? attributes->to_json() : nlohmann::json(nullptr);
    j["selfCheckScore"] = self_check_score ? nlohmann::json(*self_check_score) : nlohmann::json(nullptr);
    return j;
}

std::string TemplateGenerator::generate(const MetaAttributes& attrs, const PromptCatalog& catalog, std::uint64_t seed)
{
    catalog.validate();
    const auto& count = require_value(catalog.human_count, std::to_string(attrs.human_count), "humanCount");
    const auto& age = require_value(catalog.age_group, attrs.age_group, "ageGroup");
    const auto& gender = require_value(catalog.gender, attrs.gender, "gender");
    const auto& style = require_value(catalog.artistic_style, attrs.artistic_style, "artisticStyle");
    const auto& activity = require_value(catalog.activity, attrs.activity, "activity");
    std::string setting;
    if (attrs.setting)
        setting = " " + require_value(catalog.setting, *attrs.setting, "setting").phrase;

    Rng rng(seed);
    std::string text =
        catalog.templates[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(catalog.templates.size()) - 1))];
    const bool plural = attrs.human_count > 1;
    std::string capitalized = count.phrase;
    if (!capitalized.empty())
        capitalized[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(capitalized[0])));
    replace_all(text, "{Count}", capitalized);
    replace_all(text, "{count}", count.phrase);
    replace_all(text, "{age}", age.phrase);
    replace_all(text, "{gender}", plural && !gender.plural.empty() ? gender.plural : gender.phrase);
    replace_all(text, "{style}", style.phrase);
    replace_all(text, "{activity}", activity.phrase);
    replace_all(text, " {setting}", setting);
    replace_all(text, "{setting}", setting);
    if (!text.empty())
        text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
    return text;
}

PromptRecord render_prompt(const MetaAttributes& attrs, PromptGenerator& generator, const PromptCatalog& catalog,
                           std::uint64_t seed, const std::string& prompt_id)
{
    std::string text = generator.generate(attrs, catalog, seed);
    const bool blank = std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); });
    if (blank)
        throw GeneratorError(generator.name() + " generator returned empty text", 1);
    PromptRecord r;
    r.prompt_id = prompt_id;
    r.text = std::move(text);
    r.source = PromptSource::Generated;
    r.attributes = attrs;
    r.self_check_score = self_check(r.text, attrs, catalog, 0.0).score;
    return r;
}

SelfCheck self_check(const std::string& text, const MetaAttributes& attrs, const PromptCatalog& catalog,
                     double threshold)
{
    const auto tokens = alnum_tokens(text);
    int total = 0, hit = 0;
    auto check = [&](const std::vector<CatalogValue>& list, const std::string& value) {
        ++total;
        const auto* c = find_value(list, value);
        if (c ? mentions(tokens, *c) : contains_phrase(tokens, value))
            ++hit;
    };
    check(catalog.human_count, std::to_string(attrs.human_count));
    check(catalog.age_group, attrs.age_group);
    check(catalog.gender, attrs.gender);
    check(catalog.artistic_style, attrs.artistic_style);
    check(catalog.activity, attrs.activity);
    if (attrs.setting)
        check(catalog.setting, *attrs.setting);
    const double score = static_cast<double>(hit) / static_cast<double>(total);
    return {score >= threshold, score};
}

GenerationResult generate_prompts(int count, std::uint64_t seed, const PromptCatalog& catalog,
                                  PromptGenerator& generator, double threshold, int max_attempts)
{
    if (count < 0 || max_attempts < 1)
        throw ValidationError("generate_prompts: count must be >= 0 and max attempts >= 1");
    GenerationResult result;
    // Bounded so a generator that never passes cannot loop forever.
    const long max_candidates = 100L * std::max(count, 1);
    for (long i = 0; static_cast<int>(result.records.size()) < count; ++i) {
        if (i >= max_candidates)
            throw Error("prompt generation rejected too many candidates (" + std::to_string(result.rejected) + ")");
        const auto attrs = sample_meta_attributes(derive_seed(seed, static_cast<std::uint64_t>(i)), catalog);
        char id[32];
        std::snprintf(id, sizeof id, "gen-%04zu", result.records.size() + 1);
        bool accepted = false;
        for (int attempt = 0; attempt < max_attempts && !accepted; ++attempt) {
            ++result.total_attempts;
            auto record = render_prompt(attrs, generator, catalog,
                                        derive_seed(seed, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(attempt) + 1),
                                        id);
            if (*record.self_check_score >= threshold) {
                result.records.push_back(std::move(record));
                accepted = true;
            }
        }
        if (!accepted)
            ++result.rejected;
    }
    return result;
}

std::vector<PromptRecord> ingest_prompts(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError(path.string(), "cannot read prompt file");
    std::vector<PromptRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); }))
            continue;
        char id[32];
        std::snprintf(id, sizeof id, "real-%04zu", out.size() + 1);
        PromptRecord r;
        r.prompt_id = id;
        r.text = line;
        r.source = PromptSource::RealWorld;
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<std::string> prompt_words(const std::string& text)
{
    std::vector<std::string> out;
    std::istringstream is(text);
    std::string token;
    while (is >> token) {
        std::size_t b = 0, e = token.size();
        while (b < e && std::ispunct(static_cast<unsigned char>(token[b])))
            ++b;
        while (e > b && std::ispunct(static_cast<unsigned char>(token[e - 1])))
            --e;
        if (b < e)
            out.push_back(lower(token.substr(b, e - b)));
    }
    return out;
}

bool StopwordList::contains(const std::string& w) const
{
    return std::binary_search(words.begin(), words.end(), w);
}

StopwordList StopwordList::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError(path.string(), "cannot read stopword list");
    StopwordList list;
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("#", 0) == 0) {
            const auto pos = line.find("version");
            if (pos != std::string::npos && list.version.empty()) {
                auto v = line.substr(pos + 7);
                v.erase(0, v.find_first_not_of(" :="));
                list.version = v;
            }
            continue;
        }
        auto words = prompt_words(line);
        list.words.insert(list.words.end(), words.begin(), words.end());
    }
    std::sort(list.words.begin(), list.words.end());
    list.words.erase(std::unique(list.words.begin(), list.words.end()), list.words.end());
    return list;
}

nlohmann::json PromptStats::to_json() const
{
    nlohmann::json hist = nlohmann::json::object();
    for (const auto& [k, v] : word_count_histogram)
        hist[std::to_string(k)] = v;
    nlohmann::json top = nlohmann::json::array();
    for (const auto& [w, c] : top_words)
        top.push_back({{"word", w}, {"count", c}});
    return {{"wordCountHistogram", hist}, {"topWordFrequencies", top}};
}

PromptStats prompt_stats(std::span<const PromptRecord> prompts, const StopwordList& stopwords, int top_k)
{
    if (prompts.empty())
        throw ValidationError("prompt_stats needs at least one prompt");
    PromptStats stats;
    std::map<std::string, int> freq;
    for (const auto& p : prompts) {
        const auto words = prompt_words(p.text);
        ++stats.word_count_histogram[static_cast<int>(words.size())];
        for (const auto& w : words)
            if (!stopwords.contains(w))
                ++freq[w];
    }
    stats.top_words.assign(freq.begin(), freq.end());
    std::stable_sort(stats.top_words.begin(), stats.top_words.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    if (top_k >= 0 && stats.top_words.size() > static_cast<std::size_t>(top_k))
        stats.top_words.resize(static_cast<std::size_t>(top_k));
    return stats;
}

std::string prompts_digest(std::span<const PromptRecord> prompts)
{
    std::string canon;
    for (const auto& p : prompts) {
        canon += p.to_json().dump();
        canon += '\n';
    }
    return sha256_hex(canon);
}

BenchmarkReport benchmark_image_sets(const std::map<std::string, std::vector<std::filesystem::path>>& sets,
                                     const Model<double>& model, std::span<const double> area_edges)
{
    if (area_edges.size() < 2)
        throw ValidationError("area histogram needs at least two edges");
    BenchmarkReport report;
    for (const auto& [name, files] : sets) {
        struct Outcome {
            bool ok = false;
            std::string error;
            double relative_area = 0.0;
        };
        std::vector<Outcome> outcomes(files.size());
        parallel_for(static_cast<long>(files.size()), [&](long i) {
            auto& o = outcomes[static_cast<std::size_t>(i)];
            try {
                const auto image = read_png(files[static_cast<std::size_t>(i)]);
                const auto mask = predict_mask(model, image);
                o.relative_area = static_cast<double>(mask.count()) / static_cast<double>(mask.size());
                o.ok = true;
            } catch (const Error& e) {
                o.error = e.what();
            }
        });

        ModelBenchmark mb;
        mb.model_name = name;
        mb.relative_area_histogram.edges.assign(area_edges.begin(), area_edges.end());
        mb.relative_area_histogram.counts.assign(area_edges.size() - 1, 0);
        double area_sum = 0.0;
        for (std::size_t i = 0; i < files.size(); ++i) {
            const auto& o = outcomes[i];
            if (!o.ok) {
                report.skipped.push_back({name, files[i].string(), o.error});
                continue;
            }
            ++mb.image_count;
            if (o.relative_area == 0.0) {
                ++mb.undistorted_count;
            } else {
                mb.relative_area_histogram.add(o.relative_area);
                area_sum += o.relative_area;
            }
        }
        const int distorted = mb.image_count - mb.undistorted_count;
        mb.non_distortion_rate =
            mb.image_count == 0 ? 1.0 : static_cast<double>(mb.undistorted_count) / static_cast<double>(mb.image_count);
        mb.mean_relative_area = distorted == 0 ? 0.0 : area_sum / static_cast<double>(distorted);
        report.models.push_back(std::move(mb));
    }
    return report;
}

BenchmarkReport benchmark_models(const std::map<std::string, std::filesystem::path>& model_image_dirs,
                                 const Model<double>& model, std::span<const double> area_edges)
{
    std::map<std::string, std::vector<std::filesystem::path>> sets;
    BenchmarkReport unreadable;
    for (const auto& [name, dir] : model_image_dirs) {
        auto& files = sets[name];
        std::error_code ec;
        for (std::filesystem::directory_iterator it(dir, ec), end; !ec && it != end; it.increment(ec))
            if (it->is_regular_file() && lower(it->path().extension().string()) == ".png")
                files.push_back(it->path());
        if (ec)
            unreadable.skipped.push_back({name, dir.string(), "cannot list directory: " + ec.message()});
        std::sort(files.begin(), files.end());
    }
    auto report = benchmark_image_sets(sets, model, area_edges);
    report.skipped.insert(report.skipped.begin(), unreadable.skipped.begin(), unreadable.skipped.end());
    return report;
}

nlohmann::json BenchmarkReport::to_json(const Provenance& prov) const
{
    nlohmann::json j{{"schema", "vithd.benchmark"}, {"version", 1}, {"provenance", prov.to_json()}};
    auto& ms = j["models"] = nlohmann::json::array();
    for (const auto& m : models)
        ms.push_back({{"modelName", m.model_name},
                      {"imageCount", m.image_count},
                      {"undistortedCount", m.undistorted_count},
                      {"nonDistortionRate", m.non_distortion_rate},
                      {"meanRelativeArea", m.mean_relative_area},
                      {"relativeAreaHistogram",
                       {{"edges", m.relative_area_histogram.edges}, {"counts", m.relative_area_histogram.counts}}}});
    auto& sk = j["skipped"] = nlohmann::json::array();
    for (const auto& s : skipped)
        sk.push_back({{"modelName", s.model_name}, {"path", s.path}, {"reason", s.reason}});
    j["promptStats"] = prompt_stats ? prompt_stats->to_json() : nlohmann::json(nullptr);
    return j;
}

std::string histogram_csv(const Histogram& h, const Provenance& prov)
{
    std::ostringstream os;
    os << csv_provenance_line(prov) << "binLow,binHigh,count\n";
    for (std::size_t i = 0; i < h.counts.size(); ++i)
        os << h.edges[i] << ',' << h.edges[i + 1] << ',' << h.counts[i] << '\n';
    return os.str();
}

std::string word_count_csv(const PromptStats& stats, const Provenance& prov)
{
    std::ostringstream os;
    os << csv_provenance_line(prov) << "wordCount,prompts\n";
    for (const auto& [k, v] : stats.word_count_histogram)
        os << k << ',' << v << '\n';
    return os.str();
}

std::string top_words_csv(const PromptStats& stats, const Provenance& prov)
{
    std::ostringstream os;
    os << csv_provenance_line(prov) << "word,count\n";
    for (const auto& [w, c] : stats.top_words)
        os << w << ',' << c << '\n';
    return os.str();
}

std::filesystem::path default_asset_dir()
{
    if (const char* env = std::getenv("VITHD_ASSET_DIR"); env && *env)
        return env;
    return VITHD_ASSET_DIR;
}

} // namespace vithd
