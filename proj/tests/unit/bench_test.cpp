#include <doctest.h>

#include <atomic>
#include <cmath>
#include <fstream>
#include <set>
#include <thread>

// Must match the library's build of the HTTP header.
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "generators.hpp"
#include "vithd/bench.hpp"
#include "vithd/error.hpp"
#include "vithd/io.hpp"

using namespace vithd;

namespace {

nlohmann::json value(const std::string& v, const std::string& surface, std::vector<std::string> synonyms = {})
{
    return {{"value", v}, {"surface", surface}, {"synonyms", synonyms}};
}

PromptCatalog singleton_catalog()
{
    nlohmann::json j{{"version", 1},
                     {"attributes",
                      {{"humanCount", {value("1", "one")}},
                       {"ageGroup", {value("adult", "adult", {"grown"})}},
                       {"gender", {{{"value", "woman"}, {"surface", "woman"}, {"plural", "women"}}}},
                       {"artisticStyle", {value("watercolor", "watercolor")}},
                       {"activity", {value("dancing", "dancing")}}}},
                     {"templates", {"A {style} image of {count} {age} {gender} {activity}."}}};
    return PromptCatalog::from_json(j);
}

const PromptCatalog& shipped_catalog()
{
    static const PromptCatalog c = PromptCatalog::load(default_asset_dir() / "bench_catalog.json");
    return c;
}

std::filesystem::path write_file(const std::filesystem::path& p, const std::string& text)
{
    std::ofstream(p) << text;
    return p;
}

class FixedGenerator final : public PromptGenerator {
public:
    explicit FixedGenerator(std::string text) : text_(std::move(text)) {}
    std::string generate(const MetaAttributes&, const PromptCatalog&, std::uint64_t) override { return text_; }
    std::string name() const override { return "fixed"; }

private:
    std::string text_;
};

// Local chat-completions stand-in on an ephemeral port.
struct FakeLlm {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::atomic<int> hits{0};

    explicit FakeLlm(std::function<void(httplib::Response&)> reply)
    {
        server.Post("/v1/chat/completions", [this, reply](const httplib::Request&, httplib::Response& res) {
            ++hits;
            reply(res);
        });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~FakeLlm()
    {
        server.stop();
        thread.join();
    }
    LlmClientOptions options() const
    {
        LlmClientOptions o;
        o.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
        o.timeout_seconds = 5;
        return o;
    }
};

std::string chat_reply(const std::string& content)
{
    return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump();
}

} // namespace

TEST_CASE("singleton catalog yields the single combination")
{
    const auto c = singleton_catalog();
    for (std::uint64_t seed : {0ULL, 1ULL, 999ULL}) {
        const auto a = sample_meta_attributes(seed, c);
        CHECK(a.human_count == 1);
        CHECK(a.age_group == "adult");
        CHECK(a.gender == "woman");
        CHECK(a.artistic_style == "watercolor");
        CHECK(a.activity == "dancing");
        CHECK_FALSE(a.setting.has_value());
    }
}

TEST_CASE("attribute draws are seed-deterministic")
{
    for (std::uint64_t seed = 0; seed < 50; ++seed)
        CHECK(sample_meta_attributes(seed, shipped_catalog()) == sample_meta_attributes(seed, shipped_catalog()));
}

TEST_CASE("style frequencies stay within three sigma of uniform")
{
    auto j = nlohmann::json{{"attributes",
                             {{"humanCount", {value("1", "one")}},
                              {"ageGroup", {value("adult", "adult")}},
                              {"gender", {value("man", "man")}},
                              {"artisticStyle", {value("a", "a"), value("b", "b"), value("c", "c")}},
                              {"activity", {value("running", "running")}}}},
                            {"templates", {"{count} {age} {gender} {activity} {style}"}}};
    const auto c = PromptCatalog::from_json(j);
    std::map<std::string, int> counts;
    const int n = 10000;
    for (int i = 0; i < n; ++i)
        ++counts[sample_meta_attributes(static_cast<std::uint64_t>(i) * 7919 + 3, c).artistic_style];
    const double sigma = std::sqrt(n * (1.0 / 3) * (2.0 / 3));
    REQUIRE(counts.size() == 3);
    for (const auto& [k, v] : counts)
        CHECK(std::abs(v - n / 3.0) <= 3 * sigma);
}

TEST_CASE("empty catalog lists are rejected")
{
    auto j = nlohmann::json{{"attributes",
                             {{"humanCount", nlohmann::json::array()},
                              {"ageGroup", {value("adult", "adult")}},
                              {"gender", {value("man", "man")}},
                              {"artisticStyle", {value("a", "a")}},
                              {"activity", {value("running", "running")}}}},
                            {"templates", {"{count}"}}};
    CHECK_THROWS_AS(PromptCatalog::from_json(j), ValidationError);
}

TEST_CASE("template prompt mentions all five surface forms and passes the self-check")
{
    const auto c = singleton_catalog();
    TemplateGenerator gen;
    const auto attrs = sample_meta_attributes(1, c);
    const auto rec = render_prompt(attrs, gen, c, 1, "gen-0000");
    for (const char* word : {"one", "adult", "woman", "watercolor", "dancing"})
        CHECK(rec.text.find(word) != std::string::npos);
    CHECK(rec.self_check_score == 1.0);
    CHECK(rec.source == PromptSource::Generated);
    CHECK(rec.attributes == attrs);
}

TEST_CASE("shipped templates always pass the self-check")
{
    TemplateGenerator gen;
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        const auto attrs = sample_meta_attributes(seed, shipped_catalog());
        const auto text = gen.generate(attrs, shipped_catalog(), seed);
        const auto sc = self_check(text, attrs, shipped_catalog());
        INFO(text);
        CHECK(sc.score == 1.0);
        CHECK_FALSE(std::islower(static_cast<unsigned char>(text[0])));
    }
}

TEST_CASE("self-check scores the fraction of mentioned attributes")
{
    const auto c = singleton_catalog();
    const auto attrs = sample_meta_attributes(1, c);
    // Missing the style and the activity: 3 of 5.
    const auto partial = self_check("One adult woman standing still.", attrs, c);
    CHECK(partial.score == doctest::Approx(0.6).epsilon(1e-15));
    CHECK_FALSE(partial.passed);
    CHECK(self_check("nothing relevant", attrs, c, 0.0).passed);
    // Synonyms count, substrings inside other words do not.
    CHECK(self_check("one grown woman dancing in watercolor", attrs, c).score == 1.0);
    CHECK(self_check("someone adulterated womanly watercolors dancingly", attrs, c).score == 0.0);
    CHECK(self_check("ONE ADULT WOMAN, DANCING; WATERCOLOR!", attrs, c).score == 1.0);
}

TEST_CASE("empty generator output is an error")
{
    const auto c = singleton_catalog();
    FixedGenerator blank("   ");
    CHECK_THROWS_AS(render_prompt(sample_meta_attributes(1, c), blank, c, 1, "gen-0000"), GeneratorError);
}

TEST_CASE("generation loop rejects candidates that never pass")
{
    const auto c = singleton_catalog();
    FixedGenerator weak("one adult woman");
    CHECK_THROWS_AS(generate_prompts(3, 1, c, weak, 0.8, 5), Error);
    const auto ok = generate_prompts(3, 1, c, weak, 0.6, 5);
    CHECK(ok.records.size() == 3);
    CHECK(ok.rejected == 0);
    for (const auto& r : ok.records)
        CHECK(*r.self_check_score >= 0.6);
}

TEST_CASE("250 generated prompts are deterministic and mostly distinct")
{
    TemplateGenerator gen;
    const auto a = generate_prompts(250, 20250101, shipped_catalog(), gen);
    const auto b = generate_prompts(250, 20250101, shipped_catalog(), gen);
    REQUIRE(a.records.size() == 250);
    CHECK(prompts_digest(a.records) == prompts_digest(b.records));
    std::set<std::string> texts;
    std::set<std::string> ids;
    for (const auto& r : a.records) {
        texts.insert(r.text);
        ids.insert(r.prompt_id);
        CHECK(*r.self_check_score >= 0.8);
    }
    CHECK(texts.size() >= 240);
    CHECK(ids.size() == 250);
}

TEST_CASE("LLM client: success, empty text, server errors")
{
    const auto c = singleton_catalog();
    const auto attrs = sample_meta_attributes(1, c);
    {
        FakeLlm llm([](httplib::Response& res) {
            res.set_content(chat_reply("One adult woman dancing, watercolor."), "application/json");
        });
        LlmGenerator gen(llm.options());
        const auto rec = render_prompt(attrs, gen, c, 3, "gen-0000");
        CHECK(rec.self_check_score == 1.0);
    }
    {
        FakeLlm llm([](httplib::Response& res) { res.set_content(chat_reply(""), "application/json"); });
        LlmGenerator gen(llm.options());
        CHECK_THROWS_AS(gen.generate(attrs, c, 3), GeneratorError);
    }
    {
        FakeLlm llm([](httplib::Response& res) { res.status = 503; });
        auto opts = llm.options();
        opts.max_attempts = 3;
        LlmGenerator gen(opts);
        try {
            gen.generate(attrs, c, 3);
            FAIL("expected a generator error");
        } catch (const GeneratorError& e) {
            CHECK(e.attempts() == 3);
            CHECK(e.retryable());
            CHECK(llm.hits == 3);
        }
    }
}

TEST_CASE("ingestion keeps order and skips blank lines")
{
    test::TempDir tmp("ingest");
    const auto p = write_file(tmp.path / "p.txt", "first prompt\n\nsecond prompt\nthird prompt\n");
    const auto recs = ingest_prompts(p);
    REQUIRE(recs.size() == 3);
    CHECK(recs[0].text == "first prompt");
    CHECK(recs[2].text == "third prompt");
    for (const auto& r : recs) {
        CHECK(r.source == PromptSource::RealWorld);
        CHECK_FALSE(r.attributes.has_value());
        CHECK_FALSE(r.self_check_score.has_value());
    }
    CHECK(ingest_prompts(write_file(tmp.path / "empty.txt", "")).empty());
    CHECK_THROWS_AS(ingest_prompts(tmp.path / "absent.txt"), IoError);
    CHECK(ingest_prompts(default_asset_dir() / "real_prompts.txt").size() == 250);
}

TEST_CASE("prompt statistics")
{
    test::TempDir tmp("stats");
    const auto sw = StopwordList::load(write_file(tmp.path / "sw.txt", "# test stopwords version 3\na\nthe\nof\n"));
    CHECK(sw.version == "3");
    CHECK(sw.contains("the"));

    auto rec = [](std::string text) {
        PromptRecord r;
        r.text = std::move(text);
        return r;
    };
    const std::vector<PromptRecord> one{rec("a man")};
    CHECK(prompt_stats(one, sw).word_count_histogram == std::map<int, int>{{2, 1}});

    const std::vector<PromptRecord> three{rec("red fox jumps high"), rec("Blue, sky; is wide!"),
                                          rec("one two three four five six seven")};
    CHECK(prompt_stats(three, sw).word_count_histogram == std::map<int, int>{{4, 2}, {7, 1}});

    const std::vector<PromptRecord> stop_only{rec("the a of"), rec("Man man dog")};
    const auto st = prompt_stats(stop_only, sw);
    CHECK(st.word_count_histogram == std::map<int, int>{{3, 2}});
    REQUIRE(st.top_words.size() == 2);
    CHECK(st.top_words[0] == std::pair<std::string, int>{"man", 2});
    CHECK(st.top_words[1] == std::pair<std::string, int>{"dog", 1});

    CHECK(prompt_words("  \"Hello,\" World... -- ok ") == std::vector<std::string>{"hello", "world", "ok"});
    CHECK_THROWS_AS(prompt_stats(std::vector<PromptRecord>{}, sw), ValidationError);
}

TEST_CASE("benchmark with an always-negative head")
{
    test::TempDir tmp("bench");
    ModelConfig mc;
    mc.embed_dim = 8;
    mc.depth = 1;
    mc.num_heads = 2;
    mc.head_hidden_dim = 16;
    mc.ffn_dim = 16;
    auto model = init_model<double>(mc);
    const auto& l = model.layout();
    for (int i = 0; i < mc.head_hidden_dim; ++i)
        model.params()[l.head_w2 + static_cast<std::size_t>(i)] = 0.0;
    model.params()[l.head_b2] = -10.0;

    test::Gen g(91);
    const auto dir = tmp.path / "sd";
    for (int i = 0; i < 4; ++i)
        write_png(dir / ("img" + std::to_string(i) + ".png"), test::random_image(g, 20 + i * 7, 30), Provenance{},
                  OutputPolicy{});
    write_file(dir / "broken.png", "not a png");
    std::filesystem::create_directories(tmp.path / "empty");

    const auto edges = default_area_edges();
    const auto report = benchmark_models({{"sd", dir}, {"none", tmp.path / "empty"}}, model, edges);
    REQUIRE(report.models.size() == 2);
    const auto& none = report.models[0].model_name == "none" ? report.models[0] : report.models[1];
    const auto& sd = report.models[0].model_name == "sd" ? report.models[0] : report.models[1];
    CHECK(sd.image_count == 4);
    CHECK(sd.non_distortion_rate == 1.0);
    CHECK(sd.relative_area_histogram.total() == 0);
    CHECK(none.image_count == 0);
    CHECK(none.non_distortion_rate == 1.0);
    REQUIRE(report.skipped.size() == 1);
    CHECK(report.skipped[0].path.find("broken.png") != std::string::npos);

    // Flip the head to always-positive: every image is distorted over its whole area.
    model.params()[l.head_b2] = 10.0;
    const auto pos = benchmark_models({{"sd", dir}}, model, edges);
    CHECK(pos.models[0].non_distortion_rate == 0.0);
    CHECK(pos.models[0].relative_area_histogram.total() == 4);
    CHECK(pos.models[0].mean_relative_area == 1.0);
    CHECK(pos.models[0].non_distortion_rate +
              static_cast<double>(pos.models[0].image_count - pos.models[0].undistorted_count) /
                  pos.models[0].image_count ==
          1.0);
}
