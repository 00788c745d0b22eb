#include <doctest.h>

#include <fstream>

#include "generators.hpp"
#include "vithd/config.hpp"
#include "vithd/error.hpp"

using namespace vithd;

namespace {

std::string message_of(const std::string& text)
{
    try {
        parse_config(text, "c.cfg");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

} // namespace

TEST_CASE("empty file gives the documented defaults")
{
    const auto c = parse_config("");
    CHECK(c.train.batch_size == 32);
    CHECK(c.train.weight_decay == 0.01);
    CHECK(c.train.warmup_fraction == 0.1);
    CHECK(c.model.patch_size == 14);
    CHECK(c.master_seed == 20250101);
    CHECK(c.bench.generated_prompt_count == 250);
    CHECK(c.bench.self_check_threshold == 0.8);
    CHECK(c.output_prior_from_data);
    CHECK(c.digest.size() == 64);
    CHECK(c.digest == default_config().digest);
}

TEST_CASE("values, comments, sections and lists are parsed")
{
    const auto c = parse_config("# comment\n[train]\nbatchSize = 8   # trailing\nlrGrid = 1e-3, 5e-4\n\n"
                                "[synth]\nsampleCount=40\nsplitRatio = 8, 1, 1\nmasterSeed = 99\n"
                                "outputPrior = 0.2\ngenerator = llm\n");
    CHECK(c.train.batch_size == 8);
    CHECK(c.train.lr_grid == std::vector<double>{1e-3, 5e-4});
    CHECK(c.synth.sample_count == 40);
    CHECK(c.synth.split_ratio == std::array<double, 3>{8, 1, 1});
    CHECK(c.master_seed == 99);
    CHECK(c.synth.master_seed == 99);
    CHECK(c.model.output_prior == 0.2);
    CHECK_FALSE(c.output_prior_from_data);
    CHECK(c.bench.generator == "llm");
    CHECK(c.digest != default_config().digest);
}

TEST_CASE("patch size is fixed")
{
    const auto msg = message_of("\npatchSize = 16\n");
    CHECK(msg.find("patchSize") != std::string::npos);
    CHECK(msg.find("c.cfg:2") != std::string::npos);
}

TEST_CASE("errors name the key and the line")
{
    auto msg = message_of("batchSize = 4\nbogusKey = 1\n");
    CHECK(msg.find("bogusKey") != std::string::npos);
    CHECK(msg.find(":2") != std::string::npos);

    msg = message_of("batchSize = four\n");
    CHECK(msg.find("batchSize") != std::string::npos);
    CHECK(msg.find(":1") != std::string::npos);

    msg = message_of("\n\nbatchSize = 4\nbatchSize = 5\n");
    CHECK(msg.find("batchSize") != std::string::npos);
    CHECK(msg.find(":4") != std::string::npos);

    msg = message_of("warmupFraction = 1.5\n");
    CHECK(msg.find("warmupFraction") != std::string::npos);

    msg = message_of("no equals sign here\n");
    CHECK(msg.find(":1") != std::string::npos);

    CHECK_THROWS_AS(parse_config("embedDim = 10\nnumHeads = 4\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("generator = gpt\n"), ConfigError);
}

TEST_CASE("same file twice gives the same digest; loading a missing file fails")
{
    test::TempDir tmp("config");
    const auto p = tmp.path / "c.cfg";
    std::ofstream(p) << "sampleCount = 64\nstage1Epochs = 2\n";
    const auto a = load_config(p);
    const auto b = load_config(p);
    CHECK(a.digest == b.digest);
    CHECK(a.digest == a.compute_digest());
    CHECK(a.provenance().config_digest == a.digest);
    CHECK(a.provenance().master_seed == a.master_seed);
    CHECK_THROWS_AS(load_config(tmp.path / "missing.cfg"), IoError);
}

TEST_CASE("echo lists every section")
{
    const auto e = default_config().echo();
    for (const char* k : {"masterSeed", "batchSize", "embedDim", "sampleCount", "outputRoot", "benchPromptCount"})
        CHECK(e.dump().find(k) != std::string::npos);
}
