#include <doctest.h>

#include <fstream>
#include <iostream>
#include <sstream>

#include "cli.hpp"
#include "generators.hpp"
#include "vithd/io.hpp"
#include "vithd/synth.hpp"

using namespace vithd;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = 0;
    std::string out, err;
};

Run run(std::vector<std::string> args)
{
    args.insert(args.begin(), "vithd");
    std::vector<const char*> argv;
    for (const auto& a : args)
        argv.push_back(a.c_str());
    std::ostringstream out, err;
    auto* old_out = std::cout.rdbuf(out.rdbuf());
    auto* old_err = std::cerr.rdbuf(err.rdbuf());
    Run r;
    r.code = run_command(static_cast<int>(argv.size()), argv.data());
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

nlohmann::json read_json(const fs::path& p)
{
    return nlohmann::json::parse(read_text_file(p));
}

std::string write_config(const fs::path& dir)
{
    const auto p = dir / "c.cfg";
    std::ofstream(p) << "# small end-to-end run\n"
                        "outputRoot = "
                     << (dir / "out").string()
                     << "\nsampleCount = 24\nimageWidth = 28\nimageHeight = 28\nsplitRatio = 2, 1, 1\n"
                        "embedDim = 8\ndepth = 1\nnumHeads = 2\nheadHiddenDim = 16\nffnDim = 16\n"
                        "batchSize = 4\nstage1Epochs = 1\nstage2MaxEpochs = 2\nfixedLr = 1e-3\n"
                        "benchPromptCount = 20\n";
    return p.string();
}

} // namespace

TEST_CASE("unknown commands and bad flags exit 1 with usage")
{
    auto r = run({"frobnicate"});
    CHECK(r.code == 1);
    CHECK(r.err.find("Usage") != std::string::npos);
    CHECK(run({"train", "--no-such-flag"}).code == 1);
    CHECK(run({}).code == 1);
}

TEST_CASE("invalid configuration exits 1 naming the key")
{
    test::TempDir tmp("cli-badcfg");
    std::ofstream(tmp.path / "bad.cfg") << "patchSize = 16\n";
    const auto r = run({"corpus", "gen", "--config", (tmp.path / "bad.cfg").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("patchSize") != std::string::npos);
}

TEST_CASE("end-to-end pipeline through the command line")
{
    test::TempDir tmp("cli");
    const auto cfg = write_config(tmp.path);
    const fs::path out = tmp.path / "out";

    auto r = run({"corpus", "gen", "--config", cfg});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.find("configDigest: ") != std::string::npos);

    SUBCASE("outputs are write-once")
    {
        const auto again = run({"corpus", "gen", "--config", cfg});
        CHECK(again.code == 2);
        CHECK(again.err.find("--force") != std::string::npos);
        CHECK(run({"corpus", "gen", "--config", cfg, "--force"}).code == 0);
    }

    SUBCASE("corpus stats agree with a recount from the manifest")
    {
        REQUIRE(run({"corpus", "stats", "--config", cfg}).code == 0);
        const auto stats = read_json(out / "stats" / "corpus_stats.json");
        const auto manifest = read_manifest(out / "corpus");
        int positive = 0;
        for (const auto& e : manifest.entries)
            positive += read_mask_png(manifest.root / e.consensus_mask_path).any() ? 1 : 0;
        CHECK(stats.at("sampleCount") == 24);
        CHECK(stats.at("positiveRate").get<double>() == static_cast<double>(positive) / 24.0);
        CHECK(stats.at("manifestPositiveRate").get<double>() == stats.at("positiveRate").get<double>());
        CHECK(stats.at("provenance").at("configDigest").get<std::string>().size() == 64);
    }

    SUBCASE("consolidate reproduces the stored consensus masks")
    {
        REQUIRE(run({"consolidate", "--config", cfg}).code == 0);
        const auto manifest = read_manifest(out / "corpus");
        for (const auto& e : manifest.entries)
            CHECK(read_mask_png(out / "consolidated" / "masks" / (e.sample_id + ".png")) ==
                  read_mask_png(manifest.root / e.consensus_mask_path));
        CHECK(fs::exists(out / "consolidated" / "regions.jsonl"));
    }

    SUBCASE("train then eval is reproducible bit for bit")
    {
        REQUIRE(run({"train", "--config", cfg}).code == 0);
        const auto ckpt = (out / "train" / "tst" / "model.vthd").string();
        REQUIRE(run({"eval", "--config", cfg, "--checkpoint", ckpt, "--name", "a"}).code == 0);
        REQUIRE(run({"train", "--config", cfg, "--name", "again"}).code == 0);
        const auto ckpt2 = (out / "train" / "again" / "model.vthd").string();
        REQUIRE(run({"eval", "--config", cfg, "--checkpoint", ckpt2, "--name", "b"}).code == 0);
        CHECK(sha256_file(ckpt) == sha256_file(ckpt2));
        CHECK(read_text_file(out / "train" / "tst" / "history.jsonl") ==
              read_text_file(out / "train" / "again" / "history.jsonl"));
        CHECK(read_text_file(out / "eval" / "a" / "metrics.json") == read_text_file(out / "eval" / "b" / "metrics.json"));
        CHECK(read_text_file(out / "eval" / "a" / "per_image.csv") ==
              read_text_file(out / "eval" / "b" / "per_image.csv"));
        const auto m = read_json(out / "eval" / "a" / "metrics.json");
        CHECK(m.at("imageCount") == 6);

        REQUIRE(run({"train", "--config", cfg, "--pixel-only", "--scalar-bits", "32"}).code == 0);
        CHECK(run({"train", "--config", cfg, "--name", "x", "--scalar-bits", "16"}).code == 1);

        REQUIRE(run({"bench", "run", "--config", cfg, "--checkpoint", ckpt, "--corpus-split", "test"}).code == 0);
        const auto report = read_json(out / "bench" / "run" / "report.json");
        CHECK(report.at("models").at(0).at("modelName") == "corpus-test");
        CHECK(report.at("models").at(0).at("imageCount") == 6);
        CHECK(fs::exists(out / "bench" / "run" / "area_histogram_corpus-test.csv"));

        REQUIRE(run({"report", "--config", cfg}).code == 0);
        CHECK(fs::exists(out / "report" / "summary.json"));
        CHECK(fs::exists(out / "report" / "summary.md"));
    }

    SUBCASE("eval with a missing prediction exits 1 naming the sample")
    {
        const auto manifest = read_manifest(out / "corpus");
        const auto tests = manifest.entries_for(Split::Test);
        const fs::path pred = tmp.path / "pred";
        for (std::size_t i = 1; i < tests.size(); ++i)
            write_mask_png(pred / (tests[i]->sample_id + ".png"),
                           read_mask_png(manifest.root / tests[i]->consensus_mask_path), Provenance{}, OutputPolicy{});
        const auto miss = run({"eval", "--config", cfg, "--predictions", pred.string()});
        CHECK(miss.code == 1);
        CHECK(miss.err.find(tests[0]->sample_id) != std::string::npos);

        write_mask_png(pred / (tests[0]->sample_id + ".png"),
                       read_mask_png(manifest.root / tests[0]->consensus_mask_path), Provenance{}, OutputPolicy{});
        REQUIRE(run({"eval", "--config", cfg, "--predictions", pred.string(), "--name", "oracle"}).code == 0);
        const auto m = read_json(out / "eval" / "oracle" / "metrics.json");
        CHECK(m.at("pixel").at("f1") == 1.0);
        CHECK(m.at("area").at("iou") == 1.0);
        CHECK(run({"eval", "--config", cfg}).code == 1);
    }

    SUBCASE("bench prompts writes every record with provenance")
    {
        REQUIRE(run({"bench", "prompts", "--config", cfg}).code == 0);
        const auto lines = read_jsonl(out / "bench" / "prompts.jsonl");
        REQUIRE(lines.size() == 1 + 20 + 250);
        CHECK(lines[0].at("generatedCount") == 20);
        CHECK(lines[0].at("realWorldCount") == 250);
        CHECK(lines[0].at("provenance").at("masterSeed") == 20250101);
        const auto stats = read_json(out / "bench" / "prompt_stats.json");
        CHECK(stats.at("promptCount") == 270);
    }
}
