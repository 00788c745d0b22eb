#include "cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <omp.h>

#include "vithd/bench.hpp"
#include "vithd/checkpoint.hpp"
#include "vithd/config.hpp"
#include "vithd/consolidation.hpp"
#include "vithd/io.hpp"
#include "vithd/metrics.hpp"
#include "vithd/rng.hpp"
#include "vithd/synth.hpp"
#include "vithd/trainer.hpp"

namespace vithd {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CommonOptions {
    std::string config_path;
    bool force = false;
    int jobs = 1;
};

struct Context {
    PipelineConfig config;
    Provenance prov;
    OutputPolicy policy;
    fs::path root;
};

Context make_context(const CommonOptions& o)
{
    if (o.jobs < 1)
        throw ValidationError("--jobs must be >= 1");
    omp_set_num_threads(o.jobs);
    PipelineConfig cfg = o.config_path.empty() ? default_config() : load_config(o.config_path);
    std::cout << "configDigest: " << cfg.digest << "\n";
    Context ctx{cfg, cfg.provenance(), OutputPolicy(o.force), cfg.output_root()};
    return ctx;
}

void write_json(const fs::path& path, const json& j, const OutputPolicy& policy)
{
    write_text_file(path, j.dump(2) + "\n", policy);
    std::cout << "wrote " << path.string() << "\n";
}

void write_text(const fs::path& path, const std::string& text, const OutputPolicy& policy)
{
    write_text_file(path, text, policy);
    std::cout << "wrote " << path.string() << "\n";
}

json histogram_json(const Histogram& h)
{
    return {{"edges", h.edges}, {"counts", h.counts}};
}

fs::path asset_or(const std::string& configured, const char* bundled)
{
    return configured.empty() ? default_asset_dir() / bundled : fs::path(configured);
}

Split parse_split_arg(const std::string& name)
{
    const auto s = parse_split(name);
    if (!s)
        throw ValidationError("unknown split '" + name + "' (expected train, val or test)");
    return *s;
}

// corpus gen ---------------------------------------------------------------

void cmd_corpus_gen(const Context& ctx)
{
    const auto manifest = build_corpus(ctx.config.synth, ctx.config.corpus_root(), ctx.prov, ctx.policy);
    std::cout << "corpus: " << manifest.entries.size() << " samples (train " << manifest.split_counts.at(Split::Train)
              << ", val " << manifest.split_counts.at(Split::Val) << ", test " << manifest.split_counts.at(Split::Test)
              << ") in " << manifest.root.string() << "\n";
}

// corpus stats -------------------------------------------------------------

std::vector<AnnotatedSample> load_consolidated(const CorpusManifest& manifest)
{
    std::vector<AnnotatedSample> samples;
    samples.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries) {
        int w = 0, h = 0;
        auto s = read_annotations(manifest.root / e.annotations_path, w, h);
        consolidate(s, w, h);
        s.split = e.split;
        s.image_ref = e.image_path;
        samples.push_back(std::move(s));
    }
    return samples;
}

void cmd_corpus_stats(const Context& ctx)
{
    const auto manifest = read_manifest(ctx.config.corpus_root());
    const auto samples = load_consolidated(manifest);
    const auto edges = default_area_edges();
    const auto stats = dataset_stats(samples, edges);
    const auto manifest_positive = std::count_if(manifest.entries.begin(), manifest.entries.end(),
                                                 [](const ManifestEntry& e) { return e.positive; });
    json types = json::object();
    for (const auto& [type, share] : stats.type_distribution)
        types[std::string(to_string(type))] = share;
    json j{{"schema", "vithd.corpusStats"},
           {"version", 1},
           {"provenance", ctx.prov.to_json()},
           {"sampleCount", stats.sample_count},
           {"positiveCount", stats.positive_count},
           {"positiveRate", stats.positive_rate},
           {"manifestPositiveRate",
            static_cast<double>(manifest_positive) / static_cast<double>(manifest.entries.size())},
           {"regionCount", stats.region_count},
           {"typeDistribution", types},
           {"relativeAreaHistogram", histogram_json(stats.relative_area_histogram)},
           {"splitCounts",
            {{"train", manifest.split_counts.at(Split::Train)},
             {"val", manifest.split_counts.at(Split::Val)},
             {"test", manifest.split_counts.at(Split::Test)}}}};
    write_json(ctx.root / "stats" / "corpus_stats.json", j, ctx.policy);
    write_text(ctx.root / "stats" / "relative_area_histogram.csv",
               histogram_csv(stats.relative_area_histogram, ctx.prov), ctx.policy);
    std::cout << "positiveRate: " << stats.positive_rate << "\n";
}

// consolidate --------------------------------------------------------------

void cmd_consolidate(const Context& ctx, const std::string& annotations_dir)
{
    std::vector<fs::path> files;
    if (annotations_dir.empty()) {
        const auto manifest = read_manifest(ctx.config.corpus_root());
        for (const auto& e : manifest.entries)
            files.push_back(manifest.root / e.annotations_path);
    } else {
        std::error_code ec;
        for (fs::directory_iterator it(annotations_dir, ec), end; !ec && it != end; it.increment(ec))
            if (it->is_regular_file() && it->path().extension() == ".jsonl")
                files.push_back(it->path());
        if (ec)
            throw IoError(annotations_dir, "cannot list annotation directory");
        std::sort(files.begin(), files.end());
    }
    const fs::path out = ctx.root / "consolidated";
    std::vector<json> lines{{{"schema", "vithd.regions"}, {"version", 1}, {"provenance", ctx.prov.to_json()}}};
    for (const auto& f : files) {
        int w = 0, h = 0;
        auto s = read_annotations(f, w, h);
        consolidate(s, w, h);
        write_mask_png(out / "masks" / (s.sample_id + ".png"), s.consensus_mask, ctx.prov, ctx.policy);
        json regions = json::array();
        for (const auto& r : s.typed_regions) {
            const auto& b = r.region.bounding_box;
            regions.push_back({{"bbox", {b.x0, b.y0, b.x1, b.y1}},
                               {"pixelCount", r.region.pixel_count},
                               {"type", to_string(r.type)}});
        }
        lines.push_back({{"sampleId", s.sample_id}, {"width", w}, {"height", h}, {"regions", regions}});
    }
    write_text(out / "regions.jsonl", to_jsonl(lines), ctx.policy);
    std::cout << "consolidated " << files.size() << " samples\n";
}

// train --------------------------------------------------------------------

std::string history_jsonl(const TrainHistory& h, const Context& ctx, const std::string& mode)
{
    const json hj = h.to_json();
    std::vector<json> lines{{{"schema", "vithd.history"},
                             {"version", 1},
                             {"provenance", ctx.prov.to_json()},
                             {"mode", mode},
                             {"chosenLr", hj["chosenLr"]},
                             {"stageBoundaries", hj["stageBoundaries"]},
                             {"bestEpochIndex", hj["bestEpochIndex"]},
                             {"grid", hj["grid"]}}};
    for (auto r : hj["steps"]) {
        r["kind"] = "step";
        lines.push_back(r);
    }
    for (auto r : hj["epochs"]) {
        r["kind"] = "epoch";
        lines.push_back(r);
    }
    return to_jsonl(lines);
}

void cmd_train(const Context& ctx, bool pixel_only, std::string name, int scalar_bits)
{
    if (scalar_bits != 32 && scalar_bits != 64)
        throw ValidationError("--scalar-bits must be 32 or 64");
    if (name.empty())
        name = pixel_only ? "plt" : "tst";
    const fs::path out = ctx.root / "train" / name;
    const fs::path ckpt = out / "model.vthd";
    const fs::path hist = out / "history.jsonl";
    // Fail before the expensive part if outputs would be clobbered.
    ctx.policy.prepare(ckpt);
    ctx.policy.prepare(hist);

    const auto manifest = read_manifest(ctx.config.corpus_root());
    const auto train = load_labeled_split(manifest, Split::Train);
    const auto val = load_labeled_split(manifest, Split::Val);
    PipelineConfig cfg = ctx.config;
    if (cfg.output_prior_from_data)
        cfg.model.output_prior = positive_pixel_rate(train);
    TrainResult result;
    if (pixel_only) {
        const double lr = cfg.fixed_lr > 0.0 ? cfg.fixed_lr : grid_search_lr(cfg.model, cfg.train, train, val);
        result = pixel_only_train(cfg.model, cfg.train, train, val, lr);
    } else {
        result = two_stage_train(cfg.model, cfg.train, train, val, cfg.fixed_lr);
    }
    const auto width = scalar_bits == 64 ? ScalarWidth::F64 : ScalarWidth::F32;
    save_checkpoint(ckpt, result.model, width, ctx.prov, OutputPolicy(true));
    std::cout << "wrote " << ckpt.string() << "\n";
    write_text(hist, history_jsonl(result.history, ctx, pixel_only ? "pixelOnly" : "twoStage"), OutputPolicy(true));
    std::cout << "chosenLr: " << result.history.chosen_lr << "\n";
    if (!result.history.epochs.empty()) {
        const int best = result.history.best_epoch_index >= 0 ? result.history.best_epoch_index
                                                              : static_cast<int>(result.history.epochs.size()) - 1;
        std::cout << "valPixelF1: " << result.history.epochs[static_cast<std::size_t>(best)].val_pixel_f1 << "\n";
    }
}

// eval ---------------------------------------------------------------------

void cmd_eval(const Context& ctx, const std::string& checkpoint, const std::string& predictions,
              const std::string& split_name, std::string name)
{
    if (checkpoint.empty() == predictions.empty())
        throw ValidationError("eval needs exactly one of --checkpoint or --predictions");
    const Split split = parse_split_arg(split_name);
    if (name.empty())
        name = "eval";
    const fs::path out = ctx.root / "eval" / name;
    const auto manifest = read_manifest(ctx.config.corpus_root());
    std::unique_ptr<PredictionSource> source;
    if (!checkpoint.empty())
        source = std::make_unique<ModelPredictor>(load_checkpoint(checkpoint).model<double>());
    else
        source = std::make_unique<DirectoryPredictor>(predictions, manifest.width, manifest.height);
    const auto report = evaluate(*source, manifest, split);
    auto j = report_to_json(report, ctx.prov);
    j["split"] = to_string(split);
    j["source"] = source->describe();
    write_json(out / "metrics.json", j, ctx.policy);
    write_text(out / "per_image.csv", per_image_csv(report, ctx.prov), ctx.policy);
    std::cout << "pixelF1: " << report.pixel.f1 << " IoU: " << report.area.iou << " Dice: " << report.area.dice
              << " imageF1: " << report.image.f1 << "\n";
}

// bench prompts ------------------------------------------------------------

void cmd_bench_prompts(const Context& ctx)
{
    const auto& b = ctx.config.bench;
    const auto catalog = PromptCatalog::load(asset_or(b.catalog_path, "bench_catalog.json"));
    const auto stopwords = StopwordList::load(asset_or(b.stopwords_path, "stopwords.txt"));
    std::unique_ptr<PromptGenerator> generator;
    if (b.generator == "llm") {
        auto options = LlmClientOptions::from_environment();
        if (!options)
            throw ConfigError("generator = llm requires VITHD_LLM_ENDPOINT to be set");
        generator = std::make_unique<LlmGenerator>(*options);
    } else {
        generator = std::make_unique<TemplateGenerator>();
    }
    const std::uint64_t seed = derive_seed(ctx.config.master_seed, hash_label("bench-prompts"));
    auto generated = generate_prompts(b.generated_prompt_count, seed, catalog, *generator, b.self_check_threshold,
                                      b.max_refine_attempts);
    auto real = ingest_prompts(asset_or(b.real_prompts_path, "real_prompts.txt"));

    std::vector<PromptRecord> all = std::move(generated.records);
    const std::size_t generated_count = all.size();
    all.insert(all.end(), real.begin(), real.end());
    const std::string digest = prompts_digest(all);
    const auto stats = prompt_stats(all, stopwords, b.top_words);

    std::vector<json> lines{{{"schema", "vithd.prompts"},
                             {"version", 1},
                             {"provenance", ctx.prov.to_json()},
                             {"generator", generator->name()},
                             {"generatedCount", generated_count},
                             {"realWorldCount", real.size()},
                             {"rejectedCandidates", generated.rejected},
                             {"renderAttempts", generated.total_attempts},
                             {"promptsDigest", digest}}};
    for (const auto& p : all)
        lines.push_back(p.to_json());
    const fs::path out = ctx.root / "bench";
    write_text(out / "prompts.jsonl", to_jsonl(lines), ctx.policy);
    json sj = stats.to_json();
    sj["schema"] = "vithd.promptStats";
    sj["version"] = 1;
    sj["provenance"] = ctx.prov.to_json();
    sj["stopwordsVersion"] = stopwords.version;
    sj["promptCount"] = all.size();
    write_json(out / "prompt_stats.json", sj, ctx.policy);
    write_text(out / "word_counts.csv", word_count_csv(stats, ctx.prov), ctx.policy);
    write_text(out / "top_words.csv", top_words_csv(stats, ctx.prov), ctx.policy);
    std::cout << "prompts: " << all.size() << " (" << generated_count << " generated, " << real.size()
              << " real-world)\npromptsDigest: " << digest << "\n";
}

// bench run ----------------------------------------------------------------

std::string safe_name(std::string s)
{
    for (auto& c : s)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_')
            c = '_';
    return s;
}

void cmd_bench_run(const Context& ctx, const std::string& checkpoint, const std::vector<std::string>& image_sets,
                   const std::string& corpus_split)
{
    if (checkpoint.empty())
        throw ValidationError("bench run needs --checkpoint");
    if (image_sets.empty() && corpus_split.empty())
        throw ValidationError("bench run needs at least one --images name=dir or --corpus-split");
    std::map<std::string, std::vector<fs::path>> sets;
    std::map<std::string, fs::path> dirs;
    for (const auto& spec : image_sets) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
            throw ValidationError("--images expects name=directory, got '" + spec + "'");
        if (!dirs.emplace(spec.substr(0, eq), spec.substr(eq + 1)).second)
            throw ValidationError("duplicate model name in --images: " + spec.substr(0, eq));
    }
    const auto model = load_checkpoint(checkpoint).model<double>();
    const auto edges = default_area_edges();
    BenchmarkReport report = benchmark_models(dirs, model, edges);
    if (!corpus_split.empty()) {
        const Split split = parse_split_arg(corpus_split);
        const auto manifest = read_manifest(ctx.config.corpus_root());
        std::vector<fs::path> files;
        for (const auto* e : manifest.entries_for(split))
            files.push_back(manifest.root / e->image_path);
        const std::string name = "corpus-" + std::string(to_string(split));
        if (dirs.count(name))
            throw ValidationError("model name '" + name + "' is reserved for --corpus-split");
        auto extra = benchmark_image_sets({{name, files}}, model, edges);
        report.models.insert(report.models.end(), extra.models.begin(), extra.models.end());
        report.skipped.insert(report.skipped.end(), extra.skipped.begin(), extra.skipped.end());
    }
    const fs::path out = ctx.root / "bench" / "run";
    write_json(out / "report.json", report.to_json(ctx.prov), ctx.policy);
    for (const auto& m : report.models) {
        write_text(out / ("area_histogram_" + safe_name(m.model_name) + ".csv"),
                   histogram_csv(m.relative_area_histogram, ctx.prov), ctx.policy);
        std::cout << m.model_name << ": " << m.image_count << " images, nonDistortionRate " << m.non_distortion_rate
                  << "\n";
    }
    for (const auto& s : report.skipped)
        std::cout << "skipped " << s.path << ": " << s.reason << "\n";
}

// report -------------------------------------------------------------------

std::optional<json> try_read_json(const fs::path& p)
{
    if (!fs::exists(p))
        return std::nullopt;
    return json::parse(read_text_file(p));
}

void cmd_report(const Context& ctx)
{
    json summary{{"schema", "vithd.summary"}, {"version", 1}, {"provenance", ctx.prov.to_json()}, {"config", ctx.config.echo()}};
    std::ostringstream md;
    md << "# Pipeline summary\n\nconfigDigest `" << ctx.prov.config_digest << "`, codeVersion " << ctx.prov.code_version
       << ", masterSeed " << ctx.prov.master_seed << "\n";

    if (auto stats = try_read_json(ctx.root / "stats" / "corpus_stats.json")) {
        summary["corpus"] = *stats;
        md << "\n## Corpus\n\nsamples " << (*stats)["sampleCount"] << ", positive rate " << (*stats)["positiveRate"]
           << ", regions " << (*stats)["regionCount"] << "\n";
    }

    json trains = json::object();
    json evals = json::object();
    for (const auto& [dir, target] : {std::pair{"train", &trains}, std::pair{"eval", &evals}}) {
        const fs::path base = ctx.root / dir;
        if (!fs::is_directory(base))
            continue;
        std::vector<fs::path> runs;
        for (const auto& e : fs::directory_iterator(base))
            if (e.is_directory())
                runs.push_back(e.path());
        std::sort(runs.begin(), runs.end());
        for (const auto& run : runs) {
            if (std::string(dir) == "train") {
                if (fs::exists(run / "history.jsonl"))
                    (*target)[run.filename().string()] = read_jsonl(run / "history.jsonl").front();
            } else if (auto m = try_read_json(run / "metrics.json")) {
                (*target)[run.filename().string()] = *m;
            }
        }
    }
    if (!trains.empty()) {
        summary["training"] = trains;
        md << "\n## Training\n\n| run | mode | chosen lr |\n|---|---|---|\n";
        for (const auto& [name, h] : trains.items())
            md << "| " << name << " | " << h.value("mode", "") << " | " << h["chosenLr"] << " |\n";
    }
    if (!evals.empty()) {
        summary["evaluation"] = evals;
        md << "\n## Evaluation\n\n| run | pixel P | pixel R | pixel F1 | IoU | Dice | image F1 |\n"
              "|---|---|---|---|---|---|---|\n";
        for (const auto& [name, m] : evals.items())
            md << "| " << name << " | " << m["pixel"]["precision"] << " | " << m["pixel"]["recall"] << " | "
               << m["pixel"]["f1"] << " | " << m["area"]["iou"] << " | " << m["area"]["dice"] << " | "
               << m["image"]["f1"] << " |\n";
    }
    if (auto ps = try_read_json(ctx.root / "bench" / "prompt_stats.json")) {
        summary["prompts"] = *ps;
        md << "\n## Prompts\n\n" << (*ps)["promptCount"] << " prompts\n";
    }
    if (auto br = try_read_json(ctx.root / "bench" / "run" / "report.json")) {
        summary["benchmark"] = *br;
        md << "\n## Benchmark\n\n| model | images | non-distortion rate | mean relative area |\n|---|---|---|---|\n";
        for (const auto& m : (*br)["models"])
            md << "| " << m["modelName"].get<std::string>() << " | " << m["imageCount"] << " | "
               << m["nonDistortionRate"] << " | " << m["meanRelativeArea"] << " |\n";
    }
    write_json(ctx.root / "report" / "summary.json", summary, ctx.policy);
    write_text(ctx.root / "report" / "summary.md", md.str(), ctx.policy);
}

void add_common(CLI::App* cmd, CommonOptions& o)
{
    cmd->add_option("--config", o.config_path, "Pipeline configuration file (defaults apply when omitted)");
    cmd->add_flag("--force", o.force, "Overwrite existing outputs");
    cmd->add_option("--jobs", o.jobs, "Worker threads (1 keeps runs bitwise reproducible)");
}

} // namespace

int run_command(int argc, const char* const* argv)
{
    CLI::App app{"Synthetic human-distortion detection pipeline", "vithd"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kCodeVersion));
    CommonOptions common;

    auto* corpus = app.add_subcommand("corpus", "Synthetic corpus commands");
    corpus->require_subcommand(1);
    auto* corpus_gen = corpus->add_subcommand("gen", "Generate, annotate, consolidate and split the corpus");
    auto* corpus_stats = corpus->add_subcommand("stats", "Dataset statistics of the generated corpus");

    auto* consolidate_cmd = app.add_subcommand("consolidate", "Recompute consensus masks and typed regions");
    std::string annotations_dir;
    consolidate_cmd->add_option("--annotations", annotations_dir, "Directory of annotation files (default: corpus)");

    auto* train = app.add_subcommand("train", "Train a model on the corpus");
    bool pixel_only = false;
    std::string train_name;
    int scalar_bits = 64;
    train->add_flag("--pixel-only", pixel_only, "Pixel-level training only (baseline)");
    train->add_option("--name", train_name, "Run name under <outputRoot>/train");
    train->add_option("--scalar-bits", scalar_bits, "Checkpoint scalar width: 32 or 64");

    auto* eval = app.add_subcommand("eval", "Score a checkpoint or a prediction directory");
    std::string checkpoint, predictions, split = "test", eval_name;
    eval->add_option("--checkpoint", checkpoint, "Model checkpoint");
    eval->add_option("--predictions", predictions, "Directory of <sampleId>.png or <sampleId>.boxes.json files");
    eval->add_option("--split", split, "train, val or test");
    eval->add_option("--name", eval_name, "Run name under <outputRoot>/eval");

    auto* bench = app.add_subcommand("bench", "Benchmark harness");
    bench->require_subcommand(1);
    auto* bench_prompts = bench->add_subcommand("prompts", "Generate and ingest benchmark prompts");
    auto* bench_run = bench->add_subcommand("run", "Score generated-image directories");
    std::string bench_checkpoint, corpus_split;
    std::vector<std::string> image_sets;
    bench_run->add_option("--checkpoint", bench_checkpoint, "Model checkpoint");
    bench_run->add_option("--images", image_sets, "name=directory of PNG images (repeatable)");
    bench_run->add_option("--corpus-split", corpus_split, "Also score the corpus images of this split");

    auto* report = app.add_subcommand("report", "Summarize every artifact under the output root");

    for (auto* cmd : {corpus_gen, corpus_stats, consolidate_cmd, train, eval, bench_prompts, bench_run, report})
        add_common(cmd, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return 1;
    }

    try {
        const Context ctx = make_context(common);
        if (corpus_gen->parsed())
            cmd_corpus_gen(ctx);
        else if (corpus_stats->parsed())
            cmd_corpus_stats(ctx);
        else if (consolidate_cmd->parsed())
            cmd_consolidate(ctx, annotations_dir);
        else if (train->parsed())
            cmd_train(ctx, pixel_only, train_name, scalar_bits);
        else if (eval->parsed())
            cmd_eval(ctx, checkpoint, predictions, split, eval_name);
        else if (bench_prompts->parsed())
            cmd_bench_prompts(ctx);
        else if (bench_run->parsed())
            cmd_bench_run(ctx, bench_checkpoint, image_sets, corpus_split);
        else if (report->parsed())
            cmd_report(ctx);
        return 0;
    } catch (const MissingPredictionError& e) {
        std::cerr << "error: missing prediction for sample " << e.sample_id() << ": " << e.what() << "\n";
        return e.exit_code();
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

} // namespace vithd
