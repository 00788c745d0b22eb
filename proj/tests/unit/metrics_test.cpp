#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "generators.hpp"
#include "vithd/error.hpp"
#include "vithd/io.hpp"
#include "vithd/metrics.hpp"
#include "vithd/synth.hpp"

using namespace vithd;
using vithd::test::Gen;

namespace {

BinaryMask from_rows(std::initializer_list<const char*> rows)
{
    const int h = static_cast<int>(rows.size());
    const int w = static_cast<int>(std::strlen(*rows.begin()));
    BinaryMask m(w, h);
    int y = 0;
    for (const char* r : rows) {
        for (int x = 0; x < w; ++x)
            if (r[x] == '#')
                m.set(x, y);
        ++y;
    }
    return m;
}

struct Scores {
    double p, r, f1, iou, dice;
};

// Pixel loops written out from the definitions, with the empty-side conventions.
Scores brute_scores(const std::vector<BinaryMask>& pred, const std::vector<BinaryMask>& gt)
{
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        for (int y = 0; y < pred[i].height(); ++y)
            for (int x = 0; x < pred[i].width(); ++x) {
                const bool a = pred[i].at(x, y), b = gt[i].at(x, y);
                tp += a && b;
                fp += a && !b;
                fn += !a && b;
            }
    Scores s{};
    s.p = tp + fp == 0 ? 1.0 : tp / (tp + fp);
    s.r = tp + fn == 0 ? 1.0 : tp / (tp + fn);
    s.f1 = s.p + s.r == 0 ? 0.0 : 2 * s.p * s.r / (s.p + s.r);
    const double uni = tp + fp + fn;
    s.iou = uni == 0 ? 1.0 : tp / uni;
    s.dice = uni == 0 ? 1.0 : 2 * tp / (2 * tp + fp + fn);
    return s;
}

std::vector<BinaryMask> random_set(Gen& g, int n, int w, int h)
{
    std::vector<BinaryMask> out;
    for (int i = 0; i < n; ++i) {
        const double density = test::rand_int(g, 0, 4) == 0 ? 0.0 : test::rand_real(g, 0.0, 0.6);
        out.push_back(test::random_mask(g, w, h, density));
    }
    return out;
}

} // namespace

TEST_CASE("hand-counted 4x4 example")
{
    const auto pred = from_rows({"##..", "##..", "....", "...."});
    const auto gt = from_rows({"....", "##..", "##..", "...."});
    const std::vector<BinaryMask> p{pred}, g{gt};
    const auto prf = pixel_prf(p, g);
    CHECK(prf.precision == 0.5);
    CHECK(prf.recall == 0.5);
    CHECK(prf.f1 == 0.5);
    const auto ov = overlap_metrics(p, g);
    CHECK(ov.iou == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(ov.dice == 0.5);
}

TEST_CASE("identical and disjoint masks")
{
    Gen g(81);
    const auto a = random_set(g, 5, 9, 7);
    const auto same = pixel_prf(a, a);
    CHECK(same.precision == 1.0);
    CHECK(same.recall == 1.0);
    CHECK(same.f1 == 1.0);
    CHECK(overlap_metrics(a, a).iou == 1.0);
    CHECK(overlap_metrics(a, a).dice == 1.0);

    const std::vector<BinaryMask> left{from_rows({"##..", "##.."})};
    const std::vector<BinaryMask> right{from_rows({"..##", "..##"})};
    const auto d = pixel_prf(left, right);
    CHECK(d.precision == 0.0);
    CHECK(d.recall == 0.0);
    CHECK(d.f1 == 0.0);
}

TEST_CASE("empty against empty scores one")
{
    const std::vector<BinaryMask> e{BinaryMask(3, 3), BinaryMask(3, 3)};
    const auto prf = pixel_prf(e, e);
    CHECK(prf.precision == 1.0);
    CHECK(prf.recall == 1.0);
    const auto ov = overlap_metrics(e, e);
    CHECK(ov.iou == 1.0);
    CHECK(ov.dice == 1.0);
}

TEST_CASE("dimension mismatch and empty input are rejected")
{
    const std::vector<BinaryMask> a{BinaryMask(4, 4)}, b{BinaryMask(4, 5)};
    CHECK_THROWS_AS(pixel_prf(a, b), DimensionMismatchError);
    CHECK_THROWS_AS(overlap_metrics(a, b), DimensionMismatchError);
    const std::vector<BinaryMask> two{BinaryMask(4, 4), BinaryMask(4, 4)};
    CHECK_THROWS_AS(pixel_prf(a, two), DimensionMismatchError);
    const std::vector<BinaryMask> none;
    CHECK_THROWS_AS(pixel_prf(none, none), ValidationError);
    CHECK_THROWS_AS(image_level_prf(none, none), ValidationError);
}

TEST_CASE("image-level examples")
{
    const BinaryMask on = from_rows({"#.", ".."});
    const BinaryMask off(2, 2);
    // Predicted positive {A, B}, truly positive {B, C}.
    const std::vector<BinaryMask> pred{on, on, off}, gt{off, on, on};
    const auto prf = image_level_prf(pred, gt);
    CHECK(prf.precision == 0.5);
    CHECK(prf.recall == 0.5);
    CHECK(prf.f1 == 0.5);

    const std::vector<BinaryMask> all_on{on, on, on};
    CHECK(image_level_prf(all_on, std::vector<BinaryMask>{on, on, on}).recall == 1.0);
    const std::vector<BinaryMask> all_off{off, off, off};
    CHECK(image_level_prf(all_off, gt).recall == 0.0);
}

TEST_CASE("random datasets match the brute-force oracle")
{
    Gen g(82);
    for (int t = 0; t < 300; ++t) {
        const int n = test::rand_int(g, 1, 10);
        const int w = test::rand_int(g, 1, 16), h = test::rand_int(g, 1, 16);
        const auto pred = random_set(g, n, w, h);
        const auto gt = random_set(g, n, w, h);
        const auto want = brute_scores(pred, gt);
        const auto prf = pixel_prf(pred, gt);
        const auto ov = overlap_metrics(pred, gt);
        REQUIRE(std::abs(prf.precision - want.p) <= 1e-12);
        REQUIRE(std::abs(prf.recall - want.r) <= 1e-12);
        REQUIRE(std::abs(prf.f1 - want.f1) <= 1e-12);
        REQUIRE(std::abs(ov.iou - want.iou) <= 1e-12);
        REQUIRE(std::abs(ov.dice - want.dice) <= 1e-12);

        // Image level, via a second brute-force pass.
        double tp = 0, fp = 0, fn = 0;
        for (int i = 0; i < n; ++i) {
            const bool a = pred[i].any(), b = gt[i].any();
            tp += a && b;
            fp += a && !b;
            fn += !a && b;
        }
        const double ip = tp + fp == 0 ? 1.0 : tp / (tp + fp);
        const double ir = tp + fn == 0 ? 1.0 : tp / (tp + fn);
        const double if1 = ip + ir == 0 ? 0.0 : 2 * ip * ir / (ip + ir);
        const auto img = image_level_prf(pred, gt);
        REQUIRE(std::abs(img.precision - ip) <= 1e-12);
        REQUIRE(std::abs(img.recall - ir) <= 1e-12);
        REQUIRE(std::abs(img.f1 - if1) <= 1e-12);

        // F1 equals Dice and Dice = 2 IoU / (1 + IoU) on the same global counts.
        const auto c = pixel_confusion(pred, gt);
        if (c.true_positives > 0)
            REQUIRE(prf.f1 == ov.dice);
        REQUIRE(std::abs(ov.dice - 2 * ov.iou / (1 + ov.iou)) <= 1e-15);
        REQUIRE(c.total() == static_cast<std::uint64_t>(n) * w * h);
    }
}

TEST_CASE("metrics are invariant under reordering")
{
    Gen g(83);
    for (int t = 0; t < 50; ++t) {
        const int n = test::rand_int(g, 2, 8);
        auto pred = random_set(g, n, 6, 5);
        auto gt = random_set(g, n, 6, 5);
        const auto a = pixel_prf(pred, gt);
        const auto ai = image_level_prf(pred, gt);
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), g);
        std::vector<BinaryMask> p2, g2;
        for (int i : order) {
            p2.push_back(pred[i]);
            g2.push_back(gt[i]);
        }
        const auto b = pixel_prf(p2, g2);
        const auto bi = image_level_prf(p2, g2);
        CHECK(a.f1 == b.f1);
        CHECK(a.precision == b.precision);
        CHECK(ai.f1 == bi.f1);
        CHECK(overlap_metrics(pred, gt).iou == overlap_metrics(p2, g2).iou);
    }
}

TEST_CASE("adding a correct positive pixel never lowers recall, IoU or Dice")
{
    Gen g(84);
    for (int t = 0; t < 200; ++t) {
        std::vector<BinaryMask> pred{test::random_mask(g, 8, 8, 0.3)};
        const std::vector<BinaryMask> gt{test::random_mask(g, 8, 8, 0.4)};
        std::vector<std::pair<int, int>> missed;
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                if (gt[0].at(x, y) && !pred[0].at(x, y))
                    missed.emplace_back(x, y);
        if (missed.empty())
            continue;
        const auto before_r = pixel_prf(pred, gt).recall;
        const auto before = overlap_metrics(pred, gt);
        const auto [x, y] = missed[static_cast<std::size_t>(test::rand_int(g, 0, static_cast<int>(missed.size()) - 1))];
        pred[0].set(x, y);
        CHECK(pixel_prf(pred, gt).recall >= before_r);
        const auto after = overlap_metrics(pred, gt);
        CHECK(after.iou >= before.iou);
        CHECK(after.dice >= before.dice);
    }
}

TEST_CASE("bounding boxes: IoU is one exactly for rectangular components")
{
    Gen g(85);
    for (int t = 0; t < 200; ++t) {
        const bool rectangles = t % 2 == 0;
        BinaryMask gt(24, 24);
        if (rectangles) {
            // Separated rectangles, so every component is its own box.
            const int count = test::rand_int(g, 1, 3);
            for (int k = 0; k < count; ++k) {
                const int x0 = k * 8 + test::rand_int(g, 0, 2), y0 = test::rand_int(g, 0, 10);
                const int w = test::rand_int(g, 1, 5), h = test::rand_int(g, 1, 12);
                for (int y = y0; y < y0 + h; ++y)
                    for (int x = x0; x < x0 + w; ++x)
                        gt.set(x, y);
            }
        } else {
            // An L shape never fills its bounding box.
            const int x0 = test::rand_int(g, 0, 10), y0 = test::rand_int(g, 0, 10);
            const int len = test::rand_int(g, 2, 10);
            for (int i = 0; i < len; ++i) {
                gt.set(x0, y0 + i);
                gt.set(x0 + i, y0 + len - 1);
            }
        }
        const auto boxes = mask_to_boxes(gt);
        const std::vector<BinaryMask> pred{boxes_to_mask(boxes, 24, 24)}, truth{gt};
        const double iou = overlap_metrics(pred, truth).iou;
        CHECK(iou <= 1.0);
        if (rectangles)
            CHECK(iou == 1.0);
        else
            CHECK(iou < 1.0);
        CHECK(pixel_prf(pred, truth).recall == 1.0);
    }
}

TEST_CASE("box files round-trip through json")
{
    const std::vector<Box> boxes{{1, 2, 5, 6}, {0, 0, 1, 1}};
    const auto j = boxes_to_json("s-0001", boxes);
    CHECK(j.at("schema") == "vithd.boxes");
    const auto back = boxes_from_json(j);
    REQUIRE(back.size() == 2);
    CHECK(back[0] == boxes[0]);
    CHECK(back[1] == boxes[1]);
}

TEST_CASE("evaluate a directory of external predictions")
{
    test::TempDir tmp("metrics");
    SynthConfig sc;
    sc.sample_count = 12;
    sc.image_width = sc.image_height = 28;
    sc.split_ratio = {1, 1, 1};
    const Provenance prov;
    const auto manifest = build_corpus(sc, tmp.path / "corpus", prov, OutputPolicy{});
    const auto test_entries = manifest.entries_for(Split::Test);
    REQUIRE(test_entries.size() == 4);

    // Oracle predictor as PNG masks, and a box-list predictor bounding every consensus component.
    const auto pred_dir = tmp.path / "pred";
    const auto box_dir = tmp.path / "boxes";
    for (const auto* e : test_entries) {
        const auto truth = read_mask_png(manifest.root / e->consensus_mask_path);
        write_mask_png(pred_dir / (e->sample_id + ".png"), truth, prov, OutputPolicy{});
        write_text_file(box_dir / (e->sample_id + ".boxes.json"),
                        boxes_to_json(e->sample_id, mask_to_boxes(truth)).dump(), OutputPolicy{});
    }
    const auto boxed = evaluate(DirectoryPredictor(box_dir, manifest.width, manifest.height), manifest, Split::Test);
    CHECK(boxed.pixel.recall == 1.0);
    CHECK(boxed.area.iou <= 1.0);
    CHECK(boxed.image.f1 == 1.0);

    DirectoryPredictor source(pred_dir, manifest.width, manifest.height);
    const auto report = evaluate(source, manifest, Split::Test);
    CHECK(report.pixel.f1 == 1.0);
    CHECK(report.pixel.precision == 1.0);
    CHECK(report.area.iou == 1.0);
    CHECK(report.area.dice == 1.0);
    CHECK(report.image.f1 == 1.0);
    REQUIRE(report.per_image.size() == 4);
    CHECK(std::is_sorted(report.per_image.begin(), report.per_image.end(),
                         [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; }));
    for (const auto& pi : report.per_image) {
        CHECK(pi.iou == 1.0);
        CHECK(pi.predicted_positive == pi.gt_positive);
    }

    const auto csv = per_image_csv(report, prov);
    CHECK(csv.rfind("# ", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);

    // Remove one prediction: the error names the sample.
    const auto& victim = test_entries[0]->sample_id;
    std::filesystem::remove(pred_dir / (victim + ".png"));
    try {
        evaluate(source, manifest, Split::Test);
        FAIL("expected a missing prediction");
    } catch (const MissingPredictionError& e) {
        CHECK(e.sample_id() == victim);
        CHECK(std::string(e.what()).find(victim) != std::string::npos);
    }
}
