#include <doctest.h>

#include <numeric>

#include "generators.hpp"
#include "vithd/consolidation.hpp"
#include "vithd/error.hpp"

using namespace vithd;
using vithd::test::Gen;

namespace {

BinaryMask majority_oracle(const BinaryMask& a, const BinaryMask& b, const BinaryMask& c)
{
    BinaryMask out(a.width(), a.height());
    for (int y = 0; y < a.height(); ++y)
        for (int x = 0; x < a.width(); ++x) {
            int votes = 0;
            for (const BinaryMask* m : {&a, &b, &c})
                votes += m->at(x, y) ? 1 : 0;
            if (votes >= 2)
                out.set(x, y);
        }
    return out;
}

BinaryMask cons(const BinaryMask& a, const BinaryMask& b, const BinaryMask& c)
{
    const std::vector<BinaryMask> v{a, b, c};
    return consensus_mask(v);
}

PolygonAnnotation rect(double x0, double y0, double x1, double y1, DistortionType t, int who)
{
    return {Polygon{{{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}}, t, who};
}

AnnotatedSample sample_with_area(int set_pixels)
{
    AnnotatedSample s;
    s.consensus_mask = BinaryMask(10, 10);
    for (int i = 0; i < set_pixels; ++i)
        s.consensus_mask.set(i % 10, i / 10);
    return s;
}

} // namespace

TEST_CASE("distortion type names round trip")
{
    for (auto t : {DistortionType::Proliferation, DistortionType::Absence, DistortionType::Deformation,
                   DistortionType::Fusion, DistortionType::Uncertain})
        CHECK(parse_distortion_type(to_string(t)) == t);
    CHECK_FALSE(parse_distortion_type("sparkle").has_value());
}

TEST_CASE("consensus: unanimity, lone annotator and two-of-three")
{
    Gen g(21);
    const auto m = test::random_mask(g, 9, 7, 0.4);
    const BinaryMask empty(9, 7);
    CHECK(cons(m, m, m) == m);
    CHECK(cons(m, empty, empty) == empty);
    CHECK(cons(m, m, empty) == m);

    BinaryMask a(3, 3), b(3, 3), c(3, 3);
    a.set(1, 1);
    b.set(1, 1);
    CHECK(cons(a, b, c).at(1, 1));
}

TEST_CASE("consensus rejects mismatched shapes and wrong arity")
{
    CHECK_THROWS_AS(cons(BinaryMask(3, 3), BinaryMask(3, 4), BinaryMask(3, 3)), DimensionMismatchError);
    const std::vector<BinaryMask> two{BinaryMask(3, 3), BinaryMask(3, 3)};
    CHECK_THROWS_AS(consensus_mask(two), ValidationError);
}

TEST_CASE("consensus equals the per-pixel majority and is monotone")
{
    Gen g(22);
    for (int t = 0; t < 500; ++t) {
        const int w = test::rand_int(g, 1, 16), h = test::rand_int(g, 1, 16);
        const auto a = test::random_mask(g, w, h, test::rand_real(g, 0, 1));
        const auto b = test::random_mask(g, w, h, test::rand_real(g, 0, 1));
        const auto c = test::random_mask(g, w, h, test::rand_real(g, 0, 1));
        const auto base = cons(a, b, c);
        REQUIRE(base == majority_oracle(a, b, c));
        auto grown = a;
        grown |= test::random_mask(g, w, h, 0.2);
        const auto after = cons(grown, b, c);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (base.at(x, y))
                    REQUIRE(after.at(x, y));
    }
}

TEST_CASE("annotator mask is the union of rasterized polygons")
{
    CHECK(annotator_mask({}, 6, 6).count() == 0);
    const auto p = rect(0, 0, 3, 3, DistortionType::Fusion, 0);
    const std::vector<PolygonAnnotation> one{p};
    CHECK(annotator_mask(one, 6, 6) == rasterize_polygon(p.polygon, 6, 6));
    const auto q = rect(2, 2, 5, 5, DistortionType::Fusion, 0);
    const std::vector<PolygonAnnotation> two{p, q};
    const auto u = annotator_mask(two, 6, 6);
    CHECK(u.count() == 9 + 9 - 1);
    CHECK(u.count() <= rasterize_polygon(p.polygon, 6, 6).count() + rasterize_polygon(q.polygon, 6, 6).count());
}

TEST_CASE("consensus types follow the all-three-agree rule")
{
    auto typed = [](DistortionType a, std::optional<DistortionType> b, DistortionType c) {
        std::array<AnnotationSet, kAnnotatorCount> sets;
        sets[0].push_back(rect(1, 1, 5, 5, a, 0));
        if (b)
            sets[1].push_back(rect(1, 1, 5, 5, *b, 1));
        sets[2].push_back(rect(2, 2, 6, 6, c, 2));
        std::vector<BinaryMask> masks;
        for (const auto& s : sets)
            masks.push_back(annotator_mask(s, 8, 8));
        return consensus_types(sets, consensus_mask(masks));
    };
    auto all = typed(DistortionType::Proliferation, DistortionType::Proliferation, DistortionType::Proliferation);
    REQUIRE(all.size() == 1);
    CHECK(all[0].type == DistortionType::Proliferation);

    auto split = typed(DistortionType::Fusion, DistortionType::Fusion, DistortionType::Deformation);
    REQUIRE(split.size() == 1);
    CHECK(split[0].type == DistortionType::Uncertain);

    // Two annotators agree and the third drew nothing there.
    std::array<AnnotationSet, kAnnotatorCount> sets;
    sets[0].push_back(rect(1, 1, 5, 5, DistortionType::Absence, 0));
    sets[1].push_back(rect(1, 1, 5, 5, DistortionType::Absence, 1));
    std::vector<BinaryMask> masks;
    for (const auto& s : sets)
        masks.push_back(annotator_mask(s, 8, 8));
    const auto two = consensus_types(sets, consensus_mask(masks));
    REQUIRE(two.size() == 1);
    CHECK(two[0].type == DistortionType::Uncertain);
}

TEST_CASE("a concrete region type was used by at least two annotators on that component")
{
    Gen g(23);
    const DistortionType kinds[] = {DistortionType::Proliferation, DistortionType::Absence,
                                    DistortionType::Deformation, DistortionType::Fusion};
    for (int t = 0; t < 200; ++t) {
        std::array<AnnotationSet, kAnnotatorCount> sets;
        for (int k = 0; k < kAnnotatorCount; ++k) {
            const int n = test::rand_int(g, 0, 3);
            for (int i = 0; i < n; ++i) {
                const double x = test::rand_real(g, 0, 12), y = test::rand_real(g, 0, 12);
                sets[k].push_back(rect(x, y, x + test::rand_real(g, 1, 5), y + test::rand_real(g, 1, 5),
                                       kinds[test::rand_int(g, 0, 1)], k));
            }
        }
        std::vector<BinaryMask> masks;
        for (const auto& s : sets)
            masks.push_back(annotator_mask(s, 16, 16));
        const auto consensus = consensus_mask(masks);
        const auto regions = consensus_types(sets, consensus);
        std::size_t covered = 0;
        for (const auto& r : regions) {
            covered += r.region.pixel_count;
            if (r.type == DistortionType::Uncertain)
                continue;
            int users = 0;
            for (const auto& s : sets) {
                bool used = false;
                for (const auto& a : s) {
                    if (a.type != r.type)
                        continue;
                    const auto pm = rasterize_polygon(a.polygon, 16, 16);
                    for (const auto& p : r.region.pixels)
                        used = used || pm.at(p.x, p.y);
                }
                users += used ? 1 : 0;
            }
            CHECK(users >= 2);
        }
        CHECK(covered == consensus.count());
    }
}

TEST_CASE("histogram bins are half-open with a closed last bin")
{
    auto h = Histogram::uniform(4, 0.0, 1.0);
    CHECK(h.add(0.0));
    CHECK(h.add(0.25));
    CHECK(h.add(1.0));
    CHECK_FALSE(h.add(1.5));
    CHECK(h.counts == std::vector<std::size_t>{1, 1, 0, 1});
    CHECK(h.total() == 3);
}

TEST_CASE("dataset stats: hand-counted example and degenerate inputs")
{
    std::vector<AnnotatedSample> samples{sample_with_area(0), sample_with_area(10), sample_with_area(10),
                                         sample_with_area(50)};
    const std::vector<double> edges{0.0, 0.2, 1.0};
    const auto stats = dataset_stats(samples, edges);
    CHECK(stats.positive_rate == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(stats.relative_area_histogram.counts == std::vector<std::size_t>{2, 1});

    std::vector<AnnotatedSample> negatives{sample_with_area(0), sample_with_area(0)};
    const auto neg = dataset_stats(negatives, edges);
    CHECK(neg.positive_rate == 0.0);
    CHECK(neg.relative_area_histogram.total() == 0);

    CHECK_THROWS_AS(dataset_stats(std::span<const AnnotatedSample>{}, edges), ValidationError);
    CHECK(default_area_edges().size() == 21);
}

TEST_CASE("type distribution sums to one when regions exist")
{
    std::vector<AnnotatedSample> samples(3);
    const DistortionType kinds[] = {DistortionType::Fusion, DistortionType::Fusion, DistortionType::Absence};
    for (int i = 0; i < 3; ++i) {
        for (int k = 0; k < kAnnotatorCount; ++k)
            samples[i].annotation_sets[k].push_back(rect(1, 1, 4, 4, kinds[i], k));
        samples[i].annotation_sets[0].push_back(rect(8, 8, 10, 10, DistortionType::Absence, 0));
        samples[i].annotation_sets[1].push_back(rect(8, 8, 10, 10, DistortionType::Fusion, 1));
        consolidate(samples[i], 12, 12);
    }
    const auto stats = dataset_stats(samples, default_area_edges());
    CHECK(stats.region_count == 6);
    double sum = 0;
    for (const auto& [t, f] : stats.type_distribution)
        sum += f;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(stats.type_distribution.at(DistortionType::Fusion) == doctest::Approx(2.0 / 6));
    CHECK(stats.type_distribution.at(DistortionType::Uncertain) == doctest::Approx(3.0 / 6));
}
