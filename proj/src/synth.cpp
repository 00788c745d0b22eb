#include "vithd/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include "vithd/error.hpp"
#include "vithd/parallel.hpp"
#include "vithd/rng.hpp"

namespace vithd {

void SynthConfig::validate() const
{
    if (sample_count < 1)
        throw ConfigError("sampleCount must be >= 1");
    if (image_width < 14 || image_height < 14 || image_width % 14 != 0 || image_height % 14 != 0)
        throw ConfigError("imageSize must be a positive multiple of 14");
    if (!(positive_fraction >= 0.0 && positive_fraction <= 1.0))
        throw ConfigError("positiveFraction must lie in [0, 1]");
    double mix = 0.0;
    for (double m : type_mix) {
        if (!(m >= 0.0))
            throw ConfigError("typeMix entries must be non-negative");
        mix += m;
    }
    if (std::abs(mix - 1.0) > 1e-9)
        throw ConfigError("typeMix must sum to 1");
    if (!(annotator_noise.vertex_jitter_std >= 0.0) || !std::isfinite(annotator_noise.vertex_jitter_std))
        throw ConfigError("vertexJitterStd must be finite and >= 0");
    if (!(annotator_noise.miss_probability >= 0.0 && annotator_noise.miss_probability <= 1.0))
        throw ConfigError("missProbability must lie in [0, 1]");
    double ratio = 0.0;
    for (double r : split_ratio) {
        if (!(r >= 0.0))
            throw ConfigError("split ratios must be non-negative");
        ratio += r;
    }
    if (!(ratio > 0.0))
        throw ConfigError("split ratios must not all be zero");
}

nlohmann::json SynthConfig::to_json() const
{
    return {{"sampleCount", sample_count},
            {"imageWidth", image_width},
            {"imageHeight", image_height},
            {"positiveFraction", positive_fraction},
            {"typeMix", type_mix},
            {"vertexJitterStd", annotator_noise.vertex_jitter_std},
            {"missProbability", annotator_noise.miss_probability},
            {"splitRatio", split_ratio},
            {"masterSeed", master_seed}};
}

std::string sample_id_for(int index)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%06d", index);
    return buf;
}

namespace {

struct Vec2 {
    double x, y;
};

Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }

Vec2 direction(double angle_rad) { return {std::sin(angle_rad), std::cos(angle_rad)}; } // 0 = straight down

Vec2 rotate(Vec2 v, double angle_rad)
{
    const double c = std::cos(angle_rad), s = std::sin(angle_rad);
    return {c * v.x - s * v.y, s * v.x + c * v.y};
}

double deg(double d) { return d * std::numbers::pi / 180.0; }

struct Color {
    double r, g, b;
};

/// A capsule with equal endpoints is a disc.
struct Stroke {
    Vec2 a, b;
    double radius;
    Color color;
    bool erase = false; // paint background instead of color
};

enum class Part { LeftHand, RightHand, LeftArm, RightArm, LeftLeg, RightLeg, Head };
constexpr std::array<Part, 7> kParts = {Part::LeftHand, Part::RightHand, Part::LeftArm, Part::RightArm,
                                        Part::LeftLeg,  Part::RightLeg,  Part::Head};

struct Limb {
    Vec2 root, joint, end;
    double radius;
};

struct Hand {
    Vec2 palm;
    Vec2 dir;
    double palm_radius;
    double digit_length;
    double digit_radius;
    std::array<double, 5> digit_angles;
};

struct Figure {
    double unit; // canvas scale: 1.0 == 112 px
    Vec2 head;
    double head_radius;
    Vec2 torso_top, torso_bottom;
    double torso_radius;
    std::array<Limb, 2> arms;
    std::array<Limb, 2> legs;
    std::array<Hand, 2> hands;
    std::array<Vec2, 2> feet_tips;
    Color skin, cloth, trousers;
};

double dist_to_segment(Vec2 p, Vec2 a, Vec2 b)
{
    const Vec2 ab = b - a;
    const double len2 = ab.x * ab.x + ab.y * ab.y;
    double t = len2 > 0 ? ((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const Vec2 q = a + t * ab;
    return std::hypot(p.x - q.x, p.y - q.y);
}

class Canvas {
public:
    Canvas(int w, int h) : w_(w), h_(h), data_(static_cast<std::size_t>(3) * w * h, 0.0), bg_(data_) {}

    void set_background(std::vector<double> bg)
    {
        bg_ = std::move(bg);
        data_ = bg_;
    }

    void paint(const Stroke& s)
    {
        const int x0 = std::max(0, static_cast<int>(std::floor(std::min(s.a.x, s.b.x) - s.radius - 1)));
        const int x1 = std::min(w_ - 1, static_cast<int>(std::ceil(std::max(s.a.x, s.b.x) + s.radius + 1)));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min(s.a.y, s.b.y) - s.radius - 1)));
        const int y1 = std::min(h_ - 1, static_cast<int>(std::ceil(std::max(s.a.y, s.b.y) + s.radius + 1)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                if (dist_to_segment({x + 0.5, y + 0.5}, s.a, s.b) > s.radius)
                    continue;
                const std::size_t i = (static_cast<std::size_t>(y) * w_ + x) * 3;
                if (s.erase) {
                    data_[i] = bg_[i];
                    data_[i + 1] = bg_[i + 1];
                    data_[i + 2] = bg_[i + 2];
                } else {
                    data_[i] = s.color.r;
                    data_[i + 1] = s.color.g;
                    data_[i + 2] = s.color.b;
                }
            }
    }

    /// Two-colour checker blended over the masked pixels.
    void texture(const BinaryMask& region)
    {
        static constexpr Color a{235, 40, 205};
        static constexpr Color b{30, 225, 235};
        for (int y = 0; y < h_; ++y)
            for (int x = 0; x < w_; ++x) {
                if (!region.at(x, y))
                    continue;
                const Color& t = ((x / 3 + y / 3) % 2 == 0) ? a : b;
                const std::size_t i = (static_cast<std::size_t>(y) * w_ + x) * 3;
                data_[i] = 0.4 * data_[i] + 0.6 * t.r;
                data_[i + 1] = 0.4 * data_[i + 1] + 0.6 * t.g;
                data_[i + 2] = 0.4 * data_[i + 2] + 0.6 * t.b;
            }
    }

    RgbImage quantize(Rng& rng, double noise_std) const
    {
        RgbImage img(w_, h_);
        for (std::size_t i = 0; i < data_.size(); ++i) {
            const double v = data_[i] + (noise_std > 0 ? normal(rng, 0.0, noise_std) : 0.0);
            img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
        return img;
    }

private:
    int w_, h_;
    std::vector<double> data_;
    std::vector<double> bg_;
};

Color jitter_color(Rng& rng, Color c, double amount)
{
    return {std::clamp(c.r + uniform(rng, -amount, amount), 0.0, 255.0),
            std::clamp(c.g + uniform(rng, -amount, amount), 0.0, 255.0),
            std::clamp(c.b + uniform(rng, -amount, amount), 0.0, 255.0)};
}

Figure make_figure(Rng& rng, double unit, Vec2 origin, int style)
{
    const double u = unit * 112.0; // figure coordinates below are fractions of a 112-px canvas
    Figure f{};
    f.unit = unit;
    const double cx = origin.x + u * (0.5 + uniform(rng, -0.05, 0.05));
    const double top = origin.y + u * uniform(rng, 0.02, 0.05);
    f.head = {cx + u * uniform(rng, -0.01, 0.01), top + u * 0.085};
    f.head_radius = u * 0.07;
    f.torso_top = {cx, top + u * 0.22};
    f.torso_bottom = {cx, top + u * 0.48};
    f.torso_radius = u * 0.08;

    for (int side = 0; side < 2; ++side) {
        const double sign = side == 0 ? -1.0 : 1.0;
        const Vec2 shoulder = {cx + sign * u * 0.075, top + u * 0.23};
        const double upper = deg(uniform(rng, 25.0, 75.0));
        const double fore = upper + deg(uniform(rng, -30.0, 45.0));
        Limb arm;
        arm.root = shoulder;
        arm.joint = shoulder + u * 0.16 * Vec2{sign * direction(upper).x, direction(upper).y};
        arm.end = arm.joint + u * 0.14 * Vec2{sign * direction(fore).x, direction(fore).y};
        arm.radius = u * 0.028;
        f.arms[side] = arm;

        Hand hand;
        const Vec2 fdir = Vec2{sign * direction(fore).x, direction(fore).y};
        hand.dir = fdir;
        hand.palm = arm.end + u * 0.025 * fdir;
        hand.palm_radius = u * 0.032;
        hand.digit_length = u * 0.06;
        hand.digit_radius = u * 0.011;
        for (int d = 0; d < 5; ++d)
            hand.digit_angles[d] = deg(-50.0 + 25.0 * d + uniform(rng, -6.0, 6.0));
        f.hands[side] = hand;

        const Vec2 hip = {cx + sign * u * 0.045, top + u * 0.5};
        const double thigh = deg(uniform(rng, 4.0, 22.0));
        const double shin = thigh + deg(uniform(rng, -10.0, 8.0));
        Limb leg;
        leg.root = hip;
        leg.joint = hip + u * 0.19 * Vec2{sign * direction(thigh).x, direction(thigh).y};
        leg.end = leg.joint + u * 0.18 * Vec2{sign * direction(shin).x, direction(shin).y};
        leg.radius = u * 0.034;
        f.legs[side] = leg;
        f.feet_tips[side] = leg.end + Vec2{sign * u * 0.055, u * 0.01};
    }

    if (style == 0) {
        f.skin = jitter_color(rng, {215, 165, 135}, 20);
        f.cloth = jitter_color(rng, {70, 80, 110}, 40);
        f.trousers = jitter_color(rng, {60, 55, 50}, 25);
    } else {
        f.skin = jitter_color(rng, {250, 215, 195}, 8);
        const Color palette[] = {{220, 60, 60}, {60, 150, 230}, {250, 200, 40}, {80, 190, 90}};
        f.cloth = palette[uniform_int(rng, 0, 3)];
        f.trousers = palette[uniform_int(rng, 0, 3)];
    }
    return f;
}

void hand_strokes(const Hand& h, Color skin, std::vector<Stroke>& out, int skip_mask = 0)
{
    out.push_back({h.palm, h.palm, h.palm_radius, skin});
    for (int d = 0; d < 5; ++d) {
        if (skip_mask & (1 << d))
            continue;
        const Vec2 dir = rotate(h.dir, h.digit_angles[d]);
        out.push_back({h.palm, h.palm + h.digit_length * dir, h.digit_radius, skin});
    }
}

void limb_strokes(const Limb& l, Color c, std::vector<Stroke>& out)
{
    out.push_back({l.root, l.joint, l.radius, c});
    out.push_back({l.joint, l.end, l.radius * 0.9, c});
}

std::vector<Stroke> figure_strokes(const Figure& f)
{
    std::vector<Stroke> s;
    for (int side = 0; side < 2; ++side) {
        limb_strokes(f.legs[side], f.trousers, s);
        s.push_back({f.legs[side].end, f.feet_tips[side], f.legs[side].radius * 0.6, f.trousers});
    }
    s.push_back({f.torso_top, f.torso_bottom, f.torso_radius, f.cloth});
    s.push_back({f.head, f.head, f.head_radius, f.skin});
    for (int side = 0; side < 2; ++side) {
        limb_strokes(f.arms[side], f.cloth, s);
        hand_strokes(f.hands[side], f.skin, s);
    }
    return s;
}

/// Outline samples of a stroke grown by `margin`, for hull construction.
void outline_points(const Stroke& s, double margin, std::vector<Point2>& pts)
{
    constexpr int kSamples = 12;
    const double r = s.radius + margin;
    for (int k = 0; k < kSamples; ++k) {
        const double t = 2.0 * std::numbers::pi * k / kSamples;
        pts.push_back({s.a.x + r * std::cos(t), s.a.y + r * std::sin(t)});
        pts.push_back({s.b.x + r * std::cos(t), s.b.y + r * std::sin(t)});
    }
}

struct Injection {
    std::vector<Stroke> added;   // painted after the figure
    std::vector<Stroke> hull_of; // geometry the region polygon must enclose
};

Injection inject(Rng& rng, Figure& f, Part part, DistortionType type)
{
    const double u = f.unit * 112.0;
    Injection inj;
    const int side = (part == Part::LeftHand || part == Part::LeftArm || part == Part::LeftLeg) ? 0 : 1;
    const double sign = side == 0 ? -1.0 : 1.0;

    auto hand_geometry = [&](const Hand& h, int skip = 0) {
        std::vector<Stroke> g;
        hand_strokes(h, f.skin, g, skip);
        return g;
    };

    switch (part) {
    case Part::LeftHand:
    case Part::RightHand: {
        Hand& h = f.hands[side];
        if (type == DistortionType::Proliferation) {
            const int extra = uniform_int(rng, 1, 2);
            for (int e = 0; e < extra; ++e) {
                const double angle = deg((e == 0 ? 75.0 : -75.0) + uniform(rng, -8.0, 8.0));
                const Vec2 dir = rotate(h.dir, angle);
                inj.added.push_back({h.palm, h.palm + h.digit_length * dir, h.digit_radius, f.skin});
            }
            inj.hull_of = hand_geometry(h);
            inj.hull_of.insert(inj.hull_of.end(), inj.added.begin(), inj.added.end());
        } else if (type == DistortionType::Absence) {
            const int first = uniform_int(rng, 0, 2);
            const int skip = (1 << first) | (1 << (first + 1)) | (uniform01(rng) < 0.5 ? (1 << (first + 2)) : 0);
            inj.hull_of = hand_geometry(h);
            for (int d = 0; d < 5; ++d)
                if (skip & (1 << d)) {
                    const Vec2 dir = rotate(h.dir, h.digit_angles[d]);
                    Stroke erase{h.palm + 0.5 * h.palm_radius * dir, h.palm + h.digit_length * dir,
                                 h.digit_radius + 0.6, f.skin, true};
                    inj.added.push_back(erase);
                }
        } else if (type == DistortionType::Deformation) {
            Hand big = h;
            big.digit_length *= uniform(rng, 1.6, 2.0);
            big.digit_radius *= 1.6;
            for (auto& a : big.digit_angles)
                a *= uniform(rng, 0.5, 1.4);
            inj.added = hand_geometry(big);
            inj.hull_of = inj.added;
        } else { // Fusion: hand melts into the torso
            const Vec2 target = {f.torso_top.x, std::clamp(h.palm.y, f.torso_top.y, f.torso_bottom.y)};
            const Vec2 mid = h.palm + 0.6 * (target - h.palm);
            inj.added.push_back({h.palm, mid, h.palm_radius * 1.3, f.skin});
            inj.hull_of = hand_geometry(h);
            inj.hull_of.push_back(inj.added.back());
        }
        break;
    }
    case Part::LeftArm:
    case Part::RightArm: {
        const Limb& arm = f.arms[side];
        if (type == DistortionType::Proliferation) {
            const double upper = deg(uniform(rng, 80.0, 120.0));
            Limb extra{arm.root, {}, {}, arm.radius};
            extra.joint = arm.root + u * 0.14 * Vec2{sign * direction(upper).x, direction(upper).y};
            extra.end = extra.joint + u * 0.12 * Vec2{sign * direction(upper + deg(30)).x, direction(upper + deg(30)).y};
            limb_strokes(extra, f.cloth, inj.added);
            inj.added.push_back({extra.end, extra.end, u * 0.03, f.skin});
            inj.hull_of = inj.added;
        } else if (type == DistortionType::Absence) {
            inj.added.push_back({arm.joint, arm.end, arm.radius + 1.0, f.skin, true});
            std::vector<Stroke> hand = hand_geometry(f.hands[side]);
            for (auto s : hand) {
                s.erase = true;
                s.radius += 0.6;
                inj.added.push_back(s);
            }
            inj.hull_of = inj.added;
        } else if (type == DistortionType::Deformation) {
            const Vec2 kink = arm.joint + u * 0.05 * Vec2{sign * 1.0, -0.5};
            inj.added.push_back({arm.root, kink, arm.radius * 1.5, f.cloth});
            inj.added.push_back({kink, arm.end, arm.radius * 1.7, f.cloth});
            inj.hull_of = inj.added;
        } else {
            const Vec2 target = {f.torso_top.x, (f.torso_top.y + f.torso_bottom.y) * 0.5};
            inj.added.push_back({arm.joint, arm.joint + 0.7 * (target - arm.joint), arm.radius * 2.0, f.cloth});
            inj.hull_of = inj.added;
            inj.hull_of.push_back({arm.joint, arm.joint, arm.radius * 2.0, f.cloth});
        }
        break;
    }
    case Part::LeftLeg:
    case Part::RightLeg: {
        const Limb& leg = f.legs[side];
        if (type == DistortionType::Proliferation) {
            const double thigh = deg(uniform(rng, 35.0, 55.0));
            Limb extra{leg.root, {}, {}, leg.radius};
            extra.joint = leg.root + u * 0.17 * Vec2{sign * direction(thigh).x, direction(thigh).y};
            extra.end = extra.joint + u * 0.15 * Vec2{sign * direction(thigh).x, direction(thigh).y};
            limb_strokes(extra, f.trousers, inj.added);
            inj.hull_of = inj.added;
        } else if (type == DistortionType::Absence) {
            inj.added.push_back({leg.joint, leg.end, leg.radius + 1.0, f.skin, true});
            inj.added.push_back({leg.end, f.feet_tips[side], leg.radius * 0.6 + 1.0, f.skin, true});
            inj.hull_of = inj.added;
        } else if (type == DistortionType::Deformation) {
            const Vec2 bulge = leg.joint + Vec2{sign * u * 0.06, 0.0};
            inj.added.push_back({leg.joint, bulge, leg.radius * 1.8, f.trousers});
            inj.added.push_back({bulge, leg.end, leg.radius * 1.2, f.trousers});
            inj.hull_of = inj.added;
        } else {
            const Limb& other = f.legs[1 - side];
            inj.added.push_back({leg.joint, other.joint, leg.radius * 1.3, f.trousers});
            inj.added.push_back({leg.end, other.end, leg.radius * 1.1, f.trousers});
            inj.hull_of = inj.added;
        }
        break;
    }
    case Part::Head: {
        if (type == DistortionType::Proliferation) {
            const Vec2 c = f.head + Vec2{(uniform01(rng) < 0.5 ? -1.0 : 1.0) * f.head_radius * 1.5, f.head_radius * 0.2};
            inj.added.push_back({c, c, f.head_radius * 0.8, f.skin});
            inj.hull_of = inj.added;
        } else if (type == DistortionType::Absence) {
            inj.added.push_back({f.head, f.head, f.head_radius + 1.0, f.skin, true});
            inj.hull_of = inj.added;
        } else if (type == DistortionType::Deformation) {
            const Vec2 a = f.head + Vec2{-f.head_radius * 0.5, -f.head_radius * 0.3};
            const Vec2 b = f.head + Vec2{f.head_radius * 0.7, f.head_radius * 0.4};
            inj.added.push_back({a, b, f.head_radius * 1.05, f.skin});
            inj.hull_of = inj.added;
        } else {
            const Hand& h = f.hands[uniform_int(rng, 0, 1)];
            const Vec2 mid = f.head + 0.5 * (h.palm - f.head);
            inj.added.push_back({f.head, mid, f.head_radius * 0.7, f.skin});
            inj.hull_of = inj.added;
            inj.hull_of.push_back({f.head, f.head, f.head_radius, f.skin});
        }
        break;
    }
    }
    return inj;
}

Polygon clamp_polygon(Polygon poly, int w, int h)
{
    for (auto& v : poly.vertices) {
        v.x = std::clamp(v.x, 0.0, static_cast<double>(w));
        v.y = std::clamp(v.y, 0.0, static_cast<double>(h));
    }
    return poly;
}

std::vector<double> make_background(Rng& rng, int w, int h, int style)
{
    std::vector<double> bg(static_cast<std::size_t>(3) * w * h);
    Color top, bottom;
    if (style == 0) {
        top = jitter_color(rng, {175, 190, 205}, 25);
        bottom = jitter_color(rng, {120, 125, 115}, 25);
    } else {
        top = jitter_color(rng, {200, 235, 245}, 15);
        bottom = top;
    }
    for (int y = 0; y < h; ++y) {
        const double t = static_cast<double>(y) / std::max(1, h - 1);
        for (int x = 0; x < w; ++x) {
            const std::size_t i = (static_cast<std::size_t>(y) * w + x) * 3;
            bg[i] = top.r + t * (bottom.r - top.r);
            bg[i + 1] = top.g + t * (bottom.g - top.g);
            bg[i + 2] = top.b + t * (bottom.b - top.b);
        }
    }
    return bg;
}

} // namespace

SyntheticSample generate_scene(int index, const SynthConfig& config)
{
    config.validate();
    if (index < 0 || index >= config.sample_count)
        throw ValidationError("scene index " + std::to_string(index) + " outside [0, sampleCount)");

    Rng rng(derive_seed(config.master_seed, hash_label("scene"), static_cast<std::uint64_t>(index)));
    const int w = config.image_width;
    const int h = config.image_height;
    const double side = std::min(w, h);

    SyntheticSample sample;
    sample.sample_id = sample_id_for(index);
    sample.style = uniform01(rng) < 0.5 ? 0 : 1;

    Canvas canvas(w, h);
    canvas.set_background(make_background(rng, w, h, sample.style));
    Figure fig = make_figure(rng, side / 112.0, {(w - side) / 2.0, (h - side) / 2.0}, sample.style);

    const bool positive = uniform01(rng) < config.positive_fraction;
    std::vector<Injection> injections;
    std::vector<DistortionType> types;
    if (positive) {
        std::discrete_distribution<int> type_pick(config.type_mix.begin(), config.type_mix.end());
        std::array<Part, 7> parts = kParts;
        std::shuffle(parts.begin(), parts.end(), rng);
        const int count = uniform_int(rng, 1, 3);
        for (int k = 0; k < count; ++k) {
            const DistortionType type = kConcreteTypes[type_pick(rng)];
            injections.push_back(inject(rng, fig, parts[k], type));
            types.push_back(type);
        }
    }

    for (const auto& s : figure_strokes(fig))
        canvas.paint(s);
    for (const auto& inj : injections)
        for (const auto& s : inj.added)
            canvas.paint(s);

    sample.gt_mask = BinaryMask(w, h);
    const double margin = 3.0 * side / 112.0;
    for (std::size_t k = 0; k < injections.size(); ++k) {
        std::vector<Point2> pts;
        for (const auto& s : injections[k].hull_of)
            outline_points(s, margin, pts);
        Polygon poly = clamp_polygon(convex_hull(std::move(pts)), w, h);
        if (poly.vertices.size() < 3)
            continue;
        BinaryMask raster = rasterize_polygon(poly, w, h);
        if (!raster.any())
            continue;
        sample.gt_mask |= raster;
        sample.injected.push_back({types[k], std::move(poly)});
    }
    canvas.texture(sample.gt_mask);
    sample.image = canvas.quantize(rng, 3.0);
    return sample;
}

std::uint64_t annotator_seed_for(std::uint64_t master_seed, const std::string& sample_id, int annotator)
{
    return derive_seed(master_seed, hash_label(sample_id), static_cast<std::uint64_t>(annotator) + 1);
}

AnnotationSet simulate_annotator(const SyntheticSample& sample, std::uint64_t annotator_seed,
                                 const AnnotatorNoise& noise, int annotator_id)
{
    Rng rng(annotator_seed);
    const double w = sample.gt_mask.width();
    const double h = sample.gt_mask.height();
    AnnotationSet out;
    for (const auto& rec : sample.injected) {
        // Draws are consumed unconditionally so each record sees a fixed stream position.
        const double miss = uniform01(rng);
        const double mislabel = uniform01(rng);
        const int other = uniform_int(rng, 0, 2);
        std::vector<Point2> jitter;
        for (std::size_t i = 0; i < rec.polygon.vertices.size(); ++i)
            jitter.push_back({normal(rng, 0.0, 1.0), normal(rng, 0.0, 1.0)});
        if (miss < noise.miss_probability)
            continue;

        PolygonAnnotation a;
        a.annotator_id = annotator_id;
        a.type = rec.type;
        if (mislabel < 0.1 * noise.miss_probability) {
            std::vector<DistortionType> others;
            for (auto t : kConcreteTypes)
                if (t != rec.type)
                    others.push_back(t);
            a.type = others[static_cast<std::size_t>(other)];
        }
        a.polygon = rec.polygon;
        if (noise.vertex_jitter_std > 0.0) {
            for (std::size_t i = 0; i < a.polygon.vertices.size(); ++i) {
                auto& v = a.polygon.vertices[i];
                v.x = std::clamp(v.x + noise.vertex_jitter_std * jitter[i].x, 0.0, w);
                v.y = std::clamp(v.y + noise.vertex_jitter_std * jitter[i].y, 0.0, h);
            }
        }
        out.push_back(std::move(a));
    }
    return out;
}

std::array<int, 3> split_sizes(int n, const std::array<double, 3>& ratio)
{
    const double total = ratio[0] + ratio[1] + ratio[2];
    std::array<int, 3> sizes{};
    std::array<double, 3> remainder{};
    int assigned = 0;
    for (int i = 0; i < 3; ++i) {
        const double exact = n * ratio[i] / total;
        sizes[i] = static_cast<int>(std::floor(exact));
        remainder[i] = exact - sizes[i];
        assigned += sizes[i];
    }
    std::array<int, 3> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return remainder[a] > remainder[b]; });
    for (int k = 0; assigned < n; ++k, ++assigned)
        ++sizes[order[k % 3]];
    return sizes;
}

std::vector<Split> assign_splits(const std::vector<std::string>& sample_ids, const std::array<double, 3>& ratio,
                                 std::uint64_t master_seed)
{
    const int n = static_cast<int>(sample_ids.size());
    const auto sizes = split_sizes(n, ratio);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::uint64_t> key(n);
    for (int i = 0; i < n; ++i)
        key[i] = derive_seed(master_seed, hash_label("split"), hash_label(sample_ids[i]));
    std::sort(order.begin(), order.end(), [&](int a, int b) { return key[a] != key[b] ? key[a] < key[b] : a < b; });
    std::vector<Split> splits(n, Split::Test);
    for (int r = 0; r < n; ++r)
        splits[order[r]] = r < sizes[0] ? Split::Train : (r < sizes[0] + sizes[1] ? Split::Val : Split::Test);
    return splits;
}

Corpus generate_corpus(const SynthConfig& config)
{
    config.validate();
    Corpus corpus;
    corpus.config = config;
    corpus.samples.resize(static_cast<std::size_t>(config.sample_count));

    parallel_for(config.sample_count, [&](long i) {
        CorpusSample& cs = corpus.samples[i];
        cs.synthetic = generate_scene(static_cast<int>(i), config);
        AnnotatedSample& a = cs.annotated;
        a.sample_id = cs.synthetic.sample_id;
        a.image_ref = "images/" + a.sample_id + ".png";
        for (int k = 0; k < kAnnotatorCount; ++k)
            a.annotation_sets[k] = simulate_annotator(
                cs.synthetic, annotator_seed_for(config.master_seed, a.sample_id, k), config.annotator_noise, k);
        consolidate(a, config.image_width, config.image_height);
    });

    std::vector<std::string> ids;
    for (const auto& s : corpus.samples)
        ids.push_back(s.annotated.sample_id);
    const auto splits = assign_splits(ids, config.split_ratio, config.master_seed);
    for (std::size_t i = 0; i < splits.size(); ++i)
        corpus.samples[i].annotated.split = splits[i];
    return corpus;
}

namespace {

nlohmann::json polygon_json(const Polygon& p)
{
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& v : p.vertices)
        arr.push_back({v.x, v.y});
    return arr;
}

Polygon polygon_from_json(const nlohmann::json& j)
{
    Polygon p;
    for (const auto& v : j)
        p.vertices.push_back({v.at(0).get<double>(), v.at(1).get<double>()});
    return p;
}

DistortionType type_from_json(const nlohmann::json& j)
{
    auto t = parse_distortion_type(j.get<std::string>());
    if (!t)
        throw ValidationError("unknown distortion type '" + j.get<std::string>() + "'");
    return *t;
}

} // namespace

nlohmann::json annotation_file_header(const std::string& sample_id, int width, int height, const Provenance& prov)
{
    return {{"schema", "vithd.annotations"}, {"version", 1},        {"sampleId", sample_id},
            {"width", width},                {"height", height},    {"provenance", prov.to_json()}};
}

std::vector<const ManifestEntry*> CorpusManifest::entries_for(Split split) const
{
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
        if (e.split == split)
            out.push_back(&e);
    return out;
}

CorpusManifest write_corpus(const Corpus& corpus, const std::filesystem::path& out_dir, const Provenance& prov,
                            const OutputPolicy& policy)
{
    const auto& cfg = corpus.config;
    CorpusManifest manifest;
    manifest.root = out_dir;
    manifest.width = cfg.image_width;
    manifest.height = cfg.image_height;
    manifest.provenance = prov;

    std::vector<nlohmann::json> lines;
    for (const auto& cs : corpus.samples) {
        const auto& a = cs.annotated;
        ManifestEntry e;
        e.sample_id = a.sample_id;
        e.image_path = "images/" + a.sample_id + ".png";
        e.gt_mask_path = "gt_masks/" + a.sample_id + ".png";
        e.consensus_mask_path = "consensus/" + a.sample_id + ".png";
        e.annotations_path = "annotations/" + a.sample_id + ".jsonl";
        e.split = a.split;
        e.positive = a.consensus_mask.any();

        write_png(out_dir / e.image_path, cs.synthetic.image, prov, policy);
        write_mask_png(out_dir / e.gt_mask_path, cs.synthetic.gt_mask, prov, policy);
        write_mask_png(out_dir / e.consensus_mask_path, a.consensus_mask, prov, policy);

        std::vector<nlohmann::json> ann;
        ann.push_back(annotation_file_header(a.sample_id, cfg.image_width, cfg.image_height, prov));
        for (int k = 0; k < kAnnotatorCount; ++k)
            for (const auto& p : a.annotation_sets[k])
                ann.push_back({{"kind", "annotation"},
                               {"annotator", k},
                               {"type", std::string(to_string(p.type))},
                               {"polygon", polygon_json(p.polygon)}});
        for (const auto& r : cs.synthetic.injected)
            ann.push_back(
                {{"kind", "injected"}, {"type", std::string(to_string(r.type))}, {"polygon", polygon_json(r.polygon)}});
        for (const auto& r : a.typed_regions) {
            const Box& b = r.region.bounding_box;
            ann.push_back({{"kind", "region"},
                           {"type", std::string(to_string(r.type))},
                           {"box", {b.x0, b.y0, b.x1, b.y1}},
                           {"pixelCount", r.region.pixel_count}});
        }
        write_text_file(out_dir / e.annotations_path, to_jsonl(ann), policy);

        ++manifest.split_counts[e.split];
        manifest.entries.push_back(e);
        lines.push_back({{"sampleId", e.sample_id},
                         {"imagePath", e.image_path},
                         {"gtMaskPath", e.gt_mask_path},
                         {"consensusMaskPath", e.consensus_mask_path},
                         {"annotationsPath", e.annotations_path},
                         {"split", std::string(to_string(e.split))},
                         {"positive", e.positive}});
    }

    nlohmann::json header = {{"schema", "vithd.manifest"},
                             {"version", 1},
                             {"provenance", prov.to_json()},
                             {"synth", cfg.to_json()},
                             {"width", cfg.image_width},
                             {"height", cfg.image_height},
                             {"sampleCount", corpus.samples.size()},
                             {"splitCounts",
                              {{"train", manifest.split_counts[Split::Train]},
                               {"val", manifest.split_counts[Split::Val]},
                               {"test", manifest.split_counts[Split::Test]}}}};
    lines.insert(lines.begin(), header);
    write_text_file(out_dir / kManifestFile, to_jsonl(lines), policy);
    return manifest;
}

CorpusManifest build_corpus(const SynthConfig& config, const std::filesystem::path& out_dir, const Provenance& prov,
                            const OutputPolicy& policy)
{
    return write_corpus(generate_corpus(config), out_dir, prov, policy);
}

CorpusManifest read_manifest(const std::filesystem::path& corpus_dir)
{
    const auto path = corpus_dir / kManifestFile;
    auto records = read_jsonl(path);
    if (records.empty() || records.front().value("schema", "") != "vithd.manifest")
        throw IoError(path.string(), "not a corpus manifest");
    CorpusManifest m;
    m.root = corpus_dir;
    const auto& header = records.front();
    try {
        m.width = header.at("width").get<int>();
        m.height = header.at("height").get<int>();
        m.provenance = Provenance::from_json(header.at("provenance"));
        for (std::size_t i = 1; i < records.size(); ++i) {
            const auto& r = records[i];
            ManifestEntry e;
            e.sample_id = r.at("sampleId").get<std::string>();
            e.image_path = r.at("imagePath").get<std::string>();
            e.gt_mask_path = r.at("gtMaskPath").get<std::string>();
            e.consensus_mask_path = r.at("consensusMaskPath").get<std::string>();
            e.annotations_path = r.at("annotationsPath").get<std::string>();
            auto split = parse_split(r.at("split").get<std::string>());
            if (!split)
                throw IoError(path.string(), "bad split in entry " + e.sample_id);
            e.split = *split;
            e.positive = r.at("positive").get<bool>();
            ++m.split_counts[e.split];
            m.entries.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& ex) {
        throw IoError(path.string(), std::string("malformed manifest: ") + ex.what());
    }
    return m;
}

AnnotatedSample read_annotations(const std::filesystem::path& path, int& width, int& height)
{
    auto records = read_jsonl(path);
    if (records.empty() || records.front().value("schema", "") != "vithd.annotations")
        throw IoError(path.string(), "not an annotation file");
    AnnotatedSample s;
    try {
        s.sample_id = records.front().at("sampleId").get<std::string>();
        width = records.front().at("width").get<int>();
        height = records.front().at("height").get<int>();
        for (std::size_t i = 1; i < records.size(); ++i) {
            const auto& r = records[i];
            if (r.at("kind") != "annotation")
                continue;
            const int k = r.at("annotator").get<int>();
            if (k < 0 || k >= kAnnotatorCount)
                throw ValidationError("annotator index out of range in " + path.string());
            PolygonAnnotation a;
            a.annotator_id = k;
            a.type = type_from_json(r.at("type"));
            if (a.type == DistortionType::Uncertain)
                throw ValidationError("annotation type 'uncertain' is not allowed in " + path.string());
            a.polygon = polygon_from_json(r.at("polygon"));
            s.annotation_sets[k].push_back(std::move(a));
        }
    } catch (const nlohmann::json::exception& ex) {
        throw IoError(path.string(), std::string("malformed annotations: ") + ex.what());
    }
    return s;
}

} // namespace vithd
