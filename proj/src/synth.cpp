#include "mfn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace mfn {

namespace {

struct Rgb {
    float ir, r, g;
};

// Shared by roads and buildings.
constexpr Rgb kGray{0.50f, 0.50f, 0.50f};
// Shared by trees and low vegetation.
constexpr Rgb kGreen{0.62f, 0.24f, 0.36f};
constexpr Rgb kGround{0.36f, 0.36f, 0.20f};
constexpr std::array<Rgb, 3> kCarColors{{{0.20f, 0.80f, 0.15f}, {0.15f, 0.15f, 0.75f}, {0.90f, 0.90f, 0.90f}}};

constexpr float kPixelNoise = 0.03f;
constexpr float kObjectJitter = 0.015f;

class Canvas {
public:
    explicit Canvas(int size)
        : size_(size), label(static_cast<std::size_t>(size) * size, kBackground),
          color(static_cast<std::size_t>(size) * size, kGround), height(static_cast<std::size_t>(size) * size, 0.0f) {}

    int size() const { return size_; }
    std::size_t at(int y, int x) const { return static_cast<std::size_t>(y) * size_ + x; }
    bool inside(int y, int x) const { return y >= 0 && x >= 0 && y < size_ && x < size_; }

    void rect(int y0, int x0, int h, int w, std::uint8_t cls, Rgb c, float z) {
        for (int y = std::max(0, y0); y < std::min(size_, y0 + h); ++y)
            for (int x = std::max(0, x0); x < std::min(size_, x0 + w); ++x) set(y, x, cls, c, z);
    }

    template <typename HeightFn>
    void ellipse(double cy, double cx, double ry, double rx, double angle, std::uint8_t cls, Rgb c, HeightFn z) {
        const double rmax = std::max(ry, rx);
        const double ca = std::cos(angle), sa = std::sin(angle);
        for (int y = static_cast<int>(cy - rmax) - 1; y <= static_cast<int>(cy + rmax) + 1; ++y)
            for (int x = static_cast<int>(cx - rmax) - 1; x <= static_cast<int>(cx + rmax) + 1; ++x) {
                if (!inside(y, x)) continue;
                const double dy = y - cy, dx = x - cx;
                const double u = (dx * ca + dy * sa) / rx;
                const double v = (-dx * sa + dy * ca) / ry;
                const double d2 = u * u + v * v;
                if (d2 <= 1.0) set(y, x, cls, c, static_cast<float>(z(d2)));
            }
    }

    std::vector<std::uint8_t> label_plane() const { return label; }

    int size_;
    std::vector<std::uint8_t> label;
    std::vector<Rgb> color;
    std::vector<float> height;

private:
    void set(int y, int x, std::uint8_t cls, Rgb c, float z) {
        const std::size_t i = at(y, x);
        label[i] = cls;
        color[i] = c;
        height[i] = z;
    }
};

Rgb jitter(Rgb base, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> j(-kObjectJitter, kObjectJitter);
    const float shift = j(rng);
    return {base.ir + shift, base.r + shift, base.g + shift};
}

} // namespace

std::uint64_t tile_seed(std::uint64_t seed, int index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index)};
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

SyntheticScene synth_scene(std::uint64_t seed, int size, int k) {
    if (size < 32 || size % 32 != 0) throw ArgumentError("synth_scene: size must be a positive multiple of 32");
    if (k != 6) throw ArgumentError("synth_scene: the generator emits exactly 6 classes");
    std::mt19937_64 rng(seed);
    auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    auto uint = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    const double area = (static_cast<double>(size) / 256.0) * (static_cast<double>(size) / 256.0);
    auto count = [&](double per_256) { return std::max(1, static_cast<int>(std::lround(per_256 * area * uni(0.75, 1.25)))); };

    Canvas cv(size);

    // Low vegetation: large flat blobs, plus round patches sized like tree
    // crowns so that shape alone cannot tell the two apart.
    for (int i = count(5); i > 0; --i) {
        const double ry = uni(10, 26), rx = uni(10, 26);
        const float z = static_cast<float>(uni(0.1, 0.4));
        cv.ellipse(uni(0, size), uni(0, size), ry, rx, uni(0, 3.14159), kLowVegetation, jitter(kGreen, rng),
                   [z](double) { return z; });
    }
    for (int i = count(5); i > 0; --i) {
        const double r = uni(6, 16);
        const float z = static_cast<float>(uni(0.1, 0.4));
        cv.ellipse(uni(0, size), uni(0, size), r, r, 0.0, kLowVegetation, jitter(kGreen, rng),
                   [z](double) { return z; });
    }
    // Roads: straight axis-aligned segments.
    for (int i = count(2.5); i > 0; --i) {
        const int width = uint(10, 20);
        const int length = uint(size / 3, size);
        const Rgb c = jitter(kGray, rng);
        if (uint(0, 1) == 0)
            cv.rect(uint(0, size - width), uint(-length / 2, size - length / 2), width, length, kRoad, c, 0.0f);
        else
            cv.rect(uint(-length / 2, size - length / 2), uint(0, size - width), length, width, kRoad, c, 0.0f);
    }
    // Plazas and parking lots: impervious rectangles drawn from the building
    // size distribution.
    for (int i = count(5); i > 0; --i) {
        const int h = uint(16, 48), w = uint(16, 48);
        cv.rect(uint(0, size - h), uint(0, size - w), h, w, kRoad, jitter(kGray, rng), 0.0f);
    }
    // Buildings: flat-roofed rectangles.
    for (int i = count(5); i > 0; --i) {
        const int h = uint(16, 48), w = uint(16, 48);
        const float z = static_cast<float>(uni(6.0, 12.0));
        cv.rect(uint(0, size - h), uint(0, size - w), h, w, kBuilding, jitter(kGray, rng), z);
    }
    // Trees: round crowns.
    for (int i = count(7); i > 0; --i) {
        const double r = uni(6, 16);
        const double z = uni(4.0, 9.0);
        cv.ellipse(uni(0, size), uni(0, size), r, r, 0.0, kTree, jitter(kGreen, rng),
                   [z](double d2) { return z * (0.6 + 0.4 * std::sqrt(1.0 - d2)); });
    }
    // Cars: small rectangles, mostly on roads.
    std::vector<std::size_t> road_pixels;
    for (std::size_t i = 0; i < cv.label.size(); ++i)
        if (cv.label[i] == kRoad) road_pixels.push_back(i);
    for (int i = count(8); i > 0; --i) {
        const bool vertical = uint(0, 1) == 1;
        const int h = vertical ? 8 : 4, w = vertical ? 4 : 8;
        int y, x;
        if (!road_pixels.empty() && uni(0, 1) < 0.8) {
            const std::size_t p = road_pixels[uint(0, static_cast<int>(road_pixels.size()) - 1)];
            y = static_cast<int>(p / size) - h / 2;
            x = static_cast<int>(p % size) - w / 2;
        } else {
            y = uint(0, size - h);
            x = uint(0, size - w);
        }
        cv.rect(y, x, h, w, kCar, kCarColors[uint(0, 2)], 1.5f);
    }

    // Sensor rendering.
    const std::size_t n = static_cast<std::size_t>(size) * size;
    std::normal_distribution<float> noise(0.0f, kPixelNoise);
    std::vector<float> ir(n), red(n), green(n), dsm(n), ndsm(n);
    const double slope_y = uni(-0.01, 0.01), slope_x = uni(-0.01, 0.01), ground = uni(30.0, 40.0);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const std::size_t i = cv.at(y, x);
            const Rgb c = cv.color[i];
            ir[i] = std::clamp(c.ir + noise(rng), 0.0f, 1.0f);
            red[i] = std::clamp(c.r + noise(rng), 0.0f, 1.0f);
            green[i] = std::clamp(c.g + noise(rng), 0.0f, 1.0f);
            const float h = std::max(0.0f, cv.height[i] + 0.05f * noise(rng) / kPixelNoise);
            ndsm[i] = h;
            dsm[i] = static_cast<float>(ground + slope_y * y + slope_x * x) + h;
        }

    SyntheticScene scene;
    scene.optical = RasterTile(size, size);
    scene.optical.add(Role::IR, ir);
    scene.optical.add(Role::R, red);
    scene.optical.add(Role::G, green);
    scene.composite = build_composite(size, size, dsm, ndsm, compute_ndvi(ir, red));
    scene.label = RasterTile(size, size);
    scene.label.add(Role::LABEL, cv.label_plane());
    return scene;
}

TileSet to_tileset(SyntheticScene scene, std::string name) {
    return TileSet{std::move(name), std::move(scene.optical), std::move(scene.composite), std::move(scene.label)};
}

} // namespace mfn
