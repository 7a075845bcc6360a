#include <algorithm>
#include <cmath>
#include <numbers>

#include "darn/error.hpp"
#include "darn/rng.hpp"
#include "darn/synth.hpp"

namespace darn {

namespace {

struct Canvas {
    std::size_t h, w;
    std::uint8_t* labels;

    void set(std::ptrdiff_t y, std::ptrdiff_t x, std::uint8_t cls) {
        if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(h) || x >= static_cast<std::ptrdiff_t>(w)) return;
        labels[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] = cls;
    }
};

std::uint8_t foreground_class(Rng& rng, std::size_t classes) {
    if (classes <= 1) return 0;
    return static_cast<std::uint8_t>(1 + rng.below(classes - 1));
}

void draw_simple(Canvas& cv, Rng& rng, std::size_t classes) {
    const double side = static_cast<double>(std::min(cv.h, cv.w));
    const std::size_t blobs = 2 + rng.below(2);
    for (std::size_t j = 0; j < blobs; ++j) {
        // Cycle the foreground classes so every class shows up regularly.
        const std::uint8_t cls =
            classes <= 1 ? 0 : static_cast<std::uint8_t>(1 + (j + rng.below(classes - 1)) % (classes - 1));
        const double cx = rng.uniform(0.15, 0.85) * static_cast<double>(cv.w);
        const double cy = rng.uniform(0.15, 0.85) * static_cast<double>(cv.h);
        const double r = rng.uniform(0.18, 0.32) * side;
        const double a1 = rng.uniform(0.0, 0.2), a2 = rng.uniform(0.0, 0.15);
        const double p1 = rng.uniform(0.0, 2.0 * std::numbers::pi), p2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (std::size_t y = 0; y < cv.h; ++y)
            for (std::size_t x = 0; x < cv.w; ++x) {
                const double dx = static_cast<double>(x) + 0.5 - cx;
                const double dy = static_cast<double>(y) + 0.5 - cy;
                const double theta = std::atan2(dy, dx);
                const double rr = r * (1.0 + a1 * std::sin(2.0 * theta + p1) + a2 * std::sin(3.0 * theta + p2));
                if (dx * dx + dy * dy < rr * rr) cv.labels[y * cv.w + x] = cls;
            }
    }
}

void draw_complex(Canvas& cv, Rng& rng, std::size_t classes) {
    const std::size_t structures = 14 + rng.below(12);
    for (std::size_t j = 0; j < structures; ++j) {
        const std::uint8_t cls = foreground_class(rng, classes);
        const auto size = static_cast<std::ptrdiff_t>(2 + rng.below(5));
        const auto y0 = static_cast<std::ptrdiff_t>(rng.below(cv.h));
        const auto x0 = static_cast<std::ptrdiff_t>(rng.below(cv.w));
        const bool disc = rng.uniform() < 0.5;
        for (std::ptrdiff_t dy = 0; dy < size; ++dy)
            for (std::ptrdiff_t dx = 0; dx < size; ++dx) {
                if (disc) {
                    const double cy = (static_cast<double>(size) - 1.0) / 2.0;
                    const double ey = static_cast<double>(dy) - cy, ex = static_cast<double>(dx) - cy;
                    if (ey * ey + ex * ex > (cy + 0.5) * (cy + 0.5)) continue;
                }
                cv.set(y0 + dy, x0 + dx, cls);
            }
    }
    const std::size_t lines = 3 + rng.below(4);
    for (std::size_t j = 0; j < lines; ++j) {
        const std::uint8_t cls = foreground_class(rng, classes);
        const double y0 = rng.uniform(0.0, static_cast<double>(cv.h));
        const double x0 = rng.uniform(0.0, static_cast<double>(cv.w));
        const double angle = rng.uniform(0.0, std::numbers::pi);
        const double length = rng.uniform(8.0, static_cast<double>(cv.w));
        const int thickness = 1 + static_cast<int>(rng.below(2));
        const double sy = std::sin(angle), sx = std::cos(angle);
        for (double t = 0.0; t < length; t += 0.5) {
            const auto py = static_cast<std::ptrdiff_t>(std::floor(y0 + t * sy));
            const auto px = static_cast<std::ptrdiff_t>(std::floor(x0 + t * sx));
            for (int k = 0; k < thickness; ++k) {
                // Thicken perpendicular to the dominant direction.
                if (std::abs(sx) > std::abs(sy)) cv.set(py + k, px, cls);
                else cv.set(py, px + k, cls);
            }
        }
    }
}

void render(const SceneConfig& cfg, std::uint64_t seed, std::size_t b, SampleBatch& out) {
    Rng rng(seed);
    const std::size_t h = cfg.height, w = cfg.width, plane = h * w;
    const bool complex = rng.uniform() < cfg.complex_fraction;
    out.tags[b] = complex ? ComplexityTag::Complex : ComplexityTag::Simple;

    Canvas cv{h, w, out.labels.data.data() + b * plane};
    std::fill(cv.labels, cv.labels + plane, std::uint8_t{0});
    if (complex) draw_complex(cv, rng, cfg.classes);
    else draw_simple(cv, rng, cfg.classes);

    const double illumination = rng.uniform(-0.05, 0.05);
    const double noise = complex ? kComplexNoise : kSimpleNoise;
    double fx = 0, fy = 0, px = 0, py = 0;
    if (complex) {
        fx = rng.uniform(1.5, 2.8);
        fy = rng.uniform(1.5, 2.8);
        px = rng.uniform(0.0, 2.0 * std::numbers::pi);
        py = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    auto img = out.images.mutable_data();
    for (std::size_t c = 0; c < cfg.channels; ++c) {
        double* dst = img.data() + (b * cfg.channels + c) * plane;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double v = class_color(cv.labels[y * w + x], c) + illumination;
                if (complex) {
                    v += kTextureAmplitude * std::sin(fx * static_cast<double>(x) + px) * std::sin(fy * static_cast<double>(y) + py);
                }
                v += noise * rng.normal();
                dst[y * w + x] = std::clamp(v, 0.0, 1.0);
            }
    }
}

}  // namespace

double class_color(std::size_t cls, std::size_t channel) {
    static constexpr double kPalette[6][3] = {
        {0.30, 0.45, 0.35}, {0.60, 0.42, 0.30}, {0.38, 0.58, 0.68},
        {0.70, 0.70, 0.45}, {0.20, 0.25, 0.55}, {0.55, 0.30, 0.55},
    };
    if (cls < 6) return kPalette[cls][channel % 3];
    const double t = std::fmod(0.6180339887498949 * static_cast<double>(cls + 1) + 0.29 * static_cast<double>(channel), 1.0);
    return 0.2 + 0.6 * t;
}

SampleBatch generate(const SceneConfig& cfg) {
    if (cfg.height == 0 || cfg.width == 0 || cfg.height % 16 != 0 || cfg.width % 16 != 0) {
        throw GeometryError("generate: H and W must be positive multiples of 16");
    }
    if (cfg.channels == 0) throw ConfigError("generate: channels must be positive");
    if (cfg.classes == 0 || cfg.classes > 255) throw ConfigError("generate: classes must lie in 1..255");
    if (!(cfg.complex_fraction >= 0.0 && cfg.complex_fraction <= 1.0)) {
        throw ConfigError("generate: complex_fraction must lie in [0,1]");
    }
    SampleBatch out;
    out.images = Tensor::zeros({cfg.count, cfg.channels, cfg.height, cfg.width});
    out.labels.batch = cfg.count;
    out.labels.height = cfg.height;
    out.labels.width = cfg.width;
    out.labels.data.assign(cfg.count * cfg.height * cfg.width, 0);
    out.tags.assign(cfg.count, ComplexityTag::Simple);
    out.sample_seeds.resize(cfg.count);
    for (std::size_t b = 0; b < cfg.count; ++b) out.sample_seeds[b] = mix_seed(cfg.global_seed, cfg.first_index + b);

    const auto count = static_cast<std::ptrdiff_t>(cfg.count);
#pragma omp parallel for schedule(dynamic, 4)
    for (std::ptrdiff_t b = 0; b < count; ++b) {
        const auto i = static_cast<std::size_t>(b);
        render(cfg, out.sample_seeds[i], i, out);
    }
    return out;
}

SampleBatch select(const SampleBatch& batch, const std::vector<std::size_t>& indices) {
    const std::size_t c = batch.images.dim(1), h = batch.images.dim(2), w = batch.images.dim(3);
    const std::size_t img = c * h * w, plane = h * w;
    SampleBatch out;
    std::vector<double> data(indices.size() * img);
    out.labels.batch = indices.size();
    out.labels.height = h;
    out.labels.width = w;
    out.labels.data.resize(indices.size() * plane);
    for (std::size_t j = 0; j < indices.size(); ++j) {
        const std::size_t i = indices[j];
        if (i >= batch.size()) throw DimensionError("select: index out of range");
        std::copy_n(batch.images.data().data() + i * img, img, data.data() + j * img);
        std::copy_n(batch.labels.data.data() + i * plane, plane, out.labels.data.data() + j * plane);
        out.tags.push_back(batch.tags[i]);
        out.sample_seeds.push_back(batch.sample_seeds[i]);
    }
    out.images = Tensor::from({indices.size(), c, h, w}, std::move(data));
    return out;
}

std::vector<double> boundary_density(const LabelMask& labels) {
    const std::size_t h = labels.height, w = labels.width, plane = h * w;
    std::vector<double> out(labels.batch, 0.0);
    for (std::size_t b = 0; b < labels.batch; ++b) {
        const std::uint8_t* m = labels.data.data() + b * plane;
        std::size_t edges = 0;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const auto v = m[y * w + x];
                const bool edge = (x > 0 && m[y * w + x - 1] != v) || (x + 1 < w && m[y * w + x + 1] != v) ||
                                  (y > 0 && m[(y - 1) * w + x] != v) || (y + 1 < h && m[(y + 1) * w + x] != v);
                edges += edge ? 1 : 0;
            }
        out[b] = static_cast<double>(edges) / static_cast<double>(plane);
    }
    return out;
}

}  // namespace darn
