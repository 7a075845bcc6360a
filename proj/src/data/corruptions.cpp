#include <algorithm>
#include <cmath>

#include "darn/error.hpp"
#include "darn/rng.hpp"
#include "darn/synth.hpp"

namespace darn {

namespace {

using Plane = std::vector<double>;

struct ImageView {
    std::size_t batch, channels, h, w;
    std::size_t plane() const { return h * w; }
    std::size_t image() const { return channels * h * w; }
};

ImageView view_of(const Tensor& images) {
    if (!images.defined() || images.rank() != 4) throw DimensionError("corrupt: images must be [B,C,H,W]");
    return {images.dim(0), images.dim(1), images.dim(2), images.dim(3)};
}

// 1-D convolution along rows (horizontal) or columns with edge clamping.
void convolve_axis(double* img, std::size_t h, std::size_t w, const std::vector<double>& kernel, std::ptrdiff_t origin,
                   bool horizontal) {
    Plane src(img, img + h * w);
    const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
    for (std::ptrdiff_t y = 0; y < H; ++y)
        for (std::ptrdiff_t x = 0; x < W; ++x) {
            double acc = 0.0;
            for (std::size_t k = 0; k < kernel.size(); ++k) {
                const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k) - origin;
                const std::ptrdiff_t sy = horizontal ? y : std::clamp<std::ptrdiff_t>(y + off, 0, H - 1);
                const std::ptrdiff_t sx = horizontal ? std::clamp<std::ptrdiff_t>(x + off, 0, W - 1) : x;
                acc += kernel[k] * src[static_cast<std::size_t>(sy * W + sx)];
            }
            img[y * W + x] = acc;
        }
}

std::vector<double> gaussian_kernel(double sigma, std::ptrdiff_t& radius) {
    radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (auto& v : k) v /= sum;
    return k;
}

// Smooth field in [0,1]: a 4x4 grid of uniforms, bilinearly upsampled.
Plane haze_field(Rng& rng, std::size_t h, std::size_t w) {
    constexpr std::size_t g = 4;
    double grid[g][g];
    for (auto& row : grid)
        for (auto& v : row) v = rng.uniform();
    Plane out(h * w);
    for (std::size_t y = 0; y < h; ++y) {
        const double gy = (static_cast<double>(y) + 0.5) / static_cast<double>(h) * (g - 1);
        const auto y0 = std::min<std::size_t>(static_cast<std::size_t>(gy), g - 2);
        const double fy = gy - static_cast<double>(y0);
        for (std::size_t x = 0; x < w; ++x) {
            const double gx = (static_cast<double>(x) + 0.5) / static_cast<double>(w) * (g - 1);
            const auto x0 = std::min<std::size_t>(static_cast<std::size_t>(gx), g - 2);
            const double fx = gx - static_cast<double>(x0);
            const double top = (1 - fx) * grid[y0][x0] + fx * grid[y0][x0 + 1];
            const double bot = (1 - fx) * grid[y0 + 1][x0] + fx * grid[y0 + 1][x0 + 1];
            out[y * w + x] = (1 - fy) * top + fy * bot;
        }
    }
    return out;
}

void apply_one(const std::string& name, double param, const ImageView& v, double* img, Rng& rng) {
    const std::size_t plane = v.plane();
    if (name == "gaussian_noise") {
        for (std::size_t i = 0; i < v.image(); ++i) img[i] += param * rng.normal();
    } else if (name == "impulse_noise") {
        for (std::size_t i = 0; i < v.image(); ++i) {
            const double hit = rng.uniform();
            const double salt = rng.uniform();
            if (hit < param) img[i] = salt < 0.5 ? 0.0 : 1.0;
        }
    } else if (name == "gaussian_blur") {
        std::ptrdiff_t radius = 0;
        const auto k = gaussian_kernel(param, radius);
        for (std::size_t c = 0; c < v.channels; ++c) {
            convolve_axis(img + c * plane, v.h, v.w, k, radius, true);
            convolve_axis(img + c * plane, v.h, v.w, k, radius, false);
        }
    } else if (name == "motion_blur") {
        const auto length = static_cast<std::size_t>(std::max(1.0, std::round(param)));
        const std::vector<double> k(length, 1.0 / static_cast<double>(length));
        const auto origin = static_cast<std::ptrdiff_t>((length - 1) / 2);
        for (std::size_t c = 0; c < v.channels; ++c) convolve_axis(img + c * plane, v.h, v.w, k, origin, true);
    } else if (name == "contrast") {
        for (std::size_t c = 0; c < v.channels; ++c) {
            double* p = img + c * plane;
            double mean = 0.0;
            for (std::size_t i = 0; i < plane; ++i) mean += p[i];
            mean /= static_cast<double>(plane);
            for (std::size_t i = 0; i < plane; ++i) p[i] = mean + (p[i] - mean) * param;
        }
    } else if (name == "pixelate") {
        const auto lh = static_cast<std::size_t>(std::max(1.0, std::round(static_cast<double>(v.h) / param)));
        const auto lw = static_cast<std::size_t>(std::max(1.0, std::round(static_cast<double>(v.w) / param)));
        if (lh == v.h && lw == v.w) return;
        for (std::size_t c = 0; c < v.channels; ++c) {
            double* p = img + c * plane;
            std::vector<double> sum(lh * lw, 0.0);
            std::vector<double> cnt(lh * lw, 0.0);
            for (std::size_t y = 0; y < v.h; ++y)
                for (std::size_t x = 0; x < v.w; ++x) {
                    const std::size_t cell = (y * lh / v.h) * lw + (x * lw / v.w);
                    sum[cell] += p[y * v.w + x];
                    cnt[cell] += 1.0;
                }
            for (std::size_t y = 0; y < v.h; ++y)
                for (std::size_t x = 0; x < v.w; ++x) {
                    const std::size_t cell = (y * lh / v.h) * lw + (x * lw / v.w);
                    p[y * v.w + x] = sum[cell] / cnt[cell];
                }
        }
    } else if (name == "fog") {
        const Plane haze = haze_field(rng, v.h, v.w);
        for (std::size_t c = 0; c < v.channels; ++c)
            for (std::size_t i = 0; i < plane; ++i) img[c * plane + i] += param * haze[i];
    } else if (name == "brightness") {
        for (std::size_t i = 0; i < v.image(); ++i) img[i] += param;
    } else {
        throw ConfigError("corrupt: unknown corruption " + name);
    }
}

}  // namespace

const std::vector<CorruptionInfo>& corruption_table() {
    static const std::vector<CorruptionInfo> table = {
        {"gaussian_noise", CorruptionCategory::Noise, 0.02, 0.2},
        {"impulse_noise", CorruptionCategory::Noise, 0.01, 0.15},
        {"gaussian_blur", CorruptionCategory::Blur, 0.5, 3.0},
        {"motion_blur", CorruptionCategory::Blur, 2.0, 10.0},
        {"contrast", CorruptionCategory::Digital, 0.8, 0.3},
        {"pixelate", CorruptionCategory::Digital, 2.0, 8.0},
        {"fog", CorruptionCategory::Weather, 0.1, 0.6},
        {"brightness", CorruptionCategory::Weather, 0.05, 0.4},
    };
    return table;
}

const CorruptionInfo& corruption_info(const std::string& name) {
    for (const auto& c : corruption_table())
        if (c.name == name) return c;
    throw ConfigError("unknown corruption " + name);
}

double corruption_parameter(const std::string& name, int severity) {
    if (severity < 1 || severity > 5) throw DomainError("corruption severity must lie in 1..5, got " + std::to_string(severity));
    const auto& info = corruption_info(name);
    const double t = static_cast<double>(severity - 1) / 4.0;
    return (1.0 - t) * info.severity1 + t * info.severity5;  // exact at both ends
}

Tensor corrupt_with_parameter(const Tensor& images, const std::string& name, double parameter, std::uint64_t seed) {
    (void)corruption_info(name);
    const ImageView v = view_of(images);
    Tensor out = images.clone();
    auto data = out.mutable_data();
    const auto batch = static_cast<std::ptrdiff_t>(v.batch);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t b = 0; b < batch; ++b) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(b)));
        double* img = data.data() + static_cast<std::size_t>(b) * v.image();
        apply_one(name, parameter, v, img, rng);
        for (std::size_t i = 0; i < v.image(); ++i) img[i] = std::clamp(img[i], 0.0, 1.0);
    }
    return out;
}

Tensor corrupt(const Tensor& images, const CorruptionSpec& spec, std::uint64_t seed) {
    const auto& info = corruption_info(spec.name);
    if (info.category != spec.category) {
        throw ConfigError("corrupt: " + spec.name + " belongs to " + category_name(info.category));
    }
    return corrupt_with_parameter(images, spec.name, corruption_parameter(spec.name, spec.severity), seed);
}

}  // namespace darn
