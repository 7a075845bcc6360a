#include "darn/encoder.hpp"

#include <cmath>
#include <cstring>

#include "darn/error.hpp"
#include "darn/ops.hpp"
#include "darn/rng.hpp"

namespace darn {

namespace {
Tensor he_normal(Rng& rng, Shape shape, std::size_t fan_in) {
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.normal(0.0, std);
    return Tensor::from(std::move(shape), std::move(v));
}
}  // namespace

Encoder Encoder::build(std::uint64_t seed, std::size_t in_channels, std::array<std::size_t, 4> widths, bool frozen) {
    if (in_channels == 0) throw ConfigError("encoder: in_channels must be positive");
    for (auto w : widths)
        if (w == 0) throw ConfigError("encoder: widths must be positive");
    Encoder enc;
    enc.in_channels_ = in_channels;
    enc.widths_ = widths;
    Rng rng(mix_seed(seed, 0xE1C0DE));
    std::size_t prev = in_channels;
    for (std::size_t s = 0; s < 4; ++s) {
        const std::size_t c = widths[s];
        const std::string p = "encoder.stage" + std::to_string(s + 1);
        enc.params_.push_back({p + ".down.w", he_normal(rng, {c, prev, 3, 3}, prev * 9)});
        enc.params_.push_back({p + ".down.b", Tensor::zeros({c})});
        enc.params_.push_back({p + ".refine.w", he_normal(rng, {c, c, 3, 3}, c * 9)});
        enc.params_.push_back({p + ".refine.b", Tensor::zeros({c})});
        prev = c;
    }
    enc.set_frozen(frozen);
    return enc;
}

void Encoder::set_frozen(bool frozen) {
    frozen_ = frozen;
    for (auto& p : params_) {
        p.tensor.set_requires_grad(!frozen);
        if (frozen) p.tensor.zero_grad();
    }
}

FeaturePyramid Encoder::encode(const Tensor& images) const {
    if (!images.defined() || images.rank() != 4) throw DimensionError("encode: images must be [B,C,H,W]");
    if (images.dim(1) != in_channels_) {
        throw DimensionError("encode: expected " + std::to_string(in_channels_) + " channels, got " +
                             std::to_string(images.dim(1)));
    }
    const std::size_t h = images.dim(2), w = images.dim(3);
    if (h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0) {
        throw GeometryError("encode: spatial extents must be positive multiples of 16, got " + std::to_string(h) +
                            "x" + std::to_string(w));
    }
    FeaturePyramid pyr;
    pyr.input_h = h;
    pyr.input_w = w;
    Tensor x = images;
    for (std::size_t s = 0; s < 4; ++s) {
        const auto& dw = params_[4 * s].tensor;
        const auto& db = params_[4 * s + 1].tensor;
        const auto& rw = params_[4 * s + 2].tensor;
        const auto& rb = params_[4 * s + 3].tensor;
        // "Same" padding for the stride-2 conv: the single extra row/column
        // goes at the bottom/right so the output extent is exactly H/2.
        x = ops::relu(ops::conv2d(ops::pad2d(x, 0, 1, 0, 1), dw, db, 2, 0));
        x = ops::relu(ops::conv2d(x, rw, rb, 1, 1));
        pyr.levels[s] = x;
    }
    return pyr;
}

std::size_t Encoder::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
}

std::size_t Encoder::expected_parameter_count(std::size_t in_channels, std::array<std::size_t, 4> widths) {
    std::size_t n = 0;
    std::size_t prev = in_channels;
    for (auto c : widths) {
        n += 9 * prev * c + c + 9 * c * c + c;
        prev = c;
    }
    return n;
}

std::uint64_t checksum(const std::vector<NamedTensor>& tensors) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& nt : tensors) {
        for (double v : nt.tensor.data()) {
            unsigned char bytes[sizeof(double)];
            std::memcpy(bytes, &v, sizeof(double));
            for (unsigned char b : bytes) {
                h ^= b;
                h *= 0x100000001b3ULL;
            }
        }
    }
    return h;
}

}  // namespace darn
