#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "darn/tensor.hpp"

namespace darn {

// Four encoder feature maps, finest first. Level l has stride 2^(l+1).
struct FeaturePyramid {
    std::array<Tensor, 4> levels;
    std::size_t input_h = 0;
    std::size_t input_w = 0;

    const Tensor& operator[](std::size_t l) const { return levels.at(l); }
    std::size_t batch() const { return levels[0].dim(0); }
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Deterministic randomly initialised convolutional stand-in for a pretrained
// backbone. Four stages, each
//   conv3x3 stride 2 -> relu -> conv3x3 stride 1 -> relu
// so stage outputs sit at 1/2, 1/4, 1/8, 1/16 of the input resolution.
class Encoder {
   public:
    // He-normal weights (std = sqrt(2 / fan_in)), zero biases, drawn from a
    // stream seeded by `seed`. Throws ConfigError on non-positive widths.
    static Encoder build(std::uint64_t seed, std::size_t in_channels, std::array<std::size_t, 4> widths,
                         bool frozen = true);

    // Images [B,Cin,H,W] with H, W multiples of 16.
    FeaturePyramid encode(const Tensor& images) const;

    bool frozen() const { return frozen_; }
    // Frozen parameters never require grad; unfrozen ones always do.
    void set_frozen(bool frozen);

    std::size_t in_channels() const { return in_channels_; }
    const std::array<std::size_t, 4>& widths() const { return widths_; }

    std::vector<NamedTensor>& parameters() { return params_; }
    const std::vector<NamedTensor>& parameters() const { return params_; }
    std::size_t parameter_count() const;

    // Closed-form count: sum over stages of 9*Cprev*C + C + 9*C*C + C.
    static std::size_t expected_parameter_count(std::size_t in_channels, std::array<std::size_t, 4> widths);

   private:
    std::size_t in_channels_ = 0;
    std::array<std::size_t, 4> widths_{};
    bool frozen_ = true;
    // Per stage: down.w, down.b, refine.w, refine.b
    std::vector<NamedTensor> params_;
};

// FNV-1a over the raw bytes of every tensor, in order. Used to assert that
// frozen weights stay bit-identical.
std::uint64_t checksum(const std::vector<NamedTensor>& tensors);

}  // namespace darn
