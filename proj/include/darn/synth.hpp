#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "darn/metrics.hpp"
#include "darn/objectives.hpp"
#include "darn/tensor.hpp"

namespace darn {

enum class ComplexityTag : std::uint8_t { Simple = 0, Complex = 1 };

struct SampleBatch {
    Tensor images;  // [B,Cin,H,W] in [0,1]
    LabelMask labels;
    std::vector<ComplexityTag> tags;
    std::vector<std::uint64_t> sample_seeds;

    std::size_t size() const { return tags.size(); }
};

struct SceneConfig {
    std::uint64_t global_seed = 0;
    std::size_t count = 0;
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t channels = 3;
    std::size_t classes = 3;
    double complex_fraction = 0.5;
    std::size_t first_index = 0;  // sample indices are first_index .. first_index+count-1
};

// Scene parameters. Simple scenes: 2-3 large smooth blobs, sensor noise
// sigma 0.1. Complex scenes: many small structures, 1-2 px lines, high
// frequency texture, sensor noise sigma 0.02.
inline constexpr double kSimpleNoise = 0.1;
inline constexpr double kComplexNoise = 0.02;
inline constexpr double kTextureAmplitude = 0.2;  // complex-scene sinusoidal texture

// Sample i is a pure function of (global_seed, i): its stream is seeded with
// mix_seed(global_seed, i) (splitmix64 based, see rng.hpp). Generation runs
// in parallel over samples; the result does not depend on the thread count.
SampleBatch generate(const SceneConfig& cfg);

// Rows `indices` of `batch`, in order.
SampleBatch select(const SampleBatch& batch, const std::vector<std::size_t>& indices);

// Fraction of pixels with a 4-neighbour of a different label, per sample.
std::vector<double> boundary_density(const LabelMask& labels);

// Class colour (per channel) used by the generator.
double class_color(std::size_t cls, std::size_t channel);

// ---------------------------------------------------------------------------
// DSYN container:
//   "DSYN" | u16 version=1 | u32 count,H,W,Cin,K | f32 images | u8 labels | u8 tags
// all little-endian, row-major.
void write_dsyn(const std::string& path, const SampleBatch& batch, std::size_t classes);
SampleBatch read_dsyn(const std::string& path, std::size_t* classes = nullptr);

// ---------------------------------------------------------------------------
// Corruptions: two per category, severities 1..5 on a linear grid between the
// listed endpoints.

struct CorruptionInfo {
    std::string name;
    CorruptionCategory category;
    double severity1;  // parameter at severity 1
    double severity5;  // parameter at severity 5
};

struct CorruptionSpec {
    CorruptionCategory category;
    std::string name;
    int severity = 1;
};

const std::vector<CorruptionInfo>& corruption_table();
const CorruptionInfo& corruption_info(const std::string& name);
double corruption_parameter(const std::string& name, int severity);

// Throws DomainError for severity outside 1..5 and ConfigError for an unknown
// name. Output is clamped to [0,1] and is a pure function of (images, spec, seed).
Tensor corrupt(const Tensor& images, const CorruptionSpec& spec, std::uint64_t seed);
// Same, with the raw parameter instead of a severity.
Tensor corrupt_with_parameter(const Tensor& images, const std::string& name, double parameter, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Single-step FGSM: x' = clamp(x + eps * sign(grad_x loss(x, labels)), 0, 1)

using ImageLoss = std::function<Tensor(const Tensor& images, const LabelMask& labels)>;

inline constexpr double kFgsmEpsilon = 8.0 / 255.0;

Tensor fgsm(const ImageLoss& loss, const Tensor& images, const LabelMask& labels, double epsilon = kFgsmEpsilon);

}  // namespace darn
