#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "darn/optim.hpp"
#include "darn/tensor.hpp"

namespace darn {

enum class TensorKind : std::uint8_t { Param = 0, AdamM = 1, AdamV = 2 };

struct CheckpointTensor {
    std::string name;
    TensorKind kind = TensorKind::Param;
    bool frozen = false;
    Shape shape;
    std::vector<double> data;
};

// Layout (little-endian):
//   "DARN" u16 version
//   u32 epoch, u32 epochs_since_best, f64 best_val_miou, u64 seed, u64 global_step
//   f64 base_lr, f64 min_lr, u64 warmup_steps, u64 total_steps
//   f64 beta1, f64 beta2, f64 eps, f64 weight_decay, u8 decay_biases, u64 adam_steps
//   u32 tensor count, then per tensor:
//     u32 name length, utf8 name, u8 kind, u8 frozen, u32 rank, u32 extents[rank],
//     u8 dtype (1 = f64), data
struct Checkpoint {
    static constexpr std::uint16_t kVersion = 1;

    std::uint32_t epoch = 0;  // completed epochs
    std::uint32_t epochs_since_best = 0;
    double best_val_miou = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t global_step = 0;
    CosineSchedule schedule;
    AdamWConfig adam;
    std::uint64_t adam_steps = 0;
    std::vector<CheckpointTensor> tensors;

    const CheckpointTensor* find(const std::string& name, TensorKind kind) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
// Throws FormatError on bad magic, version, dtype or truncation.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace darn
