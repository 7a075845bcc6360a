#include "darn/checkpoint.hpp"

#include <filesystem>

#include "darn/binary_io.hpp"
#include "darn/error.hpp"

namespace darn {

namespace {
constexpr char kMagic[4] = {'D', 'A', 'R', 'N'};
constexpr std::uint8_t kDtypeF64 = 1;
}  // namespace

const CheckpointTensor* Checkpoint::find(const std::string& name, TensorKind kind) const {
    for (const auto& t : tensors)
        if (t.kind == kind && t.name == name) return &t;
    return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
    io::ByteWriter w;
    w.bytes(kMagic, 4);
    w.u16(Checkpoint::kVersion);
    w.u32(c.epoch);
    w.u32(c.epochs_since_best);
    w.f64(c.best_val_miou);
    w.u64(c.seed);
    w.u64(c.global_step);
    w.f64(c.schedule.base_lr);
    w.f64(c.schedule.min_lr);
    w.u64(c.schedule.warmup_steps);
    w.u64(c.schedule.total_steps);
    w.f64(c.adam.beta1);
    w.f64(c.adam.beta2);
    w.f64(c.adam.eps);
    w.f64(c.adam.weight_decay);
    w.u8(c.adam.decay_biases ? 1 : 0);
    w.u64(c.adam_steps);
    w.u32(static_cast<std::uint32_t>(c.tensors.size()));
    for (const auto& t : c.tensors) {
        if (shape_numel(t.shape) != t.data.size()) throw FormatError("checkpoint: tensor " + t.name + " data/shape mismatch");
        w.str(t.name);
        w.u8(static_cast<std::uint8_t>(t.kind));
        w.u8(t.frozen ? 1 : 0);
        w.u32(static_cast<std::uint32_t>(t.shape.size()));
        for (auto e : t.shape) w.u32(static_cast<std::uint32_t>(e));
        w.u8(kDtypeF64);
        for (double v : t.data) w.f64(v);
    }
    return w.buffer();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    io::ByteReader r(bytes);
    char magic[4];
    r.bytes(magic, 4);
    if (std::string_view(magic, 4) != std::string_view(kMagic, 4)) throw FormatError("checkpoint: bad magic");
    const auto version = r.u16();
    if (version != Checkpoint::kVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint c;
    c.epoch = r.u32();
    c.epochs_since_best = r.u32();
    c.best_val_miou = r.f64();
    c.seed = r.u64();
    c.global_step = r.u64();
    c.schedule.base_lr = r.f64();
    c.schedule.min_lr = r.f64();
    c.schedule.warmup_steps = r.u64();
    c.schedule.total_steps = r.u64();
    c.adam.beta1 = r.f64();
    c.adam.beta2 = r.f64();
    c.adam.eps = r.f64();
    c.adam.weight_decay = r.f64();
    c.adam.decay_biases = r.u8() != 0;
    c.adam_steps = r.u64();
    const auto n = r.u32();
    c.tensors.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        CheckpointTensor t;
        t.name = r.str();
        const auto kind = r.u8();
        if (kind > 2) throw FormatError("checkpoint: unknown tensor kind for " + t.name);
        t.kind = static_cast<TensorKind>(kind);
        t.frozen = r.u8() != 0;
        const auto rank = r.u32();
        if (rank > 8) throw FormatError("checkpoint: implausible rank for " + t.name);
        for (std::uint32_t d = 0; d < rank; ++d) t.shape.push_back(r.u32());
        if (r.u8() != kDtypeF64) throw FormatError("checkpoint: unsupported dtype for " + t.name);
        t.data.resize(shape_numel(t.shape));
        for (auto& v : t.data) v = r.f64();
        c.tensors.push_back(std::move(t));
    }
    if (!r.done()) throw FormatError("checkpoint: trailing bytes");
    return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    io::write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(io::read_file(path)); }

}  // namespace darn
