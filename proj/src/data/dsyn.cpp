#include "darn/binary_io.hpp"
#include "darn/synth.hpp"

namespace darn {

namespace {
constexpr char kMagic[4] = {'D', 'S', 'Y', 'N'};
constexpr std::uint16_t kVersion = 1;
}  // namespace

void write_dsyn(const std::string& path, const SampleBatch& batch, std::size_t classes) {
    io::ByteWriter w;
    w.bytes(kMagic, 4);
    w.u16(kVersion);
    const auto& img = batch.images;
    w.u32(static_cast<std::uint32_t>(img.dim(0)));
    w.u32(static_cast<std::uint32_t>(img.dim(2)));
    w.u32(static_cast<std::uint32_t>(img.dim(3)));
    w.u32(static_cast<std::uint32_t>(img.dim(1)));
    w.u32(static_cast<std::uint32_t>(classes));
    for (double v : img.data()) w.f32(static_cast<float>(v));
    w.bytes(batch.labels.data.data(), batch.labels.data.size());
    for (auto t : batch.tags) w.u8(static_cast<std::uint8_t>(t));
    io::write_file_atomic(path, w.buffer());
}

SampleBatch read_dsyn(const std::string& path, std::size_t* classes) {
    io::ByteReader r(io::read_file(path));
    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != "DSYN") throw FormatError(path + ": bad magic");
    const auto version = r.u16();
    if (version != kVersion) throw FormatError(path + ": unsupported version " + std::to_string(version));
    const std::size_t count = r.u32(), h = r.u32(), w = r.u32(), cin = r.u32(), k = r.u32();
    if (classes) *classes = k;
    std::vector<double> data(count * cin * h * w);
    for (auto& v : data) v = static_cast<double>(r.f32());
    SampleBatch b;
    b.images = Tensor::from({count, cin, h, w}, std::move(data));
    b.labels.batch = count;
    b.labels.height = h;
    b.labels.width = w;
    b.labels.data.resize(count * h * w);
    r.bytes(b.labels.data.data(), b.labels.data.size());
    for (std::size_t i = 0; i < count; ++i) {
        const auto t = r.u8();
        if (t > 1) throw FormatError(path + ": bad complexity tag");
        b.tags.push_back(static_cast<ComplexityTag>(t));
    }
    if (!r.done()) throw FormatError(path + ": trailing bytes");
    b.sample_seeds.assign(count, 0);
    return b;
}

}  // namespace darn
