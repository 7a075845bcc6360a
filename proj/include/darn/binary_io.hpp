#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "darn/error.hpp"

namespace darn::io {

// Little-endian byte sink.
class ByteWriter {
   public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { put(v); }
    void u32(std::uint32_t v) { put(v); }
    void u64(std::uint64_t v) { put(v); }
    void f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    const std::vector<std::uint8_t>& buffer() const { return buf_; }

   private:
    template <typename T>
    void put(T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
   public:
    explicit ByteReader(std::vector<std::uint8_t> data) : buf_(std::move(data)) {}

    std::uint8_t u8() { return get<std::uint8_t>(); }
    std::uint16_t u16() { return get<std::uint16_t>(); }
    std::uint32_t u32() { return get<std::uint32_t>(); }
    std::uint64_t u64() { return get<std::uint64_t>(); }
    float f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
    double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
    void bytes(void* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, buf_.data() + pos_, n);
        pos_ += n;
    }
    std::string str() {
        const std::uint32_t n = u32();
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
    bool done() const { return pos_ == buf_.size(); }

   private:
    void need(std::size_t n) const {
        if (pos_ + n > buf_.size()) throw FormatError("unexpected end of file");
    }
    template <typename T>
    T get() {
        need(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(buf_[pos_ + i]) << (8 * i));
        pos_ += sizeof(T);
        return v;
    }
    std::vector<std::uint8_t> buf_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::string& path);
// Writes to `path`.tmp and renames over `path`.
void write_file_atomic(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace darn::io
