#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "mfn/error.hpp"

namespace mfn::detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) {
        u8(static_cast<std::uint8_t>(v));
        u8(static_cast<std::uint8_t>(v >> 8));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    void f32s(const float* p, std::size_t n) {
        if constexpr (std::endian::native == std::endian::little) {
            bytes(p, n * sizeof(float));
        } else {
            for (std::size_t i = 0; i < n; ++i) f32(p[i]);
        }
    }
    // Narrowing overload for the double-precision build.
    void f32s(const double* p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) f32(static_cast<float>(p[i]));
    }
    const std::vector<std::uint8_t>& buffer() const { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(const std::vector<std::uint8_t>& buf) : buf_(buf) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return buf_.size() - pos_; }

    void need(std::size_t n, const char* what) const {
        if (remaining() < n) throw FormatError(std::string("truncated file while reading ") + what, pos_);
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return buf_[pos_++];
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        const std::uint16_t v = static_cast<std::uint16_t>(buf_[pos_] | (buf_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    void bytes(void* dst, std::size_t n, const char* what) {
        need(n, what);
        std::memcpy(dst, buf_.data() + pos_, n);
        pos_ += n;
    }
    void f32s(float* dst, std::size_t n, const char* what) {
        need(n * sizeof(float), what);
        if constexpr (std::endian::native == std::endian::little) {
            bytes(dst, n * sizeof(float), what);
        } else {
            for (std::size_t i = 0; i < n; ++i) dst[i] = std::bit_cast<float>(u32(what));
        }
    }
    void f32s(double* dst, std::size_t n, const char* what) {
        need(n * sizeof(float), what);
        for (std::size_t i = 0; i < n; ++i) dst[i] = std::bit_cast<float>(u32(what));
    }

private:
    const std::vector<std::uint8_t>& buf_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);

} // namespace mfn::detail
