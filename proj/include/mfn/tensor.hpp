#pragma once

#include <cstddef>
#include <cstdint>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "mfn/error.hpp"

namespace mfn {

// Scalar of every tensor. Training and inference use float; the library is
// also built with MFN_DOUBLE (namespace renamed, see CMakeLists.txt) for
// finite-difference gradient checks, where float rounding noise alone exceeds
// the tolerance.
#ifdef MFN_DOUBLE
using Real = double;
#else
using Real = float;
#endif

// Eigen's vectorised kernels choose where to peel from the buffer address, so
// an unaligned buffer can change the summation order between runs. All
// numeric storage is 64-byte aligned to keep results bit-reproducible.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using RealBuffer = std::vector<Real, AlignedAllocator<Real>>;

/// Dimensions of a Tensor4: batch, channels, rows, cols.
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t size() const noexcept {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

/// Dense 4-D array, channel-major within a batch item and row-major
/// (w fastest) within a channel.
///
/// A default-constructed tensor is empty and only used as a placeholder for
/// layer caches; every operation that returns a tensor returns one with all
/// dims >= 1.
class Tensor4 {
public:
    Tensor4() = default;
    explicit Tensor4(Shape shape, Real fill = 0.0f);

    const Shape& shape() const noexcept { return shape_; }
    int n() const noexcept { return shape_.n; }
    int c() const noexcept { return shape_.c; }
    int h() const noexcept { return shape_.h; }
    int w() const noexcept { return shape_.w; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    Real* data() noexcept { return data_.data(); }
    const Real* data() const noexcept { return data_.data(); }
    std::span<Real> values() noexcept { return data_; }
    std::span<const Real> values() const noexcept { return data_; }

    std::size_t offset(int n, int c, int y, int x) const noexcept {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }
    Real& operator()(int n, int c, int y, int x) noexcept { return data_[offset(n, c, y, x)]; }
    Real operator()(int n, int c, int y, int x) const noexcept { return data_[offset(n, c, y, x)]; }

    /// One (h, w) plane of batch item n, channel c.
    std::span<Real> plane(int n, int c) noexcept {
        return {data_.data() + offset(n, c, 0, 0), shape_.plane()};
    }
    std::span<const Real> plane(int n, int c) const noexcept {
        return {data_.data() + offset(n, c, 0, 0), shape_.plane()};
    }

    void fill(Real value) noexcept;
    bool all_finite() const noexcept;

private:
    Shape shape_{};
    RealBuffer data_;
};

/// Throws DimensionError for zero, negative or overflowing dims.
void validate_shape(const Shape& shape);

Tensor4 tensor_new(Shape shape, Real fill);

enum class ElementwiseOp { add, sub, mul, average };

Tensor4 elementwise(const Tensor4& a, const Tensor4& b, ElementwiseOp op);
Tensor4 add(const Tensor4& a, const Tensor4& b);
Tensor4 sub(const Tensor4& a, const Tensor4& b);
Tensor4 mul(const Tensor4& a, const Tensor4& b);
Tensor4 average(const Tensor4& a, const Tensor4& b);
Tensor4 scale(const Tensor4& a, Real factor);

// In-place accumulation: dst += factor * src.
void axpy(Tensor4& dst, const Tensor4& src, Real factor = 1.0f);

double dot(const Tensor4& a, const Tensor4& b);
double sum(const Tensor4& a);

/// Per-pixel integer labels with shape (n, 1, h, w). The value kIgnore marks
/// pixels excluded from losses and metrics.
struct LabelMap {
    static constexpr std::uint8_t kIgnore = 255;

    Shape shape{};
    std::vector<std::uint8_t> data;

    LabelMap() = default;
    LabelMap(int n, int h, int w, std::uint8_t fill = 0);

    int n() const noexcept { return shape.n; }
    int h() const noexcept { return shape.h; }
    int w() const noexcept { return shape.w; }
    std::uint8_t& at(int n, int y, int x) noexcept {
        return data[(static_cast<std::size_t>(n) * shape.h + y) * shape.w + x];
    }
    std::uint8_t at(int n, int y, int x) const noexcept {
        return data[(static_cast<std::size_t>(n) * shape.h + y) * shape.w + x];
    }
};

/// Index of the largest channel per pixel; ties go to the lowest index.
LabelMap argmax_channel(const Tensor4& t);

/// Softmax over the channel axis with per-pixel max subtraction.
Tensor4 softmax_channels(const Tensor4& scores);

/// A learnable tensor with its gradient and momentum buffers.
struct Parameter {
    std::string name;
    Tensor4 value;
    Tensor4 grad;
    Tensor4 velocity;
    Real lr_multiplier = 1.0f;
    bool decay = true;

    Parameter() = default;
    Parameter(std::string name, Shape shape, bool decay = true);

    void zero_grad() noexcept { grad.fill(0.0f); }
};

} // namespace mfn
