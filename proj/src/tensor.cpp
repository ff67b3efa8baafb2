#include "mfn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mfn {

std::string Shape::str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
}

void validate_shape(const Shape& shape) {
    const int dims[4] = {shape.n, shape.c, shape.h, shape.w};
    std::size_t total = 1;
    for (int d : dims) {
        if (d < 1) throw DimensionError("tensor dims must be >= 1, got " + shape.str());
        if (total > std::numeric_limits<std::size_t>::max() / sizeof(Real) / static_cast<std::size_t>(d))
            throw DimensionError("tensor dims overflow: " + shape.str());
        total *= static_cast<std::size_t>(d);
    }
}

Tensor4::Tensor4(Shape shape, Real fill) : shape_(shape) {
    validate_shape(shape);
    data_.assign(shape.size(), fill);
}

void Tensor4::fill(Real value) noexcept { std::fill(data_.begin(), data_.end(), value); }

bool Tensor4::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
}

Tensor4 tensor_new(Shape shape, Real fill) { return Tensor4(shape, fill); }

namespace {

void require_same(const Tensor4& a, const Tensor4& b, const char* what) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
}

} // namespace

Tensor4 elementwise(const Tensor4& a, const Tensor4& b, ElementwiseOp op) {
    require_same(a, b, "elementwise");
    Tensor4 out(a.shape());
    const Real* pa = a.data();
    const Real* pb = b.data();
    Real* po = out.data();
    const std::size_t n = a.size();
    switch (op) {
    case ElementwiseOp::add:
        for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
        break;
    case ElementwiseOp::sub:
        for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
        break;
    case ElementwiseOp::mul:
        for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
        break;
    case ElementwiseOp::average:
        for (std::size_t i = 0; i < n; ++i) po[i] = 0.5f * (pa[i] + pb[i]);
        break;
    }
    return out;
}

Tensor4 add(const Tensor4& a, const Tensor4& b) { return elementwise(a, b, ElementwiseOp::add); }
Tensor4 sub(const Tensor4& a, const Tensor4& b) { return elementwise(a, b, ElementwiseOp::sub); }
Tensor4 mul(const Tensor4& a, const Tensor4& b) { return elementwise(a, b, ElementwiseOp::mul); }
Tensor4 average(const Tensor4& a, const Tensor4& b) {
    return elementwise(a, b, ElementwiseOp::average);
}

Tensor4 scale(const Tensor4& a, Real factor) {
    Tensor4 out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * factor;
    return out;
}

void axpy(Tensor4& dst, const Tensor4& src, Real factor) {
    require_same(dst, src, "axpy");
    Real* d = dst.data();
    const Real* s = src.data();
    for (std::size_t i = 0; i < dst.size(); ++i) d[i] += factor * s[i];
}

double dot(const Tensor4& a, const Tensor4& b) {
    require_same(a, b, "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        acc += static_cast<double>(a.data()[i]) * static_cast<double>(b.data()[i]);
    return acc;
}

double sum(const Tensor4& a) {
    double acc = 0.0;
    for (Real v : a.values()) acc += v;
    return acc;
}

LabelMap::LabelMap(int n, int h, int w, std::uint8_t fill) : shape{n, 1, h, w} {
    validate_shape(shape);
    data.assign(shape.size(), fill);
}

LabelMap argmax_channel(const Tensor4& t) {
    validate_shape(t.shape());
    LabelMap out(t.n(), t.h(), t.w());
    const std::size_t plane = t.shape().plane();
    for (int n = 0; n < t.n(); ++n) {
        const Real* base = t.data() + t.offset(n, 0, 0, 0);
        std::uint8_t* dst = out.data.data() + n * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            Real best = base[p];
            int best_c = 0;
            for (int c = 1; c < t.c(); ++c) {
                const Real v = base[c * plane + p];
                if (v > best) {
                    best = v;
                    best_c = c;
                }
            }
            dst[p] = static_cast<std::uint8_t>(best_c);
        }
    }
    return out;
}

Tensor4 softmax_channels(const Tensor4& scores) {
    Tensor4 out(scores.shape());
    const std::size_t plane = scores.shape().plane();
    const int k = scores.c();
    for (int n = 0; n < scores.n(); ++n) {
        const Real* in = scores.data() + scores.offset(n, 0, 0, 0);
        Real* o = out.data() + out.offset(n, 0, 0, 0);
        for (std::size_t p = 0; p < plane; ++p) {
            Real mx = in[p];
            for (int c = 1; c < k; ++c) mx = std::max(mx, in[c * plane + p]);
            double z = 0.0;
            for (int c = 0; c < k; ++c) z += std::exp(static_cast<double>(in[c * plane + p] - mx));
            for (int c = 0; c < k; ++c)
                o[c * plane + p] =
                    static_cast<Real>(std::exp(static_cast<double>(in[c * plane + p] - mx)) / z);
        }
    }
    return out;
}

Parameter::Parameter(std::string name_, Shape shape, bool decay_)
    : name(std::move(name_)), value(shape), grad(shape), velocity(shape), decay(decay_) {}

} // namespace mfn
