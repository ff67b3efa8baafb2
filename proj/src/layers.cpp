#include "mfn/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>

namespace mfn {

namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void im2col(const Real* src, int channels, int h, int w, int k, int pad, int stride, int ho,
            int wo, Real* col) {
    for (int c = 0; c < channels; ++c) {
        const Real* plane = src + static_cast<std::size_t>(c) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                Real* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * ho * wo;
                for (int y = 0; y < ho; ++y) {
                    const int sy = y * stride - pad + ky;
                    Real* dst = row + static_cast<std::size_t>(y) * wo;
                    if (sy < 0 || sy >= h) {
                        std::fill(dst, dst + wo, 0.0f);
                        continue;
                    }
                    const Real* srow = plane + static_cast<std::size_t>(sy) * w;
                    for (int x = 0; x < wo; ++x) {
                        const int sx = x * stride - pad + kx;
                        dst[x] = (sx >= 0 && sx < w) ? srow[sx] : 0.0f;
                    }
                }
            }
        }
    }
}

void col2im(const Real* col, int channels, int h, int w, int k, int pad, int stride, int ho,
            int wo, Real* dst) {
    for (int c = 0; c < channels; ++c) {
        Real* plane = dst + static_cast<std::size_t>(c) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const Real* row =
                    col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * ho * wo;
                for (int y = 0; y < ho; ++y) {
                    const int sy = y * stride - pad + ky;
                    if (sy < 0 || sy >= h) continue;
                    Real* drow = plane + static_cast<std::size_t>(sy) * w;
                    const Real* srow = row + static_cast<std::size_t>(y) * wo;
                    for (int x = 0; x < wo; ++x) {
                        const int sx = x * stride - pad + kx;
                        if (sx >= 0 && sx < w) drow[sx] += srow[x];
                    }
                }
            }
        }
    }
}

} // namespace

std::uint64_t hash_bytes(std::uint64_t seed, const void* data, std::size_t len) {
    // FNV-1a
    std::uint64_t h = seed ^ 0xcbf29ce484222325ULL;
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

void Layer::collect_state(std::vector<StateRef>& out) {
    for (Parameter* p : parameters()) out.push_back({p->name, p->value.shape(), p->value.data()});
}

// ---------------------------------------------------------------------------
// Conv2D

Conv2D::Conv2D(std::string name, int in_channels, int out_channels, int kernel, int padding,
               int stride)
    : name_(std::move(name)), in_c_(in_channels), out_c_(out_channels), k_(kernel),
      pad_(padding < 0 ? kernel / 2 : padding), stride_(stride),
      weight_(name_ + ".weight", Shape{out_channels, in_channels, kernel, kernel}),
      bias_(name_ + ".bias", Shape{1, out_channels, 1, 1}, false) {
    if (stride_ < 1) throw ArgumentError(name_ + ": stride must be >= 1");
}

void Conv2D::collect_parameters(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
}

void Conv2D::init_he(std::mt19937_64& rng) {
    const double fan_in = static_cast<double>(in_c_) * k_ * k_;
    std::normal_distribution<Real> dist(0.0f, static_cast<Real>(std::sqrt(2.0 / fan_in)));
    for (Real& v : weight_.value.values()) v = dist(rng);
    bias_.value.fill(0.0f);
}

void Conv2D::zero_init() {
    weight_.value.fill(0.0f);
    bias_.value.fill(0.0f);
}

Shape Conv2D::output_shape(const Shape& in) const {
    if (in.c != in_c_)
        throw ShapeError(name_ + ": expected " + std::to_string(in_c_) + " input channels, got " +
                         std::to_string(in.c));
    const int span_h = in.h + 2 * pad_ - k_;
    const int span_w = in.w + 2 * pad_ - k_;
    if (span_h < 0 || span_w < 0 || span_h % stride_ != 0 || span_w % stride_ != 0)
        throw ShapeError(name_ + ": input " + in.str() + " incompatible with kernel/stride");
    return Shape{in.n, out_c_, span_h / stride_ + 1, span_w / stride_ + 1};
}

Tensor4 Conv2D::forward(const Tensor4& x) {
    const Shape os = output_shape(x.shape());
    input_ = x;
    Tensor4 y(os);
    const int rows = in_c_ * k_ * k_;
    const int cols = os.h * os.w;
    const bool direct = (k_ == 1 && pad_ == 0 && stride_ == 1);
    if (!direct) col_.resize(static_cast<std::size_t>(rows) * cols);
    ConstMapMat wm(weight_.value.data(), out_c_, rows);
    const Real* b = bias_.value.data();
    for (int n = 0; n < x.n(); ++n) {
        const Real* src = x.data() + x.offset(n, 0, 0, 0);
        if (!direct) im2col(src, in_c_, x.h(), x.w(), k_, pad_, stride_, os.h, os.w, col_.data());
        ConstMapMat cm(direct ? src : col_.data(), rows, cols);
        MapMat ym(y.data() + y.offset(n, 0, 0, 0), out_c_, cols);
        ym.noalias() = wm * cm;
        for (int o = 0; o < out_c_; ++o) ym.row(o).array() += b[o];
    }
    return y;
}

Tensor4 Conv2D::backward(const Tensor4& dy) {
    if (input_.empty()) throw StateError(name_ + ": backward called before forward");
    const Shape os = output_shape(input_.shape());
    if (dy.shape() != os) throw ShapeError(name_ + ": gradient shape " + dy.shape().str());
    const int rows = in_c_ * k_ * k_;
    const int cols = os.h * os.w;
    const bool direct = (k_ == 1 && pad_ == 0 && stride_ == 1);
    Tensor4 dx(input_.shape());
    ConstMapMat wm(weight_.value.data(), out_c_, rows);
    MapMat dwm(weight_.grad.data(), out_c_, rows);
    Real* db = bias_.grad.data();
    RealBuffer dcol(direct ? 0 : static_cast<std::size_t>(rows) * cols);
    if (!direct) col_.resize(static_cast<std::size_t>(rows) * cols);
    for (int n = 0; n < input_.n(); ++n) {
        const Real* src = input_.data() + input_.offset(n, 0, 0, 0);
        if (!direct)
            im2col(src, in_c_, input_.h(), input_.w(), k_, pad_, stride_, os.h, os.w, col_.data());
        ConstMapMat cm(direct ? src : col_.data(), rows, cols);
        ConstMapMat dym(dy.data() + dy.offset(n, 0, 0, 0), out_c_, cols);
        dwm.noalias() += dym * cm.transpose();
        for (int o = 0; o < out_c_; ++o) db[o] += dym.row(o).sum();
        Real* dxn = dx.data() + dx.offset(n, 0, 0, 0);
        if (direct) {
            MapMat dxm(dxn, rows, cols);
            dxm.noalias() = wm.transpose() * dym;
        } else {
            MapMat dcm(dcol.data(), rows, cols);
            dcm.noalias() = wm.transpose() * dym;
            col2im(dcol.data(), in_c_, input_.h(), input_.w(), k_, pad_, stride_, os.h, os.w, dxn);
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// BatchNorm

BatchNorm::BatchNorm(std::string name, int channels)
    : name_(std::move(name)), channels_(channels),
      gamma_(name_ + ".gamma", Shape{1, channels, 1, 1}, false),
      beta_(name_ + ".beta", Shape{1, channels, 1, 1}, false),
      running_mean_(static_cast<std::size_t>(channels), 0.0f),
      running_var_(static_cast<std::size_t>(channels), 1.0f) {
    gamma_.value.fill(1.0f);
}

void BatchNorm::collect_parameters(std::vector<Parameter*>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
}

void BatchNorm::collect_state(std::vector<StateRef>& out) {
    const Shape s{1, channels_, 1, 1};
    out.push_back({gamma_.name, s, gamma_.value.data()});
    out.push_back({beta_.name, s, beta_.value.data()});
    out.push_back({name_ + ".running_mean", s, running_mean_.data()});
    out.push_back({name_ + ".running_var", s, running_var_.data()});
}

Tensor4 BatchNorm::forward(const Tensor4& x) {
    if (x.c() != channels_)
        throw ShapeError(name_ + ": expected " + std::to_string(channels_) + " channels, got " +
                         std::to_string(x.c()));
    const std::size_t plane = x.shape().plane();
    const std::size_t count = plane * x.n();
    if (training_ && count < 2)
        throw StatisticsError(name_ + ": batch statistics need n*h*w >= 2");

    Tensor4 y(x.shape());
    x_hat_ = Tensor4(x.shape());
    inv_std_.assign(static_cast<std::size_t>(channels_), 0.0f);
    cached_training_ = training_;

    for (int c = 0; c < channels_; ++c) {
        double mean;
        double var;
        if (training_) {
            double s = 0.0;
            for (int n = 0; n < x.n(); ++n)
                for (Real v : x.plane(n, c)) s += v;
            mean = s / static_cast<double>(count);
            double ss = 0.0;
            for (int n = 0; n < x.n(); ++n)
                for (Real v : x.plane(n, c)) ss += (v - mean) * (v - mean);
            var = ss / static_cast<double>(count);
            const double unbiased = ss / static_cast<double>(count - 1);
            running_mean_[c] = static_cast<Real>((1.0 - kMomentum) * running_mean_[c] + kMomentum * mean);
            running_var_[c] = static_cast<Real>((1.0 - kMomentum) * running_var_[c] + kMomentum * unbiased);
        } else {
            mean = running_mean_[c];
            var = std::max<double>(0.0, running_var_[c]);
        }
        const Real inv = static_cast<Real>(1.0 / std::sqrt(var + kEpsilon));
        inv_std_[c] = inv;
        const Real g = gamma_.value.data()[c];
        const Real b = beta_.value.data()[c];
        const Real m = static_cast<Real>(mean);
        for (int n = 0; n < x.n(); ++n) {
            auto src = x.plane(n, c);
            auto xh = x_hat_.plane(n, c);
            auto dst = y.plane(n, c);
            for (std::size_t i = 0; i < plane; ++i) {
                xh[i] = (src[i] - m) * inv;
                dst[i] = g * xh[i] + b;
            }
        }
    }
    return y;
}

Tensor4 BatchNorm::backward(const Tensor4& dy) {
    if (x_hat_.empty()) throw StateError(name_ + ": backward called before forward");
    if (dy.shape() != x_hat_.shape()) throw ShapeError(name_ + ": gradient shape " + dy.shape().str());
    const std::size_t plane = dy.shape().plane();
    const double count = static_cast<double>(plane * dy.n());
    Tensor4 dx(dy.shape());
    for (int c = 0; c < channels_; ++c) {
        double sum_dy = 0.0;
        double sum_dy_xh = 0.0;
        for (int n = 0; n < dy.n(); ++n) {
            auto g = dy.plane(n, c);
            auto xh = x_hat_.plane(n, c);
            for (std::size_t i = 0; i < plane; ++i) {
                sum_dy += g[i];
                sum_dy_xh += static_cast<double>(g[i]) * xh[i];
            }
        }
        gamma_.grad.data()[c] += static_cast<Real>(sum_dy_xh);
        beta_.grad.data()[c] += static_cast<Real>(sum_dy);
        const Real scale_c = gamma_.value.data()[c] * inv_std_[c];
        if (cached_training_) {
            const Real mean_dy = static_cast<Real>(sum_dy / count);
            const Real mean_dy_xh = static_cast<Real>(sum_dy_xh / count);
            for (int n = 0; n < dy.n(); ++n) {
                auto g = dy.plane(n, c);
                auto xh = x_hat_.plane(n, c);
                auto d = dx.plane(n, c);
                for (std::size_t i = 0; i < plane; ++i)
                    d[i] = scale_c * (g[i] - mean_dy - xh[i] * mean_dy_xh);
            }
        } else {
            for (int n = 0; n < dy.n(); ++n) {
                auto g = dy.plane(n, c);
                auto d = dx.plane(n, c);
                for (std::size_t i = 0; i < plane; ++i) d[i] = scale_c * g[i];
            }
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// ReLU

Tensor4 ReLU::forward(const Tensor4& x) {
    shape_ = x.shape();
    active_.resize(x.size());
    Tensor4 y(x.shape());
    const Real* s = x.data();
    Real* d = y.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const bool on = s[i] > 0.0f;
        active_[i] = on;
        d[i] = on ? s[i] : 0.0f;
    }
    return y;
}

Tensor4 ReLU::backward(const Tensor4& dy) {
    if (active_.empty()) throw StateError(name_ + ": backward called before forward");
    if (dy.shape() != shape_) throw ShapeError(name_ + ": gradient shape " + dy.shape().str());
    Tensor4 dx(dy.shape());
    const Real* g = dy.data();
    Real* d = dx.data();
    for (std::size_t i = 0; i < dy.size(); ++i) d[i] = active_[i] ? g[i] : 0.0f;
    return dx;
}

std::uint64_t ReLU::switch_signature() const {
    return hash_bytes(0, active_.data(), active_.size());
}

// ---------------------------------------------------------------------------
// Pooling

PoolResult max_pool2(const Tensor4& x) {
    if (x.h() % 2 != 0 || x.w() % 2 != 0)
        throw ShapeError("max_pool2: spatial dims must be even, got " + x.shape().str());
    const Shape ps{x.n(), x.c(), x.h() / 2, x.w() / 2};
    PoolResult r{Tensor4(ps), PoolIndices{ps, x.shape(), {}}};
    r.indices.index.resize(ps.size());
    std::size_t out = 0;
    for (int n = 0; n < x.n(); ++n) {
        for (int c = 0; c < x.c(); ++c) {
            const Real* plane = x.data() + x.offset(n, c, 0, 0);
            Real* dst = r.values.data() + r.values.offset(n, c, 0, 0);
            for (int y = 0; y < ps.h; ++y) {
                for (int xx = 0; xx < ps.w; ++xx, ++out) {
                    const std::uint32_t p00 = static_cast<std::uint32_t>(2 * y * x.w() + 2 * xx);
                    const std::uint32_t cand[4] = {p00, p00 + 1,
                                                   p00 + static_cast<std::uint32_t>(x.w()),
                                                   p00 + static_cast<std::uint32_t>(x.w()) + 1};
                    std::uint32_t best = cand[0];
                    for (int i = 1; i < 4; ++i)
                        if (plane[cand[i]] > plane[best]) best = cand[i];
                    dst[y * ps.w + xx] = plane[best];
                    r.indices.index[out] = best;
                }
            }
        }
    }
    return r;
}

Tensor4 max_pool2_backward(const Tensor4& dy, const PoolIndices& idx) {
    if (dy.shape() != idx.pooled)
        throw ShapeError("max_pool2_backward: gradient " + dy.shape().str() + " vs pooled " +
                         idx.pooled.str());
    return max_unpool2(dy, idx);
}

Tensor4 max_unpool2(const Tensor4& y, const PoolIndices& idx) {
    if (y.shape() != idx.pooled || idx.index.size() != y.size())
        throw ShapeError("max_unpool2: values " + y.shape().str() + " vs indices " +
                         idx.pooled.str());
    Tensor4 out(idx.input);
    const std::size_t in_plane = idx.input.plane();
    const std::size_t out_plane = idx.pooled.plane();
    for (std::size_t i = 0; i < y.size(); ++i) {
        const std::size_t nc = i / out_plane;
        out.data()[nc * in_plane + idx.index[i]] = y.data()[i];
    }
    return out;
}

Tensor4 max_unpool2_backward(const Tensor4& dx, const PoolIndices& idx) {
    if (dx.shape() != idx.input)
        throw ShapeError("max_unpool2_backward: gradient " + dx.shape().str() + " vs " +
                         idx.input.str());
    Tensor4 dy(idx.pooled);
    const std::size_t in_plane = idx.input.plane();
    const std::size_t out_plane = idx.pooled.plane();
    for (std::size_t i = 0; i < dy.size(); ++i) {
        const std::size_t nc = i / out_plane;
        dy.data()[i] = dx.data()[nc * in_plane + idx.index[i]];
    }
    return dy;
}

Tensor4 MaxPool2::forward(const Tensor4& x) {
    PoolResult r = max_pool2(x);
    idx_ = std::move(r.indices);
    return std::move(r.values);
}

Tensor4 MaxPool2::backward(const Tensor4& dy) {
    if (idx_.index.empty()) throw StateError(name_ + ": backward called before forward");
    return max_pool2_backward(dy, idx_);
}

const PoolIndices& MaxPool2::indices() const {
    if (idx_.index.empty()) throw StateError(name_ + ": no indices before forward");
    return idx_;
}

std::uint64_t MaxPool2::switch_signature() const {
    return hash_bytes(0, idx_.index.data(), idx_.index.size() * sizeof(std::uint32_t));
}

Tensor4 MaxUnpool2::forward(const Tensor4& y) {
    if (!has_idx_) throw StateError(name_ + ": indices not set");
    return max_unpool2(y, idx_);
}

Tensor4 MaxUnpool2::backward(const Tensor4& dx) {
    if (!has_idx_) throw StateError(name_ + ": backward called before forward");
    return max_unpool2_backward(dx, idx_);
}

// ---------------------------------------------------------------------------
// Bilinear upsampling

namespace {

struct AxisWeights {
    std::vector<int> lo;
    std::vector<int> hi;
    std::vector<Real> frac;
};

AxisWeights axis_weights(int in, int out) {
    AxisWeights a;
    a.lo.resize(out);
    a.hi.resize(out);
    a.frac.resize(out);
    for (int j = 0; j < out; ++j) {
        if (in == 1) {
            a.lo[j] = a.hi[j] = 0;
            a.frac[j] = 0.0f;
            continue;
        }
        const double src = static_cast<double>(j) * (in - 1) / (out - 1);
        int lo = static_cast<int>(std::floor(src));
        lo = std::min(lo, in - 1);
        a.lo[j] = lo;
        a.hi[j] = std::min(lo + 1, in - 1);
        a.frac[j] = static_cast<Real>(src - lo);
    }
    return a;
}

void check_factor(int factor) {
    if (factor != 2 && factor != 4 && factor != 8)
        throw ArgumentError("bilinear_upsample: unsupported factor " + std::to_string(factor));
}

} // namespace

BilinearUpsample::BilinearUpsample(int factor) : factor_(factor) { check_factor(factor); }

Tensor4 bilinear_upsample(const Tensor4& x, int factor) {
    check_factor(factor);
    const Shape os{x.n(), x.c(), x.h() * factor, x.w() * factor};
    Tensor4 y(os);
    const AxisWeights ay = axis_weights(x.h(), os.h);
    const AxisWeights ax = axis_weights(x.w(), os.w);
    for (int n = 0; n < x.n(); ++n) {
        for (int c = 0; c < x.c(); ++c) {
            const Real* src = x.data() + x.offset(n, c, 0, 0);
            Real* dst = y.data() + y.offset(n, c, 0, 0);
            for (int oy = 0; oy < os.h; ++oy) {
                const Real* r0 = src + static_cast<std::size_t>(ay.lo[oy]) * x.w();
                const Real* r1 = src + static_cast<std::size_t>(ay.hi[oy]) * x.w();
                const Real fy = ay.frac[oy];
                for (int ox = 0; ox < os.w; ++ox) {
                    const Real fx = ax.frac[ox];
                    const Real top = r0[ax.lo[ox]] + fx * (r0[ax.hi[ox]] - r0[ax.lo[ox]]);
                    const Real bot = r1[ax.lo[ox]] + fx * (r1[ax.hi[ox]] - r1[ax.lo[ox]]);
                    dst[static_cast<std::size_t>(oy) * os.w + ox] = top + fy * (bot - top);
                }
            }
        }
    }
    return y;
}

Tensor4 BilinearUpsample::forward(const Tensor4& x) {
    in_shape_ = x.shape();
    return bilinear_upsample(x, factor_);
}

Tensor4 BilinearUpsample::backward(const Tensor4& dy) {
    if (in_shape_.size() == 0) throw StateError(name() + ": backward called before forward");
    const Shape os{in_shape_.n, in_shape_.c, in_shape_.h * factor_, in_shape_.w * factor_};
    if (dy.shape() != os) throw ShapeError(name() + ": gradient shape " + dy.shape().str());
    Tensor4 dx(in_shape_);
    const AxisWeights ay = axis_weights(in_shape_.h, os.h);
    const AxisWeights ax = axis_weights(in_shape_.w, os.w);
    for (int n = 0; n < os.n; ++n) {
        for (int c = 0; c < os.c; ++c) {
            const Real* g = dy.data() + dy.offset(n, c, 0, 0);
            Real* d = dx.data() + dx.offset(n, c, 0, 0);
            for (int oy = 0; oy < os.h; ++oy) {
                Real* r0 = d + static_cast<std::size_t>(ay.lo[oy]) * in_shape_.w;
                Real* r1 = d + static_cast<std::size_t>(ay.hi[oy]) * in_shape_.w;
                const Real fy = ay.frac[oy];
                for (int ox = 0; ox < os.w; ++ox) {
                    const Real v = g[static_cast<std::size_t>(oy) * os.w + ox];
                    const Real fx = ax.frac[ox];
                    const Real top = v * (1.0f - fy);
                    const Real bot = v * fy;
                    r0[ax.lo[ox]] += top * (1.0f - fx);
                    r0[ax.hi[ox]] += top * fx;
                    r1[ax.lo[ox]] += bot * (1.0f - fx);
                    r1[ax.hi[ox]] += bot * fx;
                }
            }
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Concatenation

Tensor4 channel_concat(std::span<const Tensor4* const> xs) {
    if (xs.empty()) throw ArgumentError("channel_concat: no inputs");
    const Shape& s0 = xs.front()->shape();
    int channels = 0;
    for (const Tensor4* t : xs) {
        const Shape& s = t->shape();
        if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
            throw ShapeError("channel_concat: " + s.str() + " vs " + s0.str());
        channels += s.c;
    }
    Tensor4 out(Shape{s0.n, channels, s0.h, s0.w});
    const std::size_t plane = s0.plane();
    for (int n = 0; n < s0.n; ++n) {
        Real* dst = out.data() + out.offset(n, 0, 0, 0);
        for (const Tensor4* t : xs) {
            const std::size_t len = plane * t->c();
            std::memcpy(dst, t->data() + t->offset(n, 0, 0, 0), len * sizeof(Real));
            dst += len;
        }
    }
    return out;
}

Tensor4 channel_concat(std::initializer_list<const Tensor4*> xs) {
    return channel_concat(std::span<const Tensor4* const>(xs.begin(), xs.size()));
}

std::vector<Tensor4> channel_split(const Tensor4& x, std::span<const int> channels) {
    int total = 0;
    for (int c : channels) {
        if (c < 1) throw ShapeError("channel_split: part with < 1 channel");
        total += c;
    }
    if (total != x.c())
        throw ShapeError("channel_split: parts sum to " + std::to_string(total) + ", tensor has " +
                         std::to_string(x.c()));
    std::vector<Tensor4> parts;
    parts.reserve(channels.size());
    for (int c : channels) parts.emplace_back(Shape{x.n(), c, x.h(), x.w()});
    const std::size_t plane = x.shape().plane();
    for (int n = 0; n < x.n(); ++n) {
        const Real* src = x.data() + x.offset(n, 0, 0, 0);
        for (Tensor4& p : parts) {
            const std::size_t len = plane * p.c();
            std::memcpy(p.data() + p.offset(n, 0, 0, 0), src, len * sizeof(Real));
            src += len;
        }
    }
    return parts;
}

// ---------------------------------------------------------------------------
// Sequential / ConvUnit

Tensor4 Sequential::forward(const Tensor4& x) {
    Tensor4 cur = x;
    for (auto& l : layers_) cur = l->forward(cur);
    return cur;
}

Tensor4 Sequential::backward(const Tensor4& dy) {
    Tensor4 cur = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur);
    return cur;
}

void Sequential::collect_parameters(std::vector<Parameter*>& out) {
    for (auto& l : layers_) l->collect_parameters(out);
}

void Sequential::collect_state(std::vector<StateRef>& out) {
    for (auto& l : layers_) l->collect_state(out);
}

void Sequential::set_training(bool training) {
    for (auto& l : layers_) l->set_training(training);
}

std::uint64_t Sequential::switch_signature() const {
    std::uint64_t h = 0;
    for (const auto& l : layers_) h = hash_combine(h, l->switch_signature());
    return h;
}

std::string to_string(BlockOrder order) {
    return order == BlockOrder::conv_bn_relu ? "conv_bn_relu" : "conv_relu_bn";
}

BlockOrder parse_block_order(const std::string& s) {
    if (s == "conv_bn_relu") return BlockOrder::conv_bn_relu;
    if (s == "conv_relu_bn") return BlockOrder::conv_relu_bn;
    throw ConfigError("unknown block_order '" + s + "'");
}

ConvUnit::ConvUnit(std::string name, int in_channels, int out_channels, BlockOrder order)
    : name_(std::move(name)), seq_(name_) {
    conv_ = &seq_.emplace<Conv2D>(name_ + ".conv", in_channels, out_channels, 3, 1);
    if (order == BlockOrder::conv_bn_relu) {
        bn_ = &seq_.emplace<BatchNorm>(name_ + ".bn", out_channels);
        seq_.emplace<ReLU>(name_ + ".relu");
    } else {
        seq_.emplace<ReLU>(name_ + ".relu");
        bn_ = &seq_.emplace<BatchNorm>(name_ + ".bn", out_channels);
    }
}

} // namespace mfn
