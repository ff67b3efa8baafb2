#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mfn/tensor.hpp"

namespace mfn {

/// A named view of one persistent tensor (parameter or running statistic).
struct StateRef {
    std::string name;
    Shape shape;
    Real* data;
};

/// A differentiable unary stage with an internal cache: forward() stores what
/// backward() needs. backward() returns dL/dx and accumulates parameter
/// gradients into Parameter::grad.
class Layer {
public:
    virtual ~Layer() = default;

    virtual std::string name() const = 0;
    virtual Tensor4 forward(const Tensor4& x) = 0;
    virtual Tensor4 backward(const Tensor4& dy) = 0;

    virtual void collect_parameters(std::vector<Parameter*>& /*out*/) {}
    virtual void set_training(bool /*training*/) {}

    /// Everything a checkpoint must persist, in declaration order. Defaults to
    /// the parameter values.
    virtual void collect_state(std::vector<StateRef>& out);

    /// Hash of the piecewise-linear decisions (ReLU masks, pooling argmax)
    /// taken by the last forward pass. Two forwards with equal signatures lie
    /// on the same smooth piece.
    virtual std::uint64_t switch_signature() const { return 0; }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out;
        collect_parameters(out);
        return out;
    }
};

std::uint64_t hash_bytes(std::uint64_t seed, const void* data, std::size_t len);
inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
    return hash_bytes(a, &b, sizeof(b));
}

/// 2-D cross-correlation with bias.
class Conv2D : public Layer {
public:
    Conv2D(std::string name, int in_channels, int out_channels, int kernel, int padding = -1,
           int stride = 1);

    std::string name() const override { return name_; }
    Tensor4 forward(const Tensor4& x) override;
    Tensor4 backward(const Tensor4& dy) override;
    void collect_parameters(std::vector<Parameter*>& out) override;

    /// Fan-in scaled Gaussian (He) weights, zero bias.
    void init_he(std::mt19937_64& rng);
    void zero_init();

    int in_channels() const noexcept { return in_c_; }
    int out_channels() const noexcept { return out_c_; }
    int kernel() const noexcept { return k_; }
    Parameter& weight() noexcept { return weight_; }
    Parameter& bias() noexcept { return bias_; }

private:
    Shape output_shape(const Shape& in) const;

    std::string name_;
    int in_c_, out_c_, k_, pad_, stride_;
    Parameter weight_; // (out_c, in_c, k, k)
    Parameter bias_;   // (1, out_c, 1, 1)
    Tensor4 input_;
    RealBuffer col_;
};

/// Per-channel batch normalization. Train mode normalizes with batch
/// statistics and updates the running estimates; eval mode uses the running
/// estimates only.
class BatchNorm : public Layer {
public:
    static constexpr Real kEpsilon = 1e-5f;
    static constexpr Real kMomentum = 0.1f;

    BatchNorm(std::string name, int channels);

    std::string name() const override { return name_; }
    Tensor4 forward(const Tensor4& x) override;
    Tensor4 backward(const Tensor4& dy) override;
    void collect_parameters(std::vector<Parameter*>& out) override;
    void collect_state(std::vector<StateRef>& out) override;
    void set_training(bool training) override { training_ = training; }
    bool training() const noexcept { return training_; }

    Parameter& gamma() noexcept { return gamma_; }
    Parameter& beta() noexcept { return beta_; }
    std::vector<Real>& running_mean() noexcept { return running_mean_; }
    std::vector<Real>& running_var() noexcept { return running_var_; }
    const std::vector<Real>& running_mean() const noexcept { return running_mean_; }
    const std::vector<Real>& running_var() const noexcept { return running_var_; }

private:
    std::string name_;
    int channels_;
    bool training_ = true;
    Parameter gamma_;
    Parameter beta_;
    std::vector<Real> running_mean_;
    std::vector<Real> running_var_;

    bool cached_training_ = true;
    Tensor4 x_hat_;
    std::vector<Real> inv_std_;
};

class ReLU : public Layer {
public:
    explicit ReLU(std::string name = "relu") : name_(std::move(name)) {}

    std::string name() const override { return name_; }
    Tensor4 forward(const Tensor4& x) override;
    Tensor4 backward(const Tensor4& dy) override;
    std::uint64_t switch_signature() const override;

private:
    std::string name_;
    Shape shape_{};
    std::vector<std::uint8_t> active_;
};

/// Argmax positions captured by 2x2 max pooling. index[i] is the flat (y*w+x)
/// position, inside the pre-pooled plane, of the maximum of pooled element i.
struct PoolIndices {
    Shape pooled{};
    Shape input{};
    std::vector<std::uint32_t> index;
};

struct PoolResult {
    Tensor4 values;
    PoolIndices indices;
};

/// Disjoint 2x2 windows; ties resolve to the first maximum in row-major scan.
PoolResult max_pool2(const Tensor4& x);
Tensor4 max_pool2_backward(const Tensor4& dy, const PoolIndices& idx);

/// Scatters y into a zero map twice the size at the recorded positions.
Tensor4 max_unpool2(const Tensor4& y, const PoolIndices& idx);
Tensor4 max_unpool2_backward(const Tensor4& dx, const PoolIndices& idx);

class MaxPool2 : public Layer {
public:
    explicit MaxPool2(std::string name = "maxpool") : name_(std::move(name)) {}

    std::string name() const override { return name_; }
    Tensor4 forward(const Tensor4& x) override;
    Tensor4 backward(const Tensor4& dy) override;
    std::uint64_t switch_signature() const override;

    const PoolIndices& indices() const;
    PoolIndices& mutable_indices() { return idx_; }

private:
    std::string name_;
    PoolIndices idx_;
};

/// Unpooling bound to indices supplied before each forward.
class MaxUnpool2 : public Layer {
public:
    explicit MaxUnpool2(std::string name = "unpool") : name_(std::move(name)) {}

    std::string name() const override { return name_; }
    void set_indices(PoolIndices idx) { idx_ = std::move(idx); has_idx_ = true; }
    Tensor4 forward(const Tensor4& y) override;
    Tensor4 backward(const Tensor4& dx) override;

private:
    std::string name_;
    PoolIndices idx_;
    bool has_idx_ = false;
};

/// Bilinear upsampling by an integer factor with corner-aligned sampling:
/// output coordinate j reads input coordinate j*(in-1)/(out-1).
class BilinearUpsample : public Layer {
public:
    explicit BilinearUpsample(int factor);

    std::string name() const override { return "bilinear_x" + std::to_string(factor_); }
    Tensor4 forward(const Tensor4& x) override;
    Tensor4 backward(const Tensor4& dy) override;
    int factor() const noexcept { return factor_; }

private:
    int factor_;
    Shape in_shape_{};
};

Tensor4 bilinear_upsample(const Tensor4& x, int factor);

/// Stacks channels in argument order.
Tensor4 channel_concat(std::span<const Tensor4* const> xs);
Tensor4 channel_concat(std::initializer_list<const Tensor4*> xs);
/// Inverse of channel_concat: cuts along channels with the given counts.
std::vector<Tensor4> channel_split(const Tensor4& x, std::span<const int> channels);

/// Ordered chain of owned layers.
class Sequential : public Layer {
public:
    explicit Sequential(std::string name) : name_(std::move(name)) {}

    template <typename L, typename... Args>
    L& emplace(Args&&... args) {
        auto layer = std::make_unique<L>(std::forward<Args>(args)...);
        L& ref = *layer;
        layers_.push_back(std::move(layer));
        return ref;
    }

    std::string name() const override { return name_; }
    Tensor4 forward(const Tensor4& x) override;
    Tensor4 backward(const Tensor4& dy) override;
    void collect_parameters(std::vector<Parameter*>& out) override;
    void collect_state(std::vector<StateRef>& out) override;
    void set_training(bool training) override;
    std::uint64_t switch_signature() const override;

    std::size_t size() const noexcept { return layers_.size(); }
    Layer& at(std::size_t i) { return *layers_.at(i); }

private:
    std::string name_;
    std::vector<std::unique_ptr<Layer>> layers_;
};

enum class BlockOrder { conv_bn_relu, conv_relu_bn };

std::string to_string(BlockOrder order);
BlockOrder parse_block_order(const std::string& s);

/// conv3x3 + BN + ReLU in the configured order.
class ConvUnit : public Layer {
public:
    ConvUnit(std::string name, int in_channels, int out_channels, BlockOrder order);

    std::string name() const override { return name_; }
    Tensor4 forward(const Tensor4& x) override { return seq_.forward(x); }
    Tensor4 backward(const Tensor4& dy) override { return seq_.backward(dy); }
    void collect_parameters(std::vector<Parameter*>& out) override { seq_.collect_parameters(out); }
    void collect_state(std::vector<StateRef>& out) override { seq_.collect_state(out); }
    void set_training(bool training) override { seq_.set_training(training); }
    std::uint64_t switch_signature() const override { return seq_.switch_signature(); }

    Conv2D& conv() noexcept { return *conv_; }
    BatchNorm& bn() noexcept { return *bn_; }

private:
    std::string name_;
    Sequential seq_;
    Conv2D* conv_;
    BatchNorm* bn_;
};

} // namespace mfn
