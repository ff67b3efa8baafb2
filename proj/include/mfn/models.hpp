#pragma once

#include <array>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mfn/layers.hpp"

namespace mfn {

enum class Architecture { segnet, segnet_ms, fusenet_sum, fusenet_virtual, residual_correction };
enum class Modality { optical, composite };

std::string to_string(Architecture a);
Architecture parse_architecture(const std::string& s);
std::string to_string(Modality m);
Modality parse_modality(const std::string& s);

/// VGG-16 encoder widths scaled by `scale` (at least one channel each).
std::array<int, 5> scaled_widths(double scale);

struct ModelConfig {
    Architecture arch = Architecture::segnet;
    int k = 6;
    double width_scale = 1.0;
    std::array<int, 5> widths = {64, 128, 256, 512, 512};
    BlockOrder block_order = BlockOrder::conv_bn_relu;
    // Auxiliary heads of the multi-scale model, added in the order d = 2, 4, 8.
    int branches = 0;
    // Input of a single-stream SegNet.
    Modality modality = Modality::optical;
    int channels_per_modality = 3;
    // Residual correction only.
    std::vector<ModelConfig> bases;
    int correction_width = 32;
};

/// Serializes to/from the newline-separated key=value manifest stored in
/// checkpoints.
std::string to_manifest(const ModelConfig& cfg);
ModelConfig parse_manifest(const std::string& manifest);

struct ModelOutput {
    Tensor4 scores;                  // final per-class scores (P_full / P')
    Tensor4 head;                    // full-resolution head before branch aggregation
    std::vector<Tensor4> branches;   // auxiliary low-resolution predictions
    std::vector<int> branch_factors; // upsampling factor of each branch
};

/// Common surface of the four architectures. Inputs are ordered as reported
/// by modalities().
class SegmentationModel {
public:
    virtual ~SegmentationModel() = default;

    virtual const ModelConfig& config() const = 0;
    virtual std::vector<Modality> modalities() const = 0;
    virtual ModelOutput forward(std::span<const Tensor4> inputs) = 0;
    /// Backpropagates from dL/dscores plus each branch's own loss gradient
    /// (`d_branches` may be empty). Returns dL/d(input) per input modality;
    /// entries are empty for inputs that receive no gradient.
    virtual std::vector<Tensor4> backward(const Tensor4& d_scores,
                                          std::span<const Tensor4> d_branches) = 0;
    /// Trainable parameters only.
    virtual void collect_parameters(std::vector<Parameter*>& out) = 0;
    virtual void collect_state(std::vector<StateRef>& out) = 0;
    virtual void set_training(bool training) = 0;
    virtual std::uint64_t switch_signature() const = 0;

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out;
        collect_parameters(out);
        return out;
    }
    std::vector<StateRef> state() {
        std::vector<StateRef> out;
        collect_state(out);
        return out;
    }
};

/// Five VGG-16 style convolution blocks (2,2,3,3,3 units), each followed by
/// 2x2 max pooling.
class Encoder {
public:
    static constexpr std::array<int, 5> kUnits = {2, 2, 3, 3, 3};

    Encoder(std::string name, int in_channels, const std::array<int, 5>& widths, BlockOrder order);

    Tensor4 forward(const Tensor4& x);
    Tensor4 backward(const Tensor4& d_bottom);

    // Stage-level access for fusion architectures.
    Sequential& block(int s) { return *blocks_.at(s); }
    MaxPool2& pool(int s) { return pools_.at(s); }
    std::array<PoolIndices, 5> indices() const;

    void init(std::mt19937_64& rng);
    void collect_parameters(std::vector<Parameter*>& out);
    void collect_state(std::vector<StateRef>& out);
    void set_training(bool training);
    std::uint64_t switch_signature() const;

private:
    std::vector<std::unique_ptr<Sequential>> blocks_;
    std::vector<MaxPool2> pools_;
};

struct DecoderOutput {
    Tensor4 scores;
    Tensor4 head;
    Tensor4 features;
    std::vector<Tensor4> branches;
    std::vector<int> factors;
};

/// Mirror of the encoder: decoder block j unpools with the indices of encoder
/// stage 4-j, then runs the mirrored units. A final 3x3 convolution projects
/// to k classes. Optional 1x1 branch heads after decoder blocks 4, 3, 2
/// (factors 2, 4, 8) are upsampled and summed into the scores.
class Decoder {
public:
    Decoder(std::string name, const std::array<int, 5>& widths, int k, BlockOrder order,
            int branches);

    DecoderOutput forward(const Tensor4& bottom, const std::array<PoolIndices, 5>& indices);
    Tensor4 backward(const Tensor4& d_scores, std::span<const Tensor4> d_branches);

    Conv2D& classifier() { return classifier_; }
    Conv2D& branch_head(int i) { return heads_.at(i); }
    int branch_count() const { return static_cast<int>(heads_.size()); }

    void init(std::mt19937_64& rng);
    void collect_parameters(std::vector<Parameter*>& out);
    void collect_state(std::vector<StateRef>& out);
    void set_training(bool training);
    std::uint64_t switch_signature() const;

private:
    std::vector<std::unique_ptr<Sequential>> blocks_;
    std::vector<MaxUnpool2> unpools_;
    Conv2D classifier_;
    std::vector<Conv2D> heads_;
    std::vector<int> head_block_;
    std::vector<BilinearUpsample> upsamplers_;
};

/// Decoder block index (0 = deepest) after which branch `i` is attached.
int branch_block(int i);
int branch_factor(int i);

class SegNet : public SegmentationModel {
public:
    SegNet(const ModelConfig& cfg, std::mt19937_64& rng);

    const ModelConfig& config() const override { return cfg_; }
    std::vector<Modality> modalities() const override { return {cfg_.modality}; }
    ModelOutput forward(std::span<const Tensor4> inputs) override;
    std::vector<Tensor4> backward(const Tensor4& d_scores, std::span<const Tensor4> d_branches) override;
    void collect_parameters(std::vector<Parameter*>& out) override;
    void collect_state(std::vector<StateRef>& out) override;
    void set_training(bool training) override;
    std::uint64_t switch_signature() const override;

    /// Last decoder feature maps (input of the classifier) from the latest forward.
    const Tensor4& features() const { return features_; }
    Encoder& encoder() { return encoder_; }
    Decoder& decoder() { return decoder_; }

private:
    ModelConfig cfg_;
    Encoder encoder_;
    Decoder decoder_;
    Tensor4 features_;
};

/// Two-encoder early fusion. Sum mode adds the auxiliary activations into the
/// main stream after every block; virtual mode runs a third encoder whose
/// stage n computes unit(concat(v_{n-1}, main_n, aux_n)) + (main_n + aux_n)/2.
/// The decoder always unpools with the main encoder's indices.
class FuseNet : public SegmentationModel {
public:
    FuseNet(const ModelConfig& cfg, std::mt19937_64& rng);

    const ModelConfig& config() const override { return cfg_; }
    std::vector<Modality> modalities() const override {
        return {Modality::optical, Modality::composite};
    }
    ModelOutput forward(std::span<const Tensor4> inputs) override;
    std::vector<Tensor4> backward(const Tensor4& d_scores, std::span<const Tensor4> d_branches) override;
    void collect_parameters(std::vector<Parameter*>& out) override;
    void collect_state(std::vector<StateRef>& out) override;
    void set_training(bool training) override;
    std::uint64_t switch_signature() const override;

    bool virtual_mode() const { return cfg_.arch == Architecture::fusenet_virtual; }
    Encoder& main_encoder() { return main_; }
    Encoder& aux_encoder() { return aux_; }
    Decoder& decoder() { return decoder_; }
    ConvUnit& virtual_unit(int s) { return *virtual_units_.at(s); }
    void zero_virtual_units();

    /// Test seam: invoked on the auxiliary pooling indices after each stage.
    std::function<void(int stage, PoolIndices&)> aux_index_hook;

private:
    ModelConfig cfg_;
    Encoder main_;
    Encoder aux_;
    std::vector<std::unique_ptr<ConvUnit>> virtual_units_;
    std::vector<MaxPool2> virtual_pools_;
    Decoder decoder_;
    std::array<Shape, 5> stage_shapes_{};
};

/// Late fusion: P' = (1/R) sum_i softmax(base_i) + c, with c predicted by a
/// small network from the concatenated last feature maps of the frozen bases.
class ResidualCorrection : public SegmentationModel {
public:
    ResidualCorrection(const ModelConfig& cfg, std::mt19937_64& rng);
    ResidualCorrection(const ModelConfig& cfg, std::vector<std::unique_ptr<SegNet>> bases,
                       std::mt19937_64& rng);

    const ModelConfig& config() const override { return cfg_; }
    std::vector<Modality> modalities() const override;
    ModelOutput forward(std::span<const Tensor4> inputs) override;
    std::vector<Tensor4> backward(const Tensor4& d_scores, std::span<const Tensor4> d_branches) override;
    /// Correction parameters only; bases are frozen.
    void collect_parameters(std::vector<Parameter*>& out) override;
    void collect_state(std::vector<StateRef>& out) override;
    void set_training(bool training) override;
    std::uint64_t switch_signature() const override;

    std::size_t base_count() const { return bases_.size(); }
    SegNet& base(std::size_t i) { return *bases_.at(i); }
    Sequential& correction() { return correction_; }
    Conv2D& correction_output() { return *correction_out_; }
    /// Average of base softmax maps from the latest forward.
    const Tensor4& average() const { return average_; }

private:
    void build(std::mt19937_64& rng);

    ModelConfig cfg_;
    std::vector<std::unique_ptr<SegNet>> bases_;
    Sequential correction_{"correction"};
    Conv2D* correction_out_ = nullptr;
    Tensor4 average_;
};

std::unique_ptr<SegmentationModel> make_model(const ModelConfig& cfg, std::mt19937_64& rng);

/// Exposes a model as a unary Layer returning its final scores. Multi-input
/// models read their inputs as consecutive channel groups of x.
class ModelAsLayer : public Layer {
public:
    explicit ModelAsLayer(SegmentationModel& model, std::string name = "model");

    std::string name() const override { return name_; }
    Tensor4 forward(const Tensor4& x) override;
    Tensor4 backward(const Tensor4& dy) override;
    void collect_parameters(std::vector<Parameter*>& out) override { model_.collect_parameters(out); }
    void set_training(bool training) override { model_.set_training(training); }
    std::uint64_t switch_signature() const override { return model_.switch_signature(); }

private:
    SegmentationModel& model_;
    std::string name_;
    std::vector<int> split_;
};

/// Hash of the names, shapes and bits of the given state tensors, in order.
std::uint64_t state_checksum(std::span<const StateRef> state);

} // namespace mfn
