#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mfn/models.hpp"
#include "mfn/tensor.hpp"

namespace mfn {

class PatchSampler;

struct LossConfig {
    // Empty means uniform weights.
    std::vector<float> class_weights;
    std::optional<std::uint8_t> ignore_index = LabelMap::kIgnore;
};

/// Inverse-frequency weights normalized to mean 1 over the non-clutter classes
/// that occur. Classes with zero count get the largest computed weight; the
/// clutter class gets the smallest non-clutter weight.
std::vector<float> class_weights(std::span<const std::uint64_t> histogram,
                                 std::optional<int> clutter_index = std::nullopt);

struct LossResult {
    double loss = 0.0;
    Tensor4 grad;          // dL/dscores
    std::size_t valid = 0; // non-ignored pixels
    bool all_ignored = false;
};

/// Weighted pixel-wise negative log-likelihood of softmax(scores), averaged
/// over the non-ignored pixels.
LossResult cross_entropy_loss(const Tensor4& scores, const LabelMap& target, const LossConfig& cfg);

/// Majority label of each factor x factor block (ignored pixels do not vote;
/// ties go to the lowest label; blocks with no votes are ignored).
LabelMap downsample_labels(const LabelMap& target, int factor);

struct MultiScaleLoss {
    double total = 0.0;
    double full = 0.0;
    std::vector<double> branch;
    Tensor4 grad_scores;
    std::vector<Tensor4> grad_branches;
};

/// loss(P_full, target) + sum over branches of loss(P_d, downsampled target).
MultiScaleLoss multiscale_loss(const ModelOutput& out, const LabelMap& target, const LossConfig& cfg);

struct SGDConfig {
    double base_lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.0005;
    int batch_size = 10;
    std::vector<int> milestones = {5, 10, 15};
};

/// base_lr / 10^(number of milestones <= epoch); epochs count from 0.
double lr_at_epoch(int epoch, const SGDConfig& cfg);

/// Momentum SGD with decoupled-from-bias weight decay; zeroes the gradients.
void sgd_step(std::span<Parameter* const> params, double lr, const SGDConfig& cfg);

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;
    double mean_loss = 0.0;
    double pixel_accuracy = 0.0;
    std::size_t batches = 0;
};

/// One pass over the sampler's patches in a seed-determined order.
EpochStats train_epoch(SegmentationModel& model, const PatchSampler& sampler, const SGDConfig& sgd,
                       const LossConfig& loss, int epoch, std::uint64_t seed);

/// `epoch\tlr\tmean_loss\tpixel_acc`
std::string format_log_line(const EpochStats& stats);

} // namespace mfn
