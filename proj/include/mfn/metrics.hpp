#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mfn/tensor.hpp"

namespace mfn {

/// Validity mask (1 = evaluated) for ground truth `gt`. A boundary pixel has an
/// 8-neighbour of a different (non-ignored) class; every pixel within
/// Euclidean distance <= radius of a boundary pixel is discarded, as are
/// ignore-labelled pixels. Radius 0 disables erosion.
std::vector<std::uint8_t> erode_borders(const LabelMap& gt, int radius = 3);

/// Rows: ground truth class; columns: predicted class.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int k);

    int classes() const noexcept { return k_; }
    std::uint64_t& at(int truth, int predicted) { return counts_[static_cast<std::size_t>(truth) * k_ + predicted]; }
    std::uint64_t at(int truth, int predicted) const { return counts_[static_cast<std::size_t>(truth) * k_ + predicted]; }
    std::uint64_t total() const;
    std::uint64_t trace() const;
    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
    bool operator==(const ConfusionMatrix&) const = default;

private:
    int k_;
    std::vector<std::uint64_t> counts_;
};

/// Counts pixels where mask != 0. An empty mask means every pixel is valid.
ConfusionMatrix confusion(const LabelMap& gt, const LabelMap& pred, const std::vector<std::uint8_t>& mask, int k);

struct Scores {
    std::vector<double> precision;
    std::vector<double> recall;
    std::vector<double> f1;
    std::vector<bool> present; // class occurs in ground truth
    double average_f1 = 0.0;   // over present classes
    double overall_accuracy = 0.0;
    std::uint64_t valid_pixels = 0;
};

/// precision = tp/P, recall = tp/C, F1 = 2pr/(p+r); undefined ratios give 0.
Scores f1_scores(const ConfusionMatrix& cm);

/// Text table plus a key=value block.
std::string format_metrics_report(const Scores& s, const std::vector<std::string>& class_names);

std::vector<std::string> default_class_names(int k);

} // namespace mfn
