#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <random>

#include "mfn/models.hpp"

namespace mfn {

struct GradCheckOptions {
    double step = 1e-4;
    double tolerance = 1e-3;
    double abs_floor = 1e-4;
    // 0 checks every element; otherwise a seeded sample of at most this many
    // elements per tensor.
    std::size_t max_elements_per_tensor = 0;
    // Halve the step up to this many times when a perturbation crosses a
    // ReLU/pooling switch; elements still crossing are reported as skipped.
    int max_halvings = 6;
    // A check with a larger share of skipped elements fails: too few smooth
    // probes to say anything.
    double max_skipped_fraction = 0.1;
    bool check_input = true;
    std::uint64_t seed = 1;
};

struct GradCheckEntry {
    std::string tensor;
    std::size_t checked = 0;
    std::size_t skipped_nonsmooth = 0;
    double max_rel_error = 0.0;
};

struct GradCheckReport {
    std::string name;
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped_nonsmooth = 0;
    bool passed = false;
};

/// Compares the analytic gradients of L = <forward(x), R> (R a fixed Gaussian
/// projection) against central differences, for every parameter of `target`
/// and for the input. Loss values are accumulated in double.
///
/// Per-element error is |a - n| / max(|a|, |n|, abs_floor). Throws
/// NumericError if any evaluated loss is non-finite.
GradCheckReport gradient_check(Layer& target, const Tensor4& input,
                               const GradCheckOptions& options = {});

std::string format_report(const GradCheckReport& report);

/// Every layer primitive on small random inputs: convolutions (3x3, 1x1,
/// strided), batch norm in both modes, ReLU, pool, unpool, bilinear x2/x8 and
/// both conv-unit orders.
std::vector<GradCheckReport> layer_gradient_suite(const GradCheckOptions& options, std::mt19937_64& rng);

/// End-to-end check of a width-reduced model (widths 8,16,16,16,16) on a
/// 1x(3·modalities)x32x32 input.
GradCheckReport model_gradient_check(Architecture arch, const GradCheckOptions& options, std::mt19937_64& rng);

} // namespace mfn
