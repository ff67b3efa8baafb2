#include "mfn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace mfn {

namespace {

struct Probe {
    double loss;
    std::uint64_t signature;
};

Probe evaluate(Layer& target, const Tensor4& x, const Tensor4& projection) {
    const Tensor4 y = target.forward(x);
    if (y.shape() != projection.shape())
        throw StateError(target.name() + ": output shape changed during gradient check");
    const double loss = dot(y, projection);
    if (!std::isfinite(loss)) throw NumericError(target.name() + ": non-finite loss in gradient check");
    return {loss, target.switch_signature()};
}

std::vector<std::size_t> pick_elements(std::size_t size, std::size_t limit, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(size);
    std::iota(idx.begin(), idx.end(), 0);
    if (limit == 0 || limit >= size) return idx;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(limit);
    std::sort(idx.begin(), idx.end());
    return idx;
}

} // namespace

GradCheckReport gradient_check(Layer& target, const Tensor4& input, const GradCheckOptions& options) {
    if (!input.all_finite()) throw NumericError(target.name() + ": non-finite gradient-check input");
    GradCheckReport report;
    report.name = target.name();
    std::mt19937_64 rng(options.seed);

    Tensor4 x = input;
    const Tensor4 y0 = target.forward(x);
    Tensor4 projection(y0.shape());
    std::normal_distribution<Real> normal(0.0f, 1.0f);
    for (Real& v : projection.values()) v = normal(rng);

    std::vector<Parameter*> params = target.parameters();
    for (Parameter* p : params) p->zero_grad();
    const std::uint64_t sig0 = evaluate(target, x, projection).signature;
    const Tensor4 dx = target.backward(projection);

    struct Slot {
        std::string name;
        Tensor4* value;
        const Tensor4* analytic;
    };
    std::vector<Tensor4> analytic_params;
    analytic_params.reserve(params.size());
    for (Parameter* p : params) analytic_params.push_back(p->grad);
    std::vector<Slot> slots;
    for (std::size_t i = 0; i < params.size(); ++i)
        slots.push_back({params[i]->name, &params[i]->value, &analytic_params[i]});
    if (options.check_input) slots.push_back({"input", &x, &dx});

    for (const Slot& slot : slots) {
        GradCheckEntry entry;
        entry.tensor = slot.name;
        const auto elements = pick_elements(slot.value->size(), options.max_elements_per_tensor, rng);
        for (std::size_t e : elements) {
            Real& v = slot.value->data()[e];
            const Real original = v;
            double h = options.step;
            bool smooth = false;
            double numeric = 0.0;
            for (int attempt = 0; attempt <= options.max_halvings; ++attempt, h *= 0.5) {
                const Real up = static_cast<Real>(original + h);
                const Real down = static_cast<Real>(original - h);
                v = up;
                const Probe plus = evaluate(target, x, projection);
                v = down;
                const Probe minus = evaluate(target, x, projection);
                v = original;
                if (plus.signature == sig0 && minus.signature == sig0) {
                    numeric = (plus.loss - minus.loss) / (static_cast<double>(up) - down);
                    smooth = true;
                    break;
                }
            }
            if (!smooth) {
                ++entry.skipped_nonsmooth;
                continue;
            }
            const double a = slot.analytic->data()[e];
            const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
            entry.max_rel_error = std::max(entry.max_rel_error, std::abs(a - numeric) / denom);
            ++entry.checked;
        }
        report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
        report.checked += entry.checked;
        report.skipped_nonsmooth += entry.skipped_nonsmooth;
        report.entries.push_back(std::move(entry));
    }
    // Leave the caches consistent with the unperturbed input.
    target.forward(input);
    const double probes = static_cast<double>(report.checked + report.skipped_nonsmooth);
    report.passed = report.checked > 0 && report.max_rel_error < options.tolerance &&
                    static_cast<double>(report.skipped_nonsmooth) <= options.max_skipped_fraction * probes;
    return report;
}

std::string format_report(const GradCheckReport& report) {
    std::ostringstream os;
    os << (report.passed ? "PASS " : "FAIL ") << report.name << "  max_rel_error=" << report.max_rel_error
       << "  checked=" << report.checked << "  skipped_nonsmooth=" << report.skipped_nonsmooth << '\n';
    for (const auto& e : report.entries)
        os << "    " << e.tensor << "  max_rel_error=" << e.max_rel_error << "  checked=" << e.checked
           << "  skipped=" << e.skipped_nonsmooth << '\n';
    return os.str();
}

namespace {

Tensor4 gaussian(Shape s, std::mt19937_64& rng) {
    std::normal_distribution<Real> gauss(0.0f, 1.0f);
    Tensor4 t(s);
    for (Real& v : t.values()) v = gauss(rng);
    return t;
}

} // namespace

std::vector<GradCheckReport> layer_gradient_suite(const GradCheckOptions& opts, std::mt19937_64& rng) {
    std::vector<GradCheckReport> reports;
    auto run = [&](Layer& layer, Shape s) { reports.push_back(gradient_check(layer, gaussian(s, rng), opts)); };

    Conv2D conv("conv3x3", 3, 4, 3);
    conv.init_he(rng);
    run(conv, {2, 3, 6, 6});
    Conv2D conv1("conv1x1", 4, 3, 1, 0);
    conv1.init_he(rng);
    run(conv1, {2, 4, 5, 5});
    Conv2D strided("conv3x3_stride2", 2, 3, 3, 1, 2);
    strided.init_he(rng);
    run(strided, {1, 2, 7, 7});

    BatchNorm bn("batchnorm", 3);
    std::normal_distribution<Real> gauss(0.0f, 1.0f);
    for (Real& g : bn.gamma().value.values()) g = 0.5f + std::abs(gauss(rng));
    for (Real& b : bn.beta().value.values()) b = gauss(rng);
    run(bn, {3, 3, 4, 4});
    bn.set_training(false);
    bn.running_var().assign(3, 0.7f);
    run(bn, {2, 3, 4, 4});
    reports.back().name = "batchnorm_eval";

    ReLU relu("relu");
    run(relu, {2, 3, 5, 5});
    MaxPool2 pool("maxpool");
    run(pool, {2, 3, 6, 6});
    MaxPool2 source("source");
    source.forward(gaussian({1, 3, 8, 8}, rng));
    MaxUnpool2 unpool("maxunpool");
    unpool.set_indices(source.indices());
    run(unpool, {1, 3, 4, 4});
    BilinearUpsample up2(2), up8(8);
    run(up2, {1, 2, 5, 4});
    run(up8, {1, 2, 3, 3});
    ConvUnit unit("conv_unit", 3, 4, BlockOrder::conv_bn_relu);
    unit.conv().init_he(rng);
    run(unit, {2, 3, 6, 6});
    ConvUnit unit2("conv_unit_relu_bn", 3, 4, BlockOrder::conv_relu_bn);
    unit2.conv().init_he(rng);
    run(unit2, {2, 3, 6, 6});
    return reports;
}

GradCheckReport model_gradient_check(Architecture arch, const GradCheckOptions& opts, std::mt19937_64& rng) {
    ModelConfig m;
    m.arch = arch;
    m.widths = {8, 16, 16, 16, 16};
    m.branches = arch == Architecture::segnet_ms ? 3 : 0;
    std::unique_ptr<SegmentationModel> model = make_model(m, rng);
    ModelAsLayer layer(*model, to_string(arch));
    const int c = static_cast<int>(model->modalities().size()) * 3;
    return gradient_check(layer, gaussian({1, c, 32, 32}, rng), opts);
}

} // namespace mfn
