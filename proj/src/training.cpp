#include "mfn/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "mfn/patches.hpp"

namespace mfn {

std::vector<float> class_weights(std::span<const std::uint64_t> histogram, std::optional<int> clutter_index) {
    const int k = static_cast<int>(histogram.size());
    if (k == 0 || std::all_of(histogram.begin(), histogram.end(), [](std::uint64_t c) { return c == 0; }))
        throw ArgumentError("class_weights: empty histogram");
    if (clutter_index && (*clutter_index < 0 || *clutter_index >= k))
        throw ArgumentError("class_weights: clutter index out of range");
    const double total = std::accumulate(histogram.begin(), histogram.end(), 0.0);

    std::vector<double> raw(k, 0.0);
    double sum = 0.0;
    int present = 0;
    for (int i = 0; i < k; ++i) {
        if (clutter_index && i == *clutter_index) continue;
        if (histogram[i] == 0) continue;
        raw[i] = total / static_cast<double>(histogram[i]);
        sum += raw[i];
        ++present;
    }
    std::vector<float> w(k, 1.0f);
    if (present == 0) return w;
    const double mean = sum / present;
    double lo = std::numeric_limits<double>::max();
    double hi = 0.0;
    for (int i = 0; i < k; ++i) {
        if (raw[i] == 0.0) continue;
        const double v = raw[i] / mean;
        w[i] = static_cast<float>(v);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (int i = 0; i < k; ++i) {
        const bool clutter = clutter_index && i == *clutter_index;
        if (clutter)
            w[i] = static_cast<float>(lo);
        else if (histogram[i] == 0)
            w[i] = static_cast<float>(hi);
    }
    return w;
}

LossResult cross_entropy_loss(const Tensor4& scores, const LabelMap& target, const LossConfig& cfg) {
    const int k = scores.c();
    if (target.n() != scores.n() || target.h() != scores.h() || target.w() != scores.w())
        throw ShapeError("cross_entropy_loss: scores " + scores.shape().str() + " vs target " +
                         target.shape.str());
    if (!cfg.class_weights.empty() && static_cast<int>(cfg.class_weights.size()) != k)
        throw ArgumentError("cross_entropy_loss: " + std::to_string(cfg.class_weights.size()) +
                            " class weights for " + std::to_string(k) + " classes");
    auto weight = [&](int c) { return cfg.class_weights.empty() ? 1.0f : cfg.class_weights[c]; };

    LossResult r;
    r.grad = Tensor4(scores.shape());
    const std::size_t plane = scores.shape().plane();
    for (std::uint8_t label : target.data) {
        if (cfg.ignore_index && label == *cfg.ignore_index) continue;
        if (label >= k) throw DataError("cross_entropy_loss: label " + std::to_string(label) + " out of range");
        ++r.valid;
    }
    if (r.valid == 0) {
        r.all_ignored = true;
        return r;
    }
    const double inv_n = 1.0 / static_cast<double>(r.valid);
    std::vector<double> e(k);
    double acc = 0.0;
    for (int n = 0; n < scores.n(); ++n) {
        const Real* s = scores.data() + scores.offset(n, 0, 0, 0);
        Real* g = r.grad.data() + r.grad.offset(n, 0, 0, 0);
        for (std::size_t p = 0; p < plane; ++p) {
            const std::uint8_t y = target.data[n * plane + p];
            if (cfg.ignore_index && y == *cfg.ignore_index) continue;
            Real mx = s[p];
            for (int c = 1; c < k; ++c) mx = std::max(mx, s[c * plane + p]);
            double z = 0.0;
            for (int c = 0; c < k; ++c) {
                e[c] = std::exp(static_cast<double>(s[c * plane + p]) - mx);
                z += e[c];
            }
            const double wy = weight(y);
            acc += wy * (std::log(z) - (static_cast<double>(s[y * plane + p]) - mx));
            for (int c = 0; c < k; ++c) {
                const double prob = e[c] / z;
                g[c * plane + p] = static_cast<Real>(wy * (prob - (c == y ? 1.0 : 0.0)) * inv_n);
            }
        }
    }
    r.loss = acc * inv_n;
    return r;
}

LabelMap downsample_labels(const LabelMap& target, int factor) {
    if (factor < 1 || target.h() % factor != 0 || target.w() % factor != 0)
        throw ShapeError("downsample_labels: factor " + std::to_string(factor) + " does not divide " +
                         target.shape.str());
    LabelMap out(target.n(), target.h() / factor, target.w() / factor, LabelMap::kIgnore);
    std::vector<int> votes(256);
    for (int n = 0; n < target.n(); ++n)
        for (int by = 0; by < out.h(); ++by)
            for (int bx = 0; bx < out.w(); ++bx) {
                std::fill(votes.begin(), votes.end(), 0);
                for (int y = 0; y < factor; ++y)
                    for (int x = 0; x < factor; ++x) {
                        const std::uint8_t l = target.at(n, by * factor + y, bx * factor + x);
                        if (l != LabelMap::kIgnore) ++votes[l];
                    }
                int best = -1;
                for (int l = 0; l < 255; ++l)
                    if (votes[l] > 0 && (best < 0 || votes[l] > votes[best])) best = l;
                if (best >= 0) out.at(n, by, bx) = static_cast<std::uint8_t>(best);
            }
    return out;
}

MultiScaleLoss multiscale_loss(const ModelOutput& out, const LabelMap& target, const LossConfig& cfg) {
    if (out.branches.size() != out.branch_factors.size())
        throw ShapeError("multiscale_loss: branch/factor count mismatch");
    MultiScaleLoss r;
    LossResult full = cross_entropy_loss(out.scores, target, cfg);
    r.full = full.loss;
    r.total = full.loss;
    r.grad_scores = std::move(full.grad);
    for (std::size_t i = 0; i < out.branches.size(); ++i) {
        const LabelMap small = downsample_labels(target, out.branch_factors[i]);
        LossResult b = cross_entropy_loss(out.branches[i], small, cfg);
        r.branch.push_back(b.loss);
        r.total += b.loss;
        r.grad_branches.push_back(std::move(b.grad));
    }
    return r;
}

double lr_at_epoch(int epoch, const SGDConfig& cfg) {
    int passed = 0;
    for (int m : cfg.milestones)
        if (epoch >= m) ++passed;
    return cfg.base_lr / std::pow(10.0, passed);
}

void sgd_step(std::span<Parameter* const> params, double lr, const SGDConfig& cfg) {
    for (Parameter* p : params)
        if (!p->grad.all_finite()) throw NumericError("non-finite gradient in parameter " + p->name);
    const Real mom = static_cast<Real>(cfg.momentum);
    const Real wd = static_cast<Real>(cfg.weight_decay);
    for (Parameter* p : params) {
        const Real step = static_cast<Real>(lr * p->lr_multiplier);
        const Real decay = p->decay ? wd : 0.0f;
        Real* value = p->value.data();
        Real* grad = p->grad.data();
        Real* vel = p->velocity.data();
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const Real g = grad[i] + decay * value[i];
            vel[i] = mom * vel[i] + g;
            value[i] -= step * vel[i];
            grad[i] = 0.0f;
        }
    }
}

EpochStats train_epoch(SegmentationModel& model, const PatchSampler& sampler, const SGDConfig& sgd,
                       const LossConfig& loss, int epoch, std::uint64_t seed) {
    if (sampler.size() == 0) throw ArgumentError("train_epoch: empty dataset");
    if (sgd.batch_size < 1) throw ArgumentError("train_epoch: batch_size must be >= 1");
    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr_at_epoch(epoch, sgd);
    const std::vector<PatchRef> order = sampler.shuffled(seed + 0x9e3779b97f4a7c15ULL * (epoch + 1));
    const std::vector<Modality> modalities = model.modalities();
    const auto params = model.parameters();
    for (Parameter* p : params) p->zero_grad();
    model.set_training(true);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t counted = 0;
    for (std::size_t start = 0; start < order.size(); start += sgd.batch_size) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(sgd.batch_size));
        const Batch batch = sampler.batch(std::span(order).subspan(start, end - start), modalities);
        const ModelOutput out = model.forward(batch.inputs);
        const MultiScaleLoss l = multiscale_loss(out, batch.target, loss);
        model.backward(l.grad_scores, l.grad_branches);
        sgd_step(params, stats.lr, sgd);
        if (!std::isfinite(l.total)) throw NumericError("non-finite training loss");
        loss_sum += l.total;
        ++stats.batches;
        const LabelMap pred = argmax_channel(out.scores);
        for (std::size_t i = 0; i < pred.data.size(); ++i) {
            const std::uint8_t t = batch.target.data[i];
            if (loss.ignore_index && t == *loss.ignore_index) continue;
            ++counted;
            if (pred.data[i] == t) ++correct;
        }
    }
    stats.mean_loss = loss_sum / static_cast<double>(stats.batches);
    stats.pixel_accuracy = counted ? static_cast<double>(correct) / counted : 0.0;
    return stats;
}

std::string format_log_line(const EpochStats& s) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%d\t%g\t%.4f\t%.3f", s.epoch, s.lr, s.mean_loss, s.pixel_accuracy);
    return buf;
}

} // namespace mfn
