#include "mfn/metrics.hpp"

#include <cstdio>
#include <sstream>

namespace mfn {

std::vector<std::uint8_t> erode_borders(const LabelMap& gt, int radius) {
    if (radius < 0) throw ArgumentError("erode_borders: radius must be >= 0");
    const int h = gt.h(), w = gt.w();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<std::uint8_t> mask(gt.data.size(), 1);
    for (std::size_t i = 0; i < gt.data.size(); ++i)
        if (gt.data[i] == LabelMap::kIgnore) mask[i] = 0;
    if (radius == 0) return mask;

    std::vector<std::pair<int, int>> disc;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (dy * dy + dx * dx <= radius * radius) disc.emplace_back(dy, dx);

    for (int n = 0; n < gt.n(); ++n) {
        std::uint8_t* m = mask.data() + n * plane;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const std::uint8_t l = gt.at(n, y, x);
                if (l == LabelMap::kIgnore) continue;
                bool boundary = false;
                for (int dy = -1; dy <= 1 && !boundary; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = y + dy, xx = x + dx;
                        if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
                        const std::uint8_t o = gt.at(n, yy, xx);
                        if (o != l && o != LabelMap::kIgnore) {
                            boundary = true;
                            break;
                        }
                    }
                if (!boundary) continue;
                for (const auto& [dy, dx] : disc) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy >= 0 && xx >= 0 && yy < h && xx < w) m[static_cast<std::size_t>(yy) * w + xx] = 0;
                }
            }
    }
    return mask;
}

ConfusionMatrix::ConfusionMatrix(int k) : k_(k), counts_(static_cast<std::size_t>(k) * k, 0) {
    if (k < 1) throw ArgumentError("ConfusionMatrix: k must be >= 1");
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
}

std::uint64_t ConfusionMatrix::trace() const {
    std::uint64_t t = 0;
    for (int i = 0; i < k_; ++i) t += at(i, i);
    return t;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    if (other.k_ != k_) throw ShapeError("ConfusionMatrix: class count mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
}

ConfusionMatrix confusion(const LabelMap& gt, const LabelMap& pred, const std::vector<std::uint8_t>& mask, int k) {
    if (gt.shape != pred.shape)
        throw ShapeError("confusion: ground truth " + gt.shape.str() + " vs prediction " + pred.shape.str());
    if (!mask.empty() && mask.size() != gt.data.size()) throw ShapeError("confusion: mask size mismatch");
    ConfusionMatrix cm(k);
    for (std::size_t i = 0; i < gt.data.size(); ++i) {
        if (!mask.empty() && !mask[i]) continue;
        const std::uint8_t t = gt.data[i];
        const std::uint8_t p = pred.data[i];
        if (t == LabelMap::kIgnore) continue;
        if (t >= k || p >= k) throw DataError("confusion: label out of range");
        ++cm.at(t, p);
    }
    return cm;
}

Scores f1_scores(const ConfusionMatrix& cm) {
    const int k = cm.classes();
    Scores s;
    s.valid_pixels = cm.total();
    if (s.valid_pixels == 0) throw MetricsError("f1_scores: empty confusion matrix");
    s.precision.assign(k, 0.0);
    s.recall.assign(k, 0.0);
    s.f1.assign(k, 0.0);
    s.present.assign(k, false);
    int present = 0;
    double f1_sum = 0.0;
    for (int i = 0; i < k; ++i) {
        std::uint64_t truth = 0, predicted = 0;
        for (int j = 0; j < k; ++j) {
            truth += cm.at(i, j);
            predicted += cm.at(j, i);
        }
        const double tp = static_cast<double>(cm.at(i, i));
        if (predicted > 0) s.precision[i] = tp / static_cast<double>(predicted);
        if (truth > 0) s.recall[i] = tp / static_cast<double>(truth);
        if (truth > 0 && predicted > 0 && tp > 0)
            s.f1[i] = 2.0 * s.precision[i] * s.recall[i] / (s.precision[i] + s.recall[i]);
        if (truth > 0) {
            s.present[i] = true;
            ++present;
            f1_sum += s.f1[i];
        }
    }
    s.average_f1 = f1_sum / present;
    s.overall_accuracy = static_cast<double>(cm.trace()) / static_cast<double>(s.valid_pixels);
    return s;
}

std::vector<std::string> default_class_names(int k) {
    static const std::vector<std::string> isprs = {"impervious_surfaces", "building", "low_vegetation",
                                                   "tree", "car", "clutter"};
    std::vector<std::string> out;
    for (int i = 0; i < k; ++i) out.push_back(i < static_cast<int>(isprs.size()) ? isprs[i] : "class_" + std::to_string(i));
    return out;
}

std::string format_metrics_report(const Scores& s, const std::vector<std::string>& names) {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof(line), "%-22s %10s %10s %10s\n", "class", "precision", "recall", "f1");
    os << line;
    for (std::size_t i = 0; i < s.f1.size(); ++i) {
        std::snprintf(line, sizeof(line), "%-22s %10.4f %10.4f %10.4f%s\n", names.at(i).c_str(), s.precision[i],
                      s.recall[i], s.f1[i], s.present[i] ? "" : "  (absent)");
        os << line;
    }
    std::snprintf(line, sizeof(line), "average_f1 %.4f\noverall_accuracy %.4f\nvalid_pixels %llu\n", s.average_f1,
                  s.overall_accuracy, static_cast<unsigned long long>(s.valid_pixels));
    os << line << "\n[metrics]\n";
    for (std::size_t i = 0; i < s.f1.size(); ++i) {
        std::snprintf(line, sizeof(line), "f1.%s=%.6f\n", names.at(i).c_str(), s.f1[i]);
        os << line;
    }
    std::snprintf(line, sizeof(line), "average_f1=%.6f\noverall_accuracy=%.6f\nvalid_pixels=%llu\n", s.average_f1,
                  s.overall_accuracy, static_cast<unsigned long long>(s.valid_pixels));
    os << line;
    return os.str();
}

} // namespace mfn
