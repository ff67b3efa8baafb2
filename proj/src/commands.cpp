#include "mfn/commands.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "mfn/binary_io.hpp"
#include "mfn/checkpoint.hpp"
#include "mfn/error.hpp"
#include "mfn/gradcheck.hpp"
#include "mfn/metrics.hpp"
#include "mfn/synth.hpp"

namespace fs = std::filesystem;

namespace mfn {

using detail::read_file;
using detail::write_file;

namespace {

std::string join(const std::string& dir, const std::string& file) { return (fs::path(dir) / file).string(); }

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
    write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

// Runs fn(i) for i in [0, count) on up to `threads` workers; each worker takes
// indices in strides so results stay independent of scheduling.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::exception_ptr failure;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < count; i += workers) fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure) failure = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

int positive(const RunConfig& cfg, const std::string& key) {
    const long long v = cfg.integer(key);
    if (v < 1 || v > (1 << 20)) throw ConfigError(key + " must be a positive integer");
    return static_cast<int>(v);
}

std::vector<TileSet> select(const std::vector<TileSet>& tiles, int fold, bool validation) {
    std::vector<TileSet> out;
    for (std::size_t i : fold_indices(tiles.size(), fold, validation)) out.push_back(tiles[i]);
    return out;
}

} // namespace

std::vector<TileEntry> read_manifest(const std::string& dir) {
    const std::vector<std::uint8_t> bytes = read_file(join(dir, "manifest.txt"));
    std::stringstream ss(std::string(bytes.begin(), bytes.end()));
    std::vector<TileEntry> out;
    std::string line;
    int number = 0;
    while (std::getline(ss, line)) {
        ++number;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::stringstream ls(line);
        std::vector<std::string> tok;
        for (std::string t; ls >> t;) tok.push_back(t);
        if (tok.empty() || tok.size() == 2) continue; // blank or metadata
        if (tok.size() != 4)
            throw DataError("manifest.txt line " + std::to_string(number) + ": expected 'name optical composite label'");
        out.push_back({tok[0], tok[1], tok[2], tok[3]});
    }
    if (out.empty()) throw DataError("manifest.txt in '" + dir + "' lists no tiles");
    return out;
}

std::vector<TileSet> load_tiles(const std::string& dir) {
    std::vector<TileSet> tiles;
    for (const TileEntry& e : read_manifest(dir)) {
        TileSet t;
        t.name = e.name;
        t.optical = read_mrt(join(dir, e.optical));
        t.composite = read_mrt(join(dir, e.composite));
        if (e.label != "-") t.label = read_mrt(join(dir, e.label));
        tiles.push_back(std::move(t));
    }
    return tiles;
}

std::vector<std::size_t> fold_indices(std::size_t count, int fold, bool validation) {
    if (fold > 2) throw ConfigError("fold must be -1, 0, 1 or 2");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < count; ++i)
        if (fold < 0 || ((static_cast<int>(i % 3) == fold) == validation)) out.push_back(i);
    return out;
}

ModelConfig model_config(const RunConfig& cfg) {
    ModelConfig m;
    m.arch = parse_architecture(cfg.text("architecture"));
    m.k = positive(cfg, "k");
    if (m.k > 254) throw ConfigError("k must be <= 254");
    m.width_scale = cfg.real("width_scale");
    if (!(m.width_scale > 0.0)) throw ConfigError("width_scale must be > 0");
    m.widths = scaled_widths(m.width_scale);
    m.block_order = parse_block_order(cfg.text("block_order"));
    m.modality = parse_modality(cfg.text("modality"));
    m.branches = m.arch == Architecture::segnet_ms ? static_cast<int>(cfg.integer("branches")) : 0;
    if (m.branches < 0 || m.branches > 3) throw ConfigError("branches must be in [0, 3]");
    m.correction_width = positive(cfg, "correction_width");
    return m;
}

std::unique_ptr<SegmentationModel> build_model(const RunConfig& cfg) {
    ModelConfig m = model_config(cfg);
    std::mt19937_64 rng(static_cast<std::uint64_t>(cfg.integer("seed")));
    std::unique_ptr<SegmentationModel> model;
    if (m.arch == Architecture::residual_correction) {
        const auto paths = cfg.list("base_checkpoints");
        if (paths.size() < 2)
            throw ConfigError("residual_correction requires base_checkpoints with at least two checkpoints");
        std::vector<std::unique_ptr<SegNet>> bases;
        for (const std::string& p : paths) {
            if (!fs::exists(p)) throw ConfigError("base checkpoint '" + p + "' does not exist");
            std::unique_ptr<SegmentationModel> b = load_checkpoint(p);
            auto* seg = dynamic_cast<SegNet*>(b.get());
            if (!seg) throw ConfigError("base checkpoint '" + p + "' is not a SegNet");
            if (seg->config().k != m.k) throw ConfigError("base checkpoint '" + p + "' has a different k");
            m.bases.push_back(seg->config());
            b.release();
            bases.emplace_back(seg);
        }
        model = std::make_unique<ResidualCorrection>(m, std::move(bases), rng);
    } else {
        model = make_model(m, rng);
    }
    if (const std::string& init = cfg.text("encoder_init"); !init.empty()) {
        if (m.arch == Architecture::residual_correction)
            throw ConfigError("encoder_init does not apply to residual_correction");
        std::unique_ptr<SegmentationModel> src = load_checkpoint(init);
        if (transfer_state(*src, *model, "encoder.", static_cast<float>(cfg.real("encoder_lr_multiplier"))) == 0)
            throw ConfigError("encoder_init '" + init + "' has no matching encoder tensors");
    }
    return model;
}

TrainOptions train_options(const RunConfig& cfg) {
    TrainOptions o;
    o.sgd.base_lr = cfg.real("base_lr");
    o.sgd.momentum = cfg.real("momentum");
    o.sgd.weight_decay = cfg.real("weight_decay");
    o.sgd.batch_size = positive(cfg, "batch_size");
    o.sgd.milestones.clear();
    for (const std::string& s : cfg.list("milestones")) {
        try {
            o.sgd.milestones.push_back(std::stoi(s));
        } catch (const std::exception&) {
            throw ConfigError("milestones: '" + s + "' is not an integer");
        }
    }
    if (o.sgd.base_lr <= 0 || o.sgd.momentum < 0 || o.sgd.weight_decay < 0)
        throw ConfigError("base_lr must be > 0; momentum and weight_decay >= 0");
    o.epochs = static_cast<int>(cfg.integer("epochs"));
    if (o.epochs < 0) throw ConfigError("epochs must be >= 0");
    o.patch = positive(cfg, "patch_size");
    if (o.patch % 32) throw ConfigError("patch_size must be a multiple of 32");
    o.stride = positive(cfg, "train_stride");
    o.class_balance = cfg.flag("class_balance");
    o.clutter_index = static_cast<int>(cfg.integer("clutter_index"));
    o.seed = static_cast<std::uint64_t>(cfg.integer("seed"));
    return o;
}

std::vector<std::uint64_t> label_histogram(const std::vector<TileSet>& tiles, int k) {
    std::vector<std::uint64_t> h(k, 0);
    for (const TileSet& t : tiles)
        for (std::uint8_t v : t.label.channel(Role::LABEL).u8())
            if (v < k) ++h[v];
    return h;
}

std::vector<EpochStats> train_model(SegmentationModel& model, const std::vector<TileSet>& tiles,
                                    const TrainOptions& opts,
                                    const std::function<void(const EpochStats&)>& on_epoch) {
    if (tiles.empty()) throw ArgumentError("train_model: no training tiles");
    for (const TileSet& t : tiles)
        if (!t.label.has(Role::LABEL)) throw DataError("tile '" + t.name + "' has no labels");
    const int k = model.config().k;
    LossConfig loss;
    if (opts.class_balance) {
        std::optional<int> clutter;
        if (opts.clutter_index >= 0 && opts.clutter_index < k) clutter = opts.clutter_index;
        loss.class_weights = class_weights(label_histogram(tiles, k), clutter);
    }
    PatchSampler sampler(tiles, opts.patch, opts.stride);
    std::vector<EpochStats> stats;
    for (int e = 0; e < opts.epochs; ++e) {
        stats.push_back(train_epoch(model, sampler, opts.sgd, loss, e, opts.seed));
        if (on_epoch) on_epoch(stats.back());
    }
    model.set_training(false);
    return stats;
}

OutputHead parse_output_head(const std::string& s) {
    if (s == "full") return OutputHead::full;
    if (s == "head") return OutputHead::head;
    if (s == "x2") return OutputHead::x2;
    if (s == "x4") return OutputHead::x4;
    if (s == "x8") return OutputHead::x8;
    throw ConfigError("output_head must be full, head, x2, x4 or x8 (got '" + s + "')");
}

Tensor4 predict_probabilities(SegmentationModel& model, const TileSet& tile, int patch, int stride,
                              OutputHead head, int batch) {
    const RasterTile& ref = tile.optical;
    const PatchGrid grid = patch_grid(ref.height(), ref.width(), patch, stride);
    const int k = model.config().k;
    const std::vector<Modality> modalities = model.modalities();
    model.set_training(false);
    Stitcher stitcher(grid, k);
    for (std::size_t start = 0; start < grid.size(); start += batch) {
        const int b = static_cast<int>(std::min<std::size_t>(batch, grid.size() - start));
        std::vector<Tensor4> inputs;
        for (Modality m : modalities) {
            Tensor4 t(Shape{b, 3, patch, patch});
            const RasterTile& src = modality_tile(tile, m);
            if (src.height() != ref.height() || src.width() != ref.width())
                throw DataError("tile '" + tile.name + "': modality dims differ");
            const auto roles = modality_roles(m);
            for (int i = 0; i < b; ++i) {
                const auto [r, c] = grid.origin(start + i);
                copy_window(src, roles, r, c, patch, t, i);
            }
            inputs.push_back(std::move(t));
        }
        const ModelOutput out = model.forward(inputs);
        Tensor4 logits;
        switch (head) {
        case OutputHead::full: logits = out.scores; break;
        case OutputHead::head: logits = out.head.empty() ? out.scores : out.head; break;
        default: {
            const int factor = head == OutputHead::x2 ? 2 : head == OutputHead::x4 ? 4 : 8;
            auto it = std::find(out.branch_factors.begin(), out.branch_factors.end(), factor);
            if (it == out.branch_factors.end())
                throw ConfigError("model has no x" + std::to_string(factor) + " branch");
            logits = bilinear_upsample(out.branches[it - out.branch_factors.begin()], factor);
        }
        }
        // Residual correction outputs are probabilities plus a correction and
        // are treated as logits like every other model.
        const Tensor4 probs = softmax_channels(logits);
        for (int i = 0; i < b; ++i) stitcher.add(start + i, probs, i);
    }
    return stitcher.result();
}

std::vector<std::uint8_t> encode_preview(const LabelMap& labels) {
    static const std::uint8_t palette[6][3] = {{255, 255, 255}, {0, 0, 255}, {0, 255, 255},
                                               {0, 255, 0},     {255, 255, 0}, {255, 0, 0}};
    const std::string header = "P6\n" + std::to_string(labels.w()) + " " + std::to_string(labels.h()) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + static_cast<std::size_t>(labels.h()) * labels.w() * 3);
    for (int y = 0; y < labels.h(); ++y)
        for (int x = 0; x < labels.w(); ++x) {
            const std::uint8_t v = labels.at(0, y, x);
            for (int c = 0; c < 3; ++c) out.push_back(v < 6 ? palette[v][c] : 0);
        }
    return out;
}

int worker_threads() {
    const char* env = std::getenv("MFN_THREADS");
    if (!env) return 1;
    const int hw = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    const int n = std::atoi(env);
    return std::clamp(n, 1, hw);
}

int cmd_synth(const RunConfig& cfg, std::ostream& out) {
    const int size = positive(cfg, "synth_size");
    const int count = positive(cfg, "synth_tiles");
    const int k = positive(cfg, "k");
    const auto seed = static_cast<std::uint64_t>(cfg.integer("seed"));
    if (size % 32) throw ArgumentError("synth_size must be a multiple of 32 (got " + std::to_string(size) + ")");
    if (k != 6) throw ArgumentError("synthetic scenes have exactly 6 classes");
    const std::string dir = cfg.text("tiles_dir");
    ensure_dir(dir);
    std::string manifest = "# synthetic tile pack\nseed " + std::to_string(seed) + "\nsize " + std::to_string(size) +
                           "\n";
    for (int i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "tile_%03d", i);
        const SyntheticScene s = synth_scene(tile_seed(seed, i), size, k);
        const std::string base = name;
        write_mrt(join(dir, base + "_optical.mrt"), s.optical);
        write_mrt(join(dir, base + "_composite.mrt"), s.composite);
        write_mrt(join(dir, base + "_label.mrt"), s.label);
        manifest += base + " " + base + "_optical.mrt " + base + "_composite.mrt " + base + "_label.mrt\n";
    }
    write_text(join(dir, "manifest.txt"), manifest);
    out << "wrote " << count << " tiles (" << 3 * count << " MRT files) to " << dir << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
    const TrainOptions opts = train_options(cfg);
    std::unique_ptr<SegmentationModel> model = build_model(cfg);
    const std::vector<TileSet> all = load_tiles(cfg.text("tiles_dir"));
    const int fold = static_cast<int>(cfg.integer("fold"));
    const std::vector<TileSet> tiles = select(all, fold, false);
    out << "training " << to_string(model->config().arch) << " on " << tiles.size() << " of " << all.size()
        << " tiles\n";
    std::string log;
    train_model(*model, tiles, opts, [&](const EpochStats& s) {
        const std::string line = format_log_line(s);
        log += line + "\n";
        out << line << std::endl;
    });
    write_text(cfg.text("log"), log);
    save_checkpoint(*model, cfg.text("checkpoint"));
    out << "checkpoint " << cfg.text("checkpoint") << "\n";
    return 0;
}

int cmd_predict(const RunConfig& cfg, std::ostream& out) {
    const std::vector<std::uint8_t> bytes = read_file(cfg.text("checkpoint"));
    const std::vector<TileSet> all = load_tiles(cfg.text("tiles_dir"));
    const std::vector<TileSet> tiles = select(all, static_cast<int>(cfg.integer("fold")), true);
    const int patch = positive(cfg, "patch_size");
    const int stride = positive(cfg, "test_stride");
    const OutputHead head = parse_output_head(cfg.text("output_head"));
    const std::string dir = cfg.text("predictions_dir");
    ensure_dir(dir);
    if (deserialize_checkpoint(bytes)->config().k != static_cast<int>(cfg.integer("k")))
        throw CheckpointError("checkpoint k differs from config k");
    parallel_for(tiles.size(), worker_threads(), [&](std::size_t i) {
        std::unique_ptr<SegmentationModel> model = deserialize_checkpoint(bytes);
        const TileSet& t = tiles[i];
        const Tensor4 probs = predict_probabilities(*model, t, patch, stride, head);
        const LabelMap labels = argmax_channel(probs);
        write_mrt(join(dir, t.name + "_pred.mrt"), label_tile(labels));
        RasterTile prob(probs.h(), probs.w());
        for (int c = 0; c < probs.c(); ++c) {
            const auto plane = probs.plane(0, c);
            prob.add(Role::SCORE, std::vector<float>(plane.begin(), plane.end()));
        }
        write_mrt(join(dir, t.name + "_prob.mrt"), prob);
        write_file(join(dir, t.name + "_preview.ppm"), encode_preview(labels));
    });
    for (const TileSet& t : tiles) out << "predicted " << t.name << "\n";
    return 0;
}

int cmd_evaluate(const RunConfig& cfg, std::ostream& out) {
    const std::string tiles_dir = cfg.text("tiles_dir");
    const std::string pred_dir = cfg.text("predictions_dir");
    const std::vector<TileEntry> entries = read_manifest(tiles_dir);
    const int k = positive(cfg, "k");
    const int radius = static_cast<int>(cfg.integer("erosion_radius"));
    if (radius < 0) throw ConfigError("erosion_radius must be >= 0");
    const auto chosen = fold_indices(entries.size(), static_cast<int>(cfg.integer("fold")), true);
    std::vector<ConfusionMatrix> per_tile(chosen.size(), ConfusionMatrix(k));
    parallel_for(chosen.size(), worker_threads(), [&](std::size_t i) {
        const TileEntry& e = entries[chosen[i]];
        if (e.label == "-") throw DataError("tile '" + e.name + "' has no ground truth");
        const LabelMap gt = label_map(read_mrt(join(tiles_dir, e.label)));
        const LabelMap pred = label_map(read_mrt(join(pred_dir, e.name + "_pred.mrt")));
        if (gt.shape != pred.shape)
            throw DataError("tile '" + e.name + "': prediction " + pred.shape.str() + " vs ground truth " +
                            gt.shape.str());
        per_tile[i] = confusion(gt, pred, erode_borders(gt, radius), k);
    });
    ConfusionMatrix total(k);
    for (const ConfusionMatrix& cm : per_tile) total += cm;
    const std::string report = format_metrics_report(f1_scores(total), default_class_names(k));
    write_text(cfg.text("report"), report);
    out << report;
    return 0;
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
    GradCheckOptions opts;
    opts.tolerance = cfg.real("gradcheck_tolerance");
    opts.step = cfg.real("gradcheck_step");
    opts.seed = static_cast<std::uint64_t>(cfg.integer("seed"));
    std::mt19937_64 rng(opts.seed);

    std::vector<GradCheckReport> reports = layer_gradient_suite(opts, rng);
    for (const auto& r : reports) out << format_report(r) << std::endl;
    GradCheckOptions e2e = opts;
    e2e.max_elements_per_tensor = static_cast<std::size_t>(cfg.integer("gradcheck_samples"));
    for (Architecture a : {Architecture::segnet, Architecture::segnet_ms, Architecture::fusenet_sum,
                           Architecture::fusenet_virtual}) {
        reports.push_back(model_gradient_check(a, e2e, rng));
        out << format_report(reports.back()) << std::endl;
    }

    bool ok = true;
    for (const auto& r : reports) ok = ok && r.passed;
    std::string text;
    for (const auto& r : reports) text += format_report(r) + "\n";
    text += ok ? "ALL PASS\n" : "FAILURES\n";
    write_text(cfg.text("report"), text);
    out << (ok ? "ALL PASS" : "FAILURES") << "\n";
    return ok ? 0 : 2;
}

} // namespace mfn
