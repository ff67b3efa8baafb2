#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "mfn/config.hpp"
#include "mfn/models.hpp"
#include "mfn/patches.hpp"
#include "mfn/training.hpp"

namespace mfn {

// Tile packs: `manifest.txt` in the tiles directory lists one tile per line as
// `name optical.mrt composite.mrt label.mrt` (paths relative to the
// directory, `-` for a missing label); `key value` lines carry metadata and
// `#` starts a comment.

struct TileEntry {
    std::string name, optical, composite, label;
};

std::vector<TileEntry> read_manifest(const std::string& dir);
std::vector<TileSet> load_tiles(const std::string& dir);

/// fold < 0 selects everything; otherwise tiles with index mod 3 == fold when
/// `validation`, the others when not.
std::vector<std::size_t> fold_indices(std::size_t count, int fold, bool validation);

/// Architecture fields of the config; residual correction bases are filled in
/// by build_model from their checkpoints.
ModelConfig model_config(const RunConfig& cfg);

/// Fresh model per config: seeded initialization, frozen bases loaded for
/// residual correction, optional encoder_init transfer.
std::unique_ptr<SegmentationModel> build_model(const RunConfig& cfg);

struct TrainOptions {
    SGDConfig sgd;
    int epochs = 20;
    int patch = 128;
    int stride = 64;
    bool class_balance = true;
    int clutter_index = 5;
    std::uint64_t seed = 1;
};

TrainOptions train_options(const RunConfig& cfg);

std::vector<std::uint64_t> label_histogram(const std::vector<TileSet>& tiles, int k);

/// Runs opts.epochs epochs; `on_epoch` (optional) sees every epoch's stats.
std::vector<EpochStats> train_model(SegmentationModel& model, const std::vector<TileSet>& tiles,
                                    const TrainOptions& opts,
                                    const std::function<void(const EpochStats&)>& on_epoch = {});

enum class OutputHead { full, head, x2, x4, x8 };
OutputHead parse_output_head(const std::string& s);

/// Sliding-window inference in eval mode: softmax of the selected output per
/// window (branches upsampled bilinearly first), averaged over overlaps.
/// Returns (1, k, h, w) probabilities.
Tensor4 predict_probabilities(SegmentationModel& model, const TileSet& tile, int patch, int stride,
                              OutputHead head = OutputHead::full, int batch = 8);

/// 8-bit binary PPM: white, blue, cyan, green, yellow, red for classes 0..5;
/// black otherwise.
std::vector<std::uint8_t> encode_preview(const LabelMap& labels);

/// MFN_THREADS, clamped to [1, hardware concurrency]; 1 when unset.
int worker_threads();

// Commands write human-readable progress to `out` and return the process exit
// code; validation problems are raised as exceptions (see tools/mfn.cpp).
int cmd_synth(const RunConfig& cfg, std::ostream& out);
int cmd_train(const RunConfig& cfg, std::ostream& out);
int cmd_predict(const RunConfig& cfg, std::ostream& out);
int cmd_evaluate(const RunConfig& cfg, std::ostream& out);
int cmd_gradcheck(const RunConfig& cfg, std::ostream& out);

} // namespace mfn
