#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mfn/models.hpp"
#include "mfn/raster.hpp"

namespace mfn {

/// Sliding-window layout over a tile. Per axis, origins are the multiples of
/// stride that fit, plus one window clamped to (dim - patch) when the regular
/// ones stop short of the edge. Windows are enumerated row-major.
struct PatchGrid {
    int tile_h = 0;
    int tile_w = 0;
    int patch = 0;
    int stride = 0;
    std::vector<int> rows;
    std::vector<int> cols;

    std::size_t size() const noexcept { return rows.size() * cols.size(); }
    std::pair<int, int> origin(std::size_t i) const { return {rows[i / cols.size()], cols[i % cols.size()]}; }
    std::vector<std::pair<int, int>> origins() const;
};

PatchGrid patch_grid(int tile_h, int tile_w, int patch, int stride);

/// Number of windows covering each pixel, row-major (tile_h x tile_w).
std::vector<std::uint32_t> coverage_counts(const PatchGrid& grid);

/// Per-pixel mean of the (1, k, patch, patch) window maps over every window
/// covering the pixel. Sums are accumulated in double in window order.
Tensor4 stitch_predictions(std::span<const Tensor4> windows, const PatchGrid& grid);

/// Streaming form of stitch_predictions. Each window is added exactly once;
/// the result is bit-identical to the batch version when windows arrive in
/// grid order (other orders differ only by rounding).
class Stitcher {
public:
    Stitcher(const PatchGrid& grid, int k);
    /// Accumulates batch item n of `window` (shape (*, k, patch, patch)) at grid window i.
    void add(std::size_t i, const Tensor4& window, int n = 0);
    Tensor4 result() const;

private:
    PatchGrid grid_;
    int k_;
    std::vector<double> acc_;
};

/// Co-registered inputs and ground truth for one tile.
struct TileSet {
    std::string name;
    RasterTile optical;   // IR, R, G
    RasterTile composite; // DSM, nDSM, NDVI
    RasterTile label;     // LABEL (may be empty for inference-only tiles)
};

std::vector<Role> modality_roles(Modality m);
const RasterTile& modality_tile(const TileSet& t, Modality m);

/// Copies a size x size window of the given roles into batch slot n of dst.
void copy_window(const RasterTile& tile, std::span<const Role> roles, int y0, int x0, int size, Tensor4& dst,
                 int n);

struct PatchRef {
    int tile = 0;
    int row = 0;
    int col = 0;
    bool operator==(const PatchRef&) const = default;
};

struct Batch {
    std::vector<Tensor4> inputs; // one (B, 3, p, p) tensor per modality
    LabelMap target;             // (B, 1, p, p)
};

/// Training patches drawn from a fixed set of tiles.
class PatchSampler {
public:
    PatchSampler(const std::vector<TileSet>& tiles, int patch, int stride);

    std::size_t size() const noexcept { return refs_.size(); }
    int patch() const noexcept { return patch_; }
    const std::vector<PatchRef>& refs() const noexcept { return refs_; }
    /// Deterministic permutation of refs() for the given seed.
    std::vector<PatchRef> shuffled(std::uint64_t seed) const;
    Batch batch(std::span<const PatchRef> refs, std::span<const Modality> modalities) const;

    const std::vector<TileSet>& tiles() const noexcept { return *tiles_; }

private:
    const std::vector<TileSet>* tiles_;
    int patch_;
    std::vector<PatchRef> refs_;
};

/// Seeded shuffle of every grid window of every tile. Throws DataError when a
/// tile's modalities and labels disagree in size.
std::vector<PatchRef> extract_patches(const std::vector<TileSet>& tiles, int patch, int stride,
                                      std::uint64_t seed);

} // namespace mfn
