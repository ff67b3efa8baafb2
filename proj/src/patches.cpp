#include "mfn/patches.hpp"

#include <algorithm>
#include <random>

namespace mfn {

namespace {

std::vector<int> axis_origins(int dim, int patch, int stride) {
    std::vector<int> out;
    for (int o = 0; o + patch <= dim; o += stride) out.push_back(o);
    if (out.back() + patch < dim) out.push_back(dim - patch);
    return out;
}

} // namespace

std::vector<std::pair<int, int>> PatchGrid::origins() const {
    std::vector<std::pair<int, int>> out;
    out.reserve(size());
    for (int r : rows)
        for (int c : cols) out.emplace_back(r, c);
    return out;
}

PatchGrid patch_grid(int tile_h, int tile_w, int patch, int stride) {
    if (patch < 1 || stride < 1) throw ArgumentError("patch_grid: patch and stride must be >= 1");
    if (patch > tile_h || patch > tile_w)
        throw ArgumentError("patch_grid: patch " + std::to_string(patch) + " larger than tile " +
                            std::to_string(tile_h) + "x" + std::to_string(tile_w));
    PatchGrid g{tile_h, tile_w, patch, stride, axis_origins(tile_h, patch, stride),
                axis_origins(tile_w, patch, stride)};
    return g;
}

std::vector<std::uint32_t> coverage_counts(const PatchGrid& grid) {
    std::vector<std::uint32_t> counts(static_cast<std::size_t>(grid.tile_h) * grid.tile_w, 0);
    for (int r : grid.rows)
        for (int c : grid.cols)
            for (int y = r; y < r + grid.patch; ++y)
                for (int x = c; x < c + grid.patch; ++x) ++counts[static_cast<std::size_t>(y) * grid.tile_w + x];
    return counts;
}

Stitcher::Stitcher(const PatchGrid& grid, int k)
    : grid_(grid), k_(k), acc_(static_cast<std::size_t>(grid.tile_h) * grid.tile_w * k, 0.0) {
    if (k < 1) throw ArgumentError("Stitcher: k must be >= 1");
}

void Stitcher::add(std::size_t i, const Tensor4& window, int n) {
    if (i >= grid_.size()) throw ArgumentError("Stitcher: window index out of range");
    if (window.c() != k_ || window.h() != grid_.patch || window.w() != grid_.patch || n < 0 || n >= window.n())
        throw ShapeError("Stitcher: window " + window.shape().str());
    const std::size_t plane = static_cast<std::size_t>(grid_.tile_h) * grid_.tile_w;
    const auto [r, c] = grid_.origin(i);
    for (int ch = 0; ch < k_; ++ch)
        for (int y = 0; y < grid_.patch; ++y) {
            double* dst = acc_.data() + ch * plane + static_cast<std::size_t>(r + y) * grid_.tile_w + c;
            const Real* src = window.data() + window.offset(n, ch, y, 0);
            for (int x = 0; x < grid_.patch; ++x) dst[x] += src[x];
        }
}

Tensor4 Stitcher::result() const {
    const std::size_t plane = static_cast<std::size_t>(grid_.tile_h) * grid_.tile_w;
    const std::vector<std::uint32_t> counts = coverage_counts(grid_);
    Tensor4 out(Shape{1, k_, grid_.tile_h, grid_.tile_w});
    for (int ch = 0; ch < k_; ++ch)
        for (std::size_t p = 0; p < plane; ++p)
            out.data()[ch * plane + p] = static_cast<Real>(acc_[ch * plane + p] / counts[p]);
    return out;
}

Tensor4 stitch_predictions(std::span<const Tensor4> windows, const PatchGrid& grid) {
    if (windows.size() != grid.size())
        throw ArgumentError("stitch_predictions: " + std::to_string(windows.size()) + " windows for a grid of " +
                            std::to_string(grid.size()));
    const int k = windows.front().c();
    for (const Tensor4& w : windows)
        if (w.shape() != Shape{1, k, grid.patch, grid.patch})
            throw ShapeError("stitch_predictions: window " + w.shape().str());
    Stitcher st(grid, k);
    for (std::size_t i = 0; i < windows.size(); ++i) st.add(i, windows[i]);
    return st.result();
}

std::vector<Role> modality_roles(Modality m) {
    if (m == Modality::optical) return {Role::IR, Role::R, Role::G};
    return {Role::DSM, Role::nDSM, Role::NDVI};
}

const RasterTile& modality_tile(const TileSet& t, Modality m) {
    return m == Modality::optical ? t.optical : t.composite;
}

void copy_window(const RasterTile& tile, std::span<const Role> roles, int y0, int x0, int size, Tensor4& dst,
                 int n) {
    if (dst.c() != static_cast<int>(roles.size()) || dst.h() != size || dst.w() != size)
        throw ShapeError("copy_window: destination " + dst.shape().str());
    if (y0 < 0 || x0 < 0 || y0 + size > tile.height() || x0 + size > tile.width())
        throw ArgumentError("copy_window: window outside tile");
    for (std::size_t c = 0; c < roles.size(); ++c) {
        const std::vector<float>& plane = tile.channel(roles[c]).f32();
        for (int y = 0; y < size; ++y) {
            const float* src = plane.data() + static_cast<std::size_t>(y0 + y) * tile.width() + x0;
            std::copy(src, src + size, dst.data() + dst.offset(n, static_cast<int>(c), y, 0));
        }
    }
}

namespace {

void validate_tiles(const std::vector<TileSet>& tiles) {
    for (const TileSet& t : tiles) {
        const int h = t.label.height();
        const int w = t.label.width();
        if (t.optical.height() != h || t.optical.width() != w || t.composite.height() != h ||
            t.composite.width() != w)
            throw DataError("tile '" + t.name + "': optical, composite and label dims differ");
    }
}

} // namespace

PatchSampler::PatchSampler(const std::vector<TileSet>& tiles, int patch, int stride)
    : tiles_(&tiles), patch_(patch) {
    validate_tiles(tiles);
    for (std::size_t t = 0; t < tiles.size(); ++t) {
        const PatchGrid g = patch_grid(tiles[t].label.height(), tiles[t].label.width(), patch, stride);
        for (const auto& [r, c] : g.origins()) refs_.push_back({static_cast<int>(t), r, c});
    }
}

std::vector<PatchRef> PatchSampler::shuffled(std::uint64_t seed) const {
    std::vector<PatchRef> out = refs_;
    std::mt19937_64 rng(seed);
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

Batch PatchSampler::batch(std::span<const PatchRef> refs, std::span<const Modality> modalities) const {
    if (refs.empty()) throw ArgumentError("PatchSampler::batch: no patches");
    const int b = static_cast<int>(refs.size());
    Batch out;
    for (Modality m : modalities) {
        Tensor4 t(Shape{b, 3, patch_, patch_});
        const auto roles = modality_roles(m);
        for (int i = 0; i < b; ++i) {
            const PatchRef& r = refs[i];
            copy_window(modality_tile((*tiles_)[r.tile], m), roles, r.row, r.col, patch_, t, i);
        }
        out.inputs.push_back(std::move(t));
    }
    out.target = LabelMap(b, patch_, patch_);
    for (int i = 0; i < b; ++i) {
        const PatchRef& r = refs[i];
        const RasterTile& lt = (*tiles_)[r.tile].label;
        const std::vector<std::uint8_t>& plane = lt.channel(Role::LABEL).u8();
        for (int y = 0; y < patch_; ++y) {
            const std::uint8_t* src = plane.data() + static_cast<std::size_t>(r.row + y) * lt.width() + r.col;
            std::copy(src, src + patch_, &out.target.at(i, y, 0));
        }
    }
    return out;
}

std::vector<PatchRef> extract_patches(const std::vector<TileSet>& tiles, int patch, int stride, std::uint64_t seed) {
    return PatchSampler(tiles, patch, stride).shuffled(seed);
}

} // namespace mfn
