#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mfn/tensor.hpp"

namespace mfn {

/// Role codes as stored in MRT files. SCORE (8) holds one class-probability
/// plane of a prediction.
enum class Role : std::uint8_t { IR = 0, R = 1, G = 2, B = 3, DSM = 4, nDSM = 5, NDVI = 6, LABEL = 7, SCORE = 8 };

std::string to_string(Role r);

struct Channel {
    Role role;
    std::variant<std::vector<float>, std::vector<std::uint8_t>> plane;

    bool is_u8() const { return std::holds_alternative<std::vector<std::uint8_t>>(plane); }
    const std::vector<float>& f32() const;
    const std::vector<std::uint8_t>& u8() const;
    std::vector<float>& f32();
    std::vector<std::uint8_t>& u8();
};

/// Multi-channel raster; every plane is height x width, row-major.
class RasterTile {
public:
    RasterTile() = default;
    RasterTile(int height, int width);

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t pixels() const noexcept { return static_cast<std::size_t>(height_) * width_; }

    void add(Role role, std::vector<float> plane);
    void add(Role role, std::vector<std::uint8_t> plane);

    const std::vector<Channel>& channels() const noexcept { return channels_; }
    std::vector<Channel>& channels() noexcept { return channels_; }
    /// First channel with this role; throws DataError if absent.
    const Channel& channel(Role role) const;
    bool has(Role role) const;

    bool operator==(const RasterTile&) const = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<Channel> channels_;
};

inline bool operator==(const Channel& a, const Channel& b) { return a.role == b.role && a.plane == b.plane; }

// MRT layout (little endian): "MRT1" | u8 version=1 | u8 channel count |
// u16 reserved=0 | u32 height | u32 width | per channel: u8 role | u8 dtype
// (0=f32, 1=u8) | plane data.
std::vector<std::uint8_t> encode_mrt(const RasterTile& tile);
RasterTile decode_mrt(const std::vector<std::uint8_t>& bytes);
void write_mrt(const std::string& path, const RasterTile& tile);
RasterTile read_mrt(const std::string& path);

/// (IR - R) / (IR + R); 0 where IR + R = 0.
std::vector<float> compute_ndvi(std::span<const float> ir, std::span<const float> r);

/// Min-max scales a plane to [0, 1]; a constant plane maps to 0.
std::vector<float> minmax_scale(std::span<const float> plane);

/// Stacks (DSM, nDSM, NDVI); DSM and nDSM are min-max scaled per tile.
RasterTile build_composite(int height, int width, std::span<const float> dsm, std::span<const float> ndsm,
                           std::span<const float> ndvi);

/// Label plane of a tile as a (1, 1, h, w) LabelMap.
LabelMap label_map(const RasterTile& tile);
RasterTile label_tile(const LabelMap& labels, int n = 0);

} // namespace mfn
