#include "mfn/raster.hpp"

#include <algorithm>
#include <cstring>

#include "mfn/binary_io.hpp"

namespace mfn {

std::string to_string(Role r) {
    switch (r) {
    case Role::IR: return "IR";
    case Role::R: return "R";
    case Role::G: return "G";
    case Role::B: return "B";
    case Role::DSM: return "DSM";
    case Role::nDSM: return "nDSM";
    case Role::NDVI: return "NDVI";
    case Role::LABEL: return "LABEL";
    case Role::SCORE: return "SCORE";
    }
    return "?";
}

const std::vector<float>& Channel::f32() const {
    if (is_u8()) throw DataError("channel " + to_string(role) + " is u8, not f32");
    return std::get<std::vector<float>>(plane);
}
const std::vector<std::uint8_t>& Channel::u8() const {
    if (!is_u8()) throw DataError("channel " + to_string(role) + " is f32, not u8");
    return std::get<std::vector<std::uint8_t>>(plane);
}
std::vector<float>& Channel::f32() {
    if (is_u8()) throw DataError("channel " + to_string(role) + " is u8, not f32");
    return std::get<std::vector<float>>(plane);
}
std::vector<std::uint8_t>& Channel::u8() {
    if (!is_u8()) throw DataError("channel " + to_string(role) + " is f32, not u8");
    return std::get<std::vector<std::uint8_t>>(plane);
}

RasterTile::RasterTile(int height, int width) : height_(height), width_(width) {
    if (height < 1 || width < 1) throw DimensionError("raster tile dims must be >= 1");
}

void RasterTile::add(Role role, std::vector<float> plane) {
    if (plane.size() != pixels()) throw ShapeError("raster plane size mismatch for " + to_string(role));
    if (channels_.size() >= 255) throw DataError("raster tile holds at most 255 channels");
    channels_.push_back({role, std::move(plane)});
}

void RasterTile::add(Role role, std::vector<std::uint8_t> plane) {
    if (plane.size() != pixels()) throw ShapeError("raster plane size mismatch for " + to_string(role));
    if (channels_.size() >= 255) throw DataError("raster tile holds at most 255 channels");
    channels_.push_back({role, std::move(plane)});
}

const Channel& RasterTile::channel(Role role) const {
    for (const Channel& c : channels_)
        if (c.role == role) return c;
    throw DataError("raster tile has no " + to_string(role) + " channel");
}

bool RasterTile::has(Role role) const {
    return std::any_of(channels_.begin(), channels_.end(), [&](const Channel& c) { return c.role == role; });
}

namespace {
constexpr char kMagic[4] = {'M', 'R', 'T', '1'};
}

std::vector<std::uint8_t> encode_mrt(const RasterTile& tile) {
    detail::ByteWriter w;
    w.bytes(kMagic, 4);
    w.u8(1);
    w.u8(static_cast<std::uint8_t>(tile.channels().size()));
    w.u16(0);
    w.u32(static_cast<std::uint32_t>(tile.height()));
    w.u32(static_cast<std::uint32_t>(tile.width()));
    for (const Channel& c : tile.channels()) {
        w.u8(static_cast<std::uint8_t>(c.role));
        if (c.is_u8()) {
            w.u8(1);
            w.bytes(c.u8().data(), c.u8().size());
        } else {
            w.u8(0);
            w.f32s(c.f32().data(), c.f32().size());
        }
    }
    return w.buffer();
}

RasterTile decode_mrt(const std::vector<std::uint8_t>& bytes) {
    detail::ByteReader r(bytes);
    char magic[4];
    r.bytes(magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad MRT magic", 0);
    const std::size_t version_at = r.offset();
    if (r.u8("version") != 1) throw FormatError("unsupported MRT version", version_at);
    const int channels = r.u8("channel count");
    const std::size_t reserved_at = r.offset();
    if (r.u16("reserved") != 0) throw FormatError("non-zero reserved field", reserved_at);
    const std::size_t dims_at = r.offset();
    const std::uint32_t h = r.u32("height");
    const std::uint32_t w = r.u32("width");
    if (h == 0 || w == 0 || h > (1u << 20) || w > (1u << 20)) throw FormatError("invalid MRT dims", dims_at);
    RasterTile tile(static_cast<int>(h), static_cast<int>(w));
    const std::size_t pixels = tile.pixels();
    for (int c = 0; c < channels; ++c) {
        const std::size_t role_at = r.offset();
        const std::uint8_t role = r.u8("channel role");
        if (role > static_cast<std::uint8_t>(Role::SCORE)) throw FormatError("unknown channel role", role_at);
        const std::size_t dtype_at = r.offset();
        const std::uint8_t dtype = r.u8("channel dtype");
        if (dtype == 0) {
            std::vector<float> plane(pixels);
            r.f32s(plane.data(), pixels, "f32 plane");
            tile.add(static_cast<Role>(role), std::move(plane));
        } else if (dtype == 1) {
            std::vector<std::uint8_t> plane(pixels);
            r.bytes(plane.data(), pixels, "u8 plane");
            tile.add(static_cast<Role>(role), std::move(plane));
        } else {
            throw FormatError("unknown channel dtype", dtype_at);
        }
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes after last channel", r.offset());
    return tile;
}

void write_mrt(const std::string& path, const RasterTile& tile) { detail::write_file(path, encode_mrt(tile)); }

RasterTile read_mrt(const std::string& path) {
    try {
        return decode_mrt(detail::read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what(), e.offset());
    }
}

std::vector<float> compute_ndvi(std::span<const float> ir, std::span<const float> r) {
    if (ir.size() != r.size()) throw ShapeError("compute_ndvi: plane size mismatch");
    std::vector<float> out(ir.size());
    for (std::size_t i = 0; i < ir.size(); ++i) {
        if (ir[i] < 0.0f || r[i] < 0.0f) throw DataError("compute_ndvi: negative reflectance");
        const float s = ir[i] + r[i];
        out[i] = s > 0.0f ? std::clamp((ir[i] - r[i]) / s, -1.0f, 1.0f) : 0.0f;
    }
    return out;
}

std::vector<float> minmax_scale(std::span<const float> plane) {
    std::vector<float> out(plane.size(), 0.0f);
    if (plane.empty()) return out;
    const auto [lo, hi] = std::minmax_element(plane.begin(), plane.end());
    const float range = *hi - *lo;
    if (range <= 0.0f) return out;
    for (std::size_t i = 0; i < plane.size(); ++i) out[i] = (plane[i] - *lo) / range;
    return out;
}

RasterTile build_composite(int height, int width, std::span<const float> dsm, std::span<const float> ndsm,
                           std::span<const float> ndvi) {
    RasterTile tile(height, width);
    if (dsm.size() != tile.pixels() || ndsm.size() != tile.pixels() || ndvi.size() != tile.pixels())
        throw ShapeError("build_composite: plane dims do not match " + std::to_string(height) + "x" +
                         std::to_string(width));
    tile.add(Role::DSM, minmax_scale(dsm));
    tile.add(Role::nDSM, minmax_scale(ndsm));
    tile.add(Role::NDVI, std::vector<float>(ndvi.begin(), ndvi.end()));
    return tile;
}

LabelMap label_map(const RasterTile& tile) {
    const Channel& c = tile.channel(Role::LABEL);
    LabelMap out(1, tile.height(), tile.width());
    out.data = c.u8();
    return out;
}

RasterTile label_tile(const LabelMap& labels, int n) {
    RasterTile tile(labels.h(), labels.w());
    const std::size_t plane = static_cast<std::size_t>(labels.h()) * labels.w();
    tile.add(Role::LABEL, std::vector<std::uint8_t>(labels.data.begin() + n * plane,
                                                    labels.data.begin() + (n + 1) * plane));
    return tile;
}

} // namespace mfn
