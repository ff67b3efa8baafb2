#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "mfn/patches.hpp"
#include "mfn/raster.hpp"

namespace mfn {

/// Class indices of the synthetic scenes, aligned with the ISPRS legend.
enum SynthClass : std::uint8_t {
    kRoad = 0,       // impervious surfaces
    kBuilding = 1,
    kLowVegetation = 2,
    kTree = 3,
    kCar = 4,
    kBackground = 5, // bare ground, takes the clutter slot
};

/// Procedural urban scene. Buildings and impervious plazas draw from one
/// optical and one shape distribution and differ only in height; likewise
/// tree crowns and round low-vegetation patches. Roads and bare
/// ground are both flat with NDVI 0 and differ only optically.
struct SyntheticScene {
    RasterTile optical;   // IR, R, G in [0, 1]
    RasterTile composite; // DSM, nDSM (min-max scaled), NDVI
    RasterTile label;     // LABEL
};

/// Throws ArgumentError unless size is a positive multiple of 32.
SyntheticScene synth_scene(std::uint64_t seed, int size, int k = 6);

/// Seed of tile i in a pack generated from `seed`.
std::uint64_t tile_seed(std::uint64_t seed, int index);

TileSet to_tileset(SyntheticScene scene, std::string name);

} // namespace mfn
