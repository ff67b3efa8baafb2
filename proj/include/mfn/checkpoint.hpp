#pragma once

#include <memory>
#include <string>

#include "mfn/models.hpp"

namespace mfn {

// Checkpoint layout (little endian):
//   "MFN1" | u32 manifest length | manifest (UTF-8 key=value lines)
//   | u32 tensor count | per tensor: u32 n, c, h, w, then n*c*h*w f32
// Tensors follow the model's declaration order (SegmentationModel::state()).

void save_checkpoint(SegmentationModel& model, const std::string& path);
std::unique_ptr<SegmentationModel> load_checkpoint(const std::string& path);
/// Reads only the manifest.
ModelConfig read_checkpoint_config(const std::string& path);

std::vector<std::uint8_t> serialize_checkpoint(SegmentationModel& model);
std::unique_ptr<SegmentationModel> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Copies every state tensor of `src` whose name starts with `prefix` into the
/// equally named tensor of `dst`, sets lr_multiplier on the matching
/// parameters of `dst`, and returns the number of tensors copied.
std::size_t transfer_state(SegmentationModel& src, SegmentationModel& dst, const std::string& prefix,
                           Real lr_multiplier);

} // namespace mfn
