#pragma once

#include <string>

#include "rlab/model.hpp"

namespace rlab {

// Model container, magic "RLAB", little-endian throughout:
//   magic[4], version u16, class_count u32,
//   input rank u8, extents i64 x rank,
//   layer count u32, per layer: kind u16, name (u32 len + bytes),
//     i32 x {in_ch, out_ch, kernel, stride, padding, in_feat, out_feat,
//            group_in, group_out, block_group}, projection u8,
//   param count u32, per param: name (u16 len + bytes), rank u8,
//     extents i64 x rank, raw f32 values.
// Values are stored as f32; loading widens them back. A loaded checkpoint
// saves back to byte-identical content.

void save_checkpoint(const ModelGraph& model, const std::string& path);
ModelGraph load_checkpoint(const std::string& path);

/// FNV-1a hash of a whole file; used in dataset provenance strings.
uint64_t file_hash(const std::string& path);

}  // namespace rlab
