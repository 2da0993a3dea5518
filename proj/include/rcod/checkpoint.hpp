#pragma once

#include <map>
#include <string>

#include "rcod/tensor.hpp"

namespace rcod {

// Versioned named-tensor container:
//   "RCOD" | version u32 | entries | crc32 u32
// entry: name_len u32 | name utf-8 | dtype u8 (0 = f32) | ndim u8 |
//        dims u32[ndim] | payload f32, all little-endian. The trailing CRC32
// covers every preceding byte.
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::map<std::string, TensorF>& tensors, const std::string& path);

// Throws LoadError naming the failure (magic, version, CRC, truncation);
// never returns a partial map.
std::map<std::string, TensorF> load_checkpoint(const std::string& path);

}  // namespace rcod
