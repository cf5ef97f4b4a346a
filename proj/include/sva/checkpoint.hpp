#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sva/tensor.hpp"

namespace sva {

using Records = std::vector<std::pair<std::string, Tensor>>;

/// Binary tensor archive. Layout, all integers little-endian:
///   "SVAC" | u32 version (=1) | u32 record count
///   per record: u16 name length | name bytes | u8 rank | u32 dims... |
///               f64 payload in row-major order
void write_checkpoint(const std::string& path, const Records& records);

/// Throws DataError on missing file, bad magic/version, or truncation.
Records read_checkpoint(const std::string& path);

} // namespace sva
