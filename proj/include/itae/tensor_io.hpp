#pragma once

#include <filesystem>
#include <iosfwd>

#include "itae/tensor.hpp"

namespace itae {

// Packed tensor format: "T5v1", five little-endian u32 dims (n, c, t, h, w),
// then numel little-endian IEEE-754 doubles in row-major order.
void write_tensor(std::ostream& os, const Tensor5& t);
Tensor5 read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor5& t);
Tensor5 load_tensor(const std::filesystem::path& path);

}  // namespace itae
