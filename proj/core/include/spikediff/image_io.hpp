#pragma once

#include <cstdint>
#include <string>

#include "spikediff/tensor.hpp"

namespace spikediff {

struct ImageU8 {
  int64_t height = 0;
  int64_t width = 0;
  int64_t channels = 0;  // 1 (gray) or 3 (rgb)
  std::vector<uint8_t> pixels;  // row-major, interleaved
};

// Minimal PNG: 8-bit gray or rgb, non-interlaced, zlib-compressed.
void write_png(const std::string& path, const ImageU8& img);
ImageU8 read_png(const std::string& path);

// Tiles (N,H,W,C) images row-major into a ceil(N/columns) x columns grid.
// Values are clamped to [-1, 1] and mapped affinely to 8-bit; empty cells
// stay black.
void save_png_grid(const Tensor& images, int columns, const std::string& path);

// [-1,1] float -> 8-bit, the same mapping save_png_grid uses
uint8_t quantize_unit(float v);

}  // namespace spikediff
