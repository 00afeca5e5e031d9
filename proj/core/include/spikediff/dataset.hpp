#pragma once

#include <string>

#include "spikediff/tensor.hpp"

namespace spikediff {

// IDX image container: big-endian magic 0x00000803, dimension sizes, ubyte
// pixels. Pixels map affinely to [-1, 1]. Returns (N,H,W,1).
Tensor load_idx(const std::string& path);

// quantizes [-1,1] floats back to ubyte and writes the IDX container
void save_idx(const std::string& path, const Tensor& images);

struct DatasetSpec {
  enum class Format { IdxImages, RawDir };

  std::string path;
  Format format = Format::IdxImages;
  int image_size = 16;   // box-resample target (0 = keep native size)
  int center_crop = 0;   // square crop applied before resizing (raw-dir), 0 = off

  static Format parse_format(const std::string& s) {
    if (s == "idx-images") return Format::IdxImages;
    if (s == "raw-dir") return Format::RawDir;
    raise(str("dataset: unknown format '", s, "' (idx-images | raw-dir)"));
  }
};

// Loads and normalizes a dataset to (N, size, size, C) in [-1, 1].
// raw-dir reads every *.png in the directory in name order.
Tensor load_dataset(const DatasetSpec& spec);

// area-weighted box resampling to an arbitrary size, per channel
Tensor resize_box(const Tensor& images, int64_t out_h, int64_t out_w);

}  // namespace spikediff
