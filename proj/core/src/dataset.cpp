#include "spikediff/dataset.hpp"

#include <algorithm>
#include <filesystem>

#include "spikediff/image_io.hpp"

namespace spikediff {

Tensor resize_box(const Tensor& images, int64_t out_h, int64_t out_w) {
  SPD_REQUIRE(images.rank() == 4, "resize: images must be (N,H,W,C)");
  int64_t n = images.dim(0), h = images.dim(1), w = images.dim(2), c = images.dim(3);
  if (h == out_h && w == out_w) return images;
  Tensor out({n, out_h, out_w, c});
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t oy = 0; oy < out_h; ++oy)
      for (int64_t ox = 0; ox < out_w; ++ox) {
        double y0 = oy * sy, y1 = (oy + 1) * sy;
        double x0 = ox * sx, x1 = (ox + 1) * sx;
        for (int64_t ch = 0; ch < c; ++ch) {
          double acc = 0, area = 0;
          for (int64_t y = static_cast<int64_t>(y0); y < static_cast<int64_t>(std::ceil(y1));
               ++y) {
            double wy = std::min<double>(y + 1, y1) - std::max<double>(y, y0);
            if (wy <= 0 || y >= h) continue;
            for (int64_t x = static_cast<int64_t>(x0); x < static_cast<int64_t>(std::ceil(x1));
                 ++x) {
              double wx = std::min<double>(x + 1, x1) - std::max<double>(x, x0);
              if (wx <= 0 || x >= w) continue;
              acc += wy * wx * images[((i * h + y) * w + x) * c + ch];
              area += wy * wx;
            }
          }
          out[((i * out_h + oy) * out_w + ox) * c + ch] =
              static_cast<float>(area > 0 ? acc / area : 0.0);
        }
      }
  return out;
}

namespace {

Tensor center_crop(const Tensor& images, int64_t crop) {
  int64_t n = images.dim(0), h = images.dim(1), w = images.dim(2), c = images.dim(3);
  SPD_REQUIRE(crop <= h && crop <= w, "dataset: crop ", crop, " exceeds image size ", h, "x", w);
  int64_t oy = (h - crop) / 2, ox = (w - crop) / 2;
  Tensor out({n, crop, crop, c});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t y = 0; y < crop; ++y)
      for (int64_t x = 0; x < crop; ++x)
        for (int64_t ch = 0; ch < c; ++ch)
          out[((i * crop + y) * crop + x) * c + ch] =
              images[((i * h + y + oy) * w + x + ox) * c + ch];
  return out;
}

Tensor load_raw_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  SPD_REQUIRE(fs::is_directory(dir), "dataset: ", dir, " is not a directory");
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path().string());
  SPD_REQUIRE(!files.empty(), "dataset: no .png files in ", dir);
  std::sort(files.begin(), files.end());

  Tensor out;
  for (size_t i = 0; i < files.size(); ++i) {
    ImageU8 img = read_png(files[i]);
    if (i == 0)
      out = Tensor({static_cast<int64_t>(files.size()), img.height, img.width, img.channels});
    SPD_REQUIRE(img.height == out.dim(1) && img.width == out.dim(2) &&
                    img.channels == out.dim(3),
                "dataset: ", files[i], " has shape ", img.height, "x", img.width, "x",
                img.channels, ", expected ", out.dim(1), "x", out.dim(2), "x", out.dim(3));
    float* dst = out.ptr() + static_cast<int64_t>(i) * out.dim(1) * out.dim(2) * out.dim(3);
    for (size_t p = 0; p < img.pixels.size(); ++p)
      dst[p] = static_cast<float>(img.pixels[p] * 2.0 / 255.0 - 1.0);
  }
  return out;
}

}  // namespace

Tensor load_dataset(const DatasetSpec& spec) {
  Tensor images;
  switch (spec.format) {
    case DatasetSpec::Format::IdxImages:
      images = load_idx(spec.path);
      break;
    case DatasetSpec::Format::RawDir:
      images = load_raw_dir(spec.path);
      break;
  }
  if (spec.center_crop > 0) images = center_crop(images, spec.center_crop);
  if (spec.image_size > 0) images = resize_box(images, spec.image_size, spec.image_size);
  return images;
}

}  // namespace spikediff
