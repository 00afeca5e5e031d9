#include <cstdio>
#include <fstream>

#include "spikediff/dataset.hpp"
#include "spikediff/image_io.hpp"

namespace spikediff {

namespace {
constexpr uint32_t kIdxImagesMagic = 0x00000803;  // ubyte dtype, 3 dimensions

uint32_t read_u32_be(std::ifstream& f, const std::string& path, const char* what) {
  uint8_t b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  SPD_REQUIRE(f.gcount() == 4, "idx: ", path, ": truncated while reading ", what, " at offset ",
              static_cast<long long>(f.tellg()) - f.gcount());
  return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
         (static_cast<uint32_t>(b[2]) << 8) | b[3];
}
}  // namespace

Tensor load_idx(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  SPD_REQUIRE(f.good(), "idx: cannot open ", path);

  uint32_t magic = read_u32_be(f, path, "magic");
  SPD_REQUIRE(magic == kIdxImagesMagic, "idx: ", path, ": bad magic 0x", std::hex, magic,
              std::dec, ", expected 0x00000803 (ubyte images)");
  int64_t n = read_u32_be(f, path, "item count");
  int64_t h = read_u32_be(f, path, "row count");
  int64_t w = read_u32_be(f, path, "column count");
  SPD_REQUIRE(n > 0 && h > 0 && w > 0, "idx: ", path, ": degenerate dimensions (", n, ",", h, ",",
              w, ")");

  int64_t expected = n * h * w;
  std::vector<uint8_t> pixels(static_cast<size_t>(expected));
  f.read(reinterpret_cast<char*>(pixels.data()), expected);
  SPD_REQUIRE(f.gcount() == expected, "idx: ", path, ": payload truncated, expected ", expected,
              " pixel bytes, got ", static_cast<int64_t>(f.gcount()));

  Tensor out({n, h, w, 1});
  for (int64_t i = 0; i < expected; ++i)
    out[i] = static_cast<float>(pixels[static_cast<size_t>(i)] * 2.0 / 255.0 - 1.0);
  return out;
}

void save_idx(const std::string& path, const Tensor& images) {
  SPD_REQUIRE(images.rank() == 4 && images.dim(3) == 1,
              "idx: only single-channel (N,H,W,1) images, got ", shape_str(images.shape));
  std::ofstream f(path, std::ios::binary);
  SPD_REQUIRE(f.good(), "idx: cannot open ", path, " for writing");
  auto put_u32 = [&](uint32_t v) {
    uint8_t b[4] = {static_cast<uint8_t>(v >> 24), static_cast<uint8_t>(v >> 16),
                    static_cast<uint8_t>(v >> 8), static_cast<uint8_t>(v)};
    f.write(reinterpret_cast<const char*>(b), 4);
  };
  put_u32(kIdxImagesMagic);
  put_u32(static_cast<uint32_t>(images.dim(0)));
  put_u32(static_cast<uint32_t>(images.dim(1)));
  put_u32(static_cast<uint32_t>(images.dim(2)));
  std::vector<uint8_t> bytes(static_cast<size_t>(images.numel()));
  for (int64_t i = 0; i < images.numel(); ++i) bytes[static_cast<size_t>(i)] = quantize_unit(images[i]);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  SPD_REQUIRE(f.good(), "idx: write failed for ", path);
}

}  // namespace spikediff
