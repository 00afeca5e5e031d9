#include "spikediff/image_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace spikediff {

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

uint32_t get_u32(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

void write_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
  put_u32(out, static_cast<uint32_t>(data.size()));
  size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uint32_t crc = static_cast<uint32_t>(
      crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start)));
  put_u32(out, crc);
}

int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

void write_png(const std::string& path, const ImageU8& img) {
  SPD_REQUIRE(img.channels == 1 || img.channels == 3, "png: channels must be 1 or 3, got ",
              img.channels);
  SPD_REQUIRE(static_cast<int64_t>(img.pixels.size()) == img.height * img.width * img.channels,
              "png: pixel buffer size mismatch");

  // filter 0 on every scanline
  const int64_t row = img.width * img.channels;
  std::vector<uint8_t> raw(static_cast<size_t>((row + 1) * img.height));
  for (int64_t y = 0; y < img.height; ++y) {
    raw[static_cast<size_t>(y * (row + 1))] = 0;
    std::memcpy(raw.data() + y * (row + 1) + 1, img.pixels.data() + y * row,
                static_cast<size_t>(row));
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> compressed(bound);
  int rc = compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6);
  SPD_REQUIRE(rc == Z_OK, "png: zlib compression failed (", rc, ")");
  compressed.resize(bound);

  std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<uint8_t> ihdr;
  put_u32(ihdr, static_cast<uint32_t>(img.width));
  put_u32(ihdr, static_cast<uint32_t>(img.height));
  ihdr.push_back(8);                                      // bit depth
  ihdr.push_back(img.channels == 1 ? 0 : 2);              // color type
  ihdr.push_back(0);                                      // compression
  ihdr.push_back(0);                                      // filter
  ihdr.push_back(0);                                      // no interlace
  write_chunk(out, "IHDR", ihdr);
  write_chunk(out, "IDAT", compressed);
  write_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  SPD_REQUIRE(f.good(), "png: cannot open ", path, " for writing");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  SPD_REQUIRE(f.good(), "png: write failed for ", path);
}

ImageU8 read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  SPD_REQUIRE(f.good(), "png: cannot open ", path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  SPD_REQUIRE(buf.size() > 8 && buf[0] == 0x89 && buf[1] == 'P' && buf[2] == 'N' && buf[3] == 'G',
              "png: ", path, " is not a PNG file");

  ImageU8 img;
  int64_t bit_depth = 0;
  std::vector<uint8_t> idat;
  size_t pos = 8;
  while (pos + 8 <= buf.size()) {
    uint32_t len = get_u32(buf.data() + pos);
    SPD_REQUIRE(pos + 12 + len <= buf.size(), "png: truncated chunk in ", path);
    std::string type(reinterpret_cast<const char*>(buf.data() + pos + 4), 4);
    const uint8_t* data = buf.data() + pos + 8;
    if (type == "IHDR") {
      img.width = get_u32(data);
      img.height = get_u32(data + 4);
      bit_depth = data[8];
      int color = data[9];
      SPD_REQUIRE(bit_depth == 8, "png: only 8-bit supported, got ", bit_depth);
      SPD_REQUIRE(color == 0 || color == 2, "png: only gray/rgb supported, got color type ",
                  color);
      SPD_REQUIRE(data[12] == 0, "png: interlaced files not supported");
      img.channels = color == 0 ? 1 : 3;
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  SPD_REQUIRE(img.width > 0 && img.height > 0, "png: missing IHDR in ", path);

  const int64_t row = img.width * img.channels;
  std::vector<uint8_t> raw(static_cast<size_t>((row + 1) * img.height));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  int rc = uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size()));
  SPD_REQUIRE(rc == Z_OK && raw_len == raw.size(), "png: zlib inflate failed for ", path);

  img.pixels.assign(static_cast<size_t>(img.height * row), 0);
  const int64_t bpp = img.channels;
  for (int64_t y = 0; y < img.height; ++y) {
    uint8_t filter = raw[static_cast<size_t>(y * (row + 1))];
    const uint8_t* src = raw.data() + y * (row + 1) + 1;
    uint8_t* dst = img.pixels.data() + y * row;
    const uint8_t* up = y > 0 ? img.pixels.data() + (y - 1) * row : nullptr;
    for (int64_t x = 0; x < row; ++x) {
      int a = x >= bpp ? dst[x - bpp] : 0;
      int b = up ? up[x] : 0;
      int c = (up && x >= bpp) ? up[x - bpp] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: raise(str("png: unknown filter ", int(filter), " in ", path));
      }
      dst[x] = static_cast<uint8_t>(v & 0xff);
    }
  }
  return img;
}

uint8_t quantize_unit(float v) {
  float c = v < -1.0f ? -1.0f : (v > 1.0f ? 1.0f : v);
  return static_cast<uint8_t>(std::lround((c + 1.0f) * 0.5f * 255.0f));
}

void save_png_grid(const Tensor& images, int columns, const std::string& path) {
  SPD_REQUIRE(images.rank() == 4, "grid: images must be (N,H,W,C), got ",
              shape_str(images.shape));
  SPD_REQUIRE(columns >= 1, "grid: columns must be >= 1");
  int64_t n = images.dim(0), h = images.dim(1), w = images.dim(2), c = images.dim(3);
  SPD_REQUIRE(c == 1 || c == 3, "grid: channels must be 1 or 3, got ", c);
  int64_t rows = (n + columns - 1) / columns;

  ImageU8 canvas;
  canvas.height = rows * h;
  canvas.width = columns * w;
  canvas.channels = c;
  canvas.pixels.assign(static_cast<size_t>(canvas.height * canvas.width * c), 0);
  for (int64_t i = 0; i < n; ++i) {
    int64_t gy = (i / columns) * h;
    int64_t gx = (i % columns) * w;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        for (int64_t ch = 0; ch < c; ++ch)
          canvas.pixels[static_cast<size_t>(((gy + y) * canvas.width + gx + x) * c + ch)] =
              quantize_unit(images[((i * h + y) * w + x) * c + ch]);
  }
  write_png(path, canvas);
}

}  // namespace spikediff
