#include "mlpmatch/io/png_mask.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "mlpmatch/core/error.hpp"

namespace mlpmatch::io {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

dataset::LabelMap read_mask_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("cannot open mask file: " + path);

  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw DataError("not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("failed to decode PNG: " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int color_type = png_get_color_type(png, info);
  if (color_type != PNG_COLOR_TYPE_PALETTE && color_type != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("mask must be palette-indexed or grayscale PNG: " + path);
  }
  if (png_get_bit_depth(png, info) < 8) png_set_packing(png);
  png_read_update_info(png, info);

  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  std::vector<std::vector<png_byte>> rows(static_cast<std::size_t>(h));
  std::vector<png_bytep> row_ptrs(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) {
    rows[static_cast<std::size_t>(y)].resize(png_get_rowbytes(png, info));
    row_ptrs[static_cast<std::size_t>(y)] = rows[static_cast<std::size_t>(y)].data();
  }
  png_read_image(png, row_ptrs.data());
  png_destroy_read_struct(&png, &info, nullptr);

  dataset::LabelMap mask({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      mask.at2(y, x) = static_cast<std::int32_t>(rows[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)]);
  return mask;
}

void write_mask_png(const std::string& path, const dataset::LabelMap& mask,
                    const std::vector<std::array<unsigned char, 3>>& palette) {
  if (mask.rank() != 2) throw ContractError("write_mask_png: mask must be 2-D");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("cannot write mask file: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed to encode PNG: " + path);
  }
  png_init_io(png, fp.get());

  const int h = mask.dim(0);
  const int w = mask.dim(1);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);

  std::vector<png_color> plte(256);
  for (std::size_t i = 0; i < 256 && i < palette.size(); ++i)
    plte[i] = {palette[i][0], palette[i][1], palette[i][2]};
  png_set_PLTE(png, info, plte.data(), 256);
  png_write_info(png, info);

  std::vector<png_byte> row(static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::int32_t v = mask.at2(y, x);
      if (v < 0 || v > 255)
        throw ContractError("write_mask_png: value " + std::to_string(v) + " not representable");
      row[static_cast<std::size_t>(x)] = static_cast<png_byte>(v);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<std::array<unsigned char, 3>> voc_palette() {
  std::vector<std::array<unsigned char, 3>> pal(256, {0, 0, 0});
  for (int i = 0; i < 256; ++i) {
    int id = i;
    unsigned char r = 0, g = 0, b = 0;
    for (int j = 0; j < 8 && id; ++j, id >>= 3) {
      r = static_cast<unsigned char>(r | (((id >> 0) & 1) << (7 - j)));
      g = static_cast<unsigned char>(g | (((id >> 1) & 1) << (7 - j)));
      b = static_cast<unsigned char>(b | (((id >> 2) & 1) << (7 - j)));
    }
    pal[static_cast<std::size_t>(i)] = {r, g, b};
  }
  return pal;
}

}  // namespace mlpmatch::io
