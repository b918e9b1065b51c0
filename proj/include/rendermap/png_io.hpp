#pragma once

// Thin RAII wrappers over libpng for the two image kinds the library
// exchanges: 16-bit grayscale depth maps and 8-bit RGB debug images.

#include <png.h>

#include <array>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace rendermap {

struct Gray16Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> data;
};

struct Rgb8Image {
  int width = 0;
  int height = 0;
  std::vector<std::array<std::uint8_t, 3>> data;

  Rgb8Image() = default;
  Rgb8Image(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, {0, 0, 0}) {}
  std::array<std::uint8_t, 3>& at(int col, int row) { return data[static_cast<std::size_t>(row) * width + col]; }
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void png_warning_fn(png_structp, png_const_charp) {}

inline void write_png(const std::string& path, int width, int height, int bit_depth, int color_type,
                      const std::vector<const std::uint8_t*>& rows) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warning_fn);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};
  if (setjmp(png_jmpbuf(png))) throw std::runtime_error("libpng failed writing " + path);
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  // No time chunk is written, so identical pixels give identical files.
  png_write_info(png, info);
  // PNG samples are big-endian.
  if (bit_depth == 16) png_set_swap(png);
  for (const auto* row : rows) png_write_row(png, const_cast<png_bytep>(row));
  png_write_end(png, nullptr);
}

}  // namespace detail

inline void write_png16(const std::string& path, const Gray16Image& img) {
  std::vector<const std::uint8_t*> rows(img.height);
  for (int r = 0; r < img.height; ++r)
    rows[r] = reinterpret_cast<const std::uint8_t*>(img.data.data() + static_cast<std::size_t>(r) * img.width);
  detail::write_png(path, img.width, img.height, 16, PNG_COLOR_TYPE_GRAY, rows);
}

inline void write_png_rgb(const std::string& path, const Rgb8Image& img) {
  std::vector<const std::uint8_t*> rows(img.height);
  for (int r = 0; r < img.height; ++r)
    rows[r] = img.data[static_cast<std::size_t>(r) * img.width].data();
  detail::write_png(path, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, rows);
}

/// Reads a single-channel 16-bit PNG. Any other layout is rejected.
inline Gray16Image read_png16(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open depth image: " + path);
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw std::runtime_error("not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, detail::png_warning_fn);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};

  Gray16Image img;
  int bit_depth = 0, color_type = 0;
  if (setjmp(png_jmpbuf(png))) throw std::runtime_error("libpng failed reading " + path);
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  bit_depth = png_get_bit_depth(png, info);
  color_type = png_get_color_type(png, info);
  if (bit_depth != 16 || color_type != PNG_COLOR_TYPE_GRAY)
    throw std::runtime_error("reading " + path + ": expected 16-bit single-channel image, got bit depth " +
                             std::to_string(bit_depth) + " color type " + std::to_string(color_type));
  png_set_swap(png);
  png_read_update_info(png, info);
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.data.resize(static_cast<std::size_t>(img.width) * img.height);
  for (int r = 0; r < img.height; ++r)
    png_read_row(png, reinterpret_cast<png_bytep>(img.data.data() + static_cast<std::size_t>(r) * img.width), nullptr);
  return img;
}

}  // namespace rendermap
