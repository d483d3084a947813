// File I/O: 8/16-bit PNG for display images and masks, PFM for float maps
// (normals, shading, albedo, uv). PFM layout pinned here: "PF"/"Pf" header,
// dims, scale -1.0 (little-endian), 32-bit floats, bottom-up scanlines.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include <png.h>

#include "nfed/fields.hpp"

namespace nfed {

inline double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

namespace detail {

struct file_handle {
  std::FILE* f = nullptr;
  explicit file_handle(const std::string& path, const char* mode)
      : f(std::fopen(path.c_str(), mode)) {}
  ~file_handle() {
    if (f) std::fclose(f);
  }
  file_handle(const file_handle&) = delete;
  file_handle& operator=(const file_handle&) = delete;
};

}  // namespace detail

// --------------------------------------------------------------------------
// PNG
// --------------------------------------------------------------------------

inline pixel_field load_image(const std::string& path, bool gamma_decode = false) {
  detail::file_handle fh(path, "rb");
  if (!fh.f) throw io_error("load_image: cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           nullptr, nullptr);
  if (!png) throw io_error("load_image: libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw io_error("load_image: libpng init failed");
  }
  std::vector<png_bytep> row_ptrs;
  std::vector<uint8_t> raw;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw io_error("load_image: failed to read " + path);
  }
  png_init_io(png, fh.f);
  png_read_info(png, info);

  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);
  if (bit_depth != 8 && bit_depth != 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw io_error("load_image: unsupported bit depth " +
                   std::to_string(bit_depth) + " in " + path);
  }
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (bit_depth == 16) png_set_swap(png);  // PNG is big-endian on disk
  png_read_update_info(png, info);

  const int width = int(png_get_image_width(png, info));
  const int height = int(png_get_image_height(png, info));
  const int channels = int(png_get_channels(png, info));
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw io_error("load_image: unsupported channel count " +
                   std::to_string(channels) + " in " + path);
  }

  const size_t row_bytes = png_get_rowbytes(png, info);
  raw.resize(row_bytes * height);
  row_ptrs.resize(height);
  for (int y = 0; y < height; ++y) row_ptrs[y] = raw.data() + row_bytes * y;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  pixel_field out(width, height, channels, 0.0, true);
  const double scale = bit_depth == 8 ? 255.0 : 65535.0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        double v;
        if (bit_depth == 8) {
          v = raw[row_bytes * y + size_t(x) * channels + c] / scale;
        } else {
          uint16_t u;
          std::memcpy(&u, raw.data() + row_bytes * y +
                              (size_t(x) * channels + c) * 2, 2);
          v = u / scale;
        }
        out.at(y, x, c) = gamma_decode ? srgb_to_linear(v) : v;
      }
    }
  }
  return out;
}

inline void save_image(const pixel_field& field, const std::string& path,
                       int bit_depth = 8) {
  if (bit_depth != 8 && bit_depth != 16)
    throw validation_error("save_image: bit depth must be 8 or 16");
  if (field.channels != 1 && field.channels != 3)
    throw validation_error("save_image: channel count must be 1 or 3");

  detail::file_handle fh(path, "wb");
  if (!fh.f) throw io_error("save_image: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            nullptr, nullptr);
  if (!png) throw io_error("save_image: libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw io_error("save_image: libpng init failed");
  }
  std::vector<uint8_t> raw;
  std::vector<png_bytep> row_ptrs;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw io_error("save_image: failed to write " + path);
  }
  png_init_io(png, fh.f);
  const int color = field.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(png, info, field.width, field.height, bit_depth, color,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);

  const double scale = bit_depth == 8 ? 255.0 : 65535.0;
  const size_t row_bytes = size_t(field.width) * field.channels * (bit_depth / 8);
  raw.resize(row_bytes * field.height);
  for (int y = 0; y < field.height; ++y) {
    for (int x = 0; x < field.width; ++x) {
      for (int c = 0; c < field.channels; ++c) {
        double v = std::clamp(field.at(y, x, c), 0.0, 1.0);
        long q = std::lround(v * scale);
        if (bit_depth == 8) {
          raw[row_bytes * y + size_t(x) * field.channels + c] = uint8_t(q);
        } else {
          uint16_t u = uint16_t(q);
          std::memcpy(raw.data() + row_bytes * y +
                          (size_t(x) * field.channels + c) * 2, &u, 2);
        }
      }
    }
  }
  row_ptrs.resize(field.height);
  for (int y = 0; y < field.height; ++y)
    row_ptrs[y] = raw.data() + row_bytes * y;
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Grayscale PNG as alpha matte; RGB inputs use the first channel.
inline matte_mask load_mask(const std::string& path) {
  pixel_field f = load_image(path);
  matte_mask m(f.width, f.height);
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) m.at(y, x) = f.at(y, x, 0);
  return m;
}

inline void save_mask(const matte_mask& m, const std::string& path) {
  pixel_field f(m.width, m.height, 1, 0.0, true);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) f.at(y, x, 0) = m.at(y, x);
  save_image(f, path);
}

// --------------------------------------------------------------------------
// PFM
// --------------------------------------------------------------------------

inline void save_float_map(const pixel_field& field, const std::string& path) {
  if (field.channels != 1 && field.channels != 3)
    throw validation_error("save_float_map: PFM holds 1 or 3 channels, got " +
                           std::to_string(field.channels));
  for (double v : field.data)
    if (!std::isfinite(v))
      throw validation_error("save_float_map: non-finite value in field");

  detail::file_handle fh(path, "wb");
  if (!fh.f) throw io_error("save_float_map: cannot open " + path);
  std::string header = std::string(field.channels == 3 ? "PF" : "Pf") + "\n" +
                       std::to_string(field.width) + " " +
                       std::to_string(field.height) + "\n-1.0\n";
  if (std::fwrite(header.data(), 1, header.size(), fh.f) != header.size())
    throw io_error("save_float_map: write failed for " + path);

  // Bottom-up scanlines.
  std::vector<float> row(size_t(field.width) * field.channels);
  for (int y = field.height - 1; y >= 0; --y) {
    for (int x = 0; x < field.width; ++x)
      for (int c = 0; c < field.channels; ++c)
        row[size_t(x) * field.channels + c] = float(field.at(y, x, c));
    if (std::fwrite(row.data(), sizeof(float), row.size(), fh.f) != row.size())
      throw io_error("save_float_map: write failed for " + path);
  }
}

inline void save_float_map(const normal_field& normals, const std::string& path) {
  save_float_map(normals.as_field(), path);
}

inline pixel_field load_float_map(const std::string& path) {
  detail::file_handle fh(path, "rb");
  if (!fh.f) throw io_error("load_float_map: cannot open " + path);

  auto read_token = [&]() -> std::string {
    std::string tok;
    int ch;
    while ((ch = std::fgetc(fh.f)) != EOF && std::isspace(ch)) {
    }
    if (ch == EOF) throw io_error("load_float_map: truncated header in " + path);
    do {
      tok.push_back(char(ch));
    } while ((ch = std::fgetc(fh.f)) != EOF && !std::isspace(ch));
    return tok;
  };

  const std::string magic = read_token();
  int channels;
  if (magic == "PF")
    channels = 3;
  else if (magic == "Pf")
    channels = 1;
  else
    throw io_error("load_float_map: not a PFM file: " + path);

  const int width = std::stoi(read_token());
  const int height = std::stoi(read_token());
  const double scale = std::stod(read_token());
  if (width <= 0 || height <= 0)
    throw io_error("load_float_map: bad dimensions in " + path);
  if (scale >= 0.0)
    throw io_error("load_float_map: big-endian PFM not supported: " + path);

  pixel_field out(width, height, channels);
  std::vector<float> row(size_t(width) * channels);
  for (int y = height - 1; y >= 0; --y) {
    if (std::fread(row.data(), sizeof(float), row.size(), fh.f) != row.size())
      throw io_error("load_float_map: truncated data in " + path);
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c)
        out.at(y, x, c) = row[size_t(x) * channels + c];
  }
  for (double v : out.data)
    if (!std::isfinite(v))
      throw io_error("load_float_map: non-finite value in " + path);
  return out;
}

inline normal_field load_normal_map(const std::string& path) {
  pixel_field f = load_float_map(path);
  if (f.channels != 3)
    throw io_error("load_normal_map: expected 3 channels in " + path);
  return normal_field::from_vectors(f.width, f.height, f.data);
}

}  // namespace nfed
