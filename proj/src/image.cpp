#include "tssg/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

namespace tssg {
namespace {

struct MemoryReader {
  const unsigned char* data;
  std::size_t size;
  std::size_t pos;
};

void read_from_memory(png_structp png, png_bytep out, png_size_t count) {
  auto* src = static_cast<MemoryReader*>(png_get_io_ptr(png));
  if (src->pos + count > src->size) {
    png_error(png, "unexpected end of file");
  }
  std::memcpy(out, src->data + src->pos, count);
  src->pos += count;
}

struct MemoryWriter {
  std::vector<unsigned char>* out;
};

void write_to_memory(png_structp png, png_bytep data, png_size_t count) {
  auto* dst = static_cast<MemoryWriter*>(png_get_io_ptr(png));
  dst->out->insert(dst->out->end(), data, data + count);
}

void flush_noop(png_structp) {}

struct ErrorSlot {
  char message[256];
};

[[noreturn]] void on_error(png_structp png, png_const_charp msg) {
  auto* slot = static_cast<ErrorSlot*>(png_get_error_ptr(png));
  std::snprintf(slot->message, sizeof(slot->message), "%s", msg);
  png_longjmp(png, 1);
}

void on_warning(png_structp, png_const_charp) {}

struct DecodedHeader {
  png_uint_32 width;
  png_uint_32 height;
  int bit_depth;
  int channels;
};

// All libpng calls that may longjmp live here; locals are trivially
// destructible and the destination buffer is sized by the caller.
bool decode_png(MemoryReader* reader, ErrorSlot* slot, DecodedHeader* header,
                std::vector<unsigned char>* pixels) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, slot, on_error, on_warning);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return false;
  }
  png_bytep* rows = nullptr;
  if (setjmp(png_jmpbuf(png))) {
    std::free(rows);
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_set_read_fn(png, reader, read_from_memory);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);  // little-endian host order for uint16 copies
  png_read_update_info(png, info);

  header->width = png_get_image_width(png, info);
  header->height = png_get_image_height(png, info);
  header->bit_depth = png_get_bit_depth(png, info);
  header->channels = png_get_channels(png, info);
  if ((header->channels != 1 && header->channels != 3) || (header->bit_depth != 8 && header->bit_depth != 16)) {
    std::snprintf(slot->message, sizeof(slot->message), "unsupported layout (%d channels, %d bits)",
                  header->channels, header->bit_depth);
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  const png_size_t stride = png_get_rowbytes(png, info);
  pixels->resize(stride * header->height);
  rows = static_cast<png_bytep*>(std::malloc(sizeof(png_bytep) * header->height));
  for (png_uint_32 r = 0; r < header->height; ++r) rows[r] = pixels->data() + r * stride;
  png_read_image(png, rows);
  png_read_end(png, nullptr);
  std::free(rows);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

bool encode_png(const Raster* raster, const unsigned char* pixels, MemoryWriter* writer, ErrorSlot* slot) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, slot, on_error, on_warning);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_set_write_fn(png, writer, write_to_memory, flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(raster->width), static_cast<png_uint_32>(raster->height),
               raster->bit_depth, raster->channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (raster->bit_depth == 16) png_set_swap(png);
  const std::size_t stride =
      static_cast<std::size_t>(raster->width) * raster->channels * (raster->bit_depth == 16 ? 2 : 1);
  for (int r = 0; r < raster->height; ++r) {
    png_write_row(png, pixels + static_cast<std::size_t>(r) * stride);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

}  // namespace

Raster read_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("cannot open image " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw ImageIoError("not a PNG file: " + path.string());
  }
  MemoryReader reader{bytes.data(), bytes.size(), 0};
  ErrorSlot slot{};
  DecodedHeader header{};
  std::vector<unsigned char> pixels;
  if (!decode_png(&reader, &slot, &header, &pixels)) {
    throw ImageIoError("cannot decode " + path.string() + ": " + (slot.message[0] ? slot.message : "libpng failure"));
  }
  Raster out;
  out.width = static_cast<int>(header.width);
  out.height = static_cast<int>(header.height);
  out.channels = header.channels;
  out.bit_depth = header.bit_depth;
  const std::size_t count = static_cast<std::size_t>(out.width) * out.height * out.channels;
  out.samples.resize(count);
  if (out.bit_depth == 16) {
    for (std::size_t i = 0; i < count; ++i) {
      out.samples[i] = static_cast<std::uint16_t>(pixels[2 * i] | (pixels[2 * i + 1] << 8));
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) out.samples[i] = pixels[i];
  }
  return out;
}

void write_png(const Raster& raster, const std::filesystem::path& path) {
  if (raster.width <= 0 || raster.height <= 0 || (raster.channels != 1 && raster.channels != 3) ||
      (raster.bit_depth != 8 && raster.bit_depth != 16) ||
      raster.samples.size() != static_cast<std::size_t>(raster.width) * raster.height * raster.channels) {
    throw ImageIoError("invalid raster for " + path.string());
  }
  std::vector<unsigned char> pixels;
  if (raster.bit_depth == 16) {
    pixels.resize(raster.samples.size() * 2);
    for (std::size_t i = 0; i < raster.samples.size(); ++i) {
      pixels[2 * i] = static_cast<unsigned char>(raster.samples[i] & 0xFF);
      pixels[2 * i + 1] = static_cast<unsigned char>(raster.samples[i] >> 8);
    }
  } else {
    pixels.resize(raster.samples.size());
    for (std::size_t i = 0; i < raster.samples.size(); ++i) pixels[i] = static_cast<unsigned char>(raster.samples[i]);
  }
  std::vector<unsigned char> encoded;
  MemoryWriter writer{&encoded};
  ErrorSlot slot{};
  if (!encode_png(&raster, pixels.data(), &writer, &slot)) {
    throw ImageIoError("cannot encode " + path.string() + ": " + slot.message);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageIoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(encoded.data()), static_cast<std::streamsize>(encoded.size()));
  if (!out) throw ImageIoError("short write to " + path.string());
}

ImagePlane raster_to_plane(const Raster& raster) {
  ImagePlane plane(raster.height, raster.width);
  const double scale = 1.0 / raster.max_value();
  for (int r = 0; r < raster.height; ++r) {
    for (int c = 0; c < raster.width; ++c) {
      double v;
      if (raster.channels == 1) {
        v = raster.at(r, c, 0) * scale;
      } else {
        v = (0.299 * raster.at(r, c, 0) + 0.587 * raster.at(r, c, 1) + 0.114 * raster.at(r, c, 2)) * scale;
      }
      plane(r, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return plane;
}

Raster plane_to_raster(const ImagePlane& plane, int bit_depth) {
  Raster raster;
  raster.width = static_cast<int>(plane.cols());
  raster.height = static_cast<int>(plane.rows());
  raster.channels = 1;
  raster.bit_depth = bit_depth;
  raster.samples.resize(static_cast<std::size_t>(plane.size()));
  const double maxv = raster.max_value();
  for (Eigen::Index r = 0; r < plane.rows(); ++r) {
    for (Eigen::Index c = 0; c < plane.cols(); ++c) {
      const double v = std::isfinite(plane(r, c)) ? std::clamp(static_cast<double>(plane(r, c)), 0.0, 1.0) : 0.0;
      raster.samples[static_cast<std::size_t>(r * plane.cols() + c)] = static_cast<std::uint16_t>(std::lround(v * maxv));
    }
  }
  return raster;
}

ImagePlane load_image(const std::filesystem::path& path) { return raster_to_plane(read_png(path)); }

RgbImage load_rgb_image(const std::filesystem::path& path) {
  const Raster raster = read_png(path);
  RgbImage out;
  const double scale = 1.0 / raster.max_value();
  for (int ch = 0; ch < 3; ++ch) {
    out.channels[static_cast<std::size_t>(ch)].resize(raster.height, raster.width);
    for (int r = 0; r < raster.height; ++r) {
      for (int c = 0; c < raster.width; ++c) {
        const int src = raster.channels == 3 ? ch : 0;
        out.channels[static_cast<std::size_t>(ch)](r, c) = static_cast<float>(raster.at(r, c, src) * scale);
      }
    }
  }
  return out;
}

void save_image(const ImagePlane& plane, const std::filesystem::path& path, int bit_depth) {
  write_png(plane_to_raster(plane, bit_depth), path);
}

}  // namespace tssg
