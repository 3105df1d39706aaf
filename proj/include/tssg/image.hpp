// Image planes and raster I/O.
#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace tssg {

template <typename Scalar>
using Plane = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Grayscale image with values in [0, 1].
using ImagePlane = Plane<float>;

struct RgbImage {
  std::array<ImagePlane, 3> channels;

  Eigen::Index rows() const { return channels[0].rows(); }
  Eigen::Index cols() const { return channels[0].cols(); }
};

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raw raster as stored on disk: interleaved samples, 1 or 3 channels,
/// 8 or 16 bits per sample.
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 1;
  int bit_depth = 8;
  std::vector<std::uint16_t> samples;  // row-major, interleaved

  std::uint16_t max_value() const { return bit_depth == 16 ? 65535 : 255; }
  std::uint16_t& at(int row, int col, int ch) {
    return samples[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
  std::uint16_t at(int row, int col, int ch) const {
    return samples[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
};

/// Reads an 8/16-bit grayscale or RGB PNG (alpha is dropped, palettes expanded).
Raster read_png(const std::filesystem::path& path);

/// Writes a PNG; the whole file is staged in memory first so a failure never
/// leaves a half-written raster behind.
void write_png(const Raster& raster, const std::filesystem::path& path);

/// Loads a raster scaled to [0, 1]. RGB is converted to luminance
/// (0.299 R + 0.587 G + 0.114 B).
ImagePlane load_image(const std::filesystem::path& path);
RgbImage load_rgb_image(const std::filesystem::path& path);

/// Saves a plane after clamping to [0, 1] and rounding to the bit depth.
void save_image(const ImagePlane& plane, const std::filesystem::path& path, int bit_depth = 8);

/// Converts a raster to [0, 1] luminance.
ImagePlane raster_to_plane(const Raster& raster);
Raster plane_to_raster(const ImagePlane& plane, int bit_depth = 8);

}  // namespace tssg
