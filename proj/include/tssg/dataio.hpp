// Masks, manifests, checkpoints and the synthetic chest-slice generator.
#pragma once

#include "tssg/image.hpp"
#include "tssg/metrics.hpp"
#include "tssg/segnet.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace tssg {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- mask codec ------------------------------------------------------------

struct MaskCodec {
  static constexpr std::array<std::array<int, 3>, 3> kColors{{{0, 0, 0}, {255, 0, 0}, {0, 255, 0}}};
  static constexpr int kTolerance = 30;

  /// Table class whose color is within the tolerance on every channel, or -1.
  static int classify(int r, int g, int b);
};

/// 8- or 16-bit RGB raster to labels {0,1,2}. Throws DataError listing every
/// unknown color with its pixel count.
LabelMask decode_multiclass(const Raster& rgb);
Raster encode_multiclass(const LabelMask& mask);

/// Grayscale (or RGB) raster, foreground where the normalized luminance >= 0.5.
LabelMask decode_binary(const Raster& raster);
/// 0/255 grayscale.
Raster encode_binary(const LabelMask& mask);

LabelMask load_binary_mask(const std::filesystem::path& path);
LabelMask load_multiclass_mask(const std::filesystem::path& path);

// ---- manifest --------------------------------------------------------------

enum class Split { train, test };

struct ManifestRecord {
  std::filesystem::path image;
  std::optional<std::filesystem::path> roi, binary, multiclass;
  Split split = Split::train;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
};

/// Relative paths resolve against the manifest's directory. Every referenced
/// file must exist.
DatasetManifest load_manifest(const std::filesystem::path& path);
/// Paths are written relative to the manifest's directory when possible.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

struct Sample {
  std::string name;
  ImagePlane image;
  std::optional<LabelMask> roi, binary, multiclass;
};

std::vector<Sample> load_samples(const DatasetManifest& manifest, std::optional<Split> split = std::nullopt);

/// FNV-1a over image samples and masks, in order.
std::uint64_t dataset_fingerprint(const std::vector<Sample>& samples);

// ---- checkpoints -----------------------------------------------------------

inline constexpr char kCheckpointMagic[4] = {'T', 'S', 'S', 'G'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string stage;
  std::uint64_t seed = 0;
  std::uint64_t data_fingerprint = 0;
  /// Free-form key/value echo (training settings and the like).
  std::map<std::string, std::string> extra;
  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct Checkpoint {
  NetworkParams<float> params;
  CheckpointMeta meta;
};

std::vector<std::uint8_t> serialize_checkpoint(const NetworkParams<float>& params, const CheckpointMeta& meta);
/// Validates the whole buffer before building any tensor.
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const NetworkParams<float>& params, const CheckpointMeta& meta, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---- synthetic data --------------------------------------------------------

inline constexpr int kSyntheticSize = 64;

struct SyntheticSample {
  ImagePlane image;
  LabelMask roi, binary, multiclass;
};

/// Deterministic in (seed, index).
SyntheticSample synthesize_sample(std::uint64_t seed, int index);

/// Writes n samples plus manifest.tsv into out_dir. The last `test_count`
/// records are the test split.
DatasetManifest generate_synthetic_dataset(int n, std::uint64_t seed, const std::filesystem::path& out_dir,
                                           int test_count = 0);

}  // namespace tssg
