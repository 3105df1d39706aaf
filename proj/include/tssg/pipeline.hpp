// Three-stage segmentation: lung ROI from (structure, texture), infection
// from (image, ROI), infection type from (infection mask, ROI).
#pragma once

#include "tssg/dataio.hpp"
#include "tssg/decomposition.hpp"
#include "tssg/random.hpp"
#include "tssg/segnet.hpp"

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace tssg {

enum class StageId { roi, binary, multiclass };
enum class Source { structure, texture, image, roi_mask, binary_mask };

std::string to_string(StageId id);
std::string to_string(Source s);
/// Throws std::invalid_argument on an unknown name.
StageId parse_stage(const std::string& name);

struct StageSpec {
  StageId id = StageId::roi;
  Source stream_a = Source::structure;
  Source stream_b = Source::texture;
  int num_classes = 2;
  NetworkConfig network;

  /// The fixed wiring for a stage, with `base` supplying widths and depths.
  static StageSpec for_stage(StageId id, const NetworkConfig& base = NetworkConfig::miniature());
  void validate() const;
};

struct TrainConfig {
  int epochs = 20;
  int batch_size = 4;
  double learning_rate = 3e-3;
  std::uint64_t seed = 42;
  int augmentation_multiplier = 1;
  double validation_fraction = 0.1;
  bool augment = true;

  void validate() const;
};

/// Linear 1 -> 0 over the run: 1 - epoch / total.
double teacher_forcing_schedule(int epoch, int total);

// ---- augmentation ----------------------------------------------------------

struct AugmentParams {
  double angle_deg = 0.0;
  double shift_x = 0.0;  // fraction of the width
  double shift_y = 0.0;  // fraction of the height
  double scale = 1.0;

  /// Rotation in [-15, 15] degrees, shifts in [-0.1, 0.1], scale in [0.9, 1.1].
  static AugmentParams draw(Rng& rng);
};

/// Resamples about the image center; outside the source is zero.
ImagePlane warp_bilinear(const ImagePlane& src, const AugmentParams& p);
LabelMask warp_nearest(const LabelMask& src, const AugmentParams& p);

struct AugmentedSample {
  std::vector<ImagePlane> planes;
  std::vector<LabelMask> masks;
};

/// One random transform applied to every plane and mask.
AugmentedSample augment_sample(const std::vector<ImagePlane>& planes, const std::vector<LabelMask>& masks, Rng& rng);

// ---- training --------------------------------------------------------------

/// One sample with everything any stage may consume. Upstream predictions are
/// filled in by the pipeline between stages.
struct TrainingSample {
  std::string name;
  ImagePlane image;
  std::optional<LabelMask> roi, binary, multiclass;
  std::optional<LabelMask> predicted_roi, predicted_binary;
};

std::vector<TrainingSample> to_training_samples(const std::vector<Sample>& samples);

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double val_dice = 0.0;

  /// "epoch,<int>,loss,<float>,val_dice,<float>"
  std::string line() const;
};

struct TrainResult {
  NetworkParams<float> params;
  std::vector<EpochLog> log;
  CheckpointMeta meta;
};

using LogSink = std::function<void(const std::string&)>;

/// Trains one stage. Samples lacking a source the stage needs are rejected
/// with the source's name. Stage 2 and 3 feed ground-truth upstream masks with
/// probability teacher_forcing_schedule(epoch), predicted ones otherwise
/// (ground truth when no prediction is attached).
TrainResult train_stage(const StageSpec& spec, const std::vector<TrainingSample>& samples, const TrainConfig& cfg,
                        const DecompositionConfig& dcfg = {}, const LogSink& sink = {});

// ---- inference -------------------------------------------------------------

struct StageModel {
  StageSpec spec;
  NetworkParams<float> params;
  CheckpointMeta meta;
};

struct PipelineCheckpointSet {
  std::array<StageModel, 3> stages;  // roi, binary, multiclass

  const StageModel& stage(StageId id) const { return stages[static_cast<std::size_t>(id)]; }
  /// Stage order, class counts and input channels agree with the wiring.
  void validate() const;

  static PipelineCheckpointSet load(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir) const;
  static std::string file_name(StageId id);
};

struct PipelineOutput {
  LabelMask roi, binary, multiclass;
  std::vector<double> roi_prob, binary_prob;          // foreground probability
  std::vector<std::vector<double>> multiclass_prob;  // k planes
};

/// Runs one stage on already padded {a, b} planes and returns its logits
/// (batch of one).
TensorF stage_logits(const StageModel& model, const ImagePlane& a, const ImagePlane& b);

PipelineOutput run_pipeline(const ImagePlane& image, const PipelineCheckpointSet& ckpts,
                            const DecompositionConfig& dcfg = {});

/// Sets predicted_roi (roi model) or predicted_binary (binary model) on every
/// sample. The binary model reads predicted_roi when present.
void attach_predictions(std::vector<TrainingSample>& samples, const StageModel& model,
                        const DecompositionConfig& dcfg = {});

/// Loads one stage checkpoint; a checkpoint of another stage is a DataError.
StageModel load_stage_model(const std::filesystem::path& path, StageId expected);

/// Trains all three stages in order, attaching stage-1 and stage-2 predictions
/// to the samples before the stages that consume them.
PipelineCheckpointSet train_pipeline(std::vector<TrainingSample>& samples, const TrainConfig& cfg,
                                     const NetworkConfig& base = NetworkConfig::miniature(),
                                     const DecompositionConfig& dcfg = {}, const LogSink& sink = {});

/// Zero-pads bottom/right to multiples of 32.
ImagePlane pad_to_multiple(const ImagePlane& p);
LabelMask pad_to_multiple(const LabelMask& m);

}  // namespace tssg
