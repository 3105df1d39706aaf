#include "tssg/pipeline.hpp"

#include "tssg/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace tssg {

std::string to_string(StageId id) {
  switch (id) {
    case StageId::roi: return "roi";
    case StageId::binary: return "binary";
    case StageId::multiclass: return "multiclass";
  }
  return "?";
}

std::string to_string(Source s) {
  switch (s) {
    case Source::structure: return "structure";
    case Source::texture: return "texture";
    case Source::image: return "image";
    case Source::roi_mask: return "roi mask";
    case Source::binary_mask: return "binary mask";
  }
  return "?";
}

StageId parse_stage(const std::string& name) {
  for (StageId id : {StageId::roi, StageId::binary, StageId::multiclass}) {
    if (to_string(id) == name) return id;
  }
  throw std::invalid_argument("unknown stage '" + name + "' (expected roi, binary or multiclass)");
}

StageSpec StageSpec::for_stage(StageId id, const NetworkConfig& base) {
  StageSpec s;
  s.id = id;
  s.network = base;
  s.network.input_channels_a = 1;
  s.network.input_channels_b = 1;
  switch (id) {
    case StageId::roi:
      s.stream_a = Source::structure;
      s.stream_b = Source::texture;
      s.num_classes = 2;
      break;
    case StageId::binary:
      s.stream_a = Source::image;
      s.stream_b = Source::roi_mask;
      s.num_classes = 2;
      break;
    case StageId::multiclass:
      s.stream_a = Source::binary_mask;
      s.stream_b = Source::roi_mask;
      s.num_classes = 3;
      break;
  }
  s.network.num_classes = s.num_classes;
  return s;
}

void StageSpec::validate() const {
  const StageSpec ref = for_stage(id, network);
  if (stream_a != ref.stream_a || stream_b != ref.stream_b || num_classes != ref.num_classes ||
      network.num_classes != num_classes || network.input_channels_a != 1 || network.input_channels_b != 1) {
    throw std::invalid_argument("stage " + to_string(id) + " is not wired as (" + to_string(ref.stream_a) + ", " +
                                to_string(ref.stream_b) + ") with " + std::to_string(ref.num_classes) + " classes");
  }
  network.validate();
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be > 0");
  if (augmentation_multiplier < 1) throw std::invalid_argument("augmentation_multiplier must be >= 1");
  if (!(validation_fraction > 0 && validation_fraction < 1)) {
    throw std::invalid_argument("validation_fraction must lie in (0, 1)");
  }
}

double teacher_forcing_schedule(int epoch, int total) {
  if (total < 1 || epoch < 0 || epoch >= total) {
    throw std::invalid_argument("teacher_forcing_schedule needs 0 <= epoch < total");
  }
  return 1.0 - static_cast<double>(epoch) / total;
}

// ---- augmentation ----------------------------------------------------------

AugmentParams AugmentParams::draw(Rng& rng) {
  AugmentParams p;
  p.angle_deg = rng.uniform(-15, 15);
  p.shift_x = rng.uniform(-0.1, 0.1);
  p.shift_y = rng.uniform(-0.1, 0.1);
  p.scale = rng.uniform(0.9, 1.1);
  return p;
}

namespace {

// Output pixel -> source coordinate (inverse of rotate+scale about the
// center, then shift).
struct InverseMap {
  double c, s, inv_scale, cx, cy, tx, ty;

  InverseMap(const AugmentParams& p, int rows, int cols) {
    const double rad = p.angle_deg * std::numbers::pi / 180.0;
    c = std::cos(rad);
    s = std::sin(rad);
    inv_scale = 1.0 / p.scale;
    cx = (cols - 1) / 2.0;
    cy = (rows - 1) / 2.0;
    tx = p.shift_x * cols;
    ty = p.shift_y * rows;
  }

  void operator()(int x, int y, double& sx, double& sy) const {
    const double dx = (x - cx - tx) * inv_scale, dy = (y - cy - ty) * inv_scale;
    sx = c * dx + s * dy + cx;
    sy = -s * dx + c * dy + cy;
  }
};

}  // namespace

ImagePlane warp_bilinear(const ImagePlane& src, const AugmentParams& p) {
  const int rows = static_cast<int>(src.rows()), cols = static_cast<int>(src.cols());
  const InverseMap map(p, rows, cols);
  ImagePlane out = ImagePlane::Zero(rows, cols);
  auto sample = [&](int y, int x) -> double {
    return (y >= 0 && y < rows && x >= 0 && x < cols) ? static_cast<double>(src(y, x)) : 0.0;
  };
  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols; ++x) {
      double sx, sy;
      map(x, y, sx, sy);
      // Snap round-off so that exact grid points copy their pixel.
      if (std::abs(sx - std::round(sx)) < 1e-9) sx = std::round(sx);
      if (std::abs(sy - std::round(sy)) < 1e-9) sy = std::round(sy);
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      if (fx == 0.0 && fy == 0.0) {
        out(y, x) = static_cast<float>(sample(y0, x0));
        continue;
      }
      const double top = sample(y0, x0) * (1 - fx) + sample(y0, x0 + 1) * fx;
      const double bottom = sample(y0 + 1, x0) * (1 - fx) + sample(y0 + 1, x0 + 1) * fx;
      out(y, x) = static_cast<float>(top * (1 - fy) + bottom * fy);
    }
  }
  return out;
}

LabelMask warp_nearest(const LabelMask& src, const AugmentParams& p) {
  const InverseMap map(p, src.height, src.width);
  LabelMask out(src.height, src.width);
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      double sx, sy;
      map(x, y, sx, sy);
      const long xi = std::lround(sx), yi = std::lround(sy);
      if (xi >= 0 && xi < src.width && yi >= 0 && yi < src.height) {
        out(y, x) = src(static_cast<int>(yi), static_cast<int>(xi));
      }
    }
  }
  return out;
}

AugmentedSample augment_sample(const std::vector<ImagePlane>& planes, const std::vector<LabelMask>& masks, Rng& rng) {
  for (const auto& m : masks) {
    for (const auto& p : planes) {
      if (m.height != p.rows() || m.width != p.cols()) throw ShapeError("augment_sample: masks and planes differ in size");
    }
  }
  const AugmentParams params = AugmentParams::draw(rng);
  AugmentedSample out;
  for (const auto& p : planes) out.planes.push_back(warp_bilinear(p, params));
  for (const auto& m : masks) out.masks.push_back(warp_nearest(m, params));
  return out;
}

// ---- padding ---------------------------------------------------------------

namespace {

ImagePlane pad_to(const ImagePlane& p, int rows, int cols) {
  ImagePlane out = ImagePlane::Zero(rows, cols);
  out.topLeftCorner(p.rows(), p.cols()) = p;
  return out;
}

LabelMask pad_to(const LabelMask& m, int rows, int cols) {
  LabelMask out(rows, cols);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) out(y, x) = m(y, x);
  }
  return out;
}

LabelMask crop(const LabelMask& m, int rows, int cols) {
  LabelMask out(rows, cols);
  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols; ++x) out(y, x) = m(y, x);
  }
  return out;
}

std::vector<double> crop_plane(const std::vector<double>& v, int src_cols, int rows, int cols) {
  std::vector<double> out(static_cast<std::size_t>(rows) * cols);
  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols; ++x) {
      out[static_cast<std::size_t>(y) * cols + x] = v[static_cast<std::size_t>(y) * src_cols + x];
    }
  }
  return out;
}

int round_up(int v) { return v + padding_needed(v); }

ImagePlane mask_plane(const LabelMask& m) {
  ImagePlane p(m.height, m.width);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) p(y, x) = m(y, x) != 0 ? 1.0f : 0.0f;
  }
  return p;
}

}  // namespace

ImagePlane pad_to_multiple(const ImagePlane& p) {
  return pad_to(p, round_up(static_cast<int>(p.rows())), round_up(static_cast<int>(p.cols())));
}

LabelMask pad_to_multiple(const LabelMask& m) { return pad_to(m, round_up(m.height), round_up(m.width)); }

// ---- training --------------------------------------------------------------

std::vector<TrainingSample> to_training_samples(const std::vector<Sample>& samples) {
  std::vector<TrainingSample> out;
  for (const auto& s : samples) {
    TrainingSample t;
    t.name = s.name;
    t.image = s.image;
    t.roi = s.roi;
    t.binary = s.binary;
    t.multiclass = s.multiclass;
    out.push_back(std::move(t));
  }
  return out;
}

std::string EpochLog::line() const {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "epoch,%d,loss,%.6f,val_dice,%.6f", epoch, loss, val_dice);
  return buf;
}

namespace {

struct StageExample {
  ImagePlane a, b;
  LabelMask target;
};

const LabelMask& require_mask(const std::optional<LabelMask>& m, const TrainingSample& s, StageId stage,
                              const char* source) {
  if (!m) {
    throw DataError("stage " + to_string(stage) + " requires source '" + source + "', missing for sample " + s.name);
  }
  return *m;
}

// Upstream mask: ground truth when `use_truth` (or no prediction is
// attached), otherwise the attached prediction.
const LabelMask& upstream(const std::optional<LabelMask>& truth, const std::optional<LabelMask>& predicted,
                          bool use_truth, const TrainingSample& s, StageId stage, const char* source) {
  if (predicted && (!use_truth || !truth)) return *predicted;
  return require_mask(truth, s, stage, source);
}

void check_sources(const StageSpec& spec, const TrainingSample& s) {
  switch (spec.id) {
    case StageId::roi:
      require_mask(s.roi, s, spec.id, "roi mask");
      break;
    case StageId::binary:
      require_mask(s.binary, s, spec.id, "binary mask");
      upstream(s.roi, s.predicted_roi, true, s, spec.id, "roi mask");
      break;
    case StageId::multiclass:
      require_mask(s.multiclass, s, spec.id, "multiclass mask");
      upstream(s.roi, s.predicted_roi, true, s, spec.id, "roi mask");
      upstream(s.binary, s.predicted_binary, true, s, spec.id, "binary mask");
      break;
  }
}

// Builds the two input planes and the target, optionally augmented, padded to
// rows x cols.
StageExample make_example(const StageSpec& spec, const TrainingSample& s, bool use_truth, Rng* aug,
                          const DecompositionConfig& dcfg, int rows, int cols) {
  std::vector<ImagePlane> planes;
  std::vector<LabelMask> masks;
  switch (spec.id) {
    case StageId::roi:
      planes = {s.image};
      masks = {*s.roi};
      break;
    case StageId::binary:
      planes = {s.image};
      masks = {*s.binary, upstream(s.roi, s.predicted_roi, use_truth, s, spec.id, "roi mask")};
      break;
    case StageId::multiclass:
      masks = {*s.multiclass, upstream(s.binary, s.predicted_binary, use_truth, s, spec.id, "binary mask"),
               upstream(s.roi, s.predicted_roi, use_truth, s, spec.id, "roi mask")};
      break;
  }
  if (aug) {
    auto warped = augment_sample(planes, masks, *aug);
    planes = std::move(warped.planes);
    masks = std::move(warped.masks);
  }
  StageExample ex;
  ex.target = pad_to(masks[0], rows, cols);
  switch (spec.id) {
    case StageId::roi: {
      const auto d = decompose(planes[0], dcfg);
      ex.a = pad_to(ImagePlane(d.structure.cast<float>()), rows, cols);
      ex.b = pad_to(ImagePlane(d.texture.cast<float>()), rows, cols);
      break;
    }
    case StageId::binary:
      ex.a = pad_to(planes[0], rows, cols);
      ex.b = pad_to(mask_plane(masks[1]), rows, cols);
      break;
    case StageId::multiclass:
      ex.a = pad_to(mask_plane(masks[1]), rows, cols);
      ex.b = pad_to(mask_plane(masks[2]), rows, cols);
      break;
  }
  return ex;
}

void stack(const std::vector<StageExample>& batch, TensorF& a, TensorF& b, LabelTensor& y) {
  const int n = static_cast<int>(batch.size());
  const int rows = static_cast<int>(batch[0].a.rows()), cols = static_cast<int>(batch[0].a.cols());
  const std::size_t plane = static_cast<std::size_t>(rows) * cols;
  a = TensorF({n, 1, rows, cols});
  b = TensorF({n, 1, rows, cols});
  y = LabelTensor({n, rows, cols});
  for (int i = 0; i < n; ++i) {
    const auto& ex = batch[static_cast<std::size_t>(i)];
    std::copy_n(ex.a.data(), plane, a.data().begin() + static_cast<std::ptrdiff_t>(plane * i));
    std::copy_n(ex.b.data(), plane, b.data().begin() + static_cast<std::ptrdiff_t>(plane * i));
    std::copy_n(ex.target.labels.begin(), plane, y.data().begin() + static_cast<std::ptrdiff_t>(plane * i));
  }
}

TensorF single(const ImagePlane& p) {
  TensorF t({1, 1, static_cast<int>(p.rows()), static_cast<int>(p.cols())});
  std::copy_n(p.data(), p.size(), t.data().begin());
  return t;
}

double stage_dice(StageId id, const LabelMask& pred, const LabelMask& truth) {
  if (id == StageId::multiclass) return multiclass_metrics(pred, truth, 3).macro.dice;
  return dice(pred, truth);
}

LabelMask logits_to_mask(const TensorF& logits) { return mask_from_tensor(predict_mask(logits)); }

std::uint64_t fingerprint(const std::vector<TrainingSample>& samples) {
  std::vector<Sample> plain;
  for (const auto& t : samples) plain.push_back({t.name, t.image, t.roi, t.binary, t.multiclass});
  return dataset_fingerprint(plain);
}

}  // namespace

TensorF stage_logits(const StageModel& model, const ImagePlane& a, const ImagePlane& b) {
  return infer_logits(model.params, single(a), single(b));
}

TrainResult train_stage(const StageSpec& spec, const std::vector<TrainingSample>& samples, const TrainConfig& cfg,
                        const DecompositionConfig& dcfg, const LogSink& sink) {
  spec.validate();
  cfg.validate();
  dcfg.validate();
  if (samples.empty()) throw std::invalid_argument("train_stage needs at least one sample");
  int rows = 0, cols = 0;
  for (const auto& s : samples) {
    check_sources(spec, s);
    rows = std::max(rows, round_up(static_cast<int>(s.image.rows())));
    cols = std::max(cols, round_up(static_cast<int>(s.image.cols())));
  }

  // Validation split from a seeded permutation.
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(mix_seed(cfg.seed, 0x5e1));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[split_rng.next() % i]);
  std::size_t n_val = 0;
  if (samples.size() >= 2) {
    n_val = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(cfg.validation_fraction * samples.size())), 1,
                                    samples.size() - 1);
  }
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  if (val.empty()) val = train;
  std::sort(val.begin(), val.end());

  TrainResult result;
  const std::uint64_t stage_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(spec.id) + 1);
  result.params = build_network<float>(spec.network, stage_seed);
  result.meta.stage = to_string(spec.id);
  result.meta.seed = cfg.seed;
  result.meta.data_fingerprint = fingerprint(samples);
  result.meta.extra = {{"epochs", std::to_string(cfg.epochs)},
                       {"batch_size", std::to_string(cfg.batch_size)},
                       {"learning_rate", std::to_string(cfg.learning_rate)},
                       {"augmentation_multiplier", std::to_string(cfg.augmentation_multiplier)},
                       {"validation_fraction", std::to_string(cfg.validation_fraction)},
                       {"augment", cfg.augment ? "1" : "0"}};

  AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;
  std::vector<AdamMoments<float>> moments;
  long step = 0;

  // Validation inputs never change: upstream predictions when attached.
  std::vector<StageExample> val_examples;
  for (std::size_t i : val) val_examples.push_back(make_example(spec, samples[i], false, nullptr, dcfg, rows, cols));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double p_truth = teacher_forcing_schedule(epoch, cfg.epochs);
    const std::uint64_t epoch_seed = mix_seed(stage_seed, static_cast<std::uint64_t>(epoch) + 100);

    // (sample, copy) slots in a seeded order.
    std::vector<std::pair<std::size_t, int>> slots;
    for (std::size_t i : train) {
      for (int c = 0; c < cfg.augmentation_multiplier; ++c) slots.emplace_back(i, c);
    }
    Rng shuffle(epoch_seed);
    for (std::size_t i = slots.size(); i > 1; --i) std::swap(slots[i - 1], slots[shuffle.next() % i]);

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t start = 0; start < slots.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(slots.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<StageExample> batch;
      for (std::size_t k = start; k < end; ++k) {
        const auto [i, copy] = slots[k];
        // Draws depend only on (epoch, sample, copy), never on batch layout.
        Rng rng(mix_seed(epoch_seed, i * static_cast<std::size_t>(cfg.augmentation_multiplier) +
                                         static_cast<std::size_t>(copy)));
        const bool use_truth = rng.uniform() < p_truth;
        batch.push_back(make_example(spec, samples[i], use_truth, cfg.augment ? &rng : nullptr, dcfg, rows, cols));
      }
      TensorF a, b;
      LabelTensor y;
      stack(batch, a, b, y);
      GradTape<float> tape;
      const auto graph = forward(tape, result.params, a, b, BnMode::train);
      const Var loss = softmax_cross_entropy(tape, graph.logits, y);
      const double value = tape.value(loss)[0];
      if (!std::isfinite(value)) throw NumericError("training loss became non-finite at epoch " + std::to_string(epoch));
      loss_sum += value * static_cast<double>(batch.size());
      loss_count += batch.size();
      tape.backward(loss);
      std::vector<const TensorF*> grads;
      for (Var v : graph.params) grads.push_back(&tape.grad(v));
      adam_step(result.params.trainable(), grads, moments, ++step, adam);
    }

    double dice_sum = 0.0;
    for (const auto& ex : val_examples) {
      const auto logits = infer_logits(result.params, single(ex.a), single(ex.b));
      dice_sum += stage_dice(spec.id, logits_to_mask(logits), ex.target);
    }
    EpochLog entry{epoch + 1, loss_sum / static_cast<double>(loss_count),
                   dice_sum / static_cast<double>(val_examples.size())};
    result.log.push_back(entry);
    if (sink) sink(entry.line());
  }
  return result;
}

// ---- inference -------------------------------------------------------------

std::string PipelineCheckpointSet::file_name(StageId id) { return to_string(id) + ".tssg"; }

void PipelineCheckpointSet::validate() const {
  for (StageId id : {StageId::roi, StageId::binary, StageId::multiclass}) {
    const auto& m = stage(id);
    if (m.spec.id != id) throw DataError("checkpoint set slot " + to_string(id) + " holds stage " + to_string(m.spec.id));
    if (m.meta.stage != to_string(id)) {
      throw DataError("checkpoint for stage " + to_string(id) + " was trained as stage '" + m.meta.stage + "'");
    }
    m.spec.validate();
    if (!(m.params.config == m.spec.network)) {
      throw DataError("checkpoint for stage " + to_string(id) + " does not match the stage's network shape");
    }
  }
}

PipelineCheckpointSet PipelineCheckpointSet::load(const std::filesystem::path& dir) {
  PipelineCheckpointSet set;
  for (StageId id : {StageId::roi, StageId::binary, StageId::multiclass}) {
    const auto path = dir / file_name(id);
    if (!std::filesystem::exists(path)) {
      throw DataError("missing checkpoint for stage " + to_string(id) + ": " + path.string());
    }
    auto ck = load_checkpoint(path);
    auto& slot = set.stages[static_cast<std::size_t>(id)];
    slot.spec = StageSpec::for_stage(id, ck.params.config);
    slot.params = std::move(ck.params);
    slot.meta = std::move(ck.meta);
  }
  set.validate();
  return set;
}

void PipelineCheckpointSet::save(const std::filesystem::path& dir) const {
  validate();
  std::filesystem::create_directories(dir);
  for (StageId id : {StageId::roi, StageId::binary, StageId::multiclass}) {
    save_checkpoint(stage(id).params, stage(id).meta, dir / file_name(id));
  }
}

PipelineOutput run_pipeline(const ImagePlane& image, const PipelineCheckpointSet& ckpts,
                            const DecompositionConfig& dcfg) {
  ckpts.validate();
  const int rows = static_cast<int>(image.rows()), cols = static_cast<int>(image.cols());
  const int prow = round_up(rows), pcol = round_up(cols);
  const auto d = decompose(image, dcfg);
  const ImagePlane s = pad_to(ImagePlane(d.structure.cast<float>()), prow, pcol);
  const ImagePlane t = pad_to(ImagePlane(d.texture.cast<float>()), prow, pcol);

  auto probs_of = [&](const TensorF& logits, int cls) {
    const TensorF p = softmax_probabilities(logits);
    const std::size_t plane = static_cast<std::size_t>(prow) * pcol;
    std::vector<double> v(p.data().begin() + static_cast<std::ptrdiff_t>(plane * cls),
                          p.data().begin() + static_cast<std::ptrdiff_t>(plane * (cls + 1)));
    return crop_plane(v, pcol, rows, cols);
  };

  PipelineOutput out;
  const TensorF roi_logits = stage_logits(ckpts.stage(StageId::roi), s, t);
  const LabelMask roi = logits_to_mask(roi_logits);
  const TensorF bin_logits = stage_logits(ckpts.stage(StageId::binary), pad_to(image, prow, pcol), mask_plane(roi));
  const LabelMask bin = logits_to_mask(bin_logits);
  const TensorF mc_logits = stage_logits(ckpts.stage(StageId::multiclass), mask_plane(bin), mask_plane(roi));
  const LabelMask mc = logits_to_mask(mc_logits);

  out.roi = crop(roi, rows, cols);
  out.binary = crop(bin, rows, cols);
  out.multiclass = crop(mc, rows, cols);
  out.roi_prob = probs_of(roi_logits, 1);
  out.binary_prob = probs_of(bin_logits, 1);
  for (int c = 0; c < ckpts.stage(StageId::multiclass).spec.num_classes; ++c) {
    out.multiclass_prob.push_back(probs_of(mc_logits, c));
  }
  return out;
}

void attach_predictions(std::vector<TrainingSample>& samples, const StageModel& model,
                        const DecompositionConfig& dcfg) {
  if (model.spec.id == StageId::multiclass) throw std::invalid_argument("no stage consumes multiclass predictions");
  for (auto& s : samples) {
    const int rows = static_cast<int>(s.image.rows()), cols = static_cast<int>(s.image.cols());
    const int prow = round_up(rows), pcol = round_up(cols);
    if (model.spec.id == StageId::roi) {
      const auto d = decompose(s.image, dcfg);
      const auto logits = stage_logits(model, pad_to(ImagePlane(d.structure.cast<float>()), prow, pcol),
                                       pad_to(ImagePlane(d.texture.cast<float>()), prow, pcol));
      s.predicted_roi = crop(logits_to_mask(logits), rows, cols);
    } else {
      // Prefer the predicted ROI, as at inference time.
      const LabelMask& roi = upstream(s.roi, s.predicted_roi, false, s, StageId::binary, "roi mask");
      const auto logits =
          stage_logits(model, pad_to(s.image, prow, pcol), pad_to(mask_plane(roi), prow, pcol));
      s.predicted_binary = crop(logits_to_mask(logits), rows, cols);
    }
  }
}

StageModel load_stage_model(const std::filesystem::path& path, StageId expected) {
  auto ck = load_checkpoint(path);
  if (ck.meta.stage != to_string(expected)) {
    throw DataError(path.string() + ": checkpoint was trained as stage '" + ck.meta.stage + "', expected " +
                    to_string(expected));
  }
  StageModel m{StageSpec::for_stage(expected, ck.params.config), std::move(ck.params), std::move(ck.meta)};
  m.spec.validate();
  return m;
}

PipelineCheckpointSet train_pipeline(std::vector<TrainingSample>& samples, const TrainConfig& cfg,
                                     const NetworkConfig& base, const DecompositionConfig& dcfg, const LogSink& sink) {
  PipelineCheckpointSet set;
  auto run = [&](StageId id) {
    if (sink) sink("stage," + to_string(id));
    auto spec = StageSpec::for_stage(id, base);
    auto result = train_stage(spec, samples, cfg, dcfg, sink);
    set.stages[static_cast<std::size_t>(id)] = {spec, std::move(result.params), std::move(result.meta)};
  };

  run(StageId::roi);
  attach_predictions(samples, set.stage(StageId::roi), dcfg);
  run(StageId::binary);
  attach_predictions(samples, set.stage(StageId::binary), dcfg);
  run(StageId::multiclass);
  return set;
}

}  // namespace tssg
