// tssg: decomposition, synthetic data, training, inference and evaluation.
#include "tssg/parallel.hpp"
#include "tssg/pipeline.hpp"
#include "tssg/run_config.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <mutex>

namespace fs = std::filesystem;
using namespace tssg;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitMissingFile = 2;
constexpr int kExitUsage = 64;

class MissingFile : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw MissingFile(what + " not found: " + p.string());
}

std::string pick(const std::string& flag, const std::string& configured, const char* name) {
  if (!flag.empty()) return flag;
  if (!configured.empty()) return configured;
  throw UsageError(std::string("missing ") + name + " (flag or config key)");
}

// ---- decompose ---------------------------------------------------------------

struct DecomposeArgs {
  std::string input, out_stem;
  bool raw = false;
};

void write_raw_plane(const Plane<double>& p, const fs::path& path) {
  // u32 rows, u32 cols, then row-major float32, little-endian.
  std::ofstream out(path, std::ios::binary);
  auto put_u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  put_u32(static_cast<std::uint32_t>(p.rows()));
  put_u32(static_cast<std::uint32_t>(p.cols()));
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const float f = static_cast<float>(p.data()[i]);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(bits);
  }
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

int cmd_decompose(const DecomposeArgs& args, RunConfig& cfg) {
  const fs::path input = args.input;
  require_file(input, "input image");
  fs::path stem = args.out_stem;
  if (stem.empty()) {
    const fs::path dir = cfg.output_dir.empty() ? input.parent_path() : fs::path(cfg.output_dir);
    stem = dir / input.stem();
  }
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());

  const ImagePlane image = load_image(input);
  const auto d = decompose(image, cfg.decomposition);
  const double residual = (d.structure + d.texture - image.cast<double>()).abs().maxCoeff();

  const fs::path base = stem.string();
  save_image(ImagePlane(d.structure.cast<float>()), base.string() + ".structure.png");
  save_image(ImagePlane((d.texture + 0.5).cast<float>()), base.string() + ".texture.png");
  if (args.raw) {
    write_raw_plane(d.structure, base.string() + ".structure.f32");
    write_raw_plane(d.texture, base.string() + ".texture.f32");
  }
  cfg.write_echo(base.string() + ".decompose.config");
  std::printf("residual %.17g\n", residual);
  return 0;
}

// ---- synth -------------------------------------------------------------------

struct SynthArgs {
  int n = 0;
  int test_count = 0;
  std::string out;
};

int cmd_synth(const SynthArgs& args, RunConfig& cfg) {
  if (args.n < 1) throw UsageError("--n must be >= 1");
  if (args.test_count < 0 || args.test_count > args.n) throw UsageError("--test-count must lie in [0, n]");
  const fs::path out = pick(args.out, cfg.output_dir, "output directory");
  const auto manifest = generate_synthetic_dataset(args.n, cfg.train.seed, out, args.test_count);
  cfg.manifest = (out / "manifest.tsv").string();
  cfg.write_echo(out / "synth.config");
  std::printf("wrote %zu samples and %s\n", manifest.records.size(), cfg.manifest.c_str());
  return 0;
}

// ---- train -------------------------------------------------------------------

struct TrainArgs {
  std::string stage = "all";
  std::string manifest, out;
};

int cmd_train(const TrainArgs& args, RunConfig& cfg) {
  const fs::path manifest_path = pick(args.manifest, cfg.manifest, "manifest");
  const fs::path out = pick(args.out, cfg.checkpoint_dir, "checkpoint directory");
  require_file(manifest_path, "manifest");
  cfg.manifest = manifest_path.string();
  cfg.checkpoint_dir = out.string();
  fs::create_directories(out);

  auto samples = to_training_samples(load_samples(load_manifest(manifest_path), Split::train));
  if (samples.empty()) throw DataError("manifest " + manifest_path.string() + " has no train records");

  const std::string log_name = "train." + args.stage;
  cfg.write_echo(out / (log_name + ".config"));
  std::ofstream log(out / (log_name + ".log"));
  const LogSink sink = [&](const std::string& line) {
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    log << line << '\n';
    log.flush();
  };

  if (args.stage == "all") {
    train_pipeline(samples, cfg.train, cfg.network, cfg.decomposition, sink).save(out);
    return 0;
  }
  const StageId id = parse_stage(args.stage);
  // Upstream stages already in the output directory supply predicted masks
  // for teacher forcing; without them training sees ground truth only.
  for (StageId up : {StageId::roi, StageId::binary}) {
    if (up >= id) break;
    const fs::path p = out / PipelineCheckpointSet::file_name(up);
    if (fs::exists(p)) {
      attach_predictions(samples, load_stage_model(p, up), cfg.decomposition);
    } else {
      std::fprintf(stderr, "note: %s absent, stage %s trains on ground-truth %s masks only\n", p.string().c_str(),
                   to_string(id).c_str(), to_string(up).c_str());
    }
  }
  const auto spec = StageSpec::for_stage(id, cfg.network);
  const auto result = train_stage(spec, samples, cfg.train, cfg.decomposition, sink);
  save_checkpoint(result.params, result.meta, out / PipelineCheckpointSet::file_name(id));
  return 0;
}

// ---- infer -------------------------------------------------------------------

struct InferArgs {
  std::string image, manifest, checkpoints, out;
  std::string split = "all";
};

std::optional<Split> parse_split(const std::string& s) {
  if (s == "all") return std::nullopt;
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw UsageError("--split must be train, test or all, got '" + s + "'");
}

Raster overlay(const ImagePlane& image, const LabelMask& mc) {
  Raster r;
  r.width = static_cast<int>(image.cols());
  r.height = static_cast<int>(image.rows());
  r.channels = 3;
  r.samples.resize(static_cast<std::size_t>(r.width) * r.height * 3);
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      const double g = std::clamp(static_cast<double>(image(y, x)), 0.0, 1.0) * 255.0;
      const int label = mc(y, x);
      for (int c = 0; c < 3; ++c) {
        const double v = label == 0 ? g : 0.5 * g + 0.5 * MaskCodec::kColors[static_cast<std::size_t>(label)][static_cast<std::size_t>(c)];
        r.at(y, x, c) = static_cast<std::uint16_t>(std::lround(v));
      }
    }
  }
  return r;
}

void write_outputs(const ImagePlane& image, const PipelineOutput& o, const fs::path& stem) {
  const std::string base = stem.string();
  write_png(encode_binary(o.roi), base + ".roi.png");
  write_png(encode_binary(o.binary), base + ".binary.png");
  write_png(encode_multiclass(o.multiclass), base + ".multiclass.png");
  write_png(overlay(image, o.multiclass), base + ".overlay.png");
}

int cmd_infer(const InferArgs& args, RunConfig& cfg) {
  const fs::path ckpt_dir = pick(args.checkpoints, cfg.checkpoint_dir, "checkpoint directory");
  const fs::path out = pick(args.out, cfg.output_dir, "output directory");
  for (StageId id : {StageId::roi, StageId::binary, StageId::multiclass}) {
    require_file(ckpt_dir / PipelineCheckpointSet::file_name(id), to_string(id) + " checkpoint");
  }
  cfg.checkpoint_dir = ckpt_dir.string();
  cfg.output_dir = out.string();

  std::vector<fs::path> images;
  if (!args.image.empty()) {
    if (!args.manifest.empty()) throw UsageError("give either --image or --manifest, not both");
    require_file(args.image, "input image");
    images.push_back(args.image);
  } else {
    const fs::path manifest_path = pick(args.manifest, cfg.manifest, "--image or manifest");
    require_file(manifest_path, "manifest");
    cfg.manifest = manifest_path.string();
    const auto split = parse_split(args.split);
    for (const auto& r : load_manifest(manifest_path).records) {
      if (!split || r.split == *split) images.push_back(r.image);
    }
  }

  const auto set = PipelineCheckpointSet::load(ckpt_dir);
  fs::create_directories(out);
  cfg.write_echo(out / "infer.config");
  std::mutex report;
  std::exception_ptr failure;
  parallel_for(static_cast<int>(images.size()), [&](int i) {
    try {
      const auto& path = images[static_cast<std::size_t>(i)];
      const ImagePlane image = load_image(path);
      write_outputs(image, run_pipeline(image, set, cfg.decomposition), out / path.stem());
    } catch (...) {
      std::lock_guard lock(report);
      if (!failure) failure = std::current_exception();
    }
  });
  if (failure) std::rethrow_exception(failure);
  std::printf("wrote %zu x 4 files to %s\n", images.size(), out.string().c_str());
  return 0;
}

// ---- eval --------------------------------------------------------------------

struct EvalArgs {
  std::string pred, manifest, mode, split = "all", out;
};

int cmd_eval(const EvalArgs& args, RunConfig& cfg) {
  const fs::path pred_dir = pick(args.pred, cfg.output_dir, "prediction directory");
  const fs::path manifest_path = pick(args.manifest, cfg.manifest, "manifest");
  require_file(manifest_path, "manifest");
  if (!fs::is_directory(pred_dir)) throw MissingFile("prediction directory not found: " + pred_dir.string());
  if (args.mode != "roi" && args.mode != "binary" && args.mode != "multiclass") {
    throw UsageError("--mode must be roi, binary or multiclass, got '" + args.mode + "'");
  }
  const auto split = parse_split(args.split);

  std::vector<EvalPair> pairs;
  std::vector<std::string> missing;
  for (const auto& r : load_manifest(manifest_path).records) {
    if (split && r.split != *split) continue;
    const std::string name = r.image.stem().string();
    const fs::path pred = pred_dir / (name + "." + args.mode + ".png");
    const auto& truth = args.mode == "roi" ? r.roi : args.mode == "binary" ? r.binary : r.multiclass;
    if (!truth) throw DataError("manifest record " + name + " has no " + args.mode + " mask");
    if (!fs::exists(pred)) {
      missing.push_back(pred.filename().string());
      continue;
    }
    if (args.mode == "multiclass") {
      pairs.push_back({name, load_multiclass_mask(pred), load_multiclass_mask(*truth), std::nullopt});
    } else {
      pairs.push_back({name, load_binary_mask(pred), load_binary_mask(*truth), std::nullopt});
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw MissingFile(std::to_string(missing.size()) + " prediction(s) missing in " + pred_dir.string() + ": " + list);
  }
  if (pairs.empty()) throw DataError("no manifest records selected for evaluation");

  const auto report =
      evaluate_dataset(pairs, args.mode == "multiclass" ? EvalMode::multiclass : EvalMode::binary, 3);
  if (args.out.empty()) {
    write_report_csv(report, std::cout);
  } else {
    write_report_csv(report, fs::path(args.out));
  }
  return 0;
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stream structure/texture segmentation of lung CT slices"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  app.add_option("--config", config_path, "key = value run configuration");
  app.add_option("--seed", seed, "RNG seed (overrides the config file)");
  app.add_flag("--deterministic", deterministic, "single-threaded, manifest-ordered execution");

  DecomposeArgs dec;
  auto* c_dec = app.add_subcommand("decompose", "split an image into structure and texture");
  c_dec->add_option("input", dec.input, "input image")->required();
  c_dec->add_option("--out-stem", dec.out_stem, "output path prefix (default: <output_dir or input dir>/<stem>)");
  c_dec->add_flag("--raw", dec.raw, "also write float32 planes");

  SynthArgs syn;
  auto* c_syn = app.add_subcommand("synth", "generate a synthetic dataset with manifest");
  c_syn->add_option("--n", syn.n, "number of samples")->required();
  c_syn->add_option("--test-count", syn.test_count, "trailing samples marked as test");
  c_syn->add_option("--out", syn.out, "output directory");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "train one stage or the whole pipeline");
  c_tr->add_option("--stage", tr.stage, "roi, binary, multiclass or all");
  c_tr->add_option("--manifest", tr.manifest, "dataset manifest (train split is used)");
  c_tr->add_option("--out", tr.out, "checkpoint directory");

  InferArgs inf;
  auto* c_inf = app.add_subcommand("infer", "run the three stages on images");
  c_inf->add_option("--image", inf.image, "single input image");
  c_inf->add_option("--manifest", inf.manifest, "manifest of input images");
  c_inf->add_option("--split", inf.split, "train, test or all (with --manifest)");
  c_inf->add_option("--checkpoints", inf.checkpoints, "directory with roi/binary/multiclass.tssg");
  c_inf->add_option("--out", inf.out, "output directory");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "score predicted masks against a manifest");
  c_ev->add_option("--pred", ev.pred, "directory of <stem>.<mode>.png predictions");
  c_ev->add_option("--manifest", ev.manifest, "ground-truth manifest");
  c_ev->add_option("--mode", ev.mode, "roi, binary or multiclass")->required();
  c_ev->add_option("--split", ev.split, "train, test or all");
  c_ev->add_option("--out", ev.out, "CSV path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "tssg: usage error: %s\n", one_line(e.what()).c_str());
    return kExitUsage;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) {
      require_file(config_path, "config file");
      cfg = RunConfig::load(config_path);
    }
    if (seed) cfg.train.seed = *seed;
    if (deterministic) cfg.deterministic = true;
    cfg.validate();
    set_thread_count(cfg.effective_threads());

    if (*c_dec) return cmd_decompose(dec, cfg);
    if (*c_syn) return cmd_synth(syn, cfg);
    if (*c_tr) return cmd_train(tr, cfg);
    if (*c_inf) return cmd_infer(inf, cfg);
    return cmd_eval(ev, cfg);
  } catch (const MissingFile& e) {
    std::fprintf(stderr, "tssg: error: %s\n", one_line(e.what()).c_str());
    return kExitMissingFile;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "tssg: usage error: %s\n", one_line(e.what()).c_str());
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "tssg: config error: %s\n", one_line(e.what()).c_str());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "tssg: error: %s\n", one_line(e.what()).c_str());
    return kExitFailure;
  }
}
