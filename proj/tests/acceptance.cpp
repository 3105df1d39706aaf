// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include "gradcheck_suite.hpp"
#include "decomposition_fixtures.hpp"
#include "metric_oracles.hpp"

#include "tssg/pipeline.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

using namespace tssg;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---- 1 -----------------------------------------------------------------------

Outcome gradient_checks() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_op;
  int instances = 0;
  for (const auto& check : testing::all_op_checks()) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const double e = check.run(seed);
      ++instances;
      if (!(e <= worst)) {
        worst = e;
        worst_op = check.name;
      }
    }
  }
  const double t = seconds_since(t0);
  return {worst < 1e-3 && t < 30,
          fmt("%d instances, worst relative error %.2e (%s), %.1f s", instances, worst, worst_op.c_str(), t)};
}

// ---- 2 -----------------------------------------------------------------------

Outcome decomposition_invariants() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string why;
  auto fail = [&](const std::string& w) {
    ok = false;
    if (why.empty()) why = w;
  };

  Rng rng(2);
  double residual = 0.0;
  DecompositionStats stats;
  for (int i = 0; i < 10; ++i) {
    ImagePlane img(48, 40);
    for (Eigen::Index j = 0; j < img.size(); ++j) img.data()[j] = static_cast<float>(rng.uniform());
    residual = std::max(residual, reconstruction_residual(img, decompose(img, {}, &stats)));
  }
  for (int i = 0; i < 10; ++i) {
    const auto s = synthesize_sample(42, i);
    residual = std::max(residual, reconstruction_residual(s.image, decompose(s.image, {}, &stats)));
  }
  if (residual != 0.0) fail(fmt("S+T-I residual %.3g", residual));

  for (int level = 0; level <= 255; ++level) {
    const auto flat = decompose(ImagePlane::Constant(16, 16, static_cast<float>(level / 255.0)), {}, &stats);
    if (!(flat.texture == 0.0).all()) fail(fmt("constant level %d leaves texture", level));
  }

  const ImagePlane ramp = testing::ramp_plane(64, 64);
  const ImagePlane img = testing::ramp_plus_checkerboard(64, 64, 0.1f);
  const auto res = decompose(img, {}, &stats);
  const double l1_s = (res.structure - ramp.cast<double>()).abs().sum();
  const double l1_i = (img.cast<double>() - ramp.cast<double>()).abs().sum();
  if (!(l1_s < l1_i)) fail(fmt("L1(S, ramp) %.3f not below L1(I, ramp) %.3f", l1_s, l1_i));
  if (stats.min_weight < 0.0 || stats.max_weight > 1.0) {
    fail(fmt("weight range [%.3g, %.3g]", stats.min_weight, stats.max_weight));
  }
  const double t = seconds_since(t0);
  if (t >= 10) fail(fmt("took %.1f s", t));
  return {ok, ok ? fmt("residual 0, L1(S,ramp) %.1f < L1(I,ramp) %.1f, w in [%.3g, %.3g] over %zu evaluations, %.1f s",
                       l1_s, l1_i, stats.min_weight, stats.max_weight, stats.weights_evaluated, t)
                 : why};
}

// ---- 3 -----------------------------------------------------------------------

Outcome metric_oracles() {
  const auto t0 = Clock::now();
  Rng rng(3);
  double worst = 0.0, worst_identity = 0.0;
  bool counts_ok = true;
  auto ratio_or_zero = [](long num, long den) { return den == 0 ? 0.0 : static_cast<double>(num) / den; };
  for (int i = 0; i < 100; ++i) {
    const double fg = rng.uniform();
    const auto pred = testing::random_mask(rng, 16, 16, 2, fg);
    const auto gt = testing::random_mask(rng, 16, 16, 2, rng.uniform());
    const auto oc = testing::loop_counts(pred, gt);
    const auto c = confusion_counts(pred, gt);
    if (static_cast<long>(c.tp) != oc.tp || static_cast<long>(c.fp) != oc.fp || static_cast<long>(c.tn) != oc.tn ||
        static_cast<long>(c.fn) != oc.fn) {
      counts_ok = false;
    }
    std::vector<double> prob(256);
    for (auto& p : prob) p = rng.uniform();
    const double diffs[] = {
        dice(pred, gt) - testing::loop_dice(pred, gt),
        sensitivity(c).value - ratio_or_zero(oc.tp, oc.tp + oc.fn),
        specificity(c).value - ratio_or_zero(oc.tn, oc.tn + oc.fp),
        precision(c).value - ratio_or_zero(oc.tp, oc.tp + oc.fp),
        mae(prob, gt) - testing::loop_mae(prob, gt),
    };
    for (double d : diffs) worst = std::max(worst, std::abs(d));
    if (oc.tp + oc.fp > 0 && oc.tp + oc.fn > 0 && oc.tp > 0) {
      const double p = static_cast<double>(oc.tp) / (oc.tp + oc.fp), r = static_cast<double>(oc.tp) / (oc.tp + oc.fn);
      worst_identity = std::max(worst_identity, std::abs(dice(c) - 2 * p * r / (p + r)));
      worst_identity = std::max(worst_identity, std::abs(fmeasure(sensitivity(c).value, precision(c).value) - dice(c)));
    }
  }
  const double t = seconds_since(t0);
  return {counts_ok && worst <= 1e-12 && worst_identity <= 1e-12 && t < 5,
          fmt("counts %s, worst ratio gap %.2e, Dice-F1 gap %.2e, %.2f s", counts_ok ? "exact" : "MISMATCH", worst,
              worst_identity, t)};
}

// ---- 4 -----------------------------------------------------------------------

Outcome loss_identities() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  Rng rng(4);
  for (int k : {2, 3, 5}) {
    TensorF logits({2, k, 5, 7});
    for (int n = 0; n < 2; ++n) {
      for (int h = 0; h < 5; ++h) {
        for (int w = 0; w < 7; ++w) {
          const float v = static_cast<float>(rng.normal());
          for (int c = 0; c < k; ++c) logits.at(n, c, h, w) = v;
        }
      }
    }
    LabelTensor labels({2, 5, 7});
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = rng.uniform_int(0, k - 1);
    GradTape<float> tape;
    const double loss = tape.value(softmax_cross_entropy(tape, tape.leaf(logits), labels))[0];
    worst = std::max(worst, std::abs(loss - std::log(static_cast<double>(k))));
  }
  bool invariant = true;
  for (int trial = 0; trial < 20; ++trial) {
    TensorF logits({2, 3, 6, 6});
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = static_cast<float>(3 * rng.normal());
    TensorF shifted = logits;
    for (int n = 0; n < 2; ++n) {
      for (int h = 0; h < 6; ++h) {
        for (int w = 0; w < 6; ++w) {
          const float s = static_cast<float>(std::ldexp(rng.uniform_int(-64, 64), -2));
          for (int c = 0; c < 3; ++c) shifted.at(n, c, h, w) += s;
        }
      }
    }
    if (!(argmax_classes(logits) == argmax_classes(shifted))) invariant = false;
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-6 && invariant && t < 5,
          fmt("worst |loss - ln k| %.2e, argmax shift-invariant %s, %.2f s", worst, invariant ? "yes" : "NO", t)};
}

// ---- 5, 6 --------------------------------------------------------------------

struct EndToEnd {
  bool ran = false;
  std::string error;
  double seconds = 0;
  double roi = 0, binary = 0, multiclass = 0;
  fs::path dir;
};

double mean_dice(const fs::path& csv) {
  std::ifstream in(csv);
  return parse_report_csv(in).mean.dice;
}

EndToEnd end_to_end(const std::string& cli, const fs::path& dir) {
  EndToEnd r;
  r.dir = dir;
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto t0 = Clock::now();
  const std::string base = "'" + cli + "' --seed 42 --deterministic ";
  const std::string log = " >>'" + (dir / "run.log").string() + "' 2>&1";
  const std::string d = "'" + dir.string() + "'";
  const std::vector<std::string> steps = {
      "synth --n 250 --test-count 50 --out " + d + "/data",
      "train --stage all --manifest " + d + "/data/manifest.tsv --out " + d + "/ckpt",
      "infer --manifest " + d + "/data/manifest.tsv --split test --checkpoints " + d + "/ckpt --out " + d + "/pred",
  };
  std::vector<std::string> evals;
  for (const char* mode : {"roi", "binary", "multiclass"}) {
    evals.push_back(std::string("eval --pred ") + d + "/pred --manifest " + d + "/data/manifest.tsv --split test --mode " +
                    mode + " --out " + d + "/" + mode + ".csv");
  }
  for (const auto& steps_list : {steps, evals}) {
    for (const auto& s : steps_list) {
      if (std::system((base + s + log).c_str()) != 0) {
        r.error = "step failed: tssg " + s.substr(0, s.find(' ')) + " (see " + (dir / "run.log").string() + ")";
        return r;
      }
    }
  }
  r.seconds = seconds_since(t0);
  r.roi = mean_dice(dir / "roi.csv");
  r.binary = mean_dice(dir / "binary.csv");
  r.multiclass = mean_dice(dir / "multiclass.csv");
  r.ran = true;
  return r;
}

Outcome synthetic_thresholds(const EndToEnd& e) {
  if (!e.ran) return {false, e.error};
  const bool ok = e.roi >= 0.85 && e.binary >= 0.70 && e.multiclass >= 0.60 && e.seconds <= 1200;
  return {ok, fmt("test Dice roi %.4f (>= 0.85), binary %.4f (>= 0.70), multiclass macro %.4f (>= 0.60), %.0f s", e.roi,
                  e.binary, e.multiclass, e.seconds)};
}

Outcome determinism(const EndToEnd& a, const EndToEnd& b) {
  if (!a.ran || !b.ran) return {false, a.ran ? b.error : a.error};
  int compared = 0;
  std::string differs;
  auto compare_dir = [&](const fs::path& rel, const std::string& ext) {
    for (const auto& entry : fs::directory_iterator(a.dir / rel)) {
      if (entry.path().extension() != ext) continue;
      ++compared;
      const fs::path other = b.dir / rel / entry.path().filename();
      if (!fs::exists(other) || file_bytes(entry.path()) != file_bytes(other)) {
        if (differs.empty()) differs = (rel / entry.path().filename()).string();
      }
    }
  };
  compare_dir("ckpt", ".tssg");
  compare_dir("pred", ".png");
  if (!differs.empty()) return {false, "differs: " + differs};
  return {compared == 3 + 50 * 4, fmt("%d files bit-identical across two runs (3 checkpoints, 200 outputs)", compared)};
}

// ---- 7 -----------------------------------------------------------------------

Outcome format_round_trips() {
  const auto t0 = Clock::now();
  Rng rng(7);
  auto net = build_network<float>(NetworkConfig::miniature(3), 7);
  net.for_each_tensor([&](const std::string&, TensorF& t, bool) {
    for (auto& v : t.data()) v = static_cast<float>(rng.normal());
  });
  const CheckpointMeta meta{"multiclass", 42, 0xfeedULL, {{"epochs", "20"}}};
  const auto path = fs::temp_directory_path() / "tssg_acceptance_roundtrip.tssg";
  save_checkpoint(net, meta, path);
  const auto back = load_checkpoint(path);
  const bool ckpt_ok = back.params == net && back.meta == meta &&
                       serialize_checkpoint(back.params, back.meta) == serialize_checkpoint(net, meta);
  fs::remove(path);

  int mask_failures = 0;
  for (int i = 0; i < 1000; ++i) {
    LabelMask m(rng.uniform_int(1, 24), rng.uniform_int(1, 24));
    for (auto& v : m.labels) v = rng.uniform_int(0, 2);
    if (!(decode_multiclass(encode_multiclass(m)) == m)) ++mask_failures;
  }

  std::vector<EvalPair> pairs;
  for (int i = 0; i < 12; ++i) {
    pairs.push_back({"img_" + std::to_string(i), testing::random_mask(rng, 16, 16, 3, 0.3),
                     testing::random_mask(rng, 16, 16, 3, 0.3), std::nullopt});
  }
  std::ostringstream first;
  write_report_csv(evaluate_dataset(pairs, EvalMode::multiclass), first);
  std::istringstream in(first.str());
  std::ostringstream second;
  write_report_csv(parse_report_csv(in), second);
  const bool csv_ok = first.str() == second.str();

  const double t = seconds_since(t0);
  return {ckpt_ok && mask_failures == 0 && csv_ok && t < 10,
          fmt("checkpoint %s, %d/1000 mask round trips failed, CSV %s, %.2f s", ckpt_ok ? "bit-identical" : "DIFFERS",
              mask_failures, csv_ok ? "exact" : "DIFFERS", t)};
}

// ---- 8 -----------------------------------------------------------------------

Outcome table_format(const fs::path& fixture) {
  if (std::string(kReportHeader) != "image,dice,sensitivity,specificity,precision,fmeasure,mae") {
    return {false, "column set differs"};
  }
  MetricRow row{"proposed", 0.786, 0.711, 0.993, 0.856, 0.784, 0.076, false};
  MetricReport report{{row}, row};
  report.mean.name = "MEAN";
  std::ostringstream out;
  write_report_csv(report, out);
  const std::string golden = file_bytes(fixture);
  if (golden.empty()) return {false, "fixture missing: " + fixture.string()};
  return {out.str() == golden, out.str() == golden ? "matches " + fixture.filename().string() : "differs from golden file"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string work = (fs::temp_directory_path() / "tssg_acceptance").string();
  std::string cli = TSSG_CLI_PATH;
  bool skip_e2e = false;
  app.add_option("--work", work, "scratch directory for the end-to-end runs");
  app.add_option("--cli", cli, "tssg binary");
  app.add_flag("--skip-e2e", skip_e2e, "report criteria 5 and 6 as not run");
  CLI11_PARSE(app, argc, argv);

  int failures = 0;
  auto report = [&](int id, const char* name, const Outcome& o) {
    std::printf("criterion %d %s  %s: %s\n", id, o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  };

  report(1, "gradient checks", gradient_checks());
  report(2, "decomposition invariants", decomposition_invariants());
  report(3, "metric oracle equivalence", metric_oracles());
  report(4, "loss identities", loss_identities());
  if (skip_e2e) {
    report(5, "synthetic end-to-end", {false, "skipped"});
    report(6, "determinism", {false, "skipped"});
  } else {
    const auto a = end_to_end(cli, fs::path(work) / "run_a");
    report(5, "synthetic end-to-end", synthetic_thresholds(a));
    const auto b = end_to_end(cli, fs::path(work) / "run_b");
    report(6, "determinism", determinism(a, b));
  }
  report(7, "format round trips", format_round_trips());
  report(8, "table-format fidelity", table_format(fs::path(TSSG_FIXTURE_DIR) / "golden_report.csv"));
  std::printf("%d of 8 criteria passed\n", 8 - failures);
  return failures == 0 ? 0 : 1;
}
