// Overlap and error metrics for segmentation masks.
#pragma once

#include "tssg/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace tssg {

/// Single-plane label mask, row-major.
struct LabelMask {
  int height = 0;
  int width = 0;
  std::vector<std::int32_t> labels;

  LabelMask() = default;
  LabelMask(int h, int w, std::int32_t fill = 0) : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

  std::int32_t& operator()(int r, int c) { return labels[static_cast<std::size_t>(r) * width + c]; }
  std::int32_t operator()(int r, int c) const { return labels[static_cast<std::size_t>(r) * width + c]; }
  std::size_t size() const { return labels.size(); }
  friend bool operator==(const LabelMask&, const LabelMask&) = default;
};

/// Plane n of an [N,H,W] or [N,1,H,W] label tensor.
LabelMask mask_from_tensor(const LabelTensor& t, int n = 0);

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::uint64_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Nonzero labels are foreground.
ConfusionCounts confusion_counts(const LabelMask& pred, const LabelMask& gt);

/// A ratio with its zero-denominator flag. Degenerate values are 0.
struct Ratio {
  double value = 0.0;
  bool degenerate = false;
};

/// 2|A n B| / (|A| + |B|); 1 when both are empty.
double dice(const LabelMask& a, const LabelMask& b);
double dice(const ConfusionCounts& c);

Ratio sensitivity(const ConfusionCounts& c);
Ratio specificity(const ConfusionCounts& c);
Ratio precision(const ConfusionCounts& c);
double fmeasure(double sens, double prec);

/// Mean |p - gt| with gt binarized (nonzero -> 1).
double mae(const std::vector<double>& foreground_prob, const LabelMask& gt);

struct MetricRow {
  std::string name;
  double dice = 0, sensitivity = 0, specificity = 0, precision = 0, fmeasure = 0, mae = 0;
  bool degenerate = false;
};

/// Row for a binary prediction. `prob` is the foreground probability plane;
/// when absent the binarized prediction stands in for it.
MetricRow binary_row(const std::string& name, const LabelMask& pred, const LabelMask& gt,
                     const std::optional<std::vector<double>>& prob = std::nullopt);

struct MulticlassReport {
  std::vector<MetricRow> per_class;  // classes 1..k-1
  MetricRow macro;
};

/// One-vs-rest rows for every foreground class and their macro mean.
/// `probs` (optional) holds k planes of class probabilities.
MulticlassReport multiclass_metrics(const LabelMask& pred, const LabelMask& gt, int k,
                                    const std::optional<std::vector<std::vector<double>>>& probs = std::nullopt);

enum class EvalMode { binary, multiclass };

struct EvalPair {
  std::string name;
  LabelMask pred;
  LabelMask gt;
  std::optional<std::vector<std::vector<double>>> probs;  // k planes, optional
};

struct MetricReport {
  std::vector<MetricRow> rows;
  MetricRow mean;
};

MetricReport evaluate_dataset(const std::vector<EvalPair>& pairs, EvalMode mode, int num_classes = 3);

inline constexpr const char* kReportHeader = "image,dice,sensitivity,specificity,precision,fmeasure,mae";

void write_report_csv(const MetricReport& report, std::ostream& out);
void write_report_csv(const MetricReport& report, const std::filesystem::path& path);
MetricReport parse_report_csv(std::istream& in);

}  // namespace tssg
