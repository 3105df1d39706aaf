#include "tssg/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tssg {
namespace {

void require_same_dims(const LabelMask& a, const LabelMask& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError(std::string(what) + ": mask dims differ (" + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
  }
}

Ratio ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return {0.0, true};
  return {static_cast<double>(num) / static_cast<double>(den), false};
}

LabelMask one_vs_rest(const LabelMask& m, int cls) {
  LabelMask out(m.height, m.width);
  for (std::size_t i = 0; i < m.size(); ++i) out.labels[i] = m.labels[i] == cls ? 1 : 0;
  return out;
}

MetricRow row_from(const std::string& name, const ConfusionCounts& c, double mae_value) {
  MetricRow row;
  row.name = name;
  const Ratio s = sensitivity(c), sp = specificity(c), p = precision(c);
  row.dice = dice(c);
  row.sensitivity = s.value;
  row.specificity = sp.value;
  row.precision = p.value;
  row.fmeasure = fmeasure(s.value, p.value);
  row.mae = mae_value;
  row.degenerate = s.degenerate || sp.degenerate || p.degenerate || (c.tp + c.fp + c.fn == 0);
  return row;
}

MetricRow mean_of(const std::vector<MetricRow>& rows, const std::string& name) {
  MetricRow m;
  m.name = name;
  for (const auto& r : rows) {
    m.dice += r.dice;
    m.sensitivity += r.sensitivity;
    m.specificity += r.specificity;
    m.precision += r.precision;
    m.fmeasure += r.fmeasure;
    m.mae += r.mae;
    m.degenerate = m.degenerate || r.degenerate;
  }
  const double n = static_cast<double>(rows.size());
  m.dice /= n;
  m.sensitivity /= n;
  m.specificity /= n;
  m.precision /= n;
  m.fmeasure /= n;
  m.mae /= n;
  return m;
}

std::vector<double> binary_plane(const LabelMask& m) {
  std::vector<double> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = m.labels[i] != 0 ? 1.0 : 0.0;
  return out;
}

}  // namespace

LabelMask mask_from_tensor(const LabelTensor& t, int n) {
  int h, w;
  if (t.rank() == 3) {
    h = t.dim(1);
    w = t.dim(2);
  } else if (t.rank() == 4 && t.dim(1) == 1) {
    h = t.dim(2);
    w = t.dim(3);
  } else {
    throw ShapeError("mask_from_tensor expects [N,H,W] or [N,1,H,W], got " + to_string(t.shape()));
  }
  if (n < 0 || n >= t.dim(0)) throw std::out_of_range("mask_from_tensor: sample index out of range");
  LabelMask m(h, w);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(plane * n), plane, m.labels.begin());
  return m;
}

ConfusionCounts confusion_counts(const LabelMask& pred, const LabelMask& gt) {
  require_same_dims(pred, gt, "confusion_counts");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.labels[i] != 0, g = gt.labels[i] != 0;
    c.tp += p && g;
    c.fp += p && !g;
    c.fn += !p && g;
    c.tn += !p && !g;
  }
  return c;
}

double dice(const ConfusionCounts& c) {
  const std::uint64_t den = 2 * c.tp + c.fp + c.fn;
  if (den == 0) return 1.0;
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(den);
}

double dice(const LabelMask& a, const LabelMask& b) {
  require_same_dims(a, b, "dice");
  return dice(confusion_counts(a, b));
}

Ratio sensitivity(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fn); }
Ratio specificity(const ConfusionCounts& c) { return ratio(c.tn, c.tn + c.fp); }
Ratio precision(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fp); }

double fmeasure(double sens, double prec) {
  if (sens + prec == 0.0) return 0.0;
  return 2.0 * sens * prec / (sens + prec);
}

double mae(const std::vector<double>& foreground_prob, const LabelMask& gt) {
  if (foreground_prob.size() != gt.size()) {
    throw ShapeError("mae: probability plane has " + std::to_string(foreground_prob.size()) + " values, mask has " +
                     std::to_string(gt.size()));
  }
  if (gt.size() == 0) throw ShapeError("mae: empty mask");
  double sum = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    sum += std::abs(foreground_prob[i] - (gt.labels[i] != 0 ? 1.0 : 0.0));
  }
  return sum / static_cast<double>(gt.size());
}

MetricRow binary_row(const std::string& name, const LabelMask& pred, const LabelMask& gt,
                     const std::optional<std::vector<double>>& prob) {
  const ConfusionCounts c = confusion_counts(pred, gt);
  return row_from(name, c, mae(prob ? *prob : binary_plane(pred), gt));
}

MulticlassReport multiclass_metrics(const LabelMask& pred, const LabelMask& gt, int k,
                                    const std::optional<std::vector<std::vector<double>>>& probs) {
  require_same_dims(pred, gt, "multiclass_metrics");
  if (k < 2) throw std::invalid_argument("multiclass_metrics needs k >= 2");
  for (const auto* m : {&pred, &gt}) {
    for (std::int32_t v : m->labels) {
      if (v < 0 || v >= k) {
        throw std::invalid_argument("multiclass_metrics: label " + std::to_string(v) + " outside [0, " +
                                    std::to_string(k) + ")");
      }
    }
  }
  if (probs && probs->size() != static_cast<std::size_t>(k)) {
    throw ShapeError("multiclass_metrics: expected " + std::to_string(k) + " probability planes");
  }
  MulticlassReport report;
  for (int cls = 1; cls < k; ++cls) {
    const LabelMask p = one_vs_rest(pred, cls), g = one_vs_rest(gt, cls);
    const auto plane = probs ? (*probs)[static_cast<std::size_t>(cls)] : binary_plane(p);
    report.per_class.push_back(row_from("class" + std::to_string(cls), confusion_counts(p, g), mae(plane, g)));
  }
  report.macro = mean_of(report.per_class, "macro");
  return report;
}

MetricReport evaluate_dataset(const std::vector<EvalPair>& pairs, EvalMode mode, int num_classes) {
  if (pairs.empty()) throw std::invalid_argument("evaluate_dataset needs at least one pair");
  MetricReport report;
  for (const auto& pair : pairs) {
    if (mode == EvalMode::binary) {
      std::optional<std::vector<double>> prob;
      if (pair.probs) {
        if (pair.probs->size() < 2) throw ShapeError("evaluate_dataset: binary probabilities need 2 planes");
        prob = (*pair.probs)[1];
      }
      report.rows.push_back(binary_row(pair.name, pair.pred, pair.gt, prob));
    } else {
      MetricRow row = multiclass_metrics(pair.pred, pair.gt, num_classes, pair.probs).macro;
      row.name = pair.name;
      report.rows.push_back(row);
    }
  }
  report.mean = mean_of(report.rows, "MEAN");
  return report;
}

namespace {

void write_row(std::ostream& out, const MetricRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), ",%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.dice, r.sensitivity, r.specificity,
                r.precision, r.fmeasure, r.mae);
  out << r.name << buf;
}

}  // namespace

void write_report_csv(const MetricReport& report, std::ostream& out) {
  out << kReportHeader << '\n';
  for (const auto& r : report.rows) write_row(out, r);
  write_row(out, report.mean);
}

void write_report_csv(const MetricReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report " + path.string());
  write_report_csv(report, out);
}

MetricReport parse_report_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kReportHeader) {
    throw std::runtime_error("report CSV: unexpected header '" + line + "'");
  }
  std::vector<MetricRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> fields;
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 7) {
      throw std::runtime_error("report CSV line " + std::to_string(lineno) + ": expected 7 fields");
    }
    MetricRow r;
    r.name = fields[0];
    double* dst[6] = {&r.dice, &r.sensitivity, &r.specificity, &r.precision, &r.fmeasure, &r.mae};
    for (int i = 0; i < 6; ++i) {
      std::size_t used = 0;
      *dst[i] = std::stod(fields[static_cast<std::size_t>(i + 1)], &used);
      if (used != fields[static_cast<std::size_t>(i + 1)].size()) {
        throw std::runtime_error("report CSV line " + std::to_string(lineno) + ": bad number");
      }
    }
    rows.push_back(r);
  }
  if (rows.empty() || rows.back().name != "MEAN") throw std::runtime_error("report CSV: missing MEAN row");
  MetricReport report;
  report.mean = rows.back();
  rows.pop_back();
  report.rows = std::move(rows);
  return report;
}

}  // namespace tssg
