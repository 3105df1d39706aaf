#pragma once

#include "tssg/metrics.hpp"
#include "tssg/random.hpp"

#include <cmath>

namespace tssg::testing {

struct LoopCounts {
  long tp = 0, fp = 0, tn = 0, fn = 0;
};

// Plain per-pixel tally over (row, col), written without the library's helpers.
inline LoopCounts loop_counts(const LabelMask& pred, const LabelMask& gt) {
  LoopCounts c;
  for (int r = 0; r < pred.height; ++r) {
    for (int col = 0; col < pred.width; ++col) {
      const int p = pred(r, col) > 0 ? 1 : 0;
      const int g = gt(r, col) > 0 ? 1 : 0;
      if (p == 1 && g == 1) c.tp++;
      else if (p == 1) c.fp++;
      else if (g == 1) c.fn++;
      else c.tn++;
    }
  }
  return c;
}

inline double loop_dice(const LabelMask& a, const LabelMask& b) {
  long na = 0, nb = 0, both = 0;
  for (int r = 0; r < a.height; ++r) {
    for (int c = 0; c < a.width; ++c) {
      na += a(r, c) != 0;
      nb += b(r, c) != 0;
      both += a(r, c) != 0 && b(r, c) != 0;
    }
  }
  return na + nb == 0 ? 1.0 : 2.0 * both / static_cast<double>(na + nb);
}

inline double loop_mae(const std::vector<double>& prob, const LabelMask& gt) {
  long double sum = 0;
  for (int r = 0; r < gt.height; ++r) {
    for (int c = 0; c < gt.width; ++c) {
      const long double g = gt(r, c) != 0 ? 1.0L : 0.0L;
      sum += std::fabs(static_cast<long double>(prob[static_cast<std::size_t>(r * gt.width + c)]) - g);
    }
  }
  return static_cast<double>(sum / (gt.height * gt.width));
}

inline LabelMask random_mask(Rng& rng, int h, int w, int k, double fg = 0.5) {
  LabelMask m(h, w);
  for (auto& v : m.labels) v = rng.bernoulli(fg) ? static_cast<std::int32_t>(rng.uniform_int(1, k - 1)) : 0;
  return m;
}

}  // namespace tssg::testing
