#include "tssg/decomposition.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace tssg {

void DecompositionConfig::validate() const {
  if (window_radius < 1) throw std::invalid_argument("window_radius must be >= 1");
  if (!(eps_s > 0.0)) throw std::invalid_argument("eps_s must be > 0");
  if (!(smoothing_eps >= kSmoothingEpsMin && smoothing_eps <= kSmoothingEpsMax)) {
    throw std::invalid_argument("smoothing_eps must lie in [1e-4, 9e-4], got " + std::to_string(smoothing_eps));
  }
  if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
}

double rescale_weight_color(std::span<const double> gradients, std::span<const double> intervals, double eps_s) {
  if (gradients.size() != 3 || intervals.size() != 3) {
    throw std::invalid_argument("rescale_weight_color needs exactly three channels; grayscale uses rescale_weight");
  }
  double g = 0.0, ig = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    g += std::abs(gradients[c]);
    ig += std::abs(intervals[c]);
  }
  return std::min(1.0, (ig / 3.0 + eps_s) / (g / 3.0 + eps_s));
}

Eigen::ArrayXd guided_filter_1d(const Eigen::ArrayXd& guide, const Eigen::ArrayXd& input, int radius, double eps) {
  const Eigen::Index n = guide.size();
  if (input.size() != n) throw std::invalid_argument("guided_filter_1d: guide and input lengths differ");

  // Clipped box means through prefix sums.
  auto box_mean = [n, radius](const Eigen::ArrayXd& v) {
    Eigen::ArrayXd prefix(n + 1);
    prefix[0] = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + v[i];
    Eigen::ArrayXd out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index lo = std::max<Eigen::Index>(0, i - radius);
      const Eigen::Index hi = std::min<Eigen::Index>(n - 1, i + radius);
      out[i] = (prefix[hi + 1] - prefix[lo]) / static_cast<double>(hi - lo + 1);
    }
    return out;
  };

  const Eigen::ArrayXd mean_g = box_mean(guide);
  const Eigen::ArrayXd mean_i = box_mean(input);
  const Eigen::ArrayXd corr_gi = box_mean(guide * input);
  const Eigen::ArrayXd corr_gg = box_mean(guide * guide);
  const Eigen::ArrayXd var_g = (corr_gg - mean_g * mean_g).max(0.0);
  const Eigen::ArrayXd cov_gi = corr_gi - mean_g * mean_i;
  const Eigen::ArrayXd a = cov_gi / (var_g + eps);
  const Eigen::ArrayXd b = mean_i - a * mean_g;
  return box_mean(a) * guide + box_mean(b);
}

namespace {

class LineFilter {
 public:
  LineFilter(const DecompositionConfig& cfg, DecompositionStats* stats) : cfg_(cfg), stats_(stats) {}

  // Filters one line of every channel in place.
  void run(std::vector<Eigen::ArrayXd>& lines) {
    const std::size_t channels = lines.size();
    const Eigen::Index n = lines[0].size();
    grads_.resize(channels);
    intervals_.resize(channels);
    for (std::size_t c = 0; c < channels; ++c) {
      grads_[c] = forward_gradient(lines[c]);
      intervals_[c] = interval_gradient(lines[c], cfg_.window_radius);
    }
    std::vector<Eigen::ArrayXd> rescaled(channels, Eigen::ArrayXd(n - 1));
    double g3[3], i3[3];
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      double w;
      if (channels == 1) {
        w = rescale_weight(grads_[0][p], intervals_[0][p], cfg_.eps_s);
      } else {
        for (std::size_t c = 0; c < 3; ++c) {
          g3[c] = grads_[c][p];
          i3[c] = intervals_[c][p];
        }
        w = rescale_weight_color(g3, i3, cfg_.eps_s);
      }
      if (!(w >= 0.0 && w <= 1.0)) {
        throw std::logic_error("rescaling weight left [0, 1]: " + std::to_string(w));
      }
      if (stats_) {
        stats_->min_weight = std::min(stats_->min_weight, w);
        stats_->max_weight = std::max(stats_->max_weight, w);
        ++stats_->weights_evaluated;
      }
      for (std::size_t c = 0; c < channels; ++c) rescaled[c][p] = gate_gradient(grads_[c][p], intervals_[c][p], w);
    }
    for (std::size_t c = 0; c < channels; ++c) {
      Eigen::ArrayXd guide(n);
      guide[0] = lines[c][0];
      for (Eigen::Index p = 0; p + 1 < n; ++p) guide[p + 1] = guide[p] + rescaled[c][p];
      lines[c] = guided_filter_1d(guide, lines[c], cfg_.window_radius, cfg_.smoothing_eps);
    }
  }

 private:
  const DecompositionConfig& cfg_;
  DecompositionStats* stats_;
  std::vector<Eigen::ArrayXd> grads_;
  std::vector<Eigen::ArrayXd> intervals_;
};

void check_input(const ImagePlane& image) {
  if (image.rows() < 4 || image.cols() < 4) {
    throw std::invalid_argument("decompose needs an image of at least 4x4, got " + std::to_string(image.rows()) +
                                "x" + std::to_string(image.cols()));
  }
  if (!image.allFinite()) throw std::invalid_argument("decompose input contains non-finite values");
}

// Alternating row/column passes over all channels.
void filter_planes(std::vector<Plane<double>>& planes, const DecompositionConfig& cfg, DecompositionStats* stats) {
  const Eigen::Index rows = planes[0].rows(), cols = planes[0].cols();
  LineFilter filter(cfg, stats);
  std::vector<Eigen::ArrayXd> lines(planes.size());
  for (int it = 0; it < cfg.iterations; ++it) {
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < planes.size(); ++c) lines[c] = planes[c].row(r).transpose();
      filter.run(lines);
      for (std::size_t c = 0; c < planes.size(); ++c) planes[c].row(r) = lines[c].transpose();
    }
    for (Eigen::Index col = 0; col < cols; ++col) {
      for (std::size_t c = 0; c < planes.size(); ++c) lines[c] = planes[c].col(col);
      filter.run(lines);
      for (std::size_t c = 0; c < planes.size(); ++c) planes[c].col(col) = lines[c];
    }
  }
}

// S is the nearest float to the filtered value, so a filter that returns
// its input leaves T exactly 0. When I - S would round in double, S falls
// back to the 2^-24 grid: with I a float >= 2^-29 the difference then needs
// at most 53 significant bits. Smaller nonzero inputs pass through as S.
DecompositionResult finish(const ImagePlane& image, const Plane<double>& filtered) {
  constexpr double kGrid = 0x1.0p24;
  constexpr double kTiny = 0x1.0p-29;
  DecompositionResult out{Plane<double>(image.rows(), image.cols()), Plane<double>(image.rows(), image.cols())};
  for (Eigen::Index r = 0; r < image.rows(); ++r) {
    for (Eigen::Index c = 0; c < image.cols(); ++c) {
      const double in = image(r, c);
      const double f = std::clamp(filtered(r, c), 0.0, 1.0);
      double s = static_cast<float>(f);
      // TwoSum error of in + (-s); zero iff the double difference is exact.
      const double t = in - s;
      const double bb = t - in;
      if ((in - (t - bb)) + (-s - bb) != 0.0) s = std::round(f * kGrid) / kGrid;
      if (in != 0.0 && std::abs(in) < kTiny) s = in;
      out.structure(r, c) = s;
      out.texture(r, c) = in - s;
    }
  }
  return out;
}

}  // namespace

DecompositionResult decompose(const ImagePlane& image, const DecompositionConfig& cfg, DecompositionStats* stats) {
  cfg.validate();
  check_input(image);
  std::vector<Plane<double>> planes{image.cast<double>()};
  filter_planes(planes, cfg, stats);
  return finish(image, planes[0]);
}

ColorDecompositionResult decompose(const RgbImage& image, const DecompositionConfig& cfg, DecompositionStats* stats) {
  cfg.validate();
  for (const auto& ch : image.channels) {
    check_input(ch);
    if (ch.rows() != image.rows() || ch.cols() != image.cols()) {
      throw std::invalid_argument("decompose: color channels differ in size");
    }
  }
  std::vector<Plane<double>> planes;
  for (const auto& ch : image.channels) planes.push_back(ch.cast<double>());
  filter_planes(planes, cfg, stats);
  ColorDecompositionResult out;
  for (std::size_t c = 0; c < 3; ++c) out.channels[c] = finish(image.channels[c], planes[c]);
  return out;
}

double reconstruction_residual(const ImagePlane& image, const DecompositionResult& result) {
  return (result.structure + result.texture - image.cast<double>()).abs().maxCoeff();
}

}  // namespace tssg
