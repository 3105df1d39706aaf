#include "tssg/ops.hpp"

#include "tssg/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tssg {
namespace {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Column matrix [C*9, H*W] of one sample; rows ordered (c, ky, kx).
template <typename Scalar>
void im2col(const Scalar* image, int channels, int height, int width, Scalar* col) {
  const int plane = height * width;
  for (int c = 0; c < channels; ++c) {
    const Scalar* src = image + static_cast<std::size_t>(c) * plane;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        Scalar* row = col + static_cast<std::size_t>(c * 9 + ky * 3 + kx) * plane;
        const int dy = ky - 1;
        const int dx = kx - 1;
        const int w0 = std::max(0, -dx);
        const int w1 = std::min(width, width - dx);
        for (int h = 0; h < height; ++h) {
          const int sh = h + dy;
          Scalar* dst = row + static_cast<std::size_t>(h) * width;
          if (sh < 0 || sh >= height) {
            std::fill(dst, dst + width, Scalar(0));
            continue;
          }
          const Scalar* srow = src + static_cast<std::size_t>(sh) * width;
          for (int w = 0; w < w0; ++w) dst[w] = Scalar(0);
          for (int w = w0; w < w1; ++w) dst[w] = srow[w + dx];
          for (int w = w1; w < width; ++w) dst[w] = Scalar(0);
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const Scalar* col, int channels, int height, int width, Scalar* image) {
  const int plane = height * width;
  for (int c = 0; c < channels; ++c) {
    Scalar* dst = image + static_cast<std::size_t>(c) * plane;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const Scalar* row = col + static_cast<std::size_t>(c * 9 + ky * 3 + kx) * plane;
        const int dy = ky - 1;
        const int dx = kx - 1;
        const int w0 = std::max(0, -dx);
        const int w1 = std::min(width, width - dx);
        for (int h = 0; h < height; ++h) {
          const int sh = h + dy;
          if (sh < 0 || sh >= height) continue;
          const Scalar* src = row + static_cast<std::size_t>(h) * width;
          Scalar* drow = dst + static_cast<std::size_t>(sh) * width;
          for (int w = w0; w < w1; ++w) drow[w + dx] += src[w];
        }
      }
    }
  }
}

std::string shape_pair(const char* a_name, const Shape& a, const char* b_name, const Shape& b) {
  return std::string(a_name) + " " + to_string(a) + " vs " + b_name + " " + to_string(b);
}

// Product of the dimensions after the channel axis.
std::size_t inner_size(const Shape& shape) {
  std::size_t inner = 1;
  for (std::size_t i = 2; i < shape.size(); ++i) inner *= static_cast<std::size_t>(shape[i]);
  return inner;
}

}  // namespace

template <typename Scalar>
Var conv2d(GradTape<Scalar>& tape, Var x, Var kernels, Var bias) {
  const auto& in = tape.value(x);
  const auto& k = tape.value(kernels);
  const auto& b = tape.value(bias);
  require_rank4(in.shape(), "conv2d");
  if (k.rank() != 4 || k.dim(2) != 3 || k.dim(3) != 3 || k.dim(1) != in.dim(1)) {
    throw ShapeError("conv2d shape mismatch: " + shape_pair("input", in.shape(), "kernels", k.shape()) +
                     " (kernels must be [out, in_channels, 3, 3])");
  }
  if (b.rank() != 1 || b.dim(0) != k.dim(0)) {
    throw ShapeError("conv2d shape mismatch: " + shape_pair("kernels", k.shape(), "bias", b.shape()));
  }
  const int n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3), o = k.dim(0);
  if (h < 1 || w < 1) throw ShapeError("conv2d needs H, W >= 1, got " + to_string(in.shape()));

  const int plane = h * w;
  const int ck = c * 9;
  Tensor<Scalar> out({n, o, h, w});
  {
    const auto kmat = k.matrix(0, o, ck);
    parallel_for(n, [&](int s) {
      RowMatrix<Scalar> col(ck, plane);
      im2col(in.data().data() + static_cast<std::size_t>(s) * c * plane, c, h, w, col.data());
      auto dst = out.matrix(static_cast<std::size_t>(s) * o * plane, o, plane);
      dst.noalias() = kmat * col;
      for (int oc = 0; oc < o; ++oc) dst.row(oc).array() += b[static_cast<std::size_t>(oc)];
    });
  }
  require_finite(out, "conv2d");

  return tape.record(std::move(out), {x, kernels, bias}, [=](GradTape<Scalar>& t, Var self) {
    const auto& input = t.value(x);
    const auto& kern = t.value(kernels);
    const auto& gout = t.grad(self);
    Tensor<Scalar>* gin = t.grad_buffer(x);
    Tensor<Scalar>* gk = t.grad_buffer(kernels);
    Tensor<Scalar>* gb = t.grad_buffer(bias);
    const auto kmat = kern.matrix(0, o, ck);

    // Per-sample weight gradients, summed afterwards in sample order so the
    // result does not depend on the worker count.
    std::vector<RowMatrix<Scalar>> gk_parts(gk ? static_cast<std::size_t>(n) : 0);
    parallel_for(n, [&](int s) {
      const auto g = gout.matrix(static_cast<std::size_t>(s) * o * plane, o, plane);
      RowMatrix<Scalar> col;
      if (gk) {
        col.resize(ck, plane);
        im2col(input.data().data() + static_cast<std::size_t>(s) * c * plane, c, h, w, col.data());
        gk_parts[static_cast<std::size_t>(s)].noalias() = g * col.transpose();
      }
      if (gin) {
        RowMatrix<Scalar> dcol(ck, plane);
        dcol.noalias() = kmat.transpose() * g;
        col2im_add(dcol.data(), c, h, w, gin->data().data() + static_cast<std::size_t>(s) * c * plane);
      }
    });
    if (gk) {
      auto dst = gk->matrix(0, o, ck);
      for (const auto& part : gk_parts) dst += part;
    }
    if (gb) {
      for (int s = 0; s < n; ++s) {
        const auto g = gout.matrix(static_cast<std::size_t>(s) * o * plane, o, plane);
        for (int oc = 0; oc < o; ++oc) (*gb)[static_cast<std::size_t>(oc)] += g.row(oc).sum();
      }
    }
  });
}

template <typename Scalar>
std::pair<Var, PoolIndices> maxpool2x2(GradTape<Scalar>& tape, Var x) {
  const auto& in = tape.value(x);
  require_rank4(in.shape(), "maxpool2x2");
  const int n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  if (h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0) {
    throw ShapeError("maxpool2x2 needs even, non-zero H and W, got " + to_string(in.shape()));
  }
  const int oh = h / 2, ow = w / 2;
  Tensor<Scalar> out({n, c, oh, ow});
  PoolIndices idx{in.shape(), Tensor<std::int32_t>({n, c, oh, ow})};
  for (int s = 0; s < n; ++s) {
    for (int ch = 0; ch < c; ++ch) {
      const Scalar* src = in.data().data() + in.offset(s, ch, 0, 0);
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          // Window scanned in row-major order; strict '>' keeps the lowest index on ties.
          int best = (2 * i) * w + 2 * j;
          Scalar best_v = src[best];
          const int cand[3] = {best + 1, best + w, best + w + 1};
          for (int q : cand) {
            if (src[q] > best_v) {
              best_v = src[q];
              best = q;
            }
          }
          out.at(s, ch, i, j) = best_v;
          idx.argmax.at(s, ch, i, j) = best;
        }
      }
    }
  }
  require_finite(out, "maxpool2x2");
  PoolIndices saved = idx;
  Var v = tape.record(std::move(out), {x}, [x, saved, c, h, w](GradTape<Scalar>& t, Var self) {
    Tensor<Scalar>* gin = t.grad_buffer(x);
    if (!gin) return;
    const auto& gout = t.grad(self);
    const std::size_t plane_out = static_cast<std::size_t>(h / 2) * (w / 2);
    const std::size_t planes = gout.size() / plane_out;
    for (std::size_t p = 0; p < planes; ++p) {
      Scalar* dst = gin->data().data() + p * static_cast<std::size_t>(h) * w;
      for (std::size_t q = 0; q < plane_out; ++q) {
        dst[saved.argmax[p * plane_out + q]] += gout[p * plane_out + q];
      }
    }
    (void)c;
  });
  return {v, std::move(idx)};
}

template <typename Scalar>
Var max_unpool2x2(GradTape<Scalar>& tape, Var x, const PoolIndices& indices) {
  const auto& in = tape.value(x);
  require_rank4(in.shape(), "max_unpool2x2");
  const auto& ishape = indices.input_shape;
  const auto& ashape = indices.argmax.shape();
  const bool ok = ishape.size() == 4 && ashape.size() == 4 && ashape[0] == in.dim(0) &&
                  ashape[2] == in.dim(2) && ashape[3] == in.dim(3) && ashape[1] > 0 &&
                  in.dim(1) % ashape[1] == 0 && ishape[0] == ashape[0] && ishape[1] == ashape[1] &&
                  ishape[2] == 2 * ashape[2] && ishape[3] == 2 * ashape[3];
  if (!ok) {
    throw ShapeError("max_unpool2x2 shape mismatch: " +
                     shape_pair("input", in.shape(), "indices", ashape) + " (pooled from " +
                     to_string(ishape) + ")");
  }
  const int n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  const int ci = ashape[1];
  const int oh = 2 * h, ow = 2 * w;
  const std::size_t plane_in = static_cast<std::size_t>(h) * w;
  const std::size_t plane_out = static_cast<std::size_t>(oh) * ow;
  Tensor<Scalar> out({n, c, oh, ow});
  for (int s = 0; s < n; ++s) {
    for (int ch = 0; ch < c; ++ch) {
      const Scalar* src = in.data().data() + (static_cast<std::size_t>(s) * c + ch) * plane_in;
      const std::int32_t* ids =
          indices.argmax.data().data() + (static_cast<std::size_t>(s) * ci + ch % ci) * plane_in;
      Scalar* dst = out.data().data() + (static_cast<std::size_t>(s) * c + ch) * plane_out;
      for (std::size_t q = 0; q < plane_in; ++q) dst[ids[q]] = src[q];
    }
  }
  PoolIndices saved = indices;
  return tape.record(std::move(out), {x}, [=](GradTape<Scalar>& t, Var self) {
    Tensor<Scalar>* gin = t.grad_buffer(x);
    if (!gin) return;
    const auto& gout = t.grad(self);
    for (int s = 0; s < n; ++s) {
      for (int ch = 0; ch < c; ++ch) {
        const std::int32_t* ids =
            saved.argmax.data().data() + (static_cast<std::size_t>(s) * ci + ch % ci) * plane_in;
        const Scalar* src = gout.data().data() + (static_cast<std::size_t>(s) * c + ch) * plane_out;
        Scalar* dst = gin->data().data() + (static_cast<std::size_t>(s) * c + ch) * plane_in;
        for (std::size_t q = 0; q < plane_in; ++q) dst[q] += src[ids[q]];
      }
    }
  });
}

template <typename Scalar>
Var batchnorm(GradTape<Scalar>& tape, Var x, Var gamma, Var beta, Tensor<Scalar>& running_mean,
              Tensor<Scalar>& running_var, BnMode mode) {
  const auto& in = tape.value(x);
  require_rank4(in.shape(), "batchnorm");
  const int n = in.dim(0), c = in.dim(1);
  const std::size_t plane = inner_size(in.shape());
  for (const auto* t : {&tape.value(gamma), &tape.value(beta)}) {
    if (t->rank() != 1 || t->dim(0) != c) {
      throw ShapeError("batchnorm shape mismatch: " + shape_pair("input", in.shape(), "parameter", t->shape()));
    }
  }
  for (const auto* t : {&running_mean, &running_var}) {
    if (t->rank() != 1 || t->dim(0) != c) {
      throw ShapeError("batchnorm shape mismatch: " +
                       shape_pair("input", in.shape(), "running statistic", t->shape()));
    }
  }
  const std::size_t count = static_cast<std::size_t>(n) * plane;
  if (mode == BnMode::train && count < 2) {
    throw std::invalid_argument("batchnorm in train mode needs N*H*W >= 2, got " + to_string(in.shape()));
  }

  const auto& g = tape.value(gamma);
  const auto& bt = tape.value(beta);
  Tensor<Scalar> out(in.shape());
  // Normalized activations and per-channel inverse std, kept for backward.
  Tensor<Scalar> xhat(in.shape());
  std::vector<Scalar> inv_std(static_cast<std::size_t>(c));
  const Scalar eps = static_cast<Scalar>(kBatchNormEps);

  for (int ch = 0; ch < c; ++ch) {
    Scalar mean, var;
    if (mode == BnMode::train) {
      double sum = 0.0;
      for (int s = 0; s < n; ++s) {
        const Scalar* src = in.data().data() + in.offset(s, ch, 0, 0);
        for (std::size_t q = 0; q < plane; ++q) sum += src[q];
      }
      const double m = sum / static_cast<double>(count);
      double sq = 0.0;
      for (int s = 0; s < n; ++s) {
        const Scalar* src = in.data().data() + in.offset(s, ch, 0, 0);
        for (std::size_t q = 0; q < plane; ++q) {
          const double d = src[q] - m;
          sq += d * d;
        }
      }
      mean = static_cast<Scalar>(m);
      var = static_cast<Scalar>(sq / static_cast<double>(count));
      const Scalar unbiased = static_cast<Scalar>(sq / static_cast<double>(count - 1));
      const Scalar mom = static_cast<Scalar>(kBatchNormMomentum);
      running_mean[static_cast<std::size_t>(ch)] = mom * running_mean[static_cast<std::size_t>(ch)] + (1 - mom) * mean;
      running_var[static_cast<std::size_t>(ch)] = mom * running_var[static_cast<std::size_t>(ch)] + (1 - mom) * unbiased;
    } else {
      mean = running_mean[static_cast<std::size_t>(ch)];
      var = running_var[static_cast<std::size_t>(ch)];
    }
    const Scalar is = Scalar(1) / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(ch)] = is;
    const Scalar gc = g[static_cast<std::size_t>(ch)];
    const Scalar bc = bt[static_cast<std::size_t>(ch)];
    for (int s = 0; s < n; ++s) {
      const std::size_t base = in.offset(s, ch, 0, 0);
      for (std::size_t q = 0; q < plane; ++q) {
        const Scalar xh = (in[base + q] - mean) * is;
        xhat[base + q] = xh;
        out[base + q] = gc * xh + bc;
      }
    }
  }
  require_finite(out, "batchnorm");

  return tape.record(std::move(out), {x, gamma, beta},
                     [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](GradTape<Scalar>& t, Var self) {
    const auto& gout = t.grad(self);
    const auto& gm = t.value(gamma);
    Tensor<Scalar>* gin = t.grad_buffer(x);
    Tensor<Scalar>* gg = t.grad_buffer(gamma);
    Tensor<Scalar>* gbeta = t.grad_buffer(beta);
    const std::size_t chan_stride = plane;
    const std::size_t sample_stride = static_cast<std::size_t>(c) * plane;
    for (int ch = 0; ch < c; ++ch) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int s = 0; s < n; ++s) {
        const std::size_t base = static_cast<std::size_t>(s) * sample_stride + ch * chan_stride;
        for (std::size_t q = 0; q < plane; ++q) {
          sum_dy += gout[base + q];
          sum_dy_xhat += static_cast<double>(gout[base + q]) * xhat[base + q];
        }
      }
      if (gg) (*gg)[static_cast<std::size_t>(ch)] += static_cast<Scalar>(sum_dy_xhat);
      if (gbeta) (*gbeta)[static_cast<std::size_t>(ch)] += static_cast<Scalar>(sum_dy);
      if (!gin) continue;
      const Scalar scale = gm[static_cast<std::size_t>(ch)] * inv_std[static_cast<std::size_t>(ch)];
      if (mode == BnMode::train) {
        const Scalar mean_dy = static_cast<Scalar>(sum_dy / static_cast<double>(count));
        const Scalar mean_dy_xhat = static_cast<Scalar>(sum_dy_xhat / static_cast<double>(count));
        for (int s = 0; s < n; ++s) {
          const std::size_t base = static_cast<std::size_t>(s) * sample_stride + ch * chan_stride;
          for (std::size_t q = 0; q < plane; ++q) {
            (*gin)[base + q] += scale * (gout[base + q] - mean_dy - xhat[base + q] * mean_dy_xhat);
          }
        }
      } else {
        for (int s = 0; s < n; ++s) {
          const std::size_t base = static_cast<std::size_t>(s) * sample_stride + ch * chan_stride;
          for (std::size_t q = 0; q < plane; ++q) (*gin)[base + q] += scale * gout[base + q];
        }
      }
    }
  });
}

template <typename Scalar>
Var prelu(GradTape<Scalar>& tape, Var x, Var slope) {
  const auto& in = tape.value(x);
  const auto& a = tape.value(slope);
  if (in.rank() < 2 || a.rank() != 1 || a.dim(0) != in.dim(1)) {
    throw ShapeError("prelu shape mismatch: " + shape_pair("input", in.shape(), "slope", a.shape()));
  }
  const int n = in.dim(0), c = in.dim(1);
  const std::size_t plane = inner_size(in.shape());
  Tensor<Scalar> out(in.shape());
  for (int s = 0; s < n; ++s) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(s) * c + ch) * plane;
      const Scalar ac = a[static_cast<std::size_t>(ch)];
      for (std::size_t q = 0; q < plane; ++q) {
        const Scalar v = in[base + q];
        out[base + q] = v > 0 ? v : ac * v;
      }
    }
  }
  require_finite(out, "prelu");
  return tape.record(std::move(out), {x, slope}, [=](GradTape<Scalar>& t, Var self) {
    const auto& input = t.value(x);
    const auto& sl = t.value(slope);
    const auto& gout = t.grad(self);
    Tensor<Scalar>* gin = t.grad_buffer(x);
    Tensor<Scalar>* ga = t.grad_buffer(slope);
    for (int ch = 0; ch < c; ++ch) {
      const Scalar ac = sl[static_cast<std::size_t>(ch)];
      double da = 0.0;
      for (int s = 0; s < n; ++s) {
        const std::size_t base = (static_cast<std::size_t>(s) * c + ch) * plane;
        for (std::size_t q = 0; q < plane; ++q) {
          const Scalar v = input[base + q];
          const Scalar g = gout[base + q];
          if (v > 0) {
            if (gin) (*gin)[base + q] += g;
          } else {
            if (gin) (*gin)[base + q] += ac * g;
            da += static_cast<double>(g) * v;
          }
        }
      }
      if (ga) (*ga)[static_cast<std::size_t>(ch)] += static_cast<Scalar>(da);
    }
  });
}

template <typename Scalar>
Var concat_channels(GradTape<Scalar>& tape, Var a, Var b) {
  const auto& ta = tape.value(a);
  const auto& tb = tape.value(b);
  require_rank4(ta.shape(), "concat_channels");
  require_rank4(tb.shape(), "concat_channels");
  if (ta.dim(0) != tb.dim(0) || ta.dim(2) != tb.dim(2) || ta.dim(3) != tb.dim(3)) {
    throw ShapeError("concat_channels batch/spatial mismatch: " +
                     shape_pair("a", ta.shape(), "b", tb.shape()));
  }
  const int n = ta.dim(0), ca = ta.dim(1), cb = tb.dim(1);
  const std::size_t plane = static_cast<std::size_t>(ta.dim(2)) * ta.dim(3);
  const std::size_t sa = ca * plane, sb = cb * plane;
  Tensor<Scalar> out({n, ca + cb, ta.dim(2), ta.dim(3)});
  for (int s = 0; s < n; ++s) {
    Scalar* dst = out.data().data() + static_cast<std::size_t>(s) * (sa + sb);
    std::copy_n(ta.data().data() + s * sa, sa, dst);
    std::copy_n(tb.data().data() + s * sb, sb, dst + sa);
  }
  return tape.record(std::move(out), {a, b}, [=](GradTape<Scalar>& t, Var self) {
    const auto& gout = t.grad(self);
    Tensor<Scalar>* ga = t.grad_buffer(a);
    Tensor<Scalar>* gb = t.grad_buffer(b);
    for (int s = 0; s < n; ++s) {
      const Scalar* src = gout.data().data() + static_cast<std::size_t>(s) * (sa + sb);
      if (ga) {
        Scalar* dst = ga->data().data() + s * sa;
        for (std::size_t q = 0; q < sa; ++q) dst[q] += src[q];
      }
      if (gb) {
        Scalar* dst = gb->data().data() + s * sb;
        for (std::size_t q = 0; q < sb; ++q) dst[q] += src[sa + q];
      }
    }
  });
}

template <typename Scalar>
Tensor<Scalar> softmax_probabilities(const Tensor<Scalar>& logits) {
  require_rank4(logits.shape(), "softmax_probabilities");
  const int n = logits.dim(0), k = logits.dim(1);
  const std::size_t plane = static_cast<std::size_t>(logits.dim(2)) * logits.dim(3);
  Tensor<Scalar> prob(logits.shape());
  for (int s = 0; s < n; ++s) {
    const std::size_t base = static_cast<std::size_t>(s) * k * plane;
    for (std::size_t q = 0; q < plane; ++q) {
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (int j = 0; j < k; ++j) mx = std::max(mx, logits[base + j * plane + q]);
      Scalar denom = 0;
      for (int j = 0; j < k; ++j) {
        const Scalar e = std::exp(logits[base + j * plane + q] - mx);
        prob[base + j * plane + q] = e;
        denom += e;
      }
      for (int j = 0; j < k; ++j) prob[base + j * plane + q] /= denom;
    }
  }
  return prob;
}

template <typename Scalar>
LabelTensor argmax_classes(const Tensor<Scalar>& logits) {
  require_rank4(logits.shape(), "argmax_classes");
  const int n = logits.dim(0), k = logits.dim(1);
  const std::size_t plane = static_cast<std::size_t>(logits.dim(2)) * logits.dim(3);
  LabelTensor mask({n, logits.dim(2), logits.dim(3)});
  for (int s = 0; s < n; ++s) {
    const std::size_t base = static_cast<std::size_t>(s) * k * plane;
    for (std::size_t q = 0; q < plane; ++q) {
      int best = 0;
      Scalar best_v = logits[base + q];
      for (int j = 1; j < k; ++j) {
        if (logits[base + j * plane + q] > best_v) {
          best_v = logits[base + j * plane + q];
          best = j;
        }
      }
      mask[s * plane + q] = best;
    }
  }
  return mask;
}

template <typename Scalar>
Var softmax_cross_entropy(GradTape<Scalar>& tape, Var logits, const LabelTensor& labels) {
  const auto& z = tape.value(logits);
  require_rank4(z.shape(), "softmax_cross_entropy");
  const int n = z.dim(0), k = z.dim(1);
  if (labels.rank() != 3 || labels.dim(0) != n || labels.dim(1) != z.dim(2) || labels.dim(2) != z.dim(3)) {
    throw ShapeError("softmax_cross_entropy shape mismatch: " +
                     shape_pair("logits", z.shape(), "labels", labels.shape()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k) {
      throw std::invalid_argument("softmax_cross_entropy label " + std::to_string(labels[i]) +
                                  " outside [0, " + std::to_string(k) + ")");
    }
  }
  const std::size_t plane = static_cast<std::size_t>(z.dim(2)) * z.dim(3);
  const std::size_t pixels = static_cast<std::size_t>(n) * plane;
  double total = 0.0;
  for (int s = 0; s < n; ++s) {
    const std::size_t base = static_cast<std::size_t>(s) * k * plane;
    for (std::size_t q = 0; q < plane; ++q) {
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (int j = 0; j < k; ++j) mx = std::max(mx, z[base + j * plane + q]);
      double denom = 0.0;
      for (int j = 0; j < k; ++j) denom += std::exp(static_cast<double>(z[base + j * plane + q] - mx));
      const int y = labels[s * plane + q];
      total += std::log(denom) - static_cast<double>(z[base + y * plane + q] - mx);
    }
  }
  Tensor<Scalar> out({1}, static_cast<Scalar>(total / static_cast<double>(pixels)));
  require_finite(out, "softmax_cross_entropy");
  return tape.record(std::move(out), {logits}, [=, labels = labels](GradTape<Scalar>& t, Var self) {
    Tensor<Scalar>* gz = t.grad_buffer(logits);
    if (!gz) return;
    const Scalar scale = t.grad(self)[0] / static_cast<Scalar>(pixels);
    Tensor<Scalar> prob = softmax_probabilities(t.value(logits));
    for (int s = 0; s < n; ++s) {
      const std::size_t base = static_cast<std::size_t>(s) * k * plane;
      for (std::size_t q = 0; q < plane; ++q) {
        const int y = labels[s * plane + q];
        for (int j = 0; j < k; ++j) {
          const Scalar p = prob[base + j * plane + q] - (j == y ? Scalar(1) : Scalar(0));
          (*gz)[base + j * plane + q] += scale * p;
        }
      }
    }
  });
}

#define TSSG_INSTANTIATE_OPS(S)                                                                 \
  template Var conv2d<S>(GradTape<S>&, Var, Var, Var);                                          \
  template std::pair<Var, PoolIndices> maxpool2x2<S>(GradTape<S>&, Var);                        \
  template Var max_unpool2x2<S>(GradTape<S>&, Var, const PoolIndices&);                         \
  template Var batchnorm<S>(GradTape<S>&, Var, Var, Var, Tensor<S>&, Tensor<S>&, BnMode);       \
  template Var prelu<S>(GradTape<S>&, Var, Var);                                                \
  template Var concat_channels<S>(GradTape<S>&, Var, Var);                                      \
  template Var softmax_cross_entropy<S>(GradTape<S>&, Var, const LabelTensor&);                 \
  template Tensor<S> softmax_probabilities<S>(const Tensor<S>&);                                \
  template LabelTensor argmax_classes<S>(const Tensor<S>&);

TSSG_INSTANTIATE_OPS(float)
TSSG_INSTANTIATE_OPS(double)

#undef TSSG_INSTANTIATE_OPS

}  // namespace tssg
