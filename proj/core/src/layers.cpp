#include "bdsl/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace bdsl::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
  std::size_t batch, in_ch, height, width;
  std::size_t out_ch, kh, kw;
  std::size_t stride, pad_h, pad_w;
  std::size_t out_h, out_w;

  std::size_t patch() const { return in_ch * kh * kw; }
  std::size_t out_plane() const { return out_h * out_w; }
};

template <typename T>
ConvGeometry conv_geometry(const BasicTensor<T>& x, const Conv2dParams<T>& p) {
  if (x.ndim() != 4) throw ShapeError("conv2d expects [B,C,H,W], got " + shape_to_string(x.shape()));
  const auto& w = p.weights.value;
  if (w.ndim() != 4) throw ShapeError("conv2d weights must be [out,in,kh,kw]");
  if (x.dim(1) != w.dim(1)) {
    throw ShapeError("conv2d: input has " + std::to_string(x.dim(1)) + " channels, kernel expects " +
                     std::to_string(w.dim(1)));
  }
  if (p.bias.value.size() != w.dim(0)) throw ShapeError("conv2d: bias size mismatch");
  if (p.stride == 0) throw ConfigError("conv2d: stride must be positive");
  ConvGeometry g{};
  g.batch = x.dim(0);
  g.in_ch = x.dim(1);
  g.height = x.dim(2);
  g.width = x.dim(3);
  g.out_ch = w.dim(0);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  g.stride = p.stride;
  if (p.padding == Padding::same) {
    if (g.kh % 2 == 0 || g.kw % 2 == 0) throw ConfigError("same padding requires odd kernels");
    g.pad_h = (g.kh - 1) / 2;
    g.pad_w = (g.kw - 1) / 2;
  }
  const std::size_t ph = g.height + 2 * g.pad_h;
  const std::size_t pw = g.width + 2 * g.pad_w;
  if (ph < g.kh || pw < g.kw) throw ShapeError("conv2d: kernel larger than padded input");
  g.out_h = (ph - g.kh) / g.stride + 1;
  g.out_w = (pw - g.kw) / g.stride + 1;
  return g;
}

// col is [C*kh*kw, out_h*out_w] row-major.
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  const std::size_t plane = g.out_plane();
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    const T* src = img + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* dst = col + ((c * g.kh + ki) * g.kw + kj) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad_h);
          T* row = dst + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(row, row + g.out_w, T{0});
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(iy) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.pad_w);
            row[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width))
                          ? T{0}
                          : srow[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* img) {
  const std::size_t plane = g.out_plane();
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    T* dst = img + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* src = col + ((c * g.kh + ki) * g.kw + kj) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad_h);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* drow = dst + static_cast<std::size_t>(iy) * g.width;
          const T* row = src + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.pad_w);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width))
              drow[static_cast<std::size_t>(ix)] += row[ox];
          }
        }
      }
    }
  }
}

// Channel layout helper shared by batchnorm forward/backward.
struct ChannelLayout {
  std::size_t batch, channels, inner;  // element (b,c,i) at (b*channels + c)*inner + i
};

template <typename T>
ChannelLayout channel_layout(const BasicTensor<T>& x) {
  if (x.ndim() == 2) return {x.dim(0), x.dim(1), 1};
  if (x.ndim() == 4) return {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
  throw ShapeError("batchnorm expects [B,C,H,W] or [B,D], got " + shape_to_string(x.shape()));
}

}  // namespace

template <typename T>
Conv2dParams<T> make_conv2d(const std::string& name, std::size_t in_ch, std::size_t out_ch,
                            std::size_t kernel, Padding padding) {
  Conv2dParams<T> p;
  p.weights = {name + ".weight", BasicTensor<T>::zeros({out_ch, in_ch, kernel, kernel}), {}};
  p.bias = {name + ".bias", BasicTensor<T>::zeros({out_ch}), {}};
  p.padding = padding;
  return p;
}

template <typename T>
BatchNormParams<T> make_batchnorm(const std::string& name, std::size_t channels, double epsilon,
                                  double momentum) {
  if (!(epsilon > 0)) throw ConfigError("batchnorm epsilon must be positive");
  if (!(momentum > 0 && momentum < 1)) throw ConfigError("batchnorm momentum must be in (0,1)");
  BatchNormParams<T> p;
  p.gamma = {name + ".gamma", BasicTensor<T>::ones({channels}), {}};
  p.beta = {name + ".beta", BasicTensor<T>::zeros({channels}), {}};
  p.running_mean = BasicTensor<T>::zeros({channels});
  p.running_var = BasicTensor<T>::ones({channels});
  p.epsilon = epsilon;
  p.momentum = momentum;
  return p;
}

template <typename T>
DenseParams<T> make_dense(const std::string& name, std::size_t in_dim, std::size_t out_dim) {
  DenseParams<T> p;
  p.weights = {name + ".weight", BasicTensor<T>::zeros({out_dim, in_dim}), {}};
  p.bias = {name + ".bias", BasicTensor<T>::zeros({out_dim}), {}};
  return p;
}

template <typename T>
Var conv2d(BasicTape<T>& tape, Var input, Conv2dParams<T>& params) {
  const auto& x = tape.value(input);
  const ConvGeometry g = conv_geometry(x, params);
  Var w = tape.parameter(params.weights);
  Var b = tape.parameter(params.bias);

  BasicTensor<T> out({g.batch, g.out_ch, g.out_h, g.out_w});
  AlignedVector<T> col(g.patch() * g.out_plane());
  ConstMapMat<T> wm(params.weights.value.data(), g.out_ch, g.patch());
  const auto& bias = params.bias.value;
  const std::size_t in_stride = g.in_ch * g.height * g.width;
  const std::size_t out_stride = g.out_ch * g.out_plane();
  for (std::size_t n = 0; n < g.batch; ++n) {
    im2col(x.data() + n * in_stride, g, col.data());
    MapMat<T> om(out.data() + n * out_stride, g.out_ch, g.out_plane());
    om.noalias() = wm * ConstMapMat<T>(col.data(), g.patch(), g.out_plane());
    for (std::size_t o = 0; o < g.out_ch; ++o) om.row(o).array() += bias[o];
  }

  return tape.record(std::move(out), {input, w, b},
                     [input, w, b, g](BasicTape<T>& t, const BasicTensor<T>& grad) {
    const auto& xv = t.value(input);
    ConstMapMat<T> wm(t.value(w).data(), g.out_ch, g.patch());
    BasicTensor<T>* gx = t.grad_buffer(input);
    BasicTensor<T>* gw = t.grad_buffer(w);
    BasicTensor<T>* gb = t.grad_buffer(b);
    AlignedVector<T> col(g.patch() * g.out_plane());
    AlignedVector<T> dcol(gx ? col.size() : 0);
    const std::size_t in_stride = g.in_ch * g.height * g.width;
    const std::size_t out_stride = g.out_ch * g.out_plane();
    for (std::size_t n = 0; n < g.batch; ++n) {
      ConstMapMat<T> dy(grad.data() + n * out_stride, g.out_ch, g.out_plane());
      if (gb) {
        for (std::size_t o = 0; o < g.out_ch; ++o) (*gb)[o] += dy.row(o).sum();
      }
      if (gw) {
        im2col(xv.data() + n * in_stride, g, col.data());
        MapMat<T> dw(gw->data(), g.out_ch, g.patch());
        dw.noalias() += dy * ConstMapMat<T>(col.data(), g.patch(), g.out_plane()).transpose();
      }
      if (gx) {
        MapMat<T> dc(dcol.data(), g.patch(), g.out_plane());
        dc.noalias() = wm.transpose() * dy;
        col2im_add(dcol.data(), g, gx->data() + n * in_stride);
      }
    }
  });
}

template <typename T>
Var maxpool2x2(BasicTape<T>& tape, Var input) {
  const auto& x = tape.value(input);
  if (x.ndim() != 4) throw ShapeError("maxpool2x2 expects [B,C,H,W]");
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0)
    throw ShapeError("maxpool2x2 requires even spatial dims, got " + shape_to_string(x.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  BasicTensor<T> out({x.dim(0), x.dim(1), oh, ow});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x.data() + p * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::size_t base = (2 * oy) * w + 2 * ox;
        const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
        std::size_t best = cand[0];
        for (int k = 1; k < 4; ++k)
          if (src[cand[k]] > src[best] || (std::isnan(src[cand[k]]) && !std::isnan(src[best]))) best = cand[k];
        const std::size_t o = (p * oh + oy) * ow + ox;
        out[o] = src[best];
        (*argmax)[o] = static_cast<std::uint32_t>(p * h * w + best);
      }
    }
  }
  return tape.record(std::move(out), {input},
                     [input, argmax](BasicTape<T>& t, const BasicTensor<T>& grad) {
                       if (auto* gx = t.grad_buffer(input))
                         for (std::size_t o = 0; o < grad.size(); ++o)
                           (*gx)[(*argmax)[o]] += grad[o];
                     });
}

template <typename T>
Var batchnorm(BasicTape<T>& tape, Var input, BatchNormParams<T>& params, Mode mode) {
  const auto& x = tape.value(input);
  const ChannelLayout lay = channel_layout(x);
  if (lay.channels != params.channels())
    throw ShapeError("batchnorm: channel count mismatch");
  if (mode == Mode::train && lay.batch < 2)
    throw DegenerateBatchError("batchnorm in train mode needs a batch of at least 2");
  Var gamma = tape.parameter(params.gamma);
  Var beta = tape.parameter(params.beta);

  const std::size_t count = lay.batch * lay.inner;
  const T eps = static_cast<T>(params.epsilon);
  BasicTensor<T> mean({lay.channels});
  BasicTensor<T> inv_std({lay.channels});
  if (mode == Mode::train) {
    for (std::size_t c = 0; c < lay.channels; ++c) {
      double s = 0;
      for (std::size_t n = 0; n < lay.batch; ++n) {
        const T* p = x.data() + (n * lay.channels + c) * lay.inner;
        for (std::size_t i = 0; i < lay.inner; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0;
      for (std::size_t n = 0; n < lay.batch; ++n) {
        const T* p = x.data() + (n * lay.channels + c) * lay.inner;
        for (std::size_t i = 0; i < lay.inner; ++i) {
          const double d = p[i] - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(count);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + params.epsilon));
      const T m = static_cast<T>(params.momentum);
      params.running_mean[c] = m * params.running_mean[c] + (T{1} - m) * static_cast<T>(mu);
      params.running_var[c] = m * params.running_var[c] + (T{1} - m) * static_cast<T>(var);
    }
  } else {
    for (std::size_t c = 0; c < lay.channels; ++c) {
      mean[c] = params.running_mean[c];
      inv_std[c] = T{1} / std::sqrt(params.running_var[c] + eps);
    }
  }

  BasicTensor<T> xhat(x.shape());
  BasicTensor<T> out(x.shape());
  const auto& gv = params.gamma.value;
  const auto& bv = params.beta.value;
  for (std::size_t n = 0; n < lay.batch; ++n) {
    for (std::size_t c = 0; c < lay.channels; ++c) {
      const std::size_t off = (n * lay.channels + c) * lay.inner;
      for (std::size_t i = 0; i < lay.inner; ++i) {
        const T h = (x[off + i] - mean[c]) * inv_std[c];
        xhat[off + i] = h;
        out[off + i] = gv[c] * h + bv[c];
      }
    }
  }

  const bool train = mode == Mode::train;
  return tape.record(
      std::move(out), {input, gamma, beta},
      [input, gamma, beta, lay, train, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          BasicTape<T>& t, const BasicTensor<T>& grad) {
        const auto& gv = t.value(gamma);
        std::vector<double> sum_dy(lay.channels, 0.0), sum_dy_xhat(lay.channels, 0.0);
        for (std::size_t n = 0; n < lay.batch; ++n) {
          for (std::size_t c = 0; c < lay.channels; ++c) {
            const std::size_t off = (n * lay.channels + c) * lay.inner;
            for (std::size_t i = 0; i < lay.inner; ++i) {
              sum_dy[c] += grad[off + i];
              sum_dy_xhat[c] += grad[off + i] * xhat[off + i];
            }
          }
        }
        if (auto* gg = t.grad_buffer(gamma))
          for (std::size_t c = 0; c < lay.channels; ++c) (*gg)[c] += static_cast<T>(sum_dy_xhat[c]);
        if (auto* gb = t.grad_buffer(beta))
          for (std::size_t c = 0; c < lay.channels; ++c) (*gb)[c] += static_cast<T>(sum_dy[c]);
        auto* gx = t.grad_buffer(input);
        if (!gx) return;
        const double count = static_cast<double>(lay.batch * lay.inner);
        for (std::size_t n = 0; n < lay.batch; ++n) {
          for (std::size_t c = 0; c < lay.channels; ++c) {
            const std::size_t off = (n * lay.channels + c) * lay.inner;
            const T scale = gv[c] * inv_std[c];
            if (!train) {
              for (std::size_t i = 0; i < lay.inner; ++i) (*gx)[off + i] += scale * grad[off + i];
              continue;
            }
            const T mean_dy = static_cast<T>(sum_dy[c] / count);
            const T mean_dy_xhat = static_cast<T>(sum_dy_xhat[c] / count);
            for (std::size_t i = 0; i < lay.inner; ++i) {
              (*gx)[off + i] +=
                  scale * (grad[off + i] - mean_dy - xhat[off + i] * mean_dy_xhat);
            }
          }
        }
      });
}

template <typename T>
Var dense(BasicTape<T>& tape, Var input, DenseParams<T>& params) {
  const auto& x = tape.value(input);
  if (x.ndim() != 2) throw ShapeError("dense expects [B,in], got " + shape_to_string(x.shape()));
  const std::size_t batch = x.dim(0), in = params.in_dim(), outd = params.out_dim();
  if (x.dim(1) != in) {
    throw ShapeError("dense: input width " + std::to_string(x.dim(1)) + " but layer expects " +
                     std::to_string(in));
  }
  Var w = tape.parameter(params.weights);
  Var b = tape.parameter(params.bias);
  BasicTensor<T> out({batch, outd});
  MapMat<T> om(out.data(), batch, outd);
  om.noalias() = ConstMapMat<T>(x.data(), batch, in) *
                 ConstMapMat<T>(params.weights.value.data(), outd, in).transpose();
  for (std::size_t r = 0; r < batch; ++r)
    for (std::size_t o = 0; o < outd; ++o) om(r, o) += params.bias.value[o];

  return tape.record(std::move(out), {input, w, b},
                     [input, w, b, batch, in, outd](BasicTape<T>& t, const BasicTensor<T>& grad) {
    ConstMapMat<T> dy(grad.data(), batch, outd);
    if (auto* gx = t.grad_buffer(input)) {
      MapMat<T>(gx->data(), batch, in).noalias() +=
          dy * ConstMapMat<T>(t.value(w).data(), outd, in);
    }
    if (auto* gw = t.grad_buffer(w)) {
      MapMat<T>(gw->data(), outd, in).noalias() +=
          dy.transpose() * ConstMapMat<T>(t.value(input).data(), batch, in);
    }
    if (auto* gb = t.grad_buffer(b)) {
      for (std::size_t r = 0; r < batch; ++r)
        for (std::size_t o = 0; o < outd; ++o) (*gb)[o] += dy(r, o);
    }
  });
}

template <typename T>
Var relu(BasicTape<T>& tape, Var input) {
  const auto& x = tape.value(input);
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] < T{0} ? T{0} : x[i];  // NaN propagates
  return tape.record(std::move(out), {input}, [input](BasicTape<T>& t, const BasicTensor<T>& g) {
    const auto& xv = t.value(input);
    if (auto* gx = t.grad_buffer(input))
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xv[i] > T{0}) (*gx)[i] += g[i];
  });
}

template <typename T>
Var elu(BasicTape<T>& tape, Var input) {
  const auto& x = tape.value(input);
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? x[i] : std::expm1(x[i]);
  return tape.record(std::move(out), {input}, [input](BasicTape<T>& t, const BasicTensor<T>& g) {
    const auto& xv = t.value(input);
    if (auto* gx = t.grad_buffer(input))
      for (std::size_t i = 0; i < g.size(); ++i)
        (*gx)[i] += xv[i] > T{0} ? g[i] : g[i] * std::exp(xv[i]);
  });
}

template <typename T>
SoftmaxXent<T> softmax_xent(BasicTape<T>& tape, Var logits, std::span<const int> labels) {
  const auto& z = tape.value(logits);
  if (z.ndim() != 2) throw ShapeError("softmax_xent expects [B,K] logits");
  const std::size_t batch = z.dim(0), k = z.dim(1);
  if (labels.size() != batch) throw ShapeError("softmax_xent: label count differs from batch");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= k)
      throw LabelError("label " + std::to_string(l) + " outside [0," + std::to_string(k) + ")");

  BasicTensor<T> probs(z.shape());
  double loss = 0;
  for (std::size_t r = 0; r < batch; ++r) {
    const T* row = z.data() + r * k;
    T* prow = probs.data() + r * k;
    const T mx = *std::max_element(row, row + k);
    double denom = 0;
    for (std::size_t j = 0; j < k; ++j) {
      prow[j] = std::exp(row[j] - mx);
      denom += prow[j];
    }
    for (std::size_t j = 0; j < k; ++j) prow[j] = static_cast<T>(prow[j] / denom);
    loss -= static_cast<double>(row[labels[r]] - mx) - std::log(denom);
  }
  loss /= static_cast<double>(batch);

  std::vector<int> owned(labels.begin(), labels.end());
  Var l = tape.record(BasicTensor<T>::scalar(static_cast<T>(loss)), {logits},
                      [logits, probs, owned = std::move(owned), batch, k](
                          BasicTape<T>& t, const BasicTensor<T>& g) {
                        auto* gz = t.grad_buffer(logits);
                        if (!gz) return;
                        const T scale = g[0] / static_cast<T>(batch);
                        for (std::size_t r = 0; r < batch; ++r) {
                          for (std::size_t j = 0; j < k; ++j) {
                            const T onehot = static_cast<std::size_t>(owned[r]) == j ? T{1} : T{0};
                            (*gz)[r * k + j] += scale * (probs[r * k + j] - onehot);
                          }
                        }
                      });
  return {l, std::move(probs)};
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  if (logits.ndim() != 2) throw ShapeError("softmax expects [B,K]");
  const std::size_t batch = logits.dim(0), k = logits.dim(1);
  BasicTensor<T> probs(logits.shape());
  for (std::size_t r = 0; r < batch; ++r) {
    const T* row = logits.data() + r * k;
    T* prow = probs.data() + r * k;
    const T mx = *std::max_element(row, row + k);
    double denom = 0;
    for (std::size_t j = 0; j < k; ++j) {
      prow[j] = std::exp(row[j] - mx);
      denom += prow[j];
    }
    for (std::size_t j = 0; j < k; ++j) prow[j] = static_cast<T>(prow[j] / denom);
  }
  return probs;
}

#define BDSL_INSTANTIATE(T)                                                                    \
  template Conv2dParams<T> make_conv2d<T>(const std::string&, std::size_t, std::size_t,        \
                                          std::size_t, Padding);                               \
  template BatchNormParams<T> make_batchnorm<T>(const std::string&, std::size_t, double,       \
                                                double);                                       \
  template DenseParams<T> make_dense<T>(const std::string&, std::size_t, std::size_t);         \
  template Var conv2d(BasicTape<T>&, Var, Conv2dParams<T>&);                                   \
  template Var maxpool2x2(BasicTape<T>&, Var);                                                 \
  template Var batchnorm(BasicTape<T>&, Var, BatchNormParams<T>&, Mode);                       \
  template Var dense(BasicTape<T>&, Var, DenseParams<T>&);                                     \
  template Var relu(BasicTape<T>&, Var);                                                       \
  template Var elu(BasicTape<T>&, Var);                                                        \
  template SoftmaxXent<T> softmax_xent(BasicTape<T>&, Var, std::span<const int>);              \
  template BasicTensor<T> softmax(const BasicTensor<T>&);

BDSL_INSTANTIATE(float)
BDSL_INSTANTIATE(double)
#undef BDSL_INSTANTIATE

}  // namespace bdsl::nn
