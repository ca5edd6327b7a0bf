#include "scalestack/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "scalestack/simd/gemm.hpp"

namespace scalestack {

void ConvSpec::validate() const {
  if (out_channels < 1 || kernel_h < 1 || kernel_w < 1 || stride < 1) {
    throw ShapeError("conv spec needs out_channels, kernel and stride >= 1");
  }
}

std::size_t ConvSpec::output_extent(std::size_t in) const {
  if (in + 2 * pad < kernel_h) return 0;
  return (in + 2 * pad - kernel_h) / stride + 1;
}

std::size_t ConvSpec::output_extent_w(std::size_t in) const {
  if (in + 2 * pad < kernel_w) return 0;
  return (in + 2 * pad - kernel_w) / stride + 1;
}

namespace {

struct ConvGeometry {
  std::size_t batch, in_c, in_h, in_w, out_c, out_h, out_w;
};

template <typename T>
ConvGeometry check_conv(const Tensor<T>& input, const Tensor<T>& weights, const ConvSpec& spec) {
  spec.validate();
  require_rank(input, 4, "conv2d input");
  require_rank(weights, 4, "conv2d weights");
  const Shape& in = input.shape();
  const Shape& w = weights.shape();
  if (w[0] != spec.out_channels || w[2] != spec.kernel_h || w[3] != spec.kernel_w) {
    throw ShapeError("conv2d weights " + to_string(w) + " do not match spec (" +
                     std::to_string(spec.out_channels) + " filters of " +
                     std::to_string(spec.kernel_h) + "x" + std::to_string(spec.kernel_w) + ")");
  }
  if (w[1] != in[1]) {
    throw ShapeError("conv2d channel mismatch: input " + to_string(in) + " has " +
                     std::to_string(in[1]) + " channels, weights " + to_string(w) + " expect " +
                     std::to_string(w[1]));
  }
  const std::size_t oh = spec.output_extent(in[2]);
  const std::size_t ow = spec.output_extent_w(in[3]);
  if (oh == 0 || ow == 0) {
    throw ShapeError("conv2d input " + to_string(in) + " smaller than kernel " +
                     std::to_string(spec.kernel_h) + "x" + std::to_string(spec.kernel_w) +
                     " with pad " + std::to_string(spec.pad));
  }
  return {in[0], in[1], in[2], in[3], w[0], oh, ow};
}

bool is_pointwise(const ConvSpec& spec) {
  return spec.kernel_h == 1 && spec.kernel_w == 1 && spec.stride == 1 && spec.pad == 0;
}

// Unfolds one image (C x H x W) into a (C*kh*kw) x (Ho*Wo) patch matrix.
template <typename T>
void im2col(const T* img, const ConvGeometry& g, const ConvSpec& s, T* cols) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.in_c; ++c) {
    for (std::size_t ky = 0; ky < s.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < s.kernel_w; ++kx) {
        T* dst = cols + ((c * s.kernel_h + ky) * s.kernel_w + kx) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s.stride + ky) -
                                    static_cast<std::ptrdiff_t>(s.pad);
          T* row = dst + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) {
            std::fill(row, row + g.out_w, T(0));
            continue;
          }
          const T* src = img + (c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s.stride + kx) -
                                      static_cast<std::ptrdiff_t>(s.pad);
            row[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w))
                          ? T(0)
                          : src[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters patch-matrix gradients back onto the image.
template <typename T>
void col2im(const T* cols, const ConvGeometry& g, const ConvSpec& s, T* img) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.in_c; ++c) {
    for (std::size_t ky = 0; ky < s.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < s.kernel_w; ++kx) {
        const T* src = cols + ((c * s.kernel_h + ky) * s.kernel_w + kx) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s.stride + ky) -
                                    static_cast<std::ptrdiff_t>(s.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          T* dst = img + (c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w;
          const T* row = src + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s.stride + kx) -
                                      static_cast<std::ptrdiff_t>(s.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.in_w)) {
              dst[static_cast<std::size_t>(ix)] += row[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias,
                         const ConvSpec& spec) {
  const ConvGeometry g = check_conv(input, weights, spec);
  if (bias.size() != g.out_c) {
    throw ShapeError("conv2d bias " + to_string(bias.shape()) + " does not match " +
                     std::to_string(g.out_c) + " filters");
  }
  const std::size_t patch = g.in_c * spec.kernel_h * spec.kernel_w;
  const std::size_t plane = g.out_h * g.out_w;
  Tensor<T> out({g.batch, g.out_c, g.out_h, g.out_w});
  std::vector<T> cols;
  const bool pointwise = is_pointwise(spec);
  if (!pointwise) cols.resize(patch * plane);
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* img = input.data().data() + n * g.in_c * g.in_h * g.in_w;
    const T* b = img;
    if (!pointwise) {
      im2col(img, g, spec, cols.data());
      b = cols.data();
    }
    T* dst = out.data().data() + n * g.out_c * plane;
    simd::gemm(simd::Op::none, simd::Op::none, g.out_c, plane, patch, weights.data().data(), patch,
               b, plane, dst, plane, false);
    for (std::size_t co = 0; co < g.out_c; ++co) {
      const T bv = bias[co];
      T* row = dst + co * plane;
      for (std::size_t p = 0; p < plane; ++p) row[p] += bv;
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                             const Tensor<T>& weights, const ConvSpec& spec, bool need_input_grad) {
  const ConvGeometry g = check_conv(input, weights, spec);
  const Shape expected{g.batch, g.out_c, g.out_h, g.out_w};
  if (grad_out.shape() != expected) {
    throw ShapeError("conv2d_backward grad " + to_string(grad_out.shape()) +
                     " does not match forward output " + to_string(expected));
  }
  const std::size_t patch = g.in_c * spec.kernel_h * spec.kernel_w;
  const std::size_t plane = g.out_h * g.out_w;
  const bool pointwise = is_pointwise(spec);

  ConvGrads<T> grads{need_input_grad ? Tensor<T>(input.shape()) : Tensor<T>(),
                     Tensor<T>(weights.shape()), Tensor<T>({g.out_c})};
  std::vector<T> cols(pointwise ? 0 : patch * plane);
  std::vector<T> grad_cols(pointwise || !need_input_grad ? 0 : patch * plane);

  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* img = input.data().data() + n * g.in_c * g.in_h * g.in_w;
    const T* gout = grad_out.data().data() + n * g.out_c * plane;
    for (std::size_t co = 0; co < g.out_c; ++co) {
      T sum = T(0);
      for (std::size_t p = 0; p < plane; ++p) sum += gout[co * plane + p];
      grads.bias[co] += sum;
    }
    const T* b = img;
    if (!pointwise) {
      im2col(img, g, spec, cols.data());
      b = cols.data();
    }
    // dW[Cout x patch] += gout[Cout x plane] * cols^T
    simd::gemm(simd::Op::none, simd::Op::transpose, g.out_c, patch, plane, gout, plane, b, plane,
               grads.weights.data().data(), patch, true);
    if (!need_input_grad) continue;
    T* gin = grads.input.data().data() + n * g.in_c * g.in_h * g.in_w;
    // dcols[patch x plane] = W^T * gout
    if (pointwise) {
      simd::gemm(simd::Op::transpose, simd::Op::none, patch, plane, g.out_c,
                 weights.data().data(), patch, gout, plane, gin, plane, false);
    } else {
      simd::gemm(simd::Op::transpose, simd::Op::none, patch, plane, g.out_c,
                 weights.data().data(), patch, gout, plane, grad_cols.data(), plane, false);
      col2im(grad_cols.data(), g, spec, gin);
    }
  }
  return grads;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input) {
  Tensor<T> out = input;
  for (auto& v : out.data()) v = v > T(0) ? v : T(0);
  return out;
}

namespace {
template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()) + " differ");
  }
}
}  // namespace

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& forward_input, const Tensor<T>& grad) {
  require_same_shape(forward_input, grad, "relu_backward");
  Tensor<T> out = grad;
  auto x = forward_input.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    if (!(x[i] > T(0))) o[i] = T(0);
  }
  return out;
}

template <typename T>
Tensor<T> guided_relu_backward(const Tensor<T>& forward_input, const Tensor<T>& grad) {
  require_same_shape(forward_input, grad, "guided_relu_backward");
  Tensor<T> out = grad;
  auto x = forward_input.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    if (!(x[i] > T(0) && o[i] > T(0))) o[i] = T(0);
  }
  return out;
}

template <typename T>
DropoutResult<T> dropout_forward(const Tensor<T>& input, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return {input, Tensor<T>(input.shape(), T(1))};
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> mask(input.shape());
  Tensor<T> out(input.shape());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < input.size(); ++i) {
    mask[i] = u(rng) < rate ? T(0) : keep_scale;
    out[i] = input[i] * mask[i];
  }
  return {std::move(out), std::move(mask)};
}

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& grad, const Tensor<T>& mask) {
  require_same_shape(grad, mask, "dropout_backward");
  Tensor<T> out = grad;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return out;
}

template <typename T>
Tensor<T> global_average_pool(const Tensor<T>& input) {
  require_rank(input, 4, "global_average_pool input");
  const auto& s = input.shape();
  const std::size_t plane = s[2] * s[3];
  Tensor<T> out({s[0], s[1]});
  for (std::size_t i = 0; i < s[0] * s[1]; ++i) {
    const T* src = input.data().data() + i * plane;
    T sum = T(0);
    for (std::size_t p = 0; p < plane; ++p) sum += src[p];
    out[i] = sum / static_cast<T>(plane);
  }
  return out;
}

template <typename T>
Tensor<T> global_average_pool_backward(const Tensor<T>& grad, const Shape& input_shape) {
  require_rank(grad, 2, "global_average_pool_backward grad");
  if (input_shape.size() != 4 || grad.dim(0) != input_shape[0] || grad.dim(1) != input_shape[1]) {
    throw ShapeError("global_average_pool_backward grad " + to_string(grad.shape()) +
                     " does not match input " + to_string(input_shape));
  }
  const std::size_t plane = input_shape[2] * input_shape[3];
  Tensor<T> out(input_shape);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const T v = grad[i] / static_cast<T>(plane);
    std::fill_n(out.data().data() + i * plane, plane, v);
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  require_rank(logits, 2, "softmax logits");
  const std::size_t rows = logits.dim(0);
  const std::size_t k = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = logits.data().data() + r * k;
    T* o = out.data().data() + r * k;
    const T mx = *std::max_element(in, in + k);
    T sum = T(0);
    for (std::size_t j = 0; j < k; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    for (std::size_t j = 0; j < k; ++j) o[j] /= sum;
  }
  return out;
}

template <typename T>
SoftmaxXent<T> softmax_xent(const Tensor<T>& logits, std::span<const std::size_t> labels) {
  require_rank(logits, 2, "softmax_xent logits");
  const std::size_t rows = logits.dim(0);
  const std::size_t k = logits.dim(1);
  if (labels.size() != rows) {
    throw ShapeError("softmax_xent: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  }
  for (auto l : labels) {
    if (l >= k) {
      throw std::out_of_range("label " + std::to_string(l) + " outside [0, " + std::to_string(k) +
                              ")");
    }
  }
  SoftmaxXent<T> r;
  r.grad_logits = Tensor<T>(logits.shape());
  double loss = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const T* in = logits.data().data() + i * k;
    const T mx = *std::max_element(in, in + k);
    T sum = T(0);
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(in[j] - mx);
    const T log_sum = std::log(sum) + mx;
    loss += static_cast<double>(log_sum - in[labels[i]]);
  }
  r.posteriors = softmax(logits);
  const T inv_n = T(1) / static_cast<T>(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const T onehot = j == labels[i] ? T(1) : T(0);
      r.grad_logits[i * k + j] = (r.posteriors[i * k + j] - onehot) * inv_n;
    }
  }
  r.loss = static_cast<T>(loss / static_cast<double>(rows));
  return r;
}

#define SCALESTACK_INSTANTIATE_OPS(T)                                                          \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                    const ConvSpec&);                                          \
  template ConvGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                        const ConvSpec&, bool);                                \
  template Tensor<T> relu_forward(const Tensor<T>&);                                           \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> guided_relu_backward(const Tensor<T>&, const Tensor<T>&);                 \
  template DropoutResult<T> dropout_forward(const Tensor<T>&, double, bool, Rng&);             \
  template Tensor<T> dropout_backward(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> global_average_pool(const Tensor<T>&);                                    \
  template Tensor<T> global_average_pool_backward(const Tensor<T>&, const Shape&);             \
  template Tensor<T> softmax(const Tensor<T>&);                                                \
  template SoftmaxXent<T> softmax_xent(const Tensor<T>&, std::span<const std::size_t>);

SCALESTACK_INSTANTIATE_OPS(float)
SCALESTACK_INSTANTIATE_OPS(double)

}  // namespace scalestack
