#pragma once

#include <cstddef>
#include <span>

#include "scalestack/rng.hpp"
#include "scalestack/tensor.hpp"

// Differentiable layer primitives. Forward functions are pure; each backward
// takes whatever the forward needs to be recomputed from (inputs or masks).

namespace scalestack {

struct ConvSpec {
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  void validate() const;
  // Output extent along one axis, or 0 if the kernel does not fit.
  std::size_t output_extent(std::size_t in) const;
  std::size_t output_extent_w(std::size_t in) const;
};

// Cross-correlation with zero padding. input N x Cin x H x W,
// weights Cout x Cin x kh x kw, bias Cout.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias,
                         const ConvSpec& spec);

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

// `need_input_grad` = false skips the (costly) data gradient for first layers.
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                             const Tensor<T>& weights, const ConvSpec& spec,
                             bool need_input_grad = true);

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input);

// Passes grad where the forward input was strictly positive.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& forward_input, const Tensor<T>& grad);

// Passes grad where the forward input was positive and the grad itself is positive.
template <typename T>
Tensor<T> guided_relu_backward(const Tensor<T>& forward_input, const Tensor<T>& grad);

template <typename T>
struct DropoutResult {
  Tensor<T> output;
  // Per-element multiplier applied in the forward pass: 0 or 1/(1-rate).
  Tensor<T> mask;
};

// Inverted dropout; identity (mask of ones) when not training.
template <typename T>
DropoutResult<T> dropout_forward(const Tensor<T>& input, double rate, bool training, Rng& rng);

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& grad, const Tensor<T>& mask);

// N x C x H x W -> N x C spatial mean.
template <typename T>
Tensor<T> global_average_pool(const Tensor<T>& input);

template <typename T>
Tensor<T> global_average_pool_backward(const Tensor<T>& grad, const Shape& input_shape);

// Row-wise softmax with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

template <typename T>
struct SoftmaxXent {
  T loss = T(0);
  Tensor<T> posteriors;
  Tensor<T> grad_logits;
};

// Mean negative log-likelihood over the batch; grad is (p - onehot) / N.
template <typename T>
SoftmaxXent<T> softmax_xent(const Tensor<T>& logits, std::span<const std::size_t> labels);

}  // namespace scalestack
