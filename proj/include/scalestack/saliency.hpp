#pragma once

#include <cstddef>
#include <filesystem>

#include "scalestack/image.hpp"
#include "scalestack/network.hpp"
#include "scalestack/tensor.hpp"

namespace scalestack {

struct SaliencyMap {
  Tensor<double> gradient;  // C x H x W, same extents as the input image
  std::size_t target_class = 0;
  std::size_t scale = 0;
};

// Gradient of the target class score with respect to the input image. The
// one-hot injection happens at the pooled class scores (before softmax), and
// with ReluGate::guided every ReLU passes only positive gradients through
// positively activated units. `trace`, when given, records every gate.
template <typename T>
SaliencyMap guided_backprop(const Network<T>& net, const Image& img, std::size_t target_class,
                            ReluGate gate = ReluGate::guided, GateTrace<T>* trace = nullptr);

// Same backward pass with an arbitrary N x K injection at the class scores.
template <typename T>
Tensor<T> backprop_injection(const Network<T>& net, const Image& img, const Tensor<T>& injection,
                             ReluGate gate, GateTrace<T>* trace = nullptr);

// Channel-summed |gradient|, linearly rescaled so the maximum maps to 255.
Image saliency_to_image(const SaliencyMap& map);
void render_saliency(const SaliencyMap& map, const std::filesystem::path& path);

}  // namespace scalestack
