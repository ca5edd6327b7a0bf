#include "scalestack/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace scalestack {

template <typename T>
Tensor<T> backprop_injection(const Network<T>& net, const Image& img, const Tensor<T>& injection,
                             ReluGate gate, GateTrace<T>* trace) {
  Rng unused(0);
  const auto fr = forward(net, img.to_tensor<T>(), false, unused);
  if (injection.shape() != fr.logits.shape()) {
    throw ShapeError("injection " + to_string(injection.shape()) + " does not match class scores " +
                     to_string(fr.logits.shape()));
  }
  return backward(net, fr.cache, injection, gate, true, trace).input;
}

template <typename T>
SaliencyMap guided_backprop(const Network<T>& net, const Image& img, std::size_t target_class,
                            ReluGate gate, GateTrace<T>* trace) {
  const std::size_t k = net.config.num_classes;
  if (target_class >= k) {
    throw std::out_of_range("target class " + std::to_string(target_class) + " outside [0, " +
                            std::to_string(k) + ")");
  }
  Tensor<T> injection({1, k});
  injection[target_class] = T(1);
  const auto g = backprop_injection(net, img, injection, gate, trace);
  SaliencyMap map;
  map.gradient = g.template cast<double>().reshaped({img.channels(), img.height(), img.width()});
  map.target_class = target_class;
  map.scale = img.shortest_side();
  return map;
}

Image saliency_to_image(const SaliencyMap& map) {
  const auto& g = map.gradient;
  if (g.rank() != 3) throw ShapeError("saliency map must be C x H x W");
  const std::size_t c = g.dim(0);
  const std::size_t h = g.dim(1);
  const std::size_t w = g.dim(2);
  std::vector<double> mag(h * w, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h * w; ++i) mag[i] += std::abs(g[ch * h * w + i]);
  }
  const double peak = *std::max_element(mag.begin(), mag.end());
  Image out(h, w, 1);
  if (peak > 0.0) {
    for (std::size_t i = 0; i < h * w; ++i) out.data()[i] = static_cast<float>(mag[i] / peak);
  }
  return out;
}

void render_saliency(const SaliencyMap& map, const std::filesystem::path& path) {
  write_png(saliency_to_image(map), path);
}

template SaliencyMap guided_backprop(const Network<float>&, const Image&, std::size_t, ReluGate,
                                     GateTrace<float>*);
template SaliencyMap guided_backprop(const Network<double>&, const Image&, std::size_t, ReluGate,
                                     GateTrace<double>*);
template Tensor<float> backprop_injection(const Network<float>&, const Image&, const Tensor<float>&,
                                          ReluGate, GateTrace<float>*);
template Tensor<double> backprop_injection(const Network<double>&, const Image&,
                                           const Tensor<double>&, ReluGate, GateTrace<double>*);

}  // namespace scalestack
