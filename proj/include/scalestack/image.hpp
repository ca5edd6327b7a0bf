#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "scalestack/tensor.hpp"

namespace scalestack {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Planar (channel-major) image with values in [0, 1]; 1 or 3 channels.
class Image {
 public:
  Image() = default;
  Image(std::size_t height, std::size_t width, std::size_t channels, float fill = 0.0f);
  Image(std::size_t height, std::size_t width, std::size_t channels, std::vector<float> data);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return channels_; }
  std::size_t shortest_side() const { return height_ < width_ ? height_ : width_; }
  bool empty() const { return data_.empty(); }

  float& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * height_ + y) * width_ + x];
  }
  float at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * height_ + y) * width_ + x];
  }
  std::span<float> plane(std::size_t c) { return {data_.data() + c * height_ * width_, height_ * width_}; }
  std::span<const float> plane(std::size_t c) const {
    return {data_.data() + c * height_ * width_, height_ * width_};
  }
  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  void clamp01();

  // 1 x C x H x W batch of one.
  template <typename T>
  Tensor<T> to_tensor() const {
    return Tensor<T>({1, channels_, height_, width_}, std::vector<T>(data_.begin(), data_.end()));
  }

  bool operator==(const Image& other) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<float> data_;
};

// 8-bit gray or RGB PNG; alpha is dropped, palettes expanded.
Image read_png(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const Image& img);
Image decode_png(std::span<const std::uint8_t> bytes);
void write_png(const Image& img, const std::filesystem::path& path);

// Round-to-nearest 8-bit quantization as used when writing PNGs.
std::uint8_t quantize_u8(float v);

}  // namespace scalestack
