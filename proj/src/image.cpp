#include "scalestack/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace scalestack {

Image::Image(std::size_t height, std::size_t width, std::size_t channels, float fill)
    : height_(height), width_(width), channels_(channels), data_(height * width * channels, fill) {
  if (height == 0 || width == 0) throw ImageError("image extents must be >= 1");
  if (channels != 1 && channels != 3) throw ImageError("images have 1 or 3 channels");
}

Image::Image(std::size_t height, std::size_t width, std::size_t channels, std::vector<float> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  if (height == 0 || width == 0) throw ImageError("image extents must be >= 1");
  if (channels != 1 && channels != 3) throw ImageError("images have 1 or 3 channels");
  if (data_.size() != height * width * channels) throw ImageError("image buffer size mismatch");
}

void Image::clamp01() {
  for (auto& v : data_) v = std::clamp(v, 0.0f, 1.0f);
}

std::uint8_t quantize_u8(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

namespace {

Image from_interleaved(const png_image& info, const std::vector<std::uint8_t>& buf) {
  const std::size_t channels = (info.format & PNG_FORMAT_FLAG_COLOR) ? 3 : 1;
  Image img(info.height, info.width, channels);
  for (std::size_t y = 0; y < info.height; ++y) {
    for (std::size_t x = 0; x < info.width; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        img.at(c, y, x) = static_cast<float>(buf[(y * info.width + x) * channels + c]) / 255.0f;
      }
    }
  }
  return img;
}

std::vector<std::uint8_t> to_interleaved(const Image& img) {
  const std::size_t ch = img.channels();
  std::vector<std::uint8_t> buf(img.height() * img.width() * ch);
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      for (std::size_t c = 0; c < ch; ++c) {
        buf[(y * img.width() + x) * ch + c] = quantize_u8(img.at(c, y, x));
      }
    }
  }
  return buf;
}

png_image writer_info(const Image& img) {
  png_image info;
  std::memset(&info, 0, sizeof info);
  info.version = PNG_IMAGE_VERSION;
  info.width = static_cast<png_uint_32>(img.width());
  info.height = static_cast<png_uint_32>(img.height());
  info.format = img.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  return info;
}

Image finish_read(png_image& info, const std::string& what) {
  info.format = (info.format & PNG_FORMAT_FLAG_COLOR) ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(info));
  if (!png_image_finish_read(&info, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = info.message;
    png_image_free(&info);
    throw ImageError("cannot decode " + what + ": " + msg);
  }
  return from_interleaved(info, buf);
}

}  // namespace

Image read_png(const std::filesystem::path& path) {
  png_image info;
  std::memset(&info, 0, sizeof info);
  info.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&info, path.c_str())) {
    throw ImageError("cannot read PNG " + path.string() + ": " + info.message);
  }
  return finish_read(info, path.string());
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image info;
  std::memset(&info, 0, sizeof info);
  info.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&info, bytes.data(), bytes.size())) {
    throw ImageError(std::string("cannot decode PNG buffer: ") + info.message);
  }
  return finish_read(info, "PNG buffer");
}

std::vector<std::uint8_t> encode_png(const Image& img) {
  png_image info = writer_info(img);
  const auto pixels = to_interleaved(img);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&info, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    throw ImageError(std::string("cannot size PNG: ") + info.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&info, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw ImageError(std::string("cannot encode PNG: ") + info.message);
  }
  out.resize(size);
  return out;
}

void write_png(const Image& img, const std::filesystem::path& path) {
  const auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ImageError("failed writing " + path.string());
}

}  // namespace scalestack
