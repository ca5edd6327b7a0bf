#include "scalestack/pyramid.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace scalestack {

std::string_view to_string(PyramidKind kind) {
  return kind == PyramidKind::gaussian ? "gaussian" : "naive";
}

PyramidKind parse_pyramid_kind(std::string_view text) {
  if (text == "gaussian") return PyramidKind::gaussian;
  if (text == "naive") return PyramidKind::naive;
  throw std::invalid_argument("unknown pyramid kind '" + std::string(text) +
                              "' (expected gaussian|naive)");
}

std::array<std::array<double, 5>, 5> gaussian_kernel_2d() {
  std::array<std::array<double, 5>, 5> k{};
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) k[i][j] = kGaussianTaps[i] * kGaussianTaps[j];
  }
  return k;
}

std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto last = static_cast<std::ptrdiff_t>(n) - 1;
  while (i < 0 || i > last) {
    if (i < 0) i = -i;
    if (i > last) i = 2 * last - i;
  }
  return static_cast<std::size_t>(i);
}

namespace {

double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

struct Taps {
  std::array<std::size_t, 4> index;
  std::array<double, 4> weight;
};

std::vector<Taps> bicubic_taps(std::size_t in, std::size_t out) {
  std::vector<Taps> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const auto last = static_cast<std::ptrdiff_t>(in) - 1;
  for (std::size_t o = 0; o < out; ++o) {
    const double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    const double base = std::floor(src);
    const double frac = src - base;
    for (int t = 0; t < 4; ++t) {
      auto i = static_cast<std::ptrdiff_t>(base) + t - 1;
      i = std::clamp<std::ptrdiff_t>(i, 0, last);
      taps[o].index[t] = static_cast<std::size_t>(i);
      taps[o].weight[t] = cubic_weight(frac - (t - 1));
    }
  }
  return taps;
}

}  // namespace

Image resize_bicubic(const Image& img, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw std::invalid_argument("resize target must be >= 1");
  if (height == img.height() && width == img.width()) return img;
  const auto tx = bicubic_taps(img.width(), width);
  const auto ty = bicubic_taps(img.height(), height);
  Image out(height, width, img.channels());
  std::vector<double> rows(img.height() * width);
  for (std::size_t c = 0; c < img.channels(); ++c) {
    for (std::size_t y = 0; y < img.height(); ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        double s = 0.0;
        for (int t = 0; t < 4; ++t) s += tx[x].weight[t] * img.at(c, y, tx[x].index[t]);
        rows[y * width + x] = s;
      }
    }
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        double s = 0.0;
        for (int t = 0; t < 4; ++t) s += ty[y].weight[t] * rows[ty[y].index[t] * width + x];
        out.at(c, y, x) = static_cast<float>(std::clamp(s, 0.0, 1.0));
      }
    }
  }
  return out;
}

Image resize_shortest_side(const Image& img, std::size_t target) {
  if (target < 1) throw std::invalid_argument("resize target must be >= 1");
  const std::size_t shortest = img.shortest_side();
  if (shortest == target) return img;
  const double ratio = static_cast<double>(target) / static_cast<double>(shortest);
  auto other = [&](std::size_t side) {
    if (side == shortest) return target;
    return std::max(target, static_cast<std::size_t>(std::lround(side * ratio)));
  };
  if (img.height() <= img.width()) return resize_bicubic(img, target, other(img.width()));
  return resize_bicubic(img, other(img.height()), target);
}

Image gaussian_smooth(const Image& img) {
  const std::size_t h = img.height();
  const std::size_t w = img.width();
  Image out(h, w, img.channels());
  std::vector<double> tmp(h * w);
  for (std::size_t c = 0; c < img.channels(); ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double s = 0.0;
        for (int t = -2; t <= 2; ++t) {
          const auto xi = reflect_index(static_cast<std::ptrdiff_t>(x) + t, w);
          s += kGaussianTaps[t + 2] * img.at(c, y, xi);
        }
        tmp[y * w + x] = s;
      }
    }
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double s = 0.0;
        for (int t = -2; t <= 2; ++t) {
          const auto yi = reflect_index(static_cast<std::ptrdiff_t>(y) + t, h);
          s += kGaussianTaps[t + 2] * tmp[yi * w + x];
        }
        out.at(c, y, x) = static_cast<float>(s);
      }
    }
  }
  return out;
}

Image downsample2(const Image& img) {
  if (img.height() < 2 || img.width() < 2) {
    throw std::invalid_argument("downsample2 needs both sides >= 2, got " +
                                std::to_string(img.height()) + "x" + std::to_string(img.width()));
  }
  const std::size_t h = (img.height() + 1) / 2;
  const std::size_t w = (img.width() + 1) / 2;
  Image out(h, w, img.channels());
  for (std::size_t c = 0; c < img.channels(); ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, 2 * y, 2 * x);
    }
  }
  return out;
}

namespace {

void check_pyramid_args(std::size_t levels, std::size_t base) {
  if (levels < 1) throw std::invalid_argument("pyramid needs at least one level");
  if (levels > 20) throw std::invalid_argument("pyramid level count implausibly large");
  const std::size_t factor = std::size_t{1} << (levels - 1);
  if (base % factor != 0 || base / factor < 8) {
    throw std::invalid_argument("base shortest side " + std::to_string(base) +
                                " cannot be halved " + std::to_string(levels - 1) +
                                " times down to a side of at least 8");
  }
}

}  // namespace

ImagePyramid build_gaussian_pyramid(const Image& img, std::size_t levels,
                                    std::size_t base_shortest_side) {
  check_pyramid_args(levels, base_shortest_side);
  ImagePyramid p{std::vector<Image>(levels), base_shortest_side, PyramidKind::gaussian};
  p.levels[levels - 1] = resize_shortest_side(img, base_shortest_side);
  for (std::size_t i = levels - 1; i > 0; --i) {
    p.levels[i - 1] = downsample2(gaussian_smooth(p.levels[i]));
  }
  return p;
}

ImagePyramid build_naive_pyramid(const Image& img, std::size_t levels,
                                 std::size_t base_shortest_side) {
  check_pyramid_args(levels, base_shortest_side);
  ImagePyramid p{std::vector<Image>(levels), base_shortest_side, PyramidKind::naive};
  p.levels[levels - 1] = resize_shortest_side(img, base_shortest_side);
  std::size_t h = p.levels[levels - 1].height();
  std::size_t w = p.levels[levels - 1].width();
  for (std::size_t i = levels - 1; i > 0; --i) {
    h = (h + 1) / 2;
    w = (w + 1) / 2;
    p.levels[i - 1] = resize_bicubic(img, h, w);
  }
  return p;
}

ImagePyramid build_pyramid(PyramidKind kind, const Image& img, std::size_t levels,
                           std::size_t base_shortest_side) {
  return kind == PyramidKind::gaussian ? build_gaussian_pyramid(img, levels, base_shortest_side)
                                       : build_naive_pyramid(img, levels, base_shortest_side);
}

}  // namespace scalestack
