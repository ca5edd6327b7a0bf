#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "scalestack/image.hpp"

namespace scalestack {

enum class PyramidKind { gaussian, naive };

std::string_view to_string(PyramidKind kind);
PyramidKind parse_pyramid_kind(std::string_view text);

// Levels are ordered coarse -> fine; the last level has shortest side
// `base_shortest_side`, and each coarser one halves it.
struct ImagePyramid {
  std::vector<Image> levels;
  std::size_t base_shortest_side = 0;
  PyramidKind kind = PyramidKind::gaussian;

  std::size_t size() const { return levels.size(); }
  // Nominal shortest side of level i.
  std::size_t scale_of(std::size_t level) const {
    return base_shortest_side >> (levels.size() - 1 - level);
  }
};

// The 1-D factor [1 4 6 4 1] / 16 of the 5x5 binomial smoothing kernel.
constexpr std::array<double, 5> kGaussianTaps{1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};

// Full 5x5 kernel, the outer product of kGaussianTaps with itself.
std::array<std::array<double, 5>, 5> gaussian_kernel_2d();

// Mirror index without repeating the edge sample (-1 -> 1, n -> n-2).
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n);

// Bicubic (Keys, a = -0.5) resampling to exact extents, pixel-centre aligned,
// edge-replicated, no pre-filtering. Output clamped to [0, 1].
Image resize_bicubic(const Image& img, std::size_t height, std::size_t width);

// Aspect-preserving resize so min(height, width) == target. The other side is
// rounded to the nearest integer. Returns the input unchanged if already there.
Image resize_shortest_side(const Image& img, std::size_t target);

// 5x5 binomial smoothing with reflected borders, computed as two 1-D passes.
Image gaussian_smooth(const Image& img);

// Keeps even rows and columns; output is ceil(H/2) x ceil(W/2).
Image downsample2(const Image& img);

ImagePyramid build_gaussian_pyramid(const Image& img, std::size_t levels,
                                    std::size_t base_shortest_side);

// Wu-style baseline: every level is a direct bicubic resize of the input, with
// no smoothing. Level extents follow the same ceil-halving chain as the
// Gaussian pyramid, so both pyramids share geometry and their finest levels
// are identical.
ImagePyramid build_naive_pyramid(const Image& img, std::size_t levels,
                                 std::size_t base_shortest_side);

ImagePyramid build_pyramid(PyramidKind kind, const Image& img, std::size_t levels,
                           std::size_t base_shortest_side);

}  // namespace scalestack
