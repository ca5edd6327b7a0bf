#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "scalestack/image.hpp"
#include "scalestack/rng.hpp"
#include "scalestack/tensor.hpp"

namespace scalestack {

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split { train, val, test };

std::string_view to_string(Split split);
std::optional<Split> parse_split(std::string_view text);

struct Sample {
  std::string path;              // as written in the manifest
  std::filesystem::path file;    // resolved against the manifest directory
  std::string stem;              // cache key; unique across the manifest
  std::size_t label = 0;
  std::optional<Split> split;
};

struct Manifest {
  std::vector<Sample> samples;       // sorted by path
  std::vector<std::string> classes;  // alphabetical; index == label
  bool has_split_column = false;

  std::size_t num_classes() const { return classes.size(); }
};

// Headered CSV: `path,label[,split]`. Paths are relative to the manifest file.
Manifest load_manifest(const std::filesystem::path& path);

void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

struct SplitSpec {
  double train = 0.70;
  double val = 0.10;
  double test = 0.20;
  std::uint64_t seed = 0;
};

// Per class: shuffle with the seed, then take floor(n * val) validation and
// floor(n * test) test samples (at least one each), the rest for training.
std::vector<Sample> stratified_split(std::span<const Sample> samples, const SplitSpec& spec);

struct Crop {
  Tensor<float> tensor;  // C x h x w
  std::size_t top = 0;
  std::size_t left = 0;
  bool flipped = false;
};

// Uniformly placed square crop; mirrored with probability 0.5 when `flip`.
Crop sample_crop(const Image& img, std::size_t crop_size, Rng& rng, bool flip = false);

// Per-channel mean over a set of images (pixel-weighted).
std::vector<double> channel_mean(std::span<const Image> images);

void write_normalization(const std::filesystem::path& path, std::span<const double> mean);
std::vector<double> read_normalization(const std::filesystem::path& path);

// `<cache>/<scale>/<stem>.png`
std::filesystem::path cache_path(const std::filesystem::path& cache, std::size_t scale,
                                 std::string_view stem);

}  // namespace scalestack
