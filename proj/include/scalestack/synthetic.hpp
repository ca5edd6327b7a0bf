#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "scalestack/dataset.hpp"
#include "scalestack/image.hpp"
#include "scalestack/rng.hpp"

// Desk-scale stand-in corpus. Each class pairs a coarse attribute (the
// orientation of a grating whose period is half the image side, intact
// after heavy downsampling but wider than a training crop at full size) with
// a fine attribute (zero-mean stripe texture of period 2-4 px inside scattered
// patches, which a Gaussian pyramid removes after one halving). Class 0 and 1
// share a layout, class 0 and 2 share a texture, class 3 is unique in both, so
// no single scale can resolve every class.

namespace scalestack {

inline constexpr std::size_t kNumLayouts = 6;
inline constexpr std::size_t kNumTextures = 4;

struct ClassDesign {
  std::size_t layout = 0;
  std::size_t texture = 0;
};

// Which attributes tell a class apart from every other class in the corpus.
enum class Separability {
  coarse_and_fine,  // unique layout and unique texture
  fine_only,        // shares its layout, unique texture
  coarse_only,      // unique layout, shares its texture
  combined,         // shares both; needs the two attributes together
};

std::string_view to_string(Separability s);

std::vector<ClassDesign> class_designs(std::size_t num_classes);
Separability separability(std::size_t label, std::span<const ClassDesign> designs);

struct SyntheticImage {
  Image image;         // 3 channels, side x side
  Image texture_mask;  // 1 channel, 1 inside textured patches
};

struct SyntheticStyle {
  double noise_sigma = 0.04;
  double texture_amplitude = 0.5;
  double layout_amplitude = 0.2;
};

SyntheticImage render_synthetic_image(const ClassDesign& design, std::size_t side, Rng& rng,
                                      const SyntheticStyle& style = {});

struct SyntheticSpec {
  std::size_t num_classes = 4;
  std::size_t per_class = 60;
  std::size_t base_side = 256;
  std::uint64_t seed = 1;
  bool write_masks = false;
  SyntheticStyle style;
};

struct SyntheticCorpus {
  std::filesystem::path manifest_path;
  Manifest manifest;
  std::vector<ClassDesign> designs;
};

// Writes images/<class>/<stem>.png (and masks/<stem>.png when requested) plus
// manifest.csv with a seeded stratified split.
SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec,
                                          const std::filesystem::path& out_dir);

}  // namespace scalestack
