#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "scalestack/pyramid.hpp"
#include "scalestack/synthetic.hpp"

using namespace scalestack;
namespace fs = std::filesystem;

namespace {

SyntheticImage render(std::size_t label, std::size_t i, double texture_amplitude = 0.5) {
  SyntheticStyle style;
  style.texture_amplitude = texture_amplitude;
  style.noise_sigma = 0.0;
  Rng rng(derive_seed(11, label * 1000003ULL + i));
  return render_synthetic_image(class_designs(4)[label], 256, rng, style);
}

double mean_abs_diff(const Image& a, const Image& b) {
  double sum = 0.0;
  for (std::size_t c = 0; c < a.channels(); ++c)
    for (std::size_t y = 0; y < a.height(); ++y)
      for (std::size_t x = 0; x < a.width(); ++x) sum += std::abs(a.at(c, y, x) - b.at(c, y, x));
  return sum / static_cast<double>(a.channels() * a.height() * a.width());
}

Image coarsest(PyramidKind kind, const Image& img) { return build_pyramid(kind, img, 4, 256).levels[0]; }

// Nearest class-mean accuracy on the coarsest Gaussian level, leave-one-out.
double coarse_centroid_accuracy(std::size_t a, std::size_t b, std::size_t n) {
  std::vector<Image> imgs[2];
  for (std::size_t i = 0; i < n; ++i) {
    imgs[0].push_back(coarsest(PyramidKind::gaussian, render(a, i).image));
    imgs[1].push_back(coarsest(PyramidKind::gaussian, render(b, i).image));
  }
  const std::size_t len = imgs[0][0].data().size();
  std::vector<double> sums[2] = {std::vector<double>(len), std::vector<double>(len)};
  for (int k = 0; k < 2; ++k)
    for (const auto& im : imgs[k])
      for (std::size_t j = 0; j < len; ++j) sums[k][j] += im.data()[j];
  std::size_t correct = 0;
  for (int k = 0; k < 2; ++k) {
    for (const auto& im : imgs[k]) {
      double d[2] = {0.0, 0.0};
      for (int m = 0; m < 2; ++m) {
        const double cnt = static_cast<double>(n - (m == k ? 1 : 0));
        for (std::size_t j = 0; j < len; ++j) {
          const double mean = (sums[m][j] - (m == k ? im.data()[j] : 0.0)) / cnt;
          d[m] += (im.data()[j] - mean) * (im.data()[j] - mean);
        }
      }
      correct += (d[k] < d[1 - k]);
    }
  }
  return static_cast<double>(correct) / static_cast<double>(2 * n);
}

}  // namespace

TEST(Synthetic, DesignsAndSeparability) {
  const auto d = class_designs(4);
  EXPECT_EQ(separability(0, d), Separability::combined);
  EXPECT_EQ(separability(1, d), Separability::fine_only);
  EXPECT_EQ(separability(2, d), Separability::coarse_only);
  EXPECT_EQ(separability(3, d), Separability::coarse_and_fine);
  EXPECT_EQ(class_designs(9).size(), 9u);
  EXPECT_THROW(class_designs(3), std::invalid_argument);
  EXPECT_THROW(class_designs(kNumLayouts * kNumTextures + 1), std::invalid_argument);
}

TEST(Synthetic, RenderIsDeterministicAndInRange) {
  const auto a = render(1, 5);
  const auto b = render(1, 5);
  EXPECT_EQ(mean_abs_diff(a.image, b.image), 0.0);
  EXPECT_EQ(a.image.channels(), 3u);
  EXPECT_EQ(a.texture_mask.channels(), 1u);
  double covered = 0.0;
  for (std::size_t y = 0; y < 256; ++y)
    for (std::size_t x = 0; x < 256; ++x) {
      covered += a.texture_mask.at(0, y, x);
      for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_GE(a.image.at(c, y, x), 0.0f);
        EXPECT_LE(a.image.at(c, y, x), 1.0f);
      }
    }
  covered /= 256.0 * 256.0;
  EXPECT_GT(covered, 0.1);
  EXPECT_LT(covered, 0.7);
}

// The texture is visible at full size but the Gaussian pyramid removes all but
// a small clamping offset by the coarsest level; the naive pyramid aliases more of it through.
TEST(Synthetic, TextureFadesAtCoarsestGaussianLevel) {
  double naive = 0.0, gauss = 0.0;
  for (std::size_t label = 0; label < 4; ++label) {
    for (std::size_t i = 0; i < 6; ++i) {
      const auto with = render(label, i).image;
      const auto without = render(label, i, 0.0).image;
      const double full = mean_abs_diff(with, without);
      const double g = mean_abs_diff(coarsest(PyramidKind::gaussian, with), coarsest(PyramidKind::gaussian, without));
      EXPECT_GT(full, 0.05);
      EXPECT_LT(g, 0.25 * full);
      gauss += g;
      naive += mean_abs_diff(coarsest(PyramidKind::naive, with), coarsest(PyramidKind::naive, without));
    }
  }
  EXPECT_GT(naive, 2.0 * gauss);
}

TEST(Synthetic, LayoutSeparatesAtCoarsestLevelTextureDoesNot) {
  EXPECT_GE(coarse_centroid_accuracy(0, 2, 20), 0.9);
  EXPECT_GE(coarse_centroid_accuracy(1, 3, 20), 0.9);
  EXPECT_LE(coarse_centroid_accuracy(0, 1, 20), 0.75);
}

TEST(Synthetic, CorpusOnDisk) {
  const auto dir = fs::temp_directory_path() / "sstk_synth_unit";
  fs::remove_all(dir);
  SyntheticSpec spec;
  spec.per_class = 10;
  spec.base_side = 64;
  spec.write_masks = true;
  const auto corpus = generate_synthetic_corpus(spec, dir);
  EXPECT_EQ(corpus.manifest.samples.size(), 40u);
  std::size_t per_split[3] = {0, 0, 0};
  std::size_t per_class[4] = {0, 0, 0, 0};
  for (const auto& s : corpus.manifest.samples) {
    ++per_class[s.label];
    ++per_split[static_cast<int>(s.split.value())];
    EXPECT_TRUE(fs::exists(s.file));
    EXPECT_TRUE(fs::exists(dir / "masks" / (s.stem + ".png")));
  }
  for (auto c : per_class) EXPECT_EQ(c, 10u);
  EXPECT_EQ(per_split[0] + per_split[1] + per_split[2], 40u);
  const auto again = load_manifest(corpus.manifest_path);
  EXPECT_EQ(again.samples.size(), 40u);
  EXPECT_THROW(generate_synthetic_corpus(SyntheticSpec{.per_class = 2}, dir), std::invalid_argument);
  fs::remove_all(dir);
}
