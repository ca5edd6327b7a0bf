#include "scalestack/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace scalestack {

namespace fs = std::filesystem;

std::string_view to_string(Separability s) {
  switch (s) {
    case Separability::coarse_and_fine:
      return "coarse+fine";
    case Separability::fine_only:
      return "fine-only";
    case Separability::coarse_only:
      return "coarse-only";
    case Separability::combined:
      return "combined";
  }
  return "?";
}

std::vector<ClassDesign> class_designs(std::size_t num_classes) {
  if (num_classes < 4) throw std::invalid_argument("synthetic corpus needs at least 4 classes");
  if (num_classes > kNumLayouts * kNumTextures) {
    throw std::invalid_argument("synthetic corpus supports at most " +
                                std::to_string(kNumLayouts * kNumTextures) + " classes");
  }
  std::vector<ClassDesign> designs{{0, 0}, {0, 1}, {1, 0}, {2, 2}};
  for (std::size_t l = 0; l < kNumLayouts && designs.size() < num_classes; ++l) {
    for (std::size_t t = 0; t < kNumTextures && designs.size() < num_classes; ++t) {
      const bool used = std::any_of(designs.begin(), designs.end(), [&](const ClassDesign& d) {
        return d.layout == l && d.texture == t;
      });
      if (!used) designs.push_back({l, t});
    }
  }
  return designs;
}

Separability separability(std::size_t label, std::span<const ClassDesign> designs) {
  bool shares_layout = false;
  bool shares_texture = false;
  for (std::size_t i = 0; i < designs.size(); ++i) {
    if (i == label) continue;
    shares_layout |= designs[i].layout == designs[label].layout;
    shares_texture |= designs[i].texture == designs[label].texture;
  }
  if (!shares_layout && !shares_texture) return Separability::coarse_and_fine;
  if (shares_layout && !shares_texture) return Separability::fine_only;
  if (!shares_layout) return Separability::coarse_only;
  return Separability::combined;
}

namespace {

// Grating orientation per layout, in degrees.
constexpr std::array<double, kNumLayouts> kLayoutAngles{0.0, 90.0, 45.0, 135.0, 22.5, 67.5};

// Zero-mean stripe value at pixel (y, x) for the given orientation.
double stripe(std::size_t texture, std::size_t y, std::size_t x, int period, int phase) {
  const auto ix = static_cast<long>(x);
  const auto iy = static_cast<long>(y);
  long u = 0;
  switch (texture) {
    case 0:
      u = ix;
      break;
    case 1:
      u = iy;
      break;
    case 2:
      u = ix + iy;
      break;
    default:
      u = ix - iy + 3L * 4096;
      break;
  }
  const long m = (u + phase) % period;
  return std::cos(2.0 * std::numbers::pi * static_cast<double>(m) / period);
}

}  // namespace

SyntheticImage render_synthetic_image(const ClassDesign& design, std::size_t side, Rng& rng,
                                      const SyntheticStyle& style) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, style.noise_sigma);
  const double s = static_cast<double>(side);

  const double background = 0.45 + 0.10 * u(rng);
  std::array<double, 3> tint{};
  for (auto& t : tint) t = 0.06 * (u(rng) - 0.5);
  const double amplitude = style.layout_amplitude * (0.85 + 0.3 * u(rng));
  const double angle = kLayoutAngles[design.layout] * std::numbers::pi / 180.0;
  const double wavelength = 0.5 * s * (0.9 + 0.2 * u(rng));
  const double kx = 2.0 * std::numbers::pi * std::cos(angle) / wavelength;
  const double ky = 2.0 * std::numbers::pi * std::sin(angle) / wavelength;
  // Phase is tied to the layout (up to +-45 degrees) so class-mean images
  // stay distinct at the coarsest level.
  const double grating_phase = std::numbers::pi * (0.5 * static_cast<double>(design.layout) +
                                                   0.5 * (u(rng) - 0.5));

  // Textured patches: discs covering roughly 40% of the image.
  struct Disc {
    double cy, cx, r;
  };
  std::vector<Disc> discs(7 + static_cast<std::size_t>(u(rng) * 3));
  for (auto& d : discs) d = {u(rng) * s, u(rng) * s, (0.09 + 0.06 * u(rng)) * s};
  // At period 2 the two diagonals coincide, so the anti-diagonal uses 3 or 4.
  const int period = (u(rng) < 0.5 ? 2 : 3) + (design.texture == 3 ? 1 : 0);
  const int phase = static_cast<int>(u(rng) * period) % period;

  SyntheticImage out{Image(side, side, 3), Image(side, side, 1)};
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double shape = std::cos(kx * (static_cast<double>(x) + 0.5) +
                                    ky * (static_cast<double>(y) + 0.5) + grating_phase);
      bool inside = false;
      for (const auto& d : discs) {
        const double dy = static_cast<double>(y) + 0.5 - d.cy;
        const double dx = static_cast<double>(x) + 0.5 - d.cx;
        inside |= dy * dy + dx * dx <= d.r * d.r;
      }
      const double texture =
          inside ? style.texture_amplitude * stripe(design.texture, y, x, period, phase) : 0.0;
      out.texture_mask.at(0, y, x) = inside ? 1.0f : 0.0f;
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = background + tint[c] + amplitude * shape + texture + noise(rng);
        out.image.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec, const fs::path& out_dir) {
  if (spec.per_class < 3) throw std::invalid_argument("synthetic corpus needs >= 3 images per class");
  SyntheticCorpus corpus;
  corpus.designs = class_designs(spec.num_classes);
  fs::create_directories(out_dir / "images");
  if (spec.write_masks) fs::create_directories(out_dir / "masks");

  Manifest m;
  m.has_split_column = true;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    char name[32];
    std::snprintf(name, sizeof name, "class_%02zu", c);
    m.classes.emplace_back(name);
    fs::create_directories(out_dir / "images" / name);
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      char stem[48];
      std::snprintf(stem, sizeof stem, "%s_%04zu", name, i);
      Rng rng(derive_seed(spec.seed, c * 1000003ULL + i));
      const auto img = render_synthetic_image(corpus.designs[c], spec.base_side, rng, spec.style);
      const std::string rel = std::string("images/") + name + "/" + stem + ".png";
      write_png(img.image, out_dir / rel);
      if (spec.write_masks) write_png(img.texture_mask, out_dir / "masks" / (std::string(stem) + ".png"));
      Sample s;
      s.path = rel;
      s.file = out_dir / rel;
      s.stem = stem;
      s.label = c;
      m.samples.push_back(std::move(s));
    }
  }
  std::sort(m.samples.begin(), m.samples.end(),
            [](const Sample& a, const Sample& b) { return a.path < b.path; });
  m.samples = stratified_split(m.samples, SplitSpec{.seed = spec.seed});
  corpus.manifest_path = out_dir / "manifest.csv";
  write_manifest(corpus.manifest_path, m);
  corpus.manifest = std::move(m);
  return corpus;
}

}  // namespace scalestack
