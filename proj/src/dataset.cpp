#include "scalestack/dataset.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <array>
#include <fstream>
#include <map>
#include <json.hpp>
#include <set>
#include <sstream>

namespace scalestack {

namespace fs = std::filesystem;

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

std::optional<Split> parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  return std::nullopt;
}

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool looks_like_png(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) return false;
  std::array<unsigned char, 8> sig{};
  in.read(reinterpret_cast<char*>(sig.data()), sig.size());
  return in.gcount() == 8 && png_sig_cmp(sig.data(), 0, 8) == 0;
}

}  // namespace

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) throw ManifestError("empty manifest");
  const auto header = split_csv(trim(line));
  if (header.size() < 2 || header[0] != "path" || header[1] != "label" ||
      (header.size() == 3 && header[2] != "split") || header.size() > 3) {
    throw ManifestError("manifest header must be 'path,label' or 'path,label,split', got '" +
                        trim(line) + "'");
  }
  Manifest m;
  m.has_split_column = header.size() == 3;
  const fs::path root = path.parent_path();

  struct Row {
    Sample sample;
    std::string label;
  };
  std::vector<Row> rows;
  std::set<std::string> seen;
  std::set<std::string> stems;
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv(trim(line));
    const std::string where = "manifest row " + std::to_string(row_no);
    if (fields.size() != header.size()) {
      throw ManifestError(where + ": expected " + std::to_string(header.size()) + " fields");
    }
    Row r;
    r.sample.path = fields[0];
    r.label = fields[1];
    if (r.sample.path.empty() || r.label.empty()) throw ManifestError(where + ": empty path or label");
    if (!seen.insert(r.sample.path).second) {
      throw ManifestError(where + ": duplicate path " + r.sample.path);
    }
    if (m.has_split_column && !fields[2].empty()) {
      r.sample.split = parse_split(fields[2]);
      if (!r.sample.split) throw ManifestError(where + ": unknown split tag '" + fields[2] + "'");
    }
    r.sample.file = root / r.sample.path;
    if (!fs::exists(r.sample.file)) {
      throw ManifestError(where + ": missing file " + r.sample.file.string());
    }
    if (!looks_like_png(r.sample.file)) {
      throw ManifestError(where + ": unreadable image " + r.sample.file.string());
    }
    r.sample.stem = fs::path(r.sample.path).stem().string();
    if (!stems.insert(r.sample.stem).second) {
      throw ManifestError(where + ": image stem '" + r.sample.stem +
                          "' is not unique (cache files are keyed by stem)");
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw ManifestError("empty manifest");

  std::set<std::string> labels;
  for (const auto& r : rows) labels.insert(r.label);
  m.classes.assign(labels.begin(), labels.end());
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < m.classes.size(); ++i) index[m.classes[i]] = i;

  std::sort(rows.begin(), rows.end(),
            [](const Row& a, const Row& b) { return a.sample.path < b.sample.path; });
  for (auto& r : rows) {
    r.sample.label = index.at(r.label);
    m.samples.push_back(std::move(r.sample));
  }
  return m;
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ManifestError("cannot write manifest " + path.string());
  out << (manifest.has_split_column ? "path,label,split\n" : "path,label\n");
  for (const auto& s : manifest.samples) {
    out << s.path << ',' << manifest.classes.at(s.label);
    if (manifest.has_split_column) out << ',' << (s.split ? to_string(*s.split) : "");
    out << '\n';
  }
}

std::vector<Sample> stratified_split(std::span<const Sample> samples, const SplitSpec& spec) {
  const double total = spec.train + spec.val + spec.test;
  if (std::abs(total - 1.0) > 1e-9 || spec.train < 0 || spec.val < 0 || spec.test < 0) {
    throw std::invalid_argument("split fractions must be non-negative and sum to 1");
  }
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i) by_class[samples[i].label].push_back(i);

  std::vector<Sample> out(samples.begin(), samples.end());
  Rng rng(spec.seed);
  for (auto& [label, members] : by_class) {
    const std::size_t n = members.size();
    if (n < 3) {
      throw std::invalid_argument("class " + std::to_string(label) + " has " + std::to_string(n) +
                                  " samples; stratified splitting needs at least 3");
    }
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(n * spec.val));
    const auto n_test = std::max<std::size_t>(1, static_cast<std::size_t>(n * spec.test));
    for (std::size_t j = 0; j < n; ++j) {
      Split s = Split::train;
      if (j < n_val) {
        s = Split::val;
      } else if (j < n_val + n_test) {
        s = Split::test;
      }
      out[members[j]].split = s;
    }
  }
  return out;
}

Crop sample_crop(const Image& img, std::size_t crop_size, Rng& rng, bool flip) {
  if (crop_size == 0 || img.height() < crop_size || img.width() < crop_size) {
    throw std::invalid_argument("cannot take a " + std::to_string(crop_size) + " crop from a " +
                                std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                                " image");
  }
  Crop crop;
  crop.top = std::uniform_int_distribution<std::size_t>(0, img.height() - crop_size)(rng);
  crop.left = std::uniform_int_distribution<std::size_t>(0, img.width() - crop_size)(rng);
  crop.flipped = flip && std::bernoulli_distribution(0.5)(rng);
  crop.tensor = Tensor<float>({img.channels(), crop_size, crop_size});
  float* dst = crop.tensor.data().data();
  for (std::size_t c = 0; c < img.channels(); ++c) {
    for (std::size_t y = 0; y < crop_size; ++y) {
      for (std::size_t x = 0; x < crop_size; ++x) {
        const std::size_t sx = crop.flipped ? crop_size - 1 - x : x;
        *dst++ = img.at(c, crop.top + y, crop.left + sx);
      }
    }
  }
  return crop;
}

std::vector<double> channel_mean(std::span<const Image> images) {
  if (images.empty()) throw std::invalid_argument("channel_mean of an empty image set");
  const std::size_t channels = images.front().channels();
  std::vector<double> sum(channels, 0.0);
  double count = 0.0;
  for (const auto& img : images) {
    if (img.channels() != channels) throw std::invalid_argument("mixed channel counts");
    for (std::size_t c = 0; c < channels; ++c) {
      for (float v : img.plane(c)) sum[c] += v;
    }
    count += static_cast<double>(img.height() * img.width());
  }
  for (auto& s : sum) s /= count;
  return sum;
}

void write_normalization(const fs::path& path, std::span<const double> mean) {
  nlohmann::json j;
  j["mean"] = std::vector<double>(mean.begin(), mean.end());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<double> read_normalization(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return nlohmann::json::parse(in).at("mean").get<std::vector<double>>();
}

fs::path cache_path(const fs::path& cache, std::size_t scale, std::string_view stem) {
  return cache / std::to_string(scale) / (std::string(stem) + ".png");
}

}  // namespace scalestack
