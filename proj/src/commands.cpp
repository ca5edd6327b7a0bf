#include "scalestack/commands.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <json.hpp>

namespace scalestack {

namespace fs = std::filesystem;
using nlohmann::json;

void RunConfig::validate() const {
  if (scales.empty()) throw CommandError("config", "scale set is empty");
  for (std::size_t i = 1; i < scales.size(); ++i) {
    if (scales[i] != 2 * scales[i - 1]) {
      throw CommandError("config", "scales must be ascending and a factor two apart, got " +
                                       format_scale_set(scales));
    }
  }
  try {
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw CommandError("config", e.what());
  }
}

fs::path RunConfig::resolved_cache() const {
  if (const char* env = std::getenv("SCALESTACK_CACHE"); env && *env) return env;
  if (!cache_dir.empty()) return cache_dir;
  return output_dir / "cache";
}

fs::path RunConfig::scale_dir(std::size_t scale) const {
  return output_dir / ("scale_" + std::to_string(scale));
}

fs::path RunConfig::checkpoint_path(std::size_t scale) const { return scale_dir(scale) / "net.sstk"; }

fs::path RunConfig::report_dir() const { return output_dir / "report"; }

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json train_config_json(const TrainConfig& t) {
  return json{{"learning_rate", t.learning_rate}, {"momentum", t.momentum},
              {"weight_decay", t.weight_decay},   {"lr_decay_factor", t.lr_decay_factor},
              {"plateau_patience", t.plateau_patience}, {"min_delta", t.min_delta},
              {"min_lr", t.min_lr},               {"batch_size", t.batch_size},
              {"grad_clip_norm", t.grad_clip_norm},
              {"max_epochs", t.max_epochs},       {"seed", t.seed},
              {"flip", t.flip}};
}

json run_config_json(const RunConfig& c) {
  return json{{"manifest", c.manifest.string()},
              {"cache_dir", c.resolved_cache().string()},
              {"scales", c.scales},
              {"kind", std::string(to_string(c.kind))},
              {"preset", c.preset},
              {"train", train_config_json(c.train)},
              {"output_dir", c.output_dir.string()},
              {"seed", c.seed},
              {"skip_bad", c.skip_bad},
              {"top_n", c.top_n}};
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw CommandError("io", "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

Manifest load_split_manifest(const RunConfig& config) {
  Manifest m;
  try {
    m = load_manifest(config.manifest);
  } catch (const ManifestError& e) {
    throw CommandError("manifest", e.what());
  }
  const bool complete = m.has_split_column &&
                        std::all_of(m.samples.begin(), m.samples.end(),
                                    [](const Sample& s) { return s.split.has_value(); });
  if (!complete) {
    m.samples = stratified_split(m.samples, SplitSpec{.seed = config.seed});
    m.has_split_column = true;
  }
  return m;
}

Image load_cached(const RunConfig& config, std::size_t scale, const Sample& s) {
  const fs::path p = cache_path(config.resolved_cache(), scale, s.stem);
  if (!fs::exists(p)) {
    throw CommandError("missing-cache", "no cached pyramid level " + p.string() +
                                            "; run `scalestack prepare` first");
  }
  return read_png(p);
}

void require_scale(const RunConfig& config, std::size_t scale) {
  if (std::find(config.scales.begin(), config.scales.end(), scale) == config.scales.end()) {
    throw CommandError("config", "scale " + std::to_string(scale) + " is not in the scale set " +
                                     format_scale_set(config.scales));
  }
}

}  // namespace

std::string file_sha256(const fs::path& path) { return sha256_hex(read_bytes(path)); }

SyntheticCorpus cmd_synth(const SynthOptions& options) {
  auto corpus = generate_synthetic_corpus(options.spec, options.out_dir);
  json classes = json::array();
  for (std::size_t c = 0; c < corpus.designs.size(); ++c) {
    classes.push_back({{"name", corpus.manifest.classes[c]},
                       {"layout", corpus.designs[c].layout},
                       {"texture", corpus.designs[c].texture},
                       {"separability", std::string(to_string(separability(c, corpus.designs)))}});
  }
  const auto& sp = options.spec;
  json params{{"num_classes", sp.num_classes},
              {"per_class", sp.per_class},
              {"base_side", sp.base_side},
              {"seed", sp.seed},
              {"write_masks", sp.write_masks},
              {"noise_sigma", sp.style.noise_sigma},
              {"texture_amplitude", sp.style.texture_amplitude},
              {"layout_amplitude", sp.style.layout_amplitude}};
  write_json(options.out_dir / "provenance.json",
             json{{"generator", "scalestack synthetic corpus"}, {"parameters", params},
                  {"classes", classes}});
  write_json(options.out_dir / "run.json",
             json{{"command", "synth"}, {"out_dir", options.out_dir.string()}, {"parameters", params}});
  return corpus;
}

PrepareSummary cmd_prepare(const RunConfig& config) {
  config.validate();
  const Manifest m = load_split_manifest(config);
  const fs::path cache = config.resolved_cache();
  for (auto s : config.scales) fs::create_directories(cache / std::to_string(s));
  PrepareSummary summary;
  for (const auto& sample : m.samples) {
    Image img;
    try {
      img = read_png(sample.file);
    } catch (const ImageError& e) {
      summary.failed.push_back(sample.path + ": " + e.what());
      continue;
    }
    const auto pyr = build_pyramid(config.kind, img, config.scales.size(), config.scales.back());
    for (std::size_t i = 0; i < pyr.size(); ++i) {
      const auto bytes = encode_png(pyr.levels[i]);
      const fs::path out = cache_path(cache, config.scales[i], sample.stem);
      if (fs::exists(out) && file_sha256(out) == sha256_hex(bytes)) {
        ++summary.skipped;
        continue;
      }
      std::ofstream f(out, std::ios::binary | std::ios::trunc);
      f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
      if (!f) throw CommandError("io", "cannot write " + out.string());
      ++summary.written;
    }
  }
  if (!summary.failed.empty() && !config.skip_bad) {
    std::string list;
    for (const auto& f : summary.failed) list += "\n  " + f;
    throw CommandError("decode", std::to_string(summary.failed.size()) +
                                     " image(s) failed to decode (use --skip-bad to continue):" +
                                     list);
  }
  write_json(cache / "run.json",
             json{{"command", "prepare"},
                  {"config", run_config_json(config)},
                  {"written", summary.written},
                  {"skipped", summary.skipped},
                  {"failed", summary.failed}});
  return summary;
}

TrainSummary cmd_train(const RunConfig& config, std::size_t scale) {
  config.validate();
  require_scale(config, scale);
  const Manifest m = load_split_manifest(config);
  ScaleData data;
  data.num_classes = m.num_classes();
  for (const auto& s : m.samples) {
    if (s.split == Split::train) {
      data.train_images.push_back(load_cached(config, scale, s));
      data.train_labels.push_back(s.label);
    } else if (s.split == Split::val) {
      data.val_images.push_back(load_cached(config, scale, s));
      data.val_labels.push_back(s.label);
    }
  }
  if (data.train_images.empty() || data.val_images.empty()) {
    throw CommandError("dataset", "training needs non-empty train and val splits");
  }

  Rng init_rng(derive_seed(config.seed, 2 * scale));
  auto net = build_network<float>(make_preset(config.preset, m.num_classes()), init_rng);
  net.channel_mean = channel_mean(data.train_images);
  net.class_names = m.classes;
  net.scale = scale;
  TrainConfig tc = config.train;
  tc.seed = derive_seed(config.seed, 2 * scale + 1);

  const fs::path dir = config.scale_dir(scale);
  fs::create_directories(dir);
  TrainSummary summary;
  std::size_t last_good = 0;
  try {
    summary.history = train(net, data, tc, [&](const EpochRecord& e) { last_good = e.epoch; });
  } catch (const DivergenceError& e) {
    throw CommandError("diverged", std::string(e.what()) + "; last good epoch " +
                                       std::to_string(last_good));
  }
  summary.checkpoint = config.checkpoint_path(scale);
  save_checkpoint(net, summary.checkpoint);
  write_history_csv(summary.history, dir / "train_log.csv");
  write_normalization(dir / "normalization.json", net.channel_mean);
  summary.checkpoint_sha256 = file_sha256(summary.checkpoint);
  write_json(dir / "run.json", json{{"command", "train"},
                                    {"scale", scale},
                                    {"config", run_config_json(config)},
                                    {"train_seed", tc.seed},
                                    {"epochs_run", summary.history.epochs.size()},
                                    {"checkpoint_sha256", summary.checkpoint_sha256}});
  return summary;
}

EvalSummary cmd_eval(const RunConfig& config) {
  config.validate();
  const Manifest m = load_split_manifest(config);
  std::vector<Network<float>> nets;
  for (auto s : config.scales) {
    const fs::path ck = config.checkpoint_path(s);
    if (!fs::exists(ck)) {
      throw CommandError("missing-checkpoint", "no checkpoint for scale " + std::to_string(s) +
                                                   " at " + ck.string() + "; run `scalestack train --scale " +
                                                   std::to_string(s) + "` first");
    }
    nets.push_back(load_checkpoint<float>(ck));
    if (nets.back().config.num_classes != m.num_classes()) {
      throw CommandError("config", "checkpoint " + ck.string() + " has " +
                                       std::to_string(nets.back().config.num_classes) +
                                       " classes, manifest has " + std::to_string(m.num_classes()));
    }
  }
  EvalSummary out;
  out.class_names = m.classes;
  for (const auto& s : m.samples) {
    if (s.split != Split::test) continue;
    PredictionRecord rec;
    rec.image_id = s.stem;
    rec.label = s.label;
    for (std::size_t i = 0; i < config.scales.size(); ++i) {
      rec.posteriors[config.scales[i]] = predict_full_image(nets[i], load_cached(config, config.scales[i], s));
    }
    out.records.push_back(std::move(rec));
  }
  if (out.records.empty()) throw CommandError("dataset", "test split is empty");

  out.report_dir = config.report_dir();
  fs::create_directories(out.report_dir);
  const auto& scales = config.scales;
  out.subsets = evaluate_all_subsets(out.records, scales);
  write_subset_table(out.subsets, scales, out.report_dir / "subsets.csv", out.report_dir / "subsets.txt");
  {
    std::ofstream f(out.report_dir / "summary.txt", std::ios::trunc);
    f << summary_table(out.records, scales);
  }
  if (m.num_classes() >= 2) {
    out.correlations = scale_correlations(out.records, scales);
    write_correlations(out.correlations, out.report_dir / "correlations.csv",
                       out.report_dir / "correlations.txt");
  }
  const std::size_t top_n = std::min(config.top_n, std::max<std::size_t>(1, m.num_classes() / 2));
  out.ranking = scale_variation_ranking(out.records, scales, top_n);
  write_variation(out.ranking, scales, m.classes, out.report_dir / "variation.csv",
                  out.report_dir / "variation.txt");
  export_prediction_vectors(out.records, scales, out.report_dir / "predictions.csv");
  for (auto s : scales) {
    const std::size_t one[] = {s};
    export_prediction_vectors(out.records, one,
                              out.report_dir / ("predictions_" + std::to_string(s) + ".csv"));
  }
  json ckpts = json::object();
  for (auto s : scales) ckpts[std::to_string(s)] = file_sha256(config.checkpoint_path(s));
  write_json(out.report_dir / "run.json", json{{"command", "eval"},
                                               {"config", run_config_json(config)},
                                               {"test_images", out.records.size()},
                                               {"checkpoints_sha256", ckpts}});
  return out;
}

SaliencyMap cmd_visualize(const VisualizeOptions& options) {
  if (!fs::exists(options.checkpoint)) {
    throw CommandError("missing-checkpoint", "no checkpoint at " + options.checkpoint.string());
  }
  const auto net = load_checkpoint<float>(options.checkpoint);
  Image img = read_png(options.image);
  if (net.scale > 0 && img.shortest_side() != net.scale) img = resize_shortest_side(img, net.scale);

  std::size_t target = 0;
  const auto& names = net.class_names;
  if (auto it = std::find(names.begin(), names.end(), options.target); it != names.end()) {
    target = static_cast<std::size_t>(it - names.begin());
  } else {
    char* end = nullptr;
    const unsigned long v = std::strtoul(options.target.c_str(), &end, 10);
    if (options.target.empty() || *end != '\0' || v >= net.config.num_classes) {
      throw CommandError("class", "unknown class '" + options.target + "'");
    }
    target = v;
  }
  auto map = guided_backprop(net, img, target);
  if (options.out.has_parent_path()) fs::create_directories(options.out.parent_path());
  render_saliency(map, options.out);
  return map;
}

ImagePyramid cmd_pyramid(const PyramidOptions& options) {
  const Image img = read_png(options.input);
  auto pyr = build_pyramid(options.kind, img, options.levels, options.base);
  fs::create_directories(options.out_dir);
  for (std::size_t i = 0; i < pyr.size(); ++i) {
    write_png(pyr.levels[i], options.out_dir / ("level_" + std::to_string(i) + "_" +
                                                std::to_string(pyr.scale_of(i)) + ".png"));
  }
  write_json(options.out_dir / "run.json",
             json{{"command", "pyramid"},
                  {"input", options.input.string()},
                  {"levels", options.levels},
                  {"base", options.base},
                  {"kind", std::string(to_string(options.kind))}});
  return pyr;
}

}  // namespace scalestack
