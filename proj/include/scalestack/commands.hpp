#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scalestack/evaluation.hpp"
#include "scalestack/network.hpp"
#include "scalestack/pyramid.hpp"
#include "scalestack/saliency.hpp"
#include "scalestack/synthetic.hpp"

// The pipeline behind each CLI subcommand. Every command writes a run.json
// with its resolved configuration next to the artifacts it produces.

namespace scalestack {

// Error raised by commands; `code` is the machine-parsable category printed by the CLI.
class CommandError : public std::runtime_error {
 public:
  CommandError(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

struct RunConfig {
  std::filesystem::path manifest;
  std::filesystem::path cache_dir;
  std::vector<std::size_t> scales{32, 64, 128, 256};
  PyramidKind kind = PyramidKind::gaussian;
  std::string preset = "desk";
  TrainConfig train;
  std::filesystem::path output_dir = "run";
  std::uint64_t seed = 1;
  bool skip_bad = false;
  std::size_t top_n = 5;

  // Scales ascending and exactly a factor two apart.
  void validate() const;
  // Cache directory after applying the SCALESTACK_CACHE override.
  std::filesystem::path resolved_cache() const;
  std::filesystem::path scale_dir(std::size_t scale) const;
  std::filesystem::path checkpoint_path(std::size_t scale) const;
  std::filesystem::path report_dir() const;
};

std::string sha256_hex(const std::vector<std::uint8_t>& bytes);
std::string file_sha256(const std::filesystem::path& path);

struct SynthOptions {
  std::filesystem::path out_dir = "corpus";
  SyntheticSpec spec;
};

SyntheticCorpus cmd_synth(const SynthOptions& options);

struct PrepareSummary {
  std::size_t written = 0;
  std::size_t skipped = 0;
  std::vector<std::string> failed;
};

PrepareSummary cmd_prepare(const RunConfig& config);

struct TrainSummary {
  TrainHistory history;
  std::filesystem::path checkpoint;
  std::string checkpoint_sha256;
};

TrainSummary cmd_train(const RunConfig& config, std::size_t scale);

struct EvalSummary {
  std::vector<PredictionRecord> records;
  std::vector<SubsetRow> subsets;
  CorrelationMatrix correlations;
  VariationRanking ranking;
  std::vector<std::string> class_names;
  std::filesystem::path report_dir;
};

EvalSummary cmd_eval(const RunConfig& config);

struct VisualizeOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path image;
  std::string target;  // class name or index
  std::filesystem::path out;
};

// Writes the rendered map; returns it for callers that want the raw values.
SaliencyMap cmd_visualize(const VisualizeOptions& options);

struct PyramidOptions {
  std::filesystem::path input;
  std::size_t levels = 4;
  std::size_t base = 256;
  PyramidKind kind = PyramidKind::gaussian;
  std::filesystem::path out_dir = "pyramid";
};

ImagePyramid cmd_pyramid(const PyramidOptions& options);

}  // namespace scalestack
