#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

// Scores are reported in percent (0-100), matching the usual table layout.

namespace scalestack {

// Posterior vectors for one image, keyed by scale (shortest side in pixels).
struct PredictionRecord {
  std::string image_id;
  std::size_t label = 0;
  std::map<std::size_t, std::vector<double>> posteriors;
};

// Unweighted mean of the posteriors at the selected scales.
std::vector<double> ensemble_posterior(const PredictionRecord& record,
                                       std::span<const std::size_t> scales);

// argmax, ties to the lowest index.
std::size_t classify(std::span<const double> posterior);

double f_score(double precision, double recall);

struct MetricsReport {
  std::vector<std::size_t> scales;
  // Class accuracy CA[k] is the precision of class k (0 if never predicted).
  std::vector<double> class_accuracy;
  std::vector<double> recall;
  double mca = 0.0;
  double mean_recall = 0.0;
  double f_score = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]

  std::size_t num_classes() const { return class_accuracy.size(); }
};

// Precision/recall/F from confusion counts; every class must have a true sample.
MetricsReport metrics_from_confusion(std::vector<std::vector<std::size_t>> confusion);

MetricsReport compute_metrics(std::span<const PredictionRecord> records,
                              std::span<const std::size_t> scales);

struct SubsetRow {
  std::vector<std::size_t> scales;
  MetricsReport report;
  bool best_in_block = false;  // highest MCA among subsets of the same size
};

// All 2^S - 1 non-empty subsets, ordered by size then lexicographically.
std::vector<SubsetRow> evaluate_all_subsets(std::span<const PredictionRecord> records,
                                            std::span<const std::size_t> scales);

std::optional<double> pearson(std::span<const double> a, std::span<const double> b);

struct CorrelationMatrix {
  std::vector<std::size_t> scales;
  std::vector<std::vector<std::optional<double>>> values;  // missing if undefined

  // Mean of defined entries with |i - j| == 1.
  std::optional<double> mean_adjacent() const;
  // Mean of all defined off-diagonal entries (upper triangle).
  std::optional<double> mean_off_diagonal() const;
};

CorrelationMatrix scale_correlations(std::span<const PredictionRecord> records,
                                     std::span<const std::size_t> scales);

struct VariationEntry {
  std::size_t label = 0;
  std::vector<double> class_accuracy;  // one per scale
  double stddev = 0.0;                 // population standard deviation
};

struct VariationRanking {
  std::vector<VariationEntry> least;  // ascending stddev
  std::vector<VariationEntry> most;   // descending stddev
};

VariationRanking scale_variation_ranking(std::span<const PredictionRecord> records,
                                         std::span<const std::size_t> scales, std::size_t top_n);

// CSV: image_id,label,p0..p{K-1} with the ensemble posterior over `scales`.
void export_prediction_vectors(std::span<const PredictionRecord> records,
                               std::span<const std::size_t> scales,
                               const std::filesystem::path& path);

// Reads an exported CSV back; each posterior is stored under `scale_key`.
std::vector<PredictionRecord> import_prediction_vectors(const std::filesystem::path& path,
                                                        std::size_t scale_key = 0);

// Report writers (CSV plus fixed-width text tables).
std::string format_scale_set(std::span<const std::size_t> scales);
void write_subset_table(const std::vector<SubsetRow>& rows, std::span<const std::size_t> scales,
                        const std::filesystem::path& csv, const std::filesystem::path& text);
// Per-scale rows followed by the full ensemble.
std::string summary_table(std::span<const PredictionRecord> records,
                          std::span<const std::size_t> scales);
void write_correlations(const CorrelationMatrix& m, const std::filesystem::path& csv,
                        const std::filesystem::path& text);
void write_variation(const VariationRanking& r, std::span<const std::size_t> scales,
                     std::span<const std::string> class_names, const std::filesystem::path& csv,
                     const std::filesystem::path& text);

}  // namespace scalestack
