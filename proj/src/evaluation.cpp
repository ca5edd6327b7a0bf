#include "scalestack/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace scalestack {

namespace fs = std::filesystem;

std::vector<double> ensemble_posterior(const PredictionRecord& record,
                                       std::span<const std::size_t> scales) {
  if (scales.empty()) throw std::invalid_argument("ensemble over an empty scale subset");
  std::vector<double> sum;
  for (auto s : scales) {
    const auto it = record.posteriors.find(s);
    if (it == record.posteriors.end()) {
      throw std::out_of_range("record " + record.image_id + " has no posterior at scale " +
                              std::to_string(s));
    }
    if (sum.empty()) sum.assign(it->second.size(), 0.0);
    if (it->second.size() != sum.size()) {
      throw std::invalid_argument("record " + record.image_id + " mixes class counts across scales");
    }
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += it->second[k];
  }
  for (auto& v : sum) v /= static_cast<double>(scales.size());
  return sum;
}

std::size_t classify(std::span<const double> posterior) {
  if (posterior.empty()) throw std::invalid_argument("classify on an empty posterior");
  return static_cast<std::size_t>(std::max_element(posterior.begin(), posterior.end()) -
                                  posterior.begin());
}

double f_score(double precision, double recall) {
  const double denom = precision + recall;
  return denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
}

MetricsReport metrics_from_confusion(std::vector<std::vector<std::size_t>> confusion) {
  const std::size_t k = confusion.size();
  if (k == 0) throw std::invalid_argument("empty confusion matrix");
  MetricsReport r;
  r.class_accuracy.assign(k, 0.0);
  r.recall.assign(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t row = std::accumulate(confusion[c].begin(), confusion[c].end(), std::size_t{0});
    if (row == 0) {
      throw std::invalid_argument("class " + std::to_string(c) + " has no evaluation samples");
    }
    std::size_t col = 0;
    for (std::size_t t = 0; t < k; ++t) col += confusion[t][c];
    const auto hit = static_cast<double>(confusion[c][c]);
    r.recall[c] = 100.0 * hit / static_cast<double>(row);
    r.class_accuracy[c] = col > 0 ? 100.0 * hit / static_cast<double>(col) : 0.0;
  }
  r.mca = std::accumulate(r.class_accuracy.begin(), r.class_accuracy.end(), 0.0) / k;
  r.mean_recall = std::accumulate(r.recall.begin(), r.recall.end(), 0.0) / k;
  r.f_score = scalestack::f_score(r.mca, r.mean_recall);
  r.confusion = std::move(confusion);
  return r;
}

MetricsReport compute_metrics(std::span<const PredictionRecord> records,
                              std::span<const std::size_t> scales) {
  if (records.empty()) throw std::invalid_argument("compute_metrics on an empty record set");
  std::vector<std::vector<std::size_t>> confusion;
  for (const auto& rec : records) {
    const auto p = ensemble_posterior(rec, scales);
    if (confusion.empty()) confusion.assign(p.size(), std::vector<std::size_t>(p.size(), 0));
    if (p.size() != confusion.size() || rec.label >= p.size()) {
      throw std::invalid_argument("record " + rec.image_id + " inconsistent with class count");
    }
    ++confusion[rec.label][classify(p)];
  }
  auto report = metrics_from_confusion(std::move(confusion));
  report.scales.assign(scales.begin(), scales.end());
  return report;
}

std::vector<SubsetRow> evaluate_all_subsets(std::span<const PredictionRecord> records,
                                            std::span<const std::size_t> scales) {
  if (scales.empty()) throw std::invalid_argument("evaluate_all_subsets needs at least one scale");
  if (scales.size() > 16) throw std::invalid_argument("too many scales for subset enumeration");
  std::vector<std::size_t> sorted(scales.begin(), scales.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<SubsetRow> rows;
  const std::size_t n = sorted.size();
  for (std::size_t size = 1; size <= n; ++size) {
    // Lexicographic enumeration of index combinations of this size.
    std::vector<std::size_t> idx(size);
    std::iota(idx.begin(), idx.end(), 0);
    const std::size_t block_start = rows.size();
    while (true) {
      SubsetRow row;
      for (auto i : idx) row.scales.push_back(sorted[i]);
      row.report = compute_metrics(records, row.scales);
      rows.push_back(std::move(row));
      std::size_t pos = size;
      while (pos > 0 && idx[pos - 1] == n - size + pos - 1) --pos;
      if (pos == 0) break;
      ++idx[pos - 1];
      for (std::size_t j = pos; j < size; ++j) idx[j] = idx[j - 1] + 1;
    }
    auto best = std::max_element(rows.begin() + static_cast<std::ptrdiff_t>(block_start), rows.end(),
                                 [](const SubsetRow& a, const SubsetRow& b) {
                                   return a.report.mca < b.report.mca;
                                 });
    best->best_in_block = true;
  }
  return rows;
}

std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) return std::nullopt;
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

namespace {

std::vector<std::vector<double>> per_scale_accuracy(std::span<const PredictionRecord> records,
                                                    std::span<const std::size_t> scales) {
  std::vector<std::vector<double>> ca;
  for (auto s : scales) {
    const std::size_t one[] = {s};
    ca.push_back(compute_metrics(records, one).class_accuracy);
  }
  return ca;
}

std::optional<double> mean_of(const std::vector<std::optional<double>>& xs) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& x : xs) {
    if (x) {
      sum += *x;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

}  // namespace

std::optional<double> CorrelationMatrix::mean_adjacent() const {
  std::vector<std::optional<double>> xs;
  for (std::size_t i = 0; i + 1 < values.size(); ++i) xs.push_back(values[i][i + 1]);
  return mean_of(xs);
}

std::optional<double> CorrelationMatrix::mean_off_diagonal() const {
  std::vector<std::optional<double>> xs;
  for (std::size_t i = 0; i < values.size(); ++i) {
    for (std::size_t j = i + 1; j < values.size(); ++j) xs.push_back(values[i][j]);
  }
  return mean_of(xs);
}

CorrelationMatrix scale_correlations(std::span<const PredictionRecord> records,
                                     std::span<const std::size_t> scales) {
  CorrelationMatrix m;
  m.scales.assign(scales.begin(), scales.end());
  const auto ca = per_scale_accuracy(records, scales);
  if (!ca.empty() && ca.front().size() < 2) {
    throw std::invalid_argument("scale correlations need at least two classes");
  }
  const std::size_t n = scales.size();
  m.values.assign(n, std::vector<std::optional<double>>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const auto r = i == j ? (pearson(ca[i], ca[j]) ? std::optional<double>(1.0) : std::nullopt)
                            : pearson(ca[i], ca[j]);
      m.values[i][j] = r;
      m.values[j][i] = r;
    }
  }
  return m;
}

VariationRanking scale_variation_ranking(std::span<const PredictionRecord> records,
                                         std::span<const std::size_t> scales, std::size_t top_n) {
  const auto ca = per_scale_accuracy(records, scales);
  std::vector<VariationEntry> entries;
  const std::size_t k = ca.empty() ? 0 : ca.front().size();
  for (std::size_t c = 0; c < k; ++c) {
    VariationEntry e;
    e.label = c;
    for (const auto& row : ca) e.class_accuracy.push_back(row[c]);
    const double mean = std::accumulate(e.class_accuracy.begin(), e.class_accuracy.end(), 0.0) /
                        static_cast<double>(e.class_accuracy.size());
    double var = 0.0;
    for (double v : e.class_accuracy) var += (v - mean) * (v - mean);
    e.stddev = std::sqrt(var / static_cast<double>(e.class_accuracy.size()));
    entries.push_back(std::move(e));
  }
  const std::size_t n = std::min(top_n, entries.size());
  VariationRanking r;
  auto asc = entries;
  std::stable_sort(asc.begin(), asc.end(),
                   [](const VariationEntry& a, const VariationEntry& b) { return a.stddev < b.stddev; });
  r.least.assign(asc.begin(), asc.begin() + static_cast<std::ptrdiff_t>(n));
  auto desc = entries;
  std::stable_sort(desc.begin(), desc.end(),
                   [](const VariationEntry& a, const VariationEntry& b) { return a.stddev > b.stddev; });
  r.most.assign(desc.begin(), desc.begin() + static_cast<std::ptrdiff_t>(n));
  return r;
}

void export_prediction_vectors(std::span<const PredictionRecord> records,
                               std::span<const std::size_t> scales, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  std::size_t k = 0;
  if (!records.empty()) k = ensemble_posterior(records.front(), scales).size();
  out << "image_id,label";
  for (std::size_t c = 0; c < k; ++c) out << ",p" << c;
  out << '\n';
  char buf[64];
  for (const auto& rec : records) {
    out << rec.image_id << ',' << rec.label;
    for (double v : ensemble_posterior(rec, scales)) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<PredictionRecord> import_prediction_vectors(const fs::path& path,
                                                        std::size_t scale_key) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<PredictionRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    PredictionRecord rec;
    std::getline(ss, rec.image_id, ',');
    std::getline(ss, field, ',');
    rec.label = std::stoul(field);
    std::vector<double> p;
    while (std::getline(ss, field, ',')) p.push_back(std::strtod(field.c_str(), nullptr));
    rec.posteriors[scale_key] = std::move(p);
    out.push_back(std::move(rec));
  }
  return out;
}

std::string format_scale_set(std::span<const std::size_t> scales) {
  std::string s;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (i) s += '+';
    s += std::to_string(scales[i]);
  }
  return s;
}

namespace {

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

}  // namespace

void write_subset_table(const std::vector<SubsetRow>& rows, std::span<const std::size_t> scales,
                        const fs::path& csv, const fs::path& text) {
  std::vector<std::size_t> sorted(scales.begin(), scales.end());
  std::sort(sorted.begin(), sorted.end());
  auto c = open_out(csv);
  for (auto s : sorted) c << s << ',';
  c << "mca,mean_recall,f_score,best_in_block\n";
  auto t = open_out(text);
  char buf[64];
  for (auto s : sorted) {
    std::snprintf(buf, sizeof buf, "%6zu", s);
    t << buf;
  }
  t << "      MCA  Mean recall  F-Score\n";
  std::size_t block = 0;
  for (const auto& row : rows) {
    if (row.scales.size() != block) {
      t << std::string(sorted.size() * 6 + 34, '-') << '\n';
      block = row.scales.size();
    }
    for (auto s : sorted) {
      const bool in = std::find(row.scales.begin(), row.scales.end(), s) != row.scales.end();
      c << (in ? "+" : "") << ',';
      t << (in ? "     +" : "      ");
    }
    c << fixed2(row.report.mca) << ',' << fixed2(row.report.mean_recall) << ','
      << fixed2(row.report.f_score) << ',' << (row.best_in_block ? 1 : 0) << '\n';
    std::snprintf(buf, sizeof buf, "  %7s  %11s  %7s", fixed2(row.report.mca).c_str(),
                  fixed2(row.report.mean_recall).c_str(), fixed2(row.report.f_score).c_str());
    t << buf << (row.best_in_block ? "  *" : "") << '\n';
  }
}

std::string summary_table(std::span<const PredictionRecord> records,
                          std::span<const std::size_t> scales) {
  std::ostringstream os;
  char buf[96];
  std::snprintf(buf, sizeof buf, "%-10s %8s %12s %8s\n", "Scale", "MCA", "Mean recall", "F-Score");
  os << buf;
  auto line = [&](const std::string& name, const MetricsReport& r) {
    std::snprintf(buf, sizeof buf, "%-10s %8.2f %12.2f %8.2f\n", name.c_str(), r.mca,
                  r.mean_recall, r.f_score);
    os << buf;
  };
  for (auto s : scales) {
    const std::size_t one[] = {s};
    line(std::to_string(s), compute_metrics(records, one));
  }
  if (scales.size() > 1) line("Ensemble", compute_metrics(records, scales));
  return os.str();
}

void write_correlations(const CorrelationMatrix& m, const fs::path& csv, const fs::path& text) {
  auto c = open_out(csv);
  auto t = open_out(text);
  c << "scale";
  t << "      ";
  char buf[32];
  for (auto s : m.scales) {
    c << ',' << s;
    std::snprintf(buf, sizeof buf, "%7zu", s);
    t << buf;
  }
  c << '\n';
  t << '\n';
  for (std::size_t i = 0; i < m.scales.size(); ++i) {
    c << m.scales[i];
    std::snprintf(buf, sizeof buf, "%-6zu", m.scales[i]);
    t << buf;
    for (std::size_t j = 0; j < m.scales.size(); ++j) {
      const auto& v = m.values[i][j];
      c << ',' << (v ? fixed2(*v) : "");
      std::snprintf(buf, sizeof buf, "%7s", v ? fixed2(*v).c_str() : "n/a");
      t << buf;
    }
    c << '\n';
    t << '\n';
  }
}

void write_variation(const VariationRanking& r, std::span<const std::size_t> scales,
                     std::span<const std::string> class_names, const fs::path& csv,
                     const fs::path& text) {
  auto name = [&](std::size_t label) {
    return label < class_names.size() ? class_names[label] : std::to_string(label);
  };
  auto c = open_out(csv);
  c << "group,class";
  for (auto s : scales) c << ',' << s;
  c << ",stddev\n";
  auto t = open_out(text);
  char buf[64];
  auto block = [&](const char* title, const char* group, const std::vector<VariationEntry>& es) {
    t << title << '\n' << std::string(24 + 8 * scales.size(), '-') << '\n';
    std::snprintf(buf, sizeof buf, "%-16s", "Class");
    t << buf;
    for (auto s : scales) {
      std::snprintf(buf, sizeof buf, "%8zu", s);
      t << buf;
    }
    t << "     Std\n";
    for (const auto& e : es) {
      c << group << ',' << name(e.label);
      std::snprintf(buf, sizeof buf, "%-16s", name(e.label).c_str());
      t << buf;
      for (double v : e.class_accuracy) {
        c << ',' << fixed2(v);
        std::snprintf(buf, sizeof buf, "%8.2f", v);
        t << buf;
      }
      c << ',' << fixed2(e.stddev) << '\n';
      std::snprintf(buf, sizeof buf, "%8.2f", e.stddev);
      t << buf << '\n';
    }
    t << '\n';
  };
  block("Least variation between scales", "least", r.least);
  block("Most variation between scales", "most", r.most);
}

}  // namespace scalestack
