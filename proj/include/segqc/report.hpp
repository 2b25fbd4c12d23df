#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "segqc/error.hpp"
#include "segqc/metrics.hpp"
#include "segqc/csv.hpp"
#include "segqc/scoring.hpp"
#include "segqc/volume.hpp"

namespace segqc {

inline constexpr double kLowQualityThreshold = 0.8;

struct ClassQuality {
  ClassId class_id = 0;
  std::string name;
  double mean = 0.0;
  std::size_t count = 0;
  std::size_t below = 0;
};

struct QualityReport {
  std::string dataset;
  double threshold = kLowQualityThreshold;
  std::vector<ClassQuality> classes;
  double overall_mean = 0.0;       // over labels
  double fraction_below = 0.0;     // labels with predicted DSC strictly below threshold
  std::size_t count = 0;
  std::size_t below = 0;
};

// Only records carrying a predicted DSC count.
inline QualityReport build_report(const std::string& dataset, std::span<const ScoreRecord> records,
                                  const ClassTable& names = {}, double threshold = kLowQualityThreshold) {
  QualityReport r;
  r.dataset = dataset;
  r.threshold = threshold;
  std::map<ClassId, ClassQuality> per;
  double sum = 0;
  for (const auto& rec : records) {
    if (!rec.predicted_dsc) continue;
    const double d = *rec.predicted_dsc;
    auto& c = per[rec.class_id];
    c.class_id = rec.class_id;
    if (c.name.empty()) c.name = rec.class_name;
    c.mean += d;
    ++c.count;
    sum += d;
    ++r.count;
    if (d < threshold) {
      ++c.below;
      ++r.below;
    }
  }
  if (r.count == 0) throw DataError("no scored labels to report");
  for (auto& [id, c] : per) {
    c.mean /= static_cast<double>(c.count);
    if (names.count(id)) c.name = names.at(id);
    if (c.name.empty()) c.name = placeholder_class_name(id);
    r.classes.push_back(c);
  }
  r.overall_mean = sum / static_cast<double>(r.count);
  r.fraction_below = static_cast<double>(r.below) / static_cast<double>(r.count);
  return r;
}

// True 3D DSC of each candidate class against the ground truth; used as an
// oracle in place of a trained head.
inline std::vector<ScoreRecord> oracle_scores(const LabeledVolume& v) {
  std::vector<ScoreRecord> out;
  for (auto cls : candidate_classes(v)) {
    ScoreRecord r;
    r.volume_id = v.id;
    r.class_id = cls;
    r.class_name = v.classes.count(cls) ? v.classes.at(cls) : placeholder_class_name(cls);
    r.predicted_dsc = r.reference_dsc = reference_dsc(v, cls);
    out.push_back(r);
  }
  return out;
}

namespace detail {
inline std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}
inline std::string fmt_dsc(double x) { return fmt("%.4f", x); }
inline std::string fmt_pct(double x) { return fmt("%.1f", 100.0 * x); }
}  // namespace detail

inline std::string report_csv(const QualityReport& r) {
  std::string s = "dataset,class_id,class,count,mean_dsc,pct_below\n";
  for (const auto& c : r.classes) {
    s += csv_field(r.dataset) + "," + std::to_string(c.class_id) + "," + csv_field(c.name) + "," + std::to_string(c.count) + "," +
         detail::fmt_dsc(c.mean) + "," +
         detail::fmt_pct(static_cast<double>(c.below) / static_cast<double>(c.count)) + "\n";
  }
  s += csv_field(r.dataset) + ",,overall," + std::to_string(r.count) + "," + detail::fmt_dsc(r.overall_mean) + "," +
       detail::fmt_pct(r.fraction_below) + "\n";
  return s;
}

inline std::string report_table(const QualityReport& r) {
  std::vector<std::array<std::string, 4>> rows{{"class", "n", "mean DSC", "DSC<" + detail::fmt("%.2f", r.threshold) + " %"}};
  for (const auto& c : r.classes) {
    rows.push_back({c.name, std::to_string(c.count), detail::fmt_dsc(c.mean),
                    detail::fmt_pct(static_cast<double>(c.below) / static_cast<double>(c.count))});
  }
  rows.push_back({"overall", std::to_string(r.count), detail::fmt_dsc(r.overall_mean), detail::fmt_pct(r.fraction_below)});
  std::array<std::size_t, 4> w{};
  for (const auto& row : rows)
    for (std::size_t k = 0; k < 4; ++k) w[k] = std::max(w[k], row[k].size());
  std::string s = r.dataset + "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      const auto& cell = rows[i][k];
      const std::string pad(w[k] - cell.size(), ' ');
      s += k == 0 ? cell + pad : "  " + pad + cell;
    }
    s += "\n";
    if (i == 0 || i + 2 == rows.size()) {
      std::size_t total = w[0];
      for (std::size_t k = 1; k < 4; ++k) total += 2 + w[k];
      s += std::string(total, '-') + "\n";
    }
  }
  return s;
}

}  // namespace segqc
