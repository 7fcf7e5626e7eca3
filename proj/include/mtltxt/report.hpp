#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mtltxt/metrics.hpp"
#include "mtltxt/train.hpp"

namespace mtltxt {

inline constexpr const char* kEngineVersion = "0.1.0";

struct FoldRecord {
  int fold = 0;  // -1 marks the official test split
  ConfusionMatrix confusion;
  MetricsReport metrics;
  History history;
};

struct HeadlineMetrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double weighted_f1 = 0.0;
};

// Per-task result document. Every number in the rendered forms is
// re-derivable from the stored confusion matrices.
struct Report {
  std::string version = kEngineVersion;
  std::string task;
  int variant = 0;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> config_echo;
  std::vector<FoldRecord> folds;
  HeadlineMetrics fold_mean;
  ConfusionMatrix pooled;
  MetricsReport pooled_metrics;
  std::optional<FoldRecord> official_test;
  std::vector<std::string> notes;
  std::uint64_t numerical_floor_events = 0;
  std::uint64_t f1_zero_division_events = 0;

  // fills fold_mean, pooled, pooled_metrics, and the aggregation note
  void finalize();
};

std::string render_plain(const Report& report);
std::string render_csv(const Report& report);
std::string render_json(const Report& report);  // lossless, machine-parseable
Report report_from_json(const std::string& text);

// Recomputes every stored metric from the confusion matrices; throws on
// any mismatch.
void audit_report(const Report& report);

}  // namespace mtltxt
