#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtltxt/embeddings.hpp"
#include "mtltxt/model_zoo.hpp"

namespace mtltxt {

// Rows are true classes, columns are predictions.
struct ConfusionMatrix {
  std::vector<std::string> labels;
  std::vector<std::vector<std::int64_t>> counts;

  explicit ConfusionMatrix(std::vector<std::string> label_names = {});
  void add(std::size_t true_class, std::size_t predicted_class, std::int64_t n = 1);
  std::int64_t total() const;
  std::int64_t diagonal() const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;
};

struct MetricsReport {
  std::vector<ClassMetrics> per_class;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double weighted_f1 = 0.0;
  std::size_t zero_division_events = 0;
};

// Zero denominators give zero with a counted event; accuracy is the trace
// over the total; macro / weighted f1 are the unweighted and
// support-weighted means of per-class f1.
MetricsReport compute_metrics(const ConfusionMatrix& cm);

// Argmax prediction per example (ties to the lowest class index).
ConfusionMatrix evaluate(BuiltModel& model, const std::vector<EncodedExample>& split,
                         const std::vector<std::string>& labels);

}  // namespace mtltxt
