#include "mtltxt/metrics.hpp"

#include "mtltxt/error.hpp"

namespace mtltxt {

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> label_names)
    : labels(std::move(label_names)),
      counts(labels.size(), std::vector<std::int64_t>(labels.size(), 0)) {}

void ConfusionMatrix::add(std::size_t true_class, std::size_t predicted_class,
                          std::int64_t n) {
  if (true_class >= counts.size() || predicted_class >= counts.size()) {
    fail_data("confusion matrix index outside the class range");
  }
  counts[true_class][predicted_class] += n;
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t sum = 0;
  for (const auto& row : counts) {
    for (std::int64_t v : row) sum += v;
  }
  return sum;
}

std::int64_t ConfusionMatrix::diagonal() const {
  std::int64_t sum = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) sum += counts[i][i];
  return sum;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.labels != labels) fail_data("cannot pool confusion matrices over different labels");
  for (std::size_t i = 0; i < counts.size(); ++i) {
    for (std::size_t j = 0; j < counts.size(); ++j) counts[i][j] += other.counts[i][j];
  }
  return *this;
}

MetricsReport compute_metrics(const ConfusionMatrix& cm) {
  const std::size_t n = cm.counts.size();
  if (n == 0 || cm.total() == 0) fail_data("metrics over an empty confusion matrix");
  MetricsReport report;
  report.per_class.resize(n);
  double macro_sum = 0.0;
  double weighted_sum = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::int64_t row = 0, col = 0;
    for (std::size_t j = 0; j < n; ++j) {
      row += cm.counts[c][j];
      col += cm.counts[j][c];
    }
    const double tp = static_cast<double>(cm.counts[c][c]);
    ClassMetrics& m = report.per_class[c];
    m.support = row;
    if (col > 0) {
      m.precision = tp / static_cast<double>(col);
    } else {
      ++report.zero_division_events;
    }
    if (row > 0) {
      m.recall = tp / static_cast<double>(row);
    } else {
      ++report.zero_division_events;
    }
    if (m.precision + m.recall > 0.0) {
      m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    } else {
      ++report.zero_division_events;
    }
    macro_sum += m.f1;
    weighted_sum += static_cast<double>(m.support) * m.f1;
  }
  const double total = static_cast<double>(cm.total());
  report.accuracy = static_cast<double>(cm.diagonal()) / total;
  report.macro_f1 = macro_sum / static_cast<double>(n);
  report.weighted_f1 = weighted_sum / total;
  return report;
}

ConfusionMatrix evaluate(BuiltModel& model, const std::vector<EncodedExample>& split,
                         const std::vector<std::string>& labels) {
  if (labels.size() != model.class_count) {
    fail_data("evaluate: " + std::to_string(labels.size()) + " labels for a model with " +
              std::to_string(model.class_count) + " classes");
  }
  ConfusionMatrix cm(labels);
  for (const EncodedExample& ex : split) {
    model.bind(ex);
    model.graph.forward_to(model.output);
    const std::vector<double>& probs = model.graph.value(model.output).values();
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.size(); ++c) {
      if (probs[c] > probs[best]) best = c;
    }
    cm.add(static_cast<std::size_t>(ex.label), best);
  }
  return cm;
}

}  // namespace mtltxt
