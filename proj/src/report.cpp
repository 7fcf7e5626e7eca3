#include "mtltxt/report.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "mtltxt/error.hpp"

namespace mtltxt {

namespace {

using nlohmann::json;

std::string pct(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", fraction * 100.0);
  return buf;
}

json matrix_to_json(const ConfusionMatrix& cm) {
  json j;
  j["labels"] = cm.labels;
  j["counts"] = cm.counts;
  return j;
}

ConfusionMatrix matrix_from_json(const json& j) {
  ConfusionMatrix cm(j.at("labels").get<std::vector<std::string>>());
  const auto counts = j.at("counts").get<std::vector<std::vector<std::int64_t>>>();
  if (counts.size() != cm.labels.size()) fail_data("confusion counts do not match labels");
  for (std::size_t r = 0; r < counts.size(); ++r) {
    if (counts[r].size() != cm.labels.size()) {
      fail_data("confusion counts do not match labels");
    }
    for (std::size_t c = 0; c < counts[r].size(); ++c) cm.counts[r][c] = counts[r][c];
  }
  return cm;
}

json metrics_to_json(const MetricsReport& m) {
  json j;
  j["accuracy"] = m.accuracy;
  j["macro_f1"] = m.macro_f1;
  j["weighted_f1"] = m.weighted_f1;
  j["zero_division_events"] = m.zero_division_events;
  json per_class = json::array();
  for (const ClassMetrics& c : m.per_class) {
    per_class.push_back({{"precision", c.precision},
                         {"recall", c.recall},
                         {"f1", c.f1},
                         {"support", c.support}});
  }
  j["per_class"] = per_class;
  return j;
}

MetricsReport metrics_from_json(const json& j) {
  MetricsReport m;
  m.accuracy = j.at("accuracy").get<double>();
  m.macro_f1 = j.at("macro_f1").get<double>();
  m.weighted_f1 = j.at("weighted_f1").get<double>();
  m.zero_division_events = j.at("zero_division_events").get<std::size_t>();
  for (const json& c : j.at("per_class")) {
    m.per_class.push_back({c.at("precision").get<double>(), c.at("recall").get<double>(),
                           c.at("f1").get<double>(), c.at("support").get<std::int64_t>()});
  }
  return m;
}

json fold_to_json(const FoldRecord& fold) {
  json j;
  j["fold"] = fold.fold;
  j["confusion"] = matrix_to_json(fold.confusion);
  j["metrics"] = metrics_to_json(fold.metrics);
  json history = json::array();
  for (const EpochRecord& r : fold.history.records) {
    history.push_back(
        {{"epoch", r.epoch}, {"split", r.split}, {"loss", r.loss}, {"accuracy", r.accuracy}});
  }
  j["history"] = history;
  return j;
}

FoldRecord fold_from_json(const json& j) {
  FoldRecord fold;
  fold.fold = j.at("fold").get<int>();
  fold.confusion = matrix_from_json(j.at("confusion"));
  fold.metrics = metrics_from_json(j.at("metrics"));
  for (const json& r : j.at("history")) {
    fold.history.records.push_back({r.at("epoch").get<std::size_t>(),
                                    r.at("split").get<std::string>(),
                                    r.at("loss").get<double>(),
                                    r.at("accuracy").get<double>()});
  }
  return fold;
}

void append_metrics_row(std::ostringstream& out, const std::string& name, double macro,
                        double weighted, double accuracy) {
  out << name << "\t" << pct(macro) << "\t" << pct(weighted) << "\t" << pct(accuracy)
      << "\n";
}

void render_matrix(std::ostringstream& out, const ConfusionMatrix& cm) {
  out << "class";
  for (const std::string& label : cm.labels) out << "\t" << label;
  out << "\n";
  for (std::size_t r = 0; r < cm.labels.size(); ++r) {
    out << cm.labels[r];
    for (std::size_t c = 0; c < cm.labels.size(); ++c) out << "\t" << cm.counts[r][c];
    out << "\n";
  }
}

}  // namespace

void Report::finalize() {
  if (folds.empty()) fail_data("report has no fold records");
  pooled = ConfusionMatrix(folds[0].confusion.labels);
  double acc = 0.0, macro = 0.0, weighted = 0.0;
  f1_zero_division_events = 0;
  for (const FoldRecord& fold : folds) {
    pooled += fold.confusion;
    acc += fold.metrics.accuracy;
    macro += fold.metrics.macro_f1;
    weighted += fold.metrics.weighted_f1;
    f1_zero_division_events += fold.metrics.zero_division_events;
  }
  const double n = static_cast<double>(folds.size());
  fold_mean = {acc / n, macro / n, weighted / n};
  pooled_metrics = compute_metrics(pooled);
  f1_zero_division_events += pooled_metrics.zero_division_events;

  const double divergence =
      std::max({std::abs(fold_mean.accuracy - pooled_metrics.accuracy),
                std::abs(fold_mean.macro_f1 - pooled_metrics.macro_f1),
                std::abs(fold_mean.weighted_f1 - pooled_metrics.weighted_f1)});
  if (folds.size() > 1 && divergence > 0.0005) {
    notes.push_back("fold-mean and pooled aggregations differ beyond rounding; "
                    "both are reported");
  }
}

std::string render_plain(const Report& report) {
  std::ostringstream out;
  out << "task: " << report.task << "  variant: " << report.variant
      << "  seed: " << report.seed << "  engine: " << report.version << "\n\n";
  out << "fold\tmacro(%)\tweighted(%)\tacc.(%)\n";
  for (const FoldRecord& fold : report.folds) {
    append_metrics_row(out, std::to_string(fold.fold + 1), fold.metrics.macro_f1,
                       fold.metrics.weighted_f1, fold.metrics.accuracy);
  }
  if (report.folds.size() > 1) {
    append_metrics_row(out, "mean", report.fold_mean.macro_f1, report.fold_mean.weighted_f1,
                       report.fold_mean.accuracy);
    append_metrics_row(out, "pooled", report.pooled_metrics.macro_f1,
                       report.pooled_metrics.weighted_f1, report.pooled_metrics.accuracy);
  }
  out << "\nconfusion matrix (pooled; rows true, columns predicted)\n";
  render_matrix(out, report.pooled);
  if (report.official_test) {
    out << "\nofficial test\n";
    out << "split\tmacro(%)\tweighted(%)\tacc.(%)\n";
    append_metrics_row(out, "test", report.official_test->metrics.macro_f1,
                       report.official_test->metrics.weighted_f1,
                       report.official_test->metrics.accuracy);
    out << "\nconfusion matrix (official test)\n";
    render_matrix(out, report.official_test->confusion);
  }
  for (const std::string& note : report.notes) out << "\nnote: " << note << "\n";
  if (report.numerical_floor_events > 0) {
    out << "\nnumerical floor events: " << report.numerical_floor_events << "\n";
  }
  return out.str();
}

std::string render_csv(const Report& report) {
  std::ostringstream out;
  out << "task,fold,macro,weighted,accuracy\n";
  for (const FoldRecord& fold : report.folds) {
    out << report.task << "," << (fold.fold + 1) << "," << pct(fold.metrics.macro_f1) << ","
        << pct(fold.metrics.weighted_f1) << "," << pct(fold.metrics.accuracy) << "\n";
  }
  if (report.folds.size() > 1) {
    out << report.task << ",mean," << pct(report.fold_mean.macro_f1) << ","
        << pct(report.fold_mean.weighted_f1) << "," << pct(report.fold_mean.accuracy) << "\n";
    out << report.task << ",pooled," << pct(report.pooled_metrics.macro_f1) << ","
        << pct(report.pooled_metrics.weighted_f1) << "," << pct(report.pooled_metrics.accuracy)
        << "\n";
  }
  if (report.official_test) {
    out << report.task << ",test," << pct(report.official_test->metrics.macro_f1) << ","
        << pct(report.official_test->metrics.weighted_f1) << ","
        << pct(report.official_test->metrics.accuracy) << "\n";
  }
  return out.str();
}

std::string render_json(const Report& report) {
  json j;
  j["version"] = report.version;
  j["task"] = report.task;
  j["variant"] = report.variant;
  j["seed"] = report.seed;
  j["config"] = report.config_echo;
  json folds = json::array();
  for (const FoldRecord& fold : report.folds) folds.push_back(fold_to_json(fold));
  j["folds"] = folds;
  j["fold_mean"] = {{"accuracy", report.fold_mean.accuracy},
                    {"macro_f1", report.fold_mean.macro_f1},
                    {"weighted_f1", report.fold_mean.weighted_f1}};
  j["pooled"] = {{"confusion", matrix_to_json(report.pooled)},
                 {"metrics", metrics_to_json(report.pooled_metrics)}};
  if (report.official_test) j["official_test"] = fold_to_json(*report.official_test);
  j["notes"] = report.notes;
  j["events"] = {{"numerical_floors", report.numerical_floor_events},
                 {"f1_zero_divisions", report.f1_zero_division_events}};
  return j.dump(2) + "\n";
}

Report report_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail_data(std::string("report is not valid structured text: ") + e.what());
  }
  try {
    Report report;
    report.version = j.at("version").get<std::string>();
    report.task = j.at("task").get<std::string>();
    report.variant = j.at("variant").get<int>();
    report.seed = j.at("seed").get<std::uint64_t>();
    report.config_echo = j.at("config").get<std::map<std::string, std::string>>();
    for (const json& fold : j.at("folds")) report.folds.push_back(fold_from_json(fold));
    report.fold_mean = {j.at("fold_mean").at("accuracy").get<double>(),
                        j.at("fold_mean").at("macro_f1").get<double>(),
                        j.at("fold_mean").at("weighted_f1").get<double>()};
    report.pooled = matrix_from_json(j.at("pooled").at("confusion"));
    report.pooled_metrics = metrics_from_json(j.at("pooled").at("metrics"));
    if (j.contains("official_test")) {
      report.official_test = fold_from_json(j.at("official_test"));
    }
    report.notes = j.at("notes").get<std::vector<std::string>>();
    report.numerical_floor_events = j.at("events").at("numerical_floors").get<std::uint64_t>();
    report.f1_zero_division_events =
        j.at("events").at("f1_zero_divisions").get<std::uint64_t>();
    return report;
  } catch (const json::exception& e) {
    fail_data(std::string("report document is missing fields: ") + e.what());
  }
}

namespace {

void check_close(double a, double b, const std::string& what) {
  if (std::abs(a - b) > 1e-9) {
    fail_data("report audit: " + what + " stored " + std::to_string(a) +
              " but recomputed " + std::to_string(b));
  }
}

void audit_fold(const FoldRecord& fold, const std::string& name) {
  const MetricsReport fresh = compute_metrics(fold.confusion);
  check_close(fold.metrics.accuracy, fresh.accuracy, name + " accuracy");
  check_close(fold.metrics.macro_f1, fresh.macro_f1, name + " macro f1");
  check_close(fold.metrics.weighted_f1, fresh.weighted_f1, name + " weighted f1");
}

}  // namespace

void audit_report(const Report& report) {
  if (report.folds.empty()) fail_data("report audit: no folds");
  ConfusionMatrix pooled(report.folds[0].confusion.labels);
  double acc = 0.0, macro = 0.0, weighted = 0.0;
  for (const FoldRecord& fold : report.folds) {
    audit_fold(fold, "fold " + std::to_string(fold.fold + 1));
    pooled += fold.confusion;
    acc += fold.metrics.accuracy;
    macro += fold.metrics.macro_f1;
    weighted += fold.metrics.weighted_f1;
  }
  const double n = static_cast<double>(report.folds.size());
  check_close(report.fold_mean.accuracy, acc / n, "fold-mean accuracy");
  check_close(report.fold_mean.macro_f1, macro / n, "fold-mean macro f1");
  check_close(report.fold_mean.weighted_f1, weighted / n, "fold-mean weighted f1");
  if (pooled.counts != report.pooled.counts) {
    fail_data("report audit: pooled confusion does not equal the sum of the folds");
  }
  audit_fold({0, report.pooled, report.pooled_metrics, {}}, "pooled");
  if (report.official_test) audit_fold(*report.official_test, "official test");
}

}  // namespace mtltxt
