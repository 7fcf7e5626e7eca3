#pragma once

#include <string>
#include <vector>

#include "mtltxt/config.hpp"
#include "mtltxt/report.hpp"

namespace mtltxt {

struct ExperimentResult {
  std::vector<Report> reports;
  std::vector<std::string> written_files;
};

// Runs one command ("cross-validate", "train", "evaluate", "search")
// against the config: loads resources and datasets, preprocesses, builds
// and trains the variant's models, and writes reports (and weights for
// "train") under config.out_dir. The output directory is locked for the
// duration of the run; on failure everything written so far is removed.
ExperimentResult run_experiment(const RunConfig& config, const std::string& command);

}  // namespace mtltxt
