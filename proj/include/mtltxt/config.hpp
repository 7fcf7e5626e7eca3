#pragma once

#include <map>
#include <string>
#include <vector>

#include "mtltxt/model_zoo.hpp"
#include "mtltxt/train.hpp"

namespace mtltxt {

struct DatasetRef {
  std::string path;
  std::string role = "hate";  // hate | sentiment
  std::string test_path;
  std::string name;  // defaults to the file stem
};

// Everything a run needs; parsed from a key=value file with '#' comments,
// overridable by CLI flags. All randomness in a run derives from `seed`.
struct RunConfig {
  std::uint64_t seed = 1;
  int variant = 2;
  std::vector<DatasetRef> datasets;
  std::string out_dir = "runs/out";
  std::string model_path;  // evaluate / report input

  std::string embeddings_path;
  std::string subword_path;
  std::string lexicon_path;
  std::string emoticons_path;

  std::size_t folds = 5;
  char delimiter = ',';
  bool preprocess_text = true;
  std::vector<std::string> label_order;

  std::size_t word_dim = 300;
  std::size_t subword_dim = 300;
  std::size_t subword_buckets = 4096;
  std::vector<std::size_t> windows = {3, 4, 5};
  std::size_t word_filters = 100;
  std::size_t char_filters = 256;
  std::size_t max_tokens = 0;  // 0 derives the 95th-percentile length, capped at 100
  std::size_t max_chars = 256;
  CharConvSpec char_conv;

  TrainConfig train;
  std::size_t search_budget = 10;
  std::vector<std::string> report_formats = {"plain", "csv", "json"};

  static RunConfig from_file(const std::string& path);
  void apply(const std::string& key, const std::string& value);
  void validate(const std::string& command) const;
  // canonical key=value view embedded in reports
  std::map<std::string, std::string> echo() const;
};

// Resolves a resource path against MTLTXT_RESOURCES when the plain path
// does not exist.
std::string resolve_resource(const std::string& path);

}  // namespace mtltxt
