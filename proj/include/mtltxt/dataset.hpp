#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mtltxt {

struct Example {
  std::string id;
  std::string text;
  int label = -1;
};

struct Dataset {
  std::string name;
  std::vector<Example> examples;
  std::vector<std::string> label_space;  // first-appearance order unless configured
  std::vector<std::string> warnings;

  std::size_t size() const { return examples.size(); }
  std::size_t class_count() const { return label_space.size(); }
};

// Delimiter-separated file with header "id,text,label"; fields may be
// quoted, quotes escape by doubling, quoted fields may span lines.
Dataset load_dataset(const std::string& path, char delimiter = ',',
                     const std::vector<std::string>& label_order = {});
Dataset dataset_from_stream(std::istream& in, const std::string& name, char delimiter = ',',
                            const std::vector<std::string>& label_order = {});

}  // namespace mtltxt
