#include "mtltxt/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "mtltxt/error.hpp"

namespace mtltxt {

namespace {

// One delimiter-separated record; quoted fields may contain delimiters,
// doubled quotes, and newlines. Returns false at end of input.
bool read_record(std::istream& in, char delimiter, std::size_t* line_no,
                 std::vector<std::string>* fields, const std::string& name) {
  fields->clear();
  int c = in.get();
  if (c == EOF) return false;
  std::string field;
  bool quoted = false;
  bool was_quoted = false;
  const std::size_t start_line = *line_no;
  while (true) {
    if (c == EOF) {
      if (quoted) {
        fail_data(name + ": row starting at line " + std::to_string(start_line) +
                  " has an unterminated quote");
      }
      fields->push_back(field);
      return true;
    }
    const char ch = static_cast<char>(c);
    if (quoted) {
      if (ch == '"') {
        if (in.peek() == '"') {
          field += '"';
          in.get();
        } else {
          quoted = false;
        }
      } else {
        if (ch == '\n') ++*line_no;
        field += ch;
      }
    } else if (ch == '"') {
      if (!field.empty() || was_quoted) {
        fail_data(name + ": row starting at line " + std::to_string(start_line) +
                  " has a stray quote");
      }
      quoted = true;
      was_quoted = true;
    } else if (ch == delimiter) {
      fields->push_back(field);
      field.clear();
      was_quoted = false;
    } else if (ch == '\n') {
      ++*line_no;
      if (!field.empty() && field.back() == '\r') field.pop_back();
      fields->push_back(field);
      return true;
    } else {
      field += ch;
    }
    c = in.get();
  }
}

}  // namespace

Dataset load_dataset(const std::string& path, char delimiter,
                     const std::vector<std::string>& label_order) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_data("cannot open dataset '" + path + "'");
  std::string name = path;
  const std::size_t slash = name.find_last_of('/');
  if (slash != std::string::npos) name = name.substr(slash + 1);
  const std::size_t dot = name.find_last_of('.');
  if (dot != std::string::npos && dot > 0) name = name.substr(0, dot);
  Dataset d = dataset_from_stream(in, name, delimiter, label_order);
  return d;
}

Dataset dataset_from_stream(std::istream& in, const std::string& name, char delimiter,
                            const std::vector<std::string>& label_order) {
  Dataset dataset;
  dataset.name = name;
  std::size_t line_no = 1;
  std::vector<std::string> fields;
  if (!read_record(in, delimiter, &line_no, &fields, name)) {
    fail_data(name + ": empty dataset file");
  }
  if (fields.size() != 3 || fields[0] != "id" || fields[1] != "text" ||
      fields[2] != "label") {
    fail_data(name + ": header must be 'id" + std::string(1, delimiter) + "text" +
              std::string(1, delimiter) + "label'");
  }

  std::unordered_map<std::string, int> label_ids;
  for (const std::string& label : label_order) {
    label_ids.emplace(label, static_cast<int>(dataset.label_space.size()));
    dataset.label_space.push_back(label);
  }
  const bool fixed_labels = !label_order.empty();

  std::unordered_set<std::string> ids;
  std::size_t row = 1;
  while (read_record(in, delimiter, &line_no, &fields, name)) {
    ++row;
    if (fields.size() == 1 && fields[0].empty()) continue;  // trailing newline
    if (fields.size() != 3) {
      fail_data(name + ": row " + std::to_string(row) + " has " +
                std::to_string(fields.size()) + " fields, expected 3");
    }
    Example ex;
    ex.id = fields[0];
    ex.text = fields[1];
    const std::string& label = fields[2];
    if (ex.id.empty()) fail_data(name + ": row " + std::to_string(row) + " has an empty id");
    if (!ids.insert(ex.id).second) {
      fail_data(name + ": row " + std::to_string(row) + " repeats id '" + ex.id + "'");
    }
    auto it = label_ids.find(label);
    if (it == label_ids.end()) {
      if (fixed_labels) {
        fail_data(name + ": row " + std::to_string(row) + " has label '" + label +
                  "' outside the configured label order");
      }
      for (const std::string& existing : dataset.label_space) {
        if (existing != label && existing.size() == label.size()) {
          bool same_ci = true;
          for (std::size_t i = 0; i < label.size(); ++i) {
            char a = existing[i], b = label[i];
            if (a >= 'A' && a <= 'Z') a = static_cast<char>(a + 32);
            if (b >= 'A' && b <= 'Z') b = static_cast<char>(b + 32);
            if (a != b) same_ci = false;
          }
          if (same_ci) {
            dataset.warnings.push_back("labels '" + existing + "' and '" + label +
                                       "' differ only by case and stay distinct");
          }
        }
      }
      it = label_ids.emplace(label, static_cast<int>(dataset.label_space.size())).first;
      dataset.label_space.push_back(label);
    }
    ex.label = it->second;
    dataset.examples.push_back(std::move(ex));
  }
  return dataset;
}

}  // namespace mtltxt
