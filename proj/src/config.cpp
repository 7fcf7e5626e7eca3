#include "mtltxt/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mtltxt/error.hpp"

namespace mtltxt {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string part;
  std::istringstream in(s);
  while (std::getline(in, part, sep)) parts.push_back(part);
  return parts;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    fail_config("config key '" + key + "' needs an unsigned integer, got '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    fail_config("config key '" + key + "' needs a number, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  fail_config("config key '" + key + "' needs true or false, got '" + value + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  for (const std::string& part : split(value, ',')) {
    const std::string p = trim(part);
    if (p.empty()) continue;
    out.push_back(static_cast<std::size_t>(parse_u64(key, p)));
  }
  if (out.empty()) fail_config("config key '" + key + "' needs at least one value");
  return out;
}

DatasetRef parse_dataset(const std::string& value) {
  DatasetRef ref;
  const std::vector<std::string> parts = split(value, ';');
  if (parts.empty() || trim(parts[0]).empty()) fail_config("dataset entry needs a path");
  ref.path = trim(parts[0]);
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const std::string part = trim(parts[i]);
    const std::size_t eq = part.find('=');
    if (eq == std::string::npos) {
      fail_config("dataset option '" + part + "' is not key=value");
    }
    const std::string key = trim(part.substr(0, eq));
    const std::string val = trim(part.substr(eq + 1));
    if (key == "role") {
      if (val != "hate" && val != "sentiment") {
        fail_config("dataset role must be hate or sentiment, got '" + val + "'");
      }
      ref.role = val;
    } else if (key == "test") {
      ref.test_path = val;
    } else if (key == "name") {
      ref.name = val;
    } else {
      fail_config("unknown dataset option '" + key + "'");
    }
  }
  if (ref.name.empty()) {
    std::string stem = std::filesystem::path(ref.path).stem().string();
    ref.name = stem.empty() ? ref.path : stem;
  }
  return ref;
}

}  // namespace

std::string resolve_resource(const std::string& path) {
  if (path.empty() || std::filesystem::exists(path)) return path;
  if (std::filesystem::path(path).is_absolute()) return path;
  const char* base = std::getenv("MTLTXT_RESOURCES");
  if (base && *base) {
    const std::filesystem::path candidate = std::filesystem::path(base) / path;
    if (std::filesystem::exists(candidate)) return candidate.string();
  }
  return path;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_config("cannot open config file '" + path + "'");
  RunConfig config;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      fail_config(path + ":" + std::to_string(line_no) + ": expected key=value");
    }
    try {
      config.apply(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    } catch (const Error& e) {
      fail_config(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return config;
}

void RunConfig::apply(const std::string& key, const std::string& value) {
  if (key == "seed") {
    seed = parse_u64(key, value);
  } else if (key == "variant") {
    variant = static_cast<int>(parse_u64(key, value));
  } else if (key == "dataset") {
    datasets.push_back(parse_dataset(value));
  } else if (key == "out_dir") {
    out_dir = value;
  } else if (key == "model") {
    model_path = value;
  } else if (key == "embeddings") {
    embeddings_path = value;
  } else if (key == "subword_table") {
    subword_path = value;
  } else if (key == "lexicon") {
    lexicon_path = value;
  } else if (key == "emoticons") {
    emoticons_path = value;
  } else if (key == "folds") {
    folds = static_cast<std::size_t>(parse_u64(key, value));
  } else if (key == "delimiter") {
    if (value == "tab") {
      delimiter = '\t';
    } else if (value.size() == 1) {
      delimiter = value[0];
    } else {
      fail_config("delimiter must be one character or 'tab'");
    }
  } else if (key == "preprocess") {
    preprocess_text = parse_bool(key, value);
  } else if (key == "label_order") {
    label_order.clear();
    for (const std::string& part : split(value, ',')) label_order.push_back(trim(part));
  } else if (key == "word_dim") {
    word_dim = static_cast<std::size_t>(parse_u64(key, value));
  } else if (key == "subword_dim") {
    subword_dim = static_cast<std::size_t>(parse_u64(key, value));
  } else if (key == "subword_buckets") {
    subword_buckets = static_cast<std::size_t>(parse_u64(key, value));
  } else if (key == "windows") {
    windows = parse_size_list(key, value);
  } else if (key == "word_filters") {
    word_filters = static_cast<std::size_t>(parse_u64(key, value));
  } else if (key == "char_filters") {
    char_filters = static_cast<std::size_t>(parse_u64(key, value));
  } else if (key == "max_tokens") {
    max_tokens = static_cast<std::size_t>(parse_u64(key, value));
  } else if (key == "max_chars") {
    max_chars = static_cast<std::size_t>(parse_u64(key, value));
  } else if (key == "char_kernel1") {
    char_conv.kernel1 = static_cast<std::size_t>(parse_u64(key, value));
  } else if (key == "char_stride1") {
    char_conv.stride1 = static_cast<std::size_t>(parse_u64(key, value));
  } else if (key == "char_pool1") {
    char_conv.pool1 = static_cast<std::size_t>(parse_u64(key, value));
  } else if (key == "char_kernel2") {
    char_conv.kernel2 = static_cast<std::size_t>(parse_u64(key, value));
  } else if (key == "char_stride2") {
    char_conv.stride2 = static_cast<std::size_t>(parse_u64(key, value));
  } else if (key == "char_pool2") {
    char_conv.pool2 = static_cast<std::size_t>(parse_u64(key, value));
  } else if (key == "char_dense") {
    char_conv.dense = static_cast<std::size_t>(parse_u64(key, value));
  } else if (key == "batch_size") {
    train.batch_size = static_cast<std::size_t>(parse_u64(key, value));
  } else if (key == "max_epochs") {
    train.max_epochs = static_cast<std::size_t>(parse_u64(key, value));
  } else if (key == "patience") {
    train.patience = static_cast<std::size_t>(parse_u64(key, value));
  } else if (key == "lr") {
    train.adam.lr = parse_double(key, value);
  } else if (key == "beta1") {
    train.adam.beta1 = parse_double(key, value);
  } else if (key == "beta2") {
    train.adam.beta2 = parse_double(key, value);
  } else if (key == "epsilon") {
    train.adam.epsilon = parse_double(key, value);
  } else if (key == "task_weights") {
    train.task_weights.clear();
    for (const std::string& part : split(value, ',')) {
      train.task_weights.push_back(parse_double(key, trim(part)));
    }
  } else if (key == "search_budget") {
    search_budget = static_cast<std::size_t>(parse_u64(key, value));
  } else if (key == "report_formats") {
    report_formats.clear();
    for (const std::string& part : split(value, ',')) {
      const std::string fmt = trim(part);
      if (fmt != "plain" && fmt != "csv" && fmt != "json") {
        fail_config("unknown report format '" + fmt + "'");
      }
      report_formats.push_back(fmt);
    }
  } else {
    fail_config("unknown config key '" + key + "'");
  }
}

void RunConfig::validate(const std::string& command) const {
  if (variant < 1 || variant > 10) fail_config("variant must be in [1, 10]");
  train.validate();
  if (folds < 2) fail_config("folds must be at least 2");

  const bool needs_data = command == "train" || command == "cross-validate" ||
                          command == "evaluate" || command == "search";
  if (needs_data && datasets.empty()) fail_config(command + " needs at least one dataset");
  for (const DatasetRef& ref : datasets) {
    if (!std::filesystem::exists(ref.path)) {
      fail_config("dataset path '" + ref.path + "' does not exist");
    }
    if (!ref.test_path.empty() && !std::filesystem::exists(ref.test_path)) {
      fail_config("test path '" + ref.test_path + "' does not exist");
    }
  }
  for (const std::string& p : {embeddings_path, subword_path, lexicon_path, emoticons_path}) {
    if (!p.empty() && !std::filesystem::exists(resolve_resource(p))) {
      fail_config("resource path '" + p + "' does not exist");
    }
  }

  if (command == "train" || command == "cross-validate" || command == "search") {
    std::size_t hate = 0, sentiment = 0;
    for (const DatasetRef& ref : datasets) {
      (ref.role == "hate" ? hate : sentiment) += 1;
    }
    switch (variant) {
      case 1: case 2: case 3: case 4: case 5:
        if (datasets.size() != 1) {
          fail_config("variant " + std::to_string(variant) + " runs on exactly one dataset");
        }
        break;
      case 6: case 9:
        if (datasets.size() < 2) {
          fail_config("variant " + std::to_string(variant) + " needs at least two datasets");
        }
        break;
      case 7: case 10:
        if (hate < 1 || sentiment < 1) {
          fail_config("variant " + std::to_string(variant) +
                      " needs a hate dataset and at least one sentiment dataset");
        }
        break;
      case 8:
        if (hate < 2 || sentiment < 1) {
          fail_config("variant 8 needs two shared backbones: at least two hate datasets "
                      "and one sentiment dataset");
        }
        break;
      default:
        break;
    }
  }
  if (command == "evaluate" && model_path.empty()) {
    fail_config("evaluate needs a trained model (model=<path prefix>)");
  }
}

std::map<std::string, std::string> RunConfig::echo() const {
  std::map<std::string, std::string> e;
  auto join_sizes = [](const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ',';
      s += std::to_string(v[i]);
    }
    return s;
  };
  e["seed"] = std::to_string(seed);
  e["variant"] = std::to_string(variant);
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    const DatasetRef& d = datasets[i];
    std::string v = d.path + ";role=" + d.role + ";name=" + d.name;
    if (!d.test_path.empty()) v += ";test=" + d.test_path;
    e["dataset." + std::to_string(i)] = v;
  }
  e["out_dir"] = out_dir;
  if (!model_path.empty()) e["model"] = model_path;
  if (!embeddings_path.empty()) e["embeddings"] = embeddings_path;
  if (!subword_path.empty()) e["subword_table"] = subword_path;
  if (!lexicon_path.empty()) e["lexicon"] = lexicon_path;
  if (!emoticons_path.empty()) e["emoticons"] = emoticons_path;
  e["folds"] = std::to_string(folds);
  e["delimiter"] = std::string(1, delimiter);
  e["preprocess"] = preprocess_text ? "true" : "false";
  e["word_dim"] = std::to_string(word_dim);
  e["subword_dim"] = std::to_string(subword_dim);
  e["subword_buckets"] = std::to_string(subword_buckets);
  e["windows"] = join_sizes(windows);
  e["word_filters"] = std::to_string(word_filters);
  e["char_filters"] = std::to_string(char_filters);
  e["max_tokens"] = std::to_string(max_tokens);
  e["max_chars"] = std::to_string(max_chars);
  e["char_conv"] = join_sizes({char_conv.kernel1, char_conv.stride1, char_conv.pool1,
                               char_conv.kernel2, char_conv.stride2, char_conv.pool2,
                               char_conv.dense});
  e["batch_size"] = std::to_string(train.batch_size);
  e["max_epochs"] = std::to_string(train.max_epochs);
  e["patience"] = std::to_string(train.patience);
  std::ostringstream lr;
  lr << train.adam.lr;
  e["lr"] = lr.str();
  e["search_budget"] = std::to_string(search_budget);
  return e;
}

}  // namespace mtltxt
