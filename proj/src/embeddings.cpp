#include "mtltxt/embeddings.hpp"

#include <fstream>
#include <sstream>

#include "mtltxt/error.hpp"
#include "mtltxt/init.hpp"

namespace mtltxt {

int Vocabulary::add(const std::string& token) {
  auto it = ids_.find(token);
  if (it != ids_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size()) + 2;
  ids_.emplace(token, id);
  tokens_.push_back(token);
  return id;
}

int Vocabulary::id_or_oov(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kOov : it->second;
}

const double* EmbeddingTable::row(const std::string& token) const {
  auto it = rows.find(token);
  if (it == rows.end()) return nullptr;
  return matrix.values().data() + it->second * dim();
}

EmbeddingTable load_embedding_table(const std::string& path, std::size_t expected_dim) {
  std::ifstream in(path);
  if (!in) fail_data("cannot open embedding file '" + path + "'");
  return embedding_table_from_stream(in, path, expected_dim);
}

EmbeddingTable embedding_table_from_stream(std::istream& in, const std::string& name,
                                           std::size_t expected_dim) {
  std::string header;
  if (!std::getline(in, header)) fail_data(name + ": missing header line");
  std::istringstream hs(header);
  long long count = 0, dim = 0;
  if (!(hs >> count >> dim) || count < 0 || dim <= 0) {
    fail_data(name + ":1: expected header '<count> <dim>'");
  }
  if (expected_dim != 0 && static_cast<std::size_t>(dim) != expected_dim) {
    fail_data(name + ": dimension " + std::to_string(dim) + " does not match expected " +
              std::to_string(expected_dim));
  }

  std::vector<std::pair<std::string, std::vector<double>>> entries;
  std::unordered_map<std::string, std::size_t> seen;
  std::size_t duplicates = 0;
  std::string line;
  std::size_t line_no = 1;
  long long parsed = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string token;
    if (!(ls >> token)) fail_data(name + ":" + std::to_string(line_no) + ": missing token");
    std::vector<double> values(dim);
    for (long long d = 0; d < dim; ++d) {
      if (!(ls >> values[d])) {
        fail_data(name + ":" + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                  " values for token '" + token + "'");
      }
    }
    double extra;
    if (ls >> extra) {
      fail_data(name + ":" + std::to_string(line_no) + ": more than " + std::to_string(dim) +
                " values for token '" + token + "'");
    }
    ++parsed;
    if (seen.count(token)) {
      ++duplicates;  // first occurrence wins
      continue;
    }
    seen.emplace(token, entries.size());
    entries.emplace_back(token, std::move(values));
  }
  if (parsed != count) {
    fail_data(name + ": header declares " + std::to_string(count) + " words but file has " +
              std::to_string(parsed));
  }

  EmbeddingTable table;
  table.duplicate_events = duplicates;
  table.matrix = Tensor({entries.size() + 1, static_cast<std::size_t>(dim)});
  for (std::size_t i = 0; i < entries.size(); ++i) {
    table.rows.emplace(entries[i].first, i + 1);
    std::copy(entries[i].second.begin(), entries[i].second.end(),
              table.matrix.values().begin() + (i + 1) * dim);
  }
  return table;
}

SubwordModel SubwordModel::random_init(std::size_t dim, std::size_t buckets,
                                       std::uint64_t seed) {
  if (dim == 0 || buckets == 0) fail_config("subword model needs positive dim and buckets");
  SubwordModel model;
  model.hashed_ = true;
  model.dim_ = dim;
  model.vectors_ = Tensor({buckets, dim});
  model.vectors_.set_trainable(true);
  Rng rng(derive_seed(seed, "subword.init"));
  xavier_uniform(model.vectors_, dim, dim, rng);
  return model;
}

SubwordModel SubwordModel::from_table(EmbeddingTable table) {
  SubwordModel model;
  model.hashed_ = false;
  model.dim_ = table.dim();
  model.vectors_ = std::move(table.matrix);
  model.rows_ = std::move(table.rows);
  return model;
}

std::vector<std::string> SubwordModel::extract_ngrams(const std::string& word) const {
  std::vector<std::string> ngrams;
  if (word.empty()) return ngrams;
  const std::string wrapped = "<" + word + ">";
  for (std::size_t n = kNgramMin; n <= kNgramMax; ++n) {
    if (wrapped.size() < n) break;
    for (std::size_t i = 0; i + n <= wrapped.size(); ++i) {
      ngrams.push_back(wrapped.substr(i, n));
    }
  }
  return ngrams;
}

std::size_t SubwordModel::bucket_of(const std::string& ngram) const {
  if (hashed_) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : ngram) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return static_cast<std::size_t>(h % vectors_.extent(0));
  }
  auto it = rows_.find(ngram);
  return it == rows_.end() ? 0 : it->second;  // row 0 is the zero row
}

Tensor char_ngram_vector(const std::string& word, const SubwordModel& model) {
  Tensor out({model.dim()});
  const std::vector<std::string> ngrams = model.extract_ngrams(word);
  if (ngrams.empty()) return out;
  const Tensor& vectors = model.vectors();
  for (const std::string& ngram : ngrams) {
    const std::size_t row = model.bucket_of(ngram);
    for (std::size_t d = 0; d < model.dim(); ++d) {
      out.at(d) += vectors.at(row, d);
    }
  }
  for (double& v : out.values()) v /= static_cast<double>(ngrams.size());
  return out;
}

Tensor compose_word_vector(const std::string& word, const EmbeddingTable& words,
                           const SubwordModel& subwords) {
  Tensor out({words.dim() + subwords.dim()});
  if (const double* w = words.row(word)) {
    std::copy(w, w + words.dim(), out.values().begin());
  }
  const Tensor sub = char_ngram_vector(word, subwords);
  std::copy(sub.values().begin(), sub.values().end(), out.values().begin() + words.dim());
  return out;
}

std::vector<int> encode_sequence(const std::vector<std::string>& tokens,
                                 const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 1) fail_config("encode_sequence: max_len must be positive");
  std::vector<int> ids(max_len, Vocabulary::kPad);
  const std::size_t n = std::min(tokens.size(), max_len);
  for (std::size_t i = 0; i < n; ++i) ids[i] = vocab.id_or_oov(tokens[i]);
  return ids;
}

Tensor char_one_hot_encode(const std::string& text, std::size_t max_len) {
  Tensor out({max_len, 27});
  const std::size_t n = std::min(text.size(), max_len);
  for (std::size_t i = 0; i < n; ++i) {
    char c = text[i];
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c + 32);
    const std::size_t slot = (c >= 'a' && c <= 'z') ? static_cast<std::size_t>(c - 'a') : 26;
    out.at(i, slot) = 1.0;
  }
  return out;
}

Tensor compose_vocab_matrix(const Vocabulary& vocab, const EmbeddingTable& words,
                            const SubwordModel& subwords) {
  const std::size_t dim = words.dim() + subwords.dim();
  Tensor matrix({vocab.size(), dim});
  for (std::size_t i = 0; i < vocab.tokens().size(); ++i) {
    const Tensor row = compose_word_vector(vocab.tokens()[i], words, subwords);
    std::copy(row.values().begin(), row.values().end(),
              matrix.values().begin() + (i + 2) * dim);
  }
  return matrix;
}

Tensor random_vocab_matrix(const Vocabulary& vocab, std::size_t dim, Rng& rng) {
  Tensor matrix({vocab.size(), dim});
  const double bound = std::sqrt(6.0 / static_cast<double>(2 * dim));
  for (std::size_t i = 2; i < vocab.size(); ++i) {
    for (std::size_t d = 0; d < dim; ++d) {
      matrix.at(i, d) = rng.uniform(-bound, bound);
    }
  }
  return matrix;
}

}  // namespace mtltxt
