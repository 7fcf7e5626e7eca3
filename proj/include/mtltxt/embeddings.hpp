#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtltxt/rng.hpp"
#include "mtltxt/tensor.hpp"

namespace mtltxt {

// Token ids for one run. Row 0 is padding, row 1 collects
// out-of-vocabulary tokens; both map to all-zero embedding rows.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kOov = 1;

  Vocabulary() : tokens_{} {}

  int add(const std::string& token);
  int id_or_oov(const std::string& token) const;
  bool contains(const std::string& token) const { return ids_.count(token) > 0; }
  std::size_t size() const { return tokens_.size() + 2; }  // incl. pad and oov
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::unordered_map<std::string, int> ids_;
  std::vector<std::string> tokens_;
};

// Pretrained word-vector table. Row 0 is the all-zero padding row; it is
// never written by training.
struct EmbeddingTable {
  std::unordered_map<std::string, std::size_t> rows;
  Tensor matrix;  // [V x d]
  std::size_t duplicate_events = 0;

  std::size_t dim() const { return matrix.rank() == 2 ? matrix.extent(1) : 0; }
  std::size_t vocab_rows() const { return matrix.rank() == 2 ? matrix.extent(0) : 0; }
  // nullptr when the token is not present
  const double* row(const std::string& token) const;
};

EmbeddingTable load_embedding_table(const std::string& path, std::size_t expected_dim);
EmbeddingTable embedding_table_from_stream(std::istream& in, const std::string& name,
                                           std::size_t expected_dim);

// Character n-gram model: a word is the mean of its n-gram vectors for
// n in [3, 6] over the word wrapped in '<' and '>'. Vectors live either in
// a hashed bucket tensor (trainable, built from scratch) or a loaded table.
class SubwordModel {
 public:
  static constexpr std::size_t kNgramMin = 3;
  static constexpr std::size_t kNgramMax = 6;

  static SubwordModel random_init(std::size_t dim, std::size_t buckets, std::uint64_t seed);
  static SubwordModel from_table(EmbeddingTable table);

  std::size_t dim() const { return dim_; }
  bool hashed() const { return hashed_; }
  Tensor& vectors() { return vectors_; }
  const Tensor& vectors() const { return vectors_; }

  std::vector<std::string> extract_ngrams(const std::string& word) const;
  std::size_t bucket_of(const std::string& ngram) const;

 private:
  SubwordModel() = default;
  bool hashed_ = true;
  std::size_t dim_ = 0;
  Tensor vectors_;  // [buckets x dim] or loaded table matrix
  std::unordered_map<std::string, std::size_t> rows_;
};

// Mean of the word's n-gram vectors; total for every non-empty word.
Tensor char_ngram_vector(const std::string& word, const SubwordModel& model);

// w_e (table row or zeros) concatenated with c_e.
Tensor compose_word_vector(const std::string& word, const EmbeddingTable& words,
                           const SubwordModel& subwords);

// Fixed-length id sequence: truncate, right-pad with the padding id, map
// unknown tokens to the out-of-vocabulary id.
std::vector<int> encode_sequence(const std::vector<std::string>& tokens,
                                 const Vocabulary& vocab, std::size_t max_len);

// 27-wide rows: a-z in dims 0-25, anything else in dim 26, zero rows as
// padding beyond the text.
Tensor char_one_hot_encode(const std::string& text, std::size_t max_len = 256);

// Static composed matrix over the run vocabulary; rows 0 and 1 stay zero.
Tensor compose_vocab_matrix(const Vocabulary& vocab, const EmbeddingTable& words,
                            const SubwordModel& subwords);

// Random static matrix over the run vocabulary (rows 0 and 1 zero).
Tensor random_vocab_matrix(const Vocabulary& vocab, std::size_t dim, Rng& rng);

struct EncodedExample {
  std::vector<int> token_ids;
  std::vector<int> token_ids_b;  // second backbone, when the model has one
  Tensor char_one_hot;
  int label = -1;
  int task = 0;
};

}  // namespace mtltxt
