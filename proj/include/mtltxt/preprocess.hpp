#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

namespace mtltxt {

// Unigram language model backing the hashtag segmenter. Lookups are
// case-insensitive; words are stored lowercase.
class SegmenterLexicon {
 public:
  explicit SegmenterLexicon(std::size_t max_word_length = 24)
      : max_word_length_(max_word_length) {}

  static SegmenterLexicon load(const std::string& path, std::size_t max_word_length = 24);
  static SegmenterLexicon from_stream(std::istream& in, const std::string& name,
                                      std::size_t max_word_length = 24);

  void add(const std::string& word, std::int64_t count);
  bool contains(const std::string& word) const;
  std::int64_t total() const { return total_; }
  std::size_t size() const { return counts_.size(); }
  std::size_t max_word_length() const { return max_word_length_; }

  // log P(word): count/total when known, 10 / (total * 10^len) otherwise.
  double word_log_prob(const std::string& word) const;

  // Maximum-likelihood split of a lowercased tag; ties go to fewer words.
  std::vector<std::string> segment(const std::string& tag) const;

 private:
  std::unordered_map<std::string, std::int64_t> counts_;
  std::int64_t total_ = 0;
  std::size_t max_word_length_;
};

// Glyph (or codepoint) to category map; exactly five categories exist.
class EmoticonTable {
 public:
  static const std::vector<std::string>& categories();

  static EmoticonTable load(const std::string& path);
  static EmoticonTable from_stream(std::istream& in, const std::string& name);

  void add(const std::string& glyph, const std::string& category);
  std::size_t size() const { return glyphs_.size(); }
  bool empty() const { return glyphs_.empty(); }

  // Longest glyph match at a byte offset; returns match length or 0.
  std::size_t match(const std::string& text, std::size_t pos, std::string* category) const;

 private:
  // kept sorted by descending glyph byte length
  std::vector<std::pair<std::string, std::string>> glyphs_;
};

enum class TokenSource { Plain, FromHashtag, EmoticonCategory, MentionPlaceholder };

struct CleanedText {
  std::vector<std::string> tokens;
  std::vector<TokenSource> sources;
  std::size_t emoticons_substituted = 0;
  std::size_t emoticons_dropped = 0;
};

struct MapEmoticonsResult {
  std::string text;
  std::size_t substituted = 0;
  std::size_t dropped = 0;
};

std::string clean_text(const std::string& raw);
std::string normalize_mentions(const std::string& text);
MapEmoticonsResult map_emoticons(const std::string& text, const EmoticonTable& table);
std::vector<std::string> segment_hashtag(const std::string& tag,
                                         const SegmenterLexicon& lexicon);

CleanedText preprocess(const std::string& raw, const SegmenterLexicon& lexicon,
                       const EmoticonTable& table);

// Tokens joined by single spaces; preprocess(render(preprocess(x))) is
// preprocess(x).
std::string render(const CleanedText& cleaned);

}  // namespace mtltxt
