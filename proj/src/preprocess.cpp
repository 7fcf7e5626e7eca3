#include "mtltxt/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "mtltxt/error.hpp"

namespace mtltxt {

namespace {

constexpr char kEmoticonMark = '\x01';
constexpr char kHashtagMark = '\x02';
constexpr char kMentionMark = '\x03';

bool is_ws(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool ascii_letter(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
bool ascii_digit(char c) { return c >= '0' && c <= '9'; }
char ascii_lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c + 32) : c; }

bool handle_char(char c) { return ascii_letter(c) || ascii_digit(c) || c == '_'; }
bool hashtag_char(char c) {
  return (c >= 'a' && c <= 'z') || c == '_' || c == '*' || c == '\'';
}

bool stripped_punct(char c) {
  return c == '@' || c == '!' || c == ';' || c == ':' || c == '?' || c == '.';
}

bool starts_with_ci(const std::string& s, std::size_t pos, const char* prefix) {
  for (std::size_t i = 0; prefix[i]; ++i) {
    if (pos + i >= s.size() || ascii_lower(s[pos + i]) != prefix[i]) return false;
  }
  return true;
}

// URLs are whole whitespace runs: anything containing "://" or starting
// with "www.".
bool url_run(const std::string& s, std::size_t begin, std::size_t end) {
  if (starts_with_ci(s, begin, "www.")) return true;
  for (std::size_t i = begin; i + 2 < end; ++i) {
    if (s[i] == ':' && s[i + 1] == '/' && s[i + 2] == '/') return true;
  }
  return false;
}

std::string strip_urls(const std::string& s) {
  std::string out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (is_ws(s[i])) {
      out += s[i++];
      continue;
    }
    std::size_t end = i;
    while (end < s.size() && !is_ws(s[end])) ++end;
    if (!url_run(s, i, end)) out.append(s, i, end - i);
    i = end;
  }
  return out;
}

std::string strip_digits(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (!ascii_digit(c)) out += c;
  }
  return out;
}

std::string strip_punct(const std::string& s, bool keep_mention_at) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (stripped_punct(c)) {
      if (keep_mention_at && c == '@' && i + 1 < s.size() && handle_char(s[i + 1])) {
        out += c;
      }
      continue;
    }
    out += c;
  }
  return out;
}

bool has_letter(const std::string& s, std::size_t begin, std::size_t end) {
  for (std::size_t i = begin; i < end; ++i) {
    if (ascii_letter(s[i])) return true;
  }
  return false;
}

// Collapse whitespace to single spaces, dropping runs with no letter left:
// a chunk like "100%" loses its digits and must not leave "%" behind.
std::string collapse_runs(const std::string& s) {
  std::string out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (is_ws(s[i])) {
      ++i;
      continue;
    }
    std::size_t end = i;
    while (end < s.size() && !is_ws(s[end])) ++end;
    if (has_letter(s, i, end)) {
      if (!out.empty()) out += ' ';
      out.append(s, i, end - i);
    }
    i = end;
  }
  return out;
}

std::string lowercase(std::string s) {
  for (char& c : s) c = ascii_lower(c);
  return s;
}

std::uint32_t decode_utf8(const std::string& s, std::size_t pos, std::size_t* length) {
  const unsigned char c0 = static_cast<unsigned char>(s[pos]);
  std::size_t len = 1;
  std::uint32_t cp = c0;
  if (c0 >= 0xF0 && pos + 3 < s.size()) {
    len = 4;
    cp = c0 & 0x07u;
  } else if (c0 >= 0xE0 && pos + 2 < s.size()) {
    len = 3;
    cp = c0 & 0x0Fu;
  } else if (c0 >= 0xC0 && pos + 1 < s.size()) {
    len = 2;
    cp = c0 & 0x1Fu;
  } else {
    *length = 1;
    return cp;
  }
  for (std::size_t i = 1; i < len; ++i) {
    const unsigned char c = static_cast<unsigned char>(s[pos + i]);
    if ((c & 0xC0u) != 0x80u) {  // not a continuation byte
      *length = 1;
      return c0;
    }
    cp = (cp << 6) | (c & 0x3Fu);
  }
  *length = len;
  return cp;
}

std::string encode_utf8(std::uint32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
  return out;
}

bool is_emoji_codepoint(std::uint32_t cp) {
  return (cp >= 0x1F000 && cp <= 0x1FFFF) ||  // emoticons, symbols, flags
         (cp >= 0x2600 && cp <= 0x27BF) ||    // misc symbols, dingbats
         (cp >= 0x2B00 && cp <= 0x2BFF) ||    // stars, arrows
         (cp >= 0xFE00 && cp <= 0xFE0F) ||    // variation selectors
         cp == 0x200D;                        // zero-width joiner
}

std::string strip_marks(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c != kEmoticonMark && c != kHashtagMark && c != kMentionMark) out += c;
  }
  return out;
}

MapEmoticonsResult map_emoticons_impl(const std::string& text, const EmoticonTable& table,
                                      bool mark) {
  MapEmoticonsResult result;
  std::size_t i = 0;
  while (i < text.size()) {
    std::string category;
    const std::size_t matched = table.match(text, i, &category);
    if (matched > 0) {
      result.text += ' ';
      if (mark) result.text += kEmoticonMark;
      result.text += category;
      result.text += ' ';
      i += matched;
      ++result.substituted;
      continue;
    }
    std::size_t len = 1;
    const std::uint32_t cp = decode_utf8(text, i, &len);
    if (is_emoji_codepoint(cp)) {
      ++result.dropped;
    } else {
      result.text.append(text, i, len);
    }
    i += len;
  }
  return result;
}

std::string trim_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

SegmenterLexicon SegmenterLexicon::load(const std::string& path, std::size_t max_word_length) {
  std::ifstream in(path);
  if (!in) fail_data("cannot open lexicon file '" + path + "'");
  return from_stream(in, path, max_word_length);
}

SegmenterLexicon SegmenterLexicon::from_stream(std::istream& in, const std::string& name,
                                               std::size_t max_word_length) {
  SegmenterLexicon lex(max_word_length);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim_cr(line);
    if (line.empty() || line[0] == '#') continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size()) {
      fail_data(name + ":" + std::to_string(line_no) + ": expected 'word<TAB>count'");
    }
    const std::string word = line.substr(0, tab);
    std::int64_t count = 0;
    try {
      std::size_t used = 0;
      count = std::stoll(line.substr(tab + 1), &used);
      if (used != line.size() - tab - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      fail_data(name + ":" + std::to_string(line_no) + ": bad count '" +
                line.substr(tab + 1) + "'");
    }
    if (count <= 0) {
      fail_data(name + ":" + std::to_string(line_no) + ": counts must be positive");
    }
    lex.add(word, count);
  }
  return lex;
}

void SegmenterLexicon::add(const std::string& word, std::int64_t count) {
  counts_[lowercase(word)] += count;
  total_ += count;
}

bool SegmenterLexicon::contains(const std::string& word) const {
  return counts_.count(lowercase(word)) > 0;
}

double SegmenterLexicon::word_log_prob(const std::string& word) const {
  const double log_total =
      std::log(static_cast<double>(std::max<std::int64_t>(total_, 1)));
  auto it = counts_.find(lowercase(word));
  if (it != counts_.end()) {
    return std::log(static_cast<double>(it->second)) - log_total;
  }
  // unknown-word penalty: P = 10 / (total * 10^len)
  return std::log(10.0) - log_total - static_cast<double>(word.size()) * std::log(10.0);
}

std::vector<std::string> SegmenterLexicon::segment(const std::string& tag) const {
  if (tag.empty()) return {};
  constexpr double kTieEps = 1e-9;
  const std::size_t n = tag.size();
  const double neg_inf = -std::numeric_limits<double>::infinity();
  std::vector<double> best_score(n + 1, neg_inf);
  std::vector<std::size_t> best_words(n + 1, 0);
  std::vector<std::size_t> back(n + 1, 0);
  best_score[0] = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    const std::size_t lo = i > max_word_length_ ? i - max_word_length_ : 0;
    for (std::size_t j = lo; j < i; ++j) {
      if (best_score[j] == neg_inf) continue;
      const double score = best_score[j] + word_log_prob(tag.substr(j, i - j));
      const std::size_t words = best_words[j] + 1;
      if (best_score[i] == neg_inf || score > best_score[i] + kTieEps ||
          (score > best_score[i] - kTieEps && words < best_words[i])) {
        best_score[i] = score;
        best_words[i] = words;
        back[i] = j;
      }
    }
  }
  std::vector<std::string> result;
  for (std::size_t i = n; i > 0; i = back[i]) {
    result.push_back(tag.substr(back[i], i - back[i]));
  }
  std::reverse(result.begin(), result.end());
  return result;
}

const std::vector<std::string>& EmoticonTable::categories() {
  static const std::vector<std::string> kCategories = {"love", "sad", "happy", "shocking",
                                                       "anger"};
  return kCategories;
}

EmoticonTable EmoticonTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_data("cannot open emoticon table '" + path + "'");
  return from_stream(in, path);
}

EmoticonTable EmoticonTable::from_stream(std::istream& in, const std::string& name) {
  EmoticonTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim_cr(line);
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size()) {
      fail_data(name + ":" + std::to_string(line_no) + ": expected 'glyph<TAB>category'");
    }
    std::string glyph = line.substr(0, tab);
    const std::string category = line.substr(tab + 1);
    const auto& cats = categories();
    if (std::find(cats.begin(), cats.end(), category) == cats.end()) {
      fail_data(name + ":" + std::to_string(line_no) + ": unknown category '" + category +
                "'");
    }
    if (glyph.size() > 2 && glyph[0] == 'U' && glyph[1] == '+') {
      std::uint32_t cp = 0;
      for (std::size_t i = 2; i < glyph.size(); ++i) {
        const char c = ascii_lower(glyph[i]);
        std::uint32_t digit = 0;
        if (c >= '0' && c <= '9') {
          digit = static_cast<std::uint32_t>(c - '0');
        } else if (c >= 'a' && c <= 'f') {
          digit = static_cast<std::uint32_t>(c - 'a' + 10);
        } else {
          fail_data(name + ":" + std::to_string(line_no) + ": bad codepoint '" + glyph + "'");
        }
        cp = cp * 16 + digit;
      }
      glyph = encode_utf8(cp);
    }
    table.add(glyph, category);
  }
  return table;
}

void EmoticonTable::add(const std::string& glyph, const std::string& category) {
  for (const auto& [g, c] : glyphs_) {
    if (g == glyph) return;  // first entry wins
  }
  auto pos = std::find_if(glyphs_.begin(), glyphs_.end(),
                          [&](const auto& e) { return e.first.size() < glyph.size(); });
  glyphs_.insert(pos, {glyph, category});
}

std::size_t EmoticonTable::match(const std::string& text, std::size_t pos,
                                 std::string* category) const {
  for (const auto& [glyph, cat] : glyphs_) {
    if (text.compare(pos, glyph.size(), glyph) == 0) {
      *category = cat;
      return glyph.size();
    }
  }
  return 0;
}

std::string clean_text(const std::string& raw) {
  std::string s = strip_urls(raw);
  s = strip_digits(s);
  s = strip_punct(s, /*keep_mention_at=*/true);
  return lowercase(collapse_runs(s));
}

std::string normalize_mentions(const std::string& text) {
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '@' && i + 1 < text.size() && handle_char(text[i + 1])) {
      std::size_t end = i + 1;
      while (end < text.size() && handle_char(text[end])) ++end;
      out += "user";
      i = end;
    } else {
      out += text[i++];
    }
  }
  return out;
}

MapEmoticonsResult map_emoticons(const std::string& text, const EmoticonTable& table) {
  return map_emoticons_impl(text, table, /*mark=*/false);
}

std::vector<std::string> segment_hashtag(const std::string& tag,
                                         const SegmenterLexicon& lexicon) {
  return lexicon.segment(tag);
}

CleanedText preprocess(const std::string& raw, const SegmenterLexicon& lexicon,
                       const EmoticonTable& table) {
  std::string s = strip_marks(raw);
  s = strip_urls(s);
  s = strip_digits(s);
  s = lowercase(s);

  MapEmoticonsResult mapped = map_emoticons_impl(s, table, /*mark=*/true);
  s = std::move(mapped.text);

  // hashtag word segmentation
  {
    std::string out;
    std::size_t i = 0;
    while (i < s.size()) {
      if (s[i] != '#') {
        out += s[i++];
        continue;
      }
      std::size_t end = i + 1;
      while (end < s.size() && hashtag_char(s[end])) ++end;
      if (end > i + 1) {
        for (const std::string& word : lexicon.segment(s.substr(i + 1, end - i - 1))) {
          out += ' ';
          out += kHashtagMark;
          out += word;
        }
        out += ' ';
      }
      i = end;  // a bare '#' is dropped either way
    }
    s = std::move(out);
  }

  // mention normalization
  {
    std::string out;
    std::size_t i = 0;
    while (i < s.size()) {
      if (s[i] == '@' && i + 1 < s.size() && handle_char(s[i + 1])) {
        std::size_t end = i + 1;
        while (end < s.size() && handle_char(s[end])) ++end;
        out += ' ';
        out += kMentionMark;
        out += "user ";
        i = end;
      } else {
        out += s[i++];
      }
    }
    s = std::move(out);
  }

  s = strip_punct(s, /*keep_mention_at=*/false);

  CleanedText cleaned;
  cleaned.emoticons_substituted = mapped.substituted;
  cleaned.emoticons_dropped = mapped.dropped;
  std::size_t i = 0;
  while (i < s.size()) {
    if (is_ws(s[i])) {
      ++i;
      continue;
    }
    std::size_t end = i;
    while (end < s.size() && !is_ws(s[end])) ++end;
    TokenSource source = TokenSource::Plain;
    std::size_t begin = i;
    if (s[begin] == kEmoticonMark) {
      source = TokenSource::EmoticonCategory;
      ++begin;
    } else if (s[begin] == kHashtagMark) {
      source = TokenSource::FromHashtag;
      ++begin;
    } else if (s[begin] == kMentionMark) {
      source = TokenSource::MentionPlaceholder;
      ++begin;
    }
    if (begin < end && has_letter(s, begin, end)) {
      cleaned.tokens.push_back(s.substr(begin, end - begin));
      cleaned.sources.push_back(source);
    }
    i = end;
  }
  return cleaned;
}

std::string render(const CleanedText& cleaned) {
  std::string out;
  for (std::size_t i = 0; i < cleaned.tokens.size(); ++i) {
    if (i) out += ' ';
    out += cleaned.tokens[i];
  }
  return out;
}

}  // namespace mtltxt
