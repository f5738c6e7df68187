#include "mednli/tokenizer.h"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "mednli/error.h"

namespace mednli {

namespace {

constexpr const char* kModule = "tokenizer";
constexpr std::array<std::string_view, 4> kSpecials{"[PAD]", "[UNK]", "[CLS]", "[SEP]"};

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
bool is_ascii_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }

// Byte length of the UTF-8 sequence starting with lead byte c.
std::size_t utf8_length(unsigned char c) {
  if (c < 0x80) return 1;
  if ((c >> 5) == 0x6) return 2;
  if ((c >> 4) == 0xe) return 3;
  if ((c >> 3) == 0x1e) return 4;
  return 1;
}

std::vector<std::string> split_chars(std::string_view word) {
  std::vector<std::string> chars;
  for (std::size_t i = 0; i < word.size();) {
    std::size_t len = std::min(utf8_length(static_cast<unsigned char>(word[i])), word.size() - i);
    chars.emplace_back(word.substr(i, len));
    i += len;
  }
  return chars;
}

std::string continuation(std::string_view piece) {
  return std::string(Vocabulary::kContinuation) + std::string(piece);
}

std::string_view strip_continuation(std::string_view piece) {
  if (piece.starts_with(Vocabulary::kContinuation)) piece.remove_prefix(Vocabulary::kContinuation.size());
  return piece;
}

}  // namespace

std::string to_string(TokenizerMode mode) {
  return mode == TokenizerMode::wordpiece ? "wordpiece" : "word";
}

TokenizerMode parse_tokenizer_mode(std::string_view name) {
  if (name == "wordpiece") return TokenizerMode::wordpiece;
  if (name == "word") return TokenizerMode::word;
  throw ConfigError(kModule, "unknown tokenizer mode '" + std::string(name) + "'");
}

Vocabulary::Vocabulary(TokenizerMode mode) : mode_(mode) {
  for (auto s : kSpecials) add(std::string(s));
}

Vocabulary::Vocabulary(std::vector<std::string> tokens, TokenizerMode mode) : mode_(mode) {
  if (tokens.size() < kSpecials.size()) {
    throw DataError(kModule, "vocabulary needs the four special tokens, got " +
                                 std::to_string(tokens.size()) + " entries");
  }
  for (std::size_t i = 0; i < kSpecials.size(); ++i) {
    if (tokens[i] != kSpecials[i]) {
      throw DataError(kModule, "line " + std::to_string(i + 1) + " must be " +
                                   std::string(kSpecials[i]) + ", got '" + tokens[i] + "'");
    }
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].empty()) throw DataError(kModule, "empty token on line " + std::to_string(i + 1));
    if (index_.contains(tokens[i])) {
      throw DataError(kModule, "duplicate token '" + tokens[i] + "' on line " + std::to_string(i + 1));
    }
    index_.emplace(tokens[i], static_cast<int>(i));
  }
  tokens_ = std::move(tokens);
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DataError(kModule, "token id " + std::to_string(id) + " outside vocabulary of " +
                                 std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocabulary::add(const std::string& token) {
  if (auto id = find(token)) return *id;
  int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out += '\n';
  }
  return out;
}

Vocabulary Vocabulary::parse(std::string_view text, TokenizerMode mode) {
  std::vector<std::string> tokens;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    if (line.ends_with('\r')) line.remove_suffix(1);
    tokens.emplace_back(line);
    pos = nl + 1;
  }
  return Vocabulary(std::move(tokens), mode);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(kModule, "cannot write " + path.string());
  out << serialize();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path, TokenizerMode mode) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(kModule, "cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), mode);
}

std::vector<std::string> pretokenize(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (is_space(c)) {
      flush();
    } else if (is_ascii_punct(c)) {
      flush();
      words.emplace_back(1, ch);
    } else {
      current += c < 0x80 ? static_cast<char>(std::tolower(c)) : ch;
    }
  }
  flush();
  return words;
}

Vocabulary train_wordpiece(std::span<const std::string> corpus, std::size_t target_size) {
  if (corpus.empty()) throw DataError(kModule, "train_wordpiece: empty corpus");

  // Distinct words in first-occurrence order with their frequencies.
  std::vector<std::vector<std::string>> words;
  std::vector<std::size_t> freq;
  std::unordered_map<std::string, std::size_t> seen;
  for (const auto& sentence : corpus) {
    for (auto& w : pretokenize(sentence)) {
      auto [it, inserted] = seen.emplace(w, words.size());
      if (inserted) {
        auto chars = split_chars(w);
        for (std::size_t i = 1; i < chars.size(); ++i) chars[i] = continuation(chars[i]);
        words.push_back(std::move(chars));
        freq.push_back(0);
      }
      ++freq[it->second];
    }
  }

  Vocabulary vocab(TokenizerMode::wordpiece);
  for (const auto& w : words) {
    for (const auto& sym : w) vocab.add(sym);
  }
  if (target_size < vocab.size()) {
    throw ConfigError(kModule, "train_wordpiece: target size " + std::to_string(target_size) +
                                   " cannot hold the " + std::to_string(vocab.size()) +
                                   " specials and alphabet symbols");
  }

  while (vocab.size() < target_size) {
    // Most frequent adjacent pair; ties go to the earliest occurrence.
    std::map<std::pair<std::string, std::string>, std::pair<std::size_t, std::size_t>> stats;
    std::size_t order = 0;
    for (std::size_t k = 0; k < words.size(); ++k) {
      const auto& w = words[k];
      for (std::size_t i = 0; i + 1 < w.size(); ++i) {
        auto [it, inserted] = stats.try_emplace({w[i], w[i + 1]}, 0, order);
        it->second.first += freq[k];
        ++order;
      }
    }
    if (stats.empty()) break;
    auto best = stats.begin();
    for (auto it = stats.begin(); it != stats.end(); ++it) {
      if (it->second.first > best->second.first ||
          (it->second.first == best->second.first && it->second.second < best->second.second)) {
        best = it;
      }
    }
    const auto [left, right] = best->first;
    const std::string merged = left + std::string(strip_continuation(right));
    vocab.add(merged);
    for (auto& w : words) {
      std::vector<std::string> next;
      next.reserve(w.size());
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (i + 1 < w.size() && w[i] == left && w[i + 1] == right) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(w[i]);
        }
      }
      w = std::move(next);
    }
  }
  return vocab;
}

Vocabulary build_word_vocabulary(std::span<const std::string> corpus) {
  Vocabulary vocab(TokenizerMode::word);
  for (const auto& sentence : corpus) {
    for (const auto& w : pretokenize(sentence)) vocab.add(w);
  }
  return vocab;
}

namespace {

void tokenize_word(const std::string& word, const Vocabulary& vocab, std::vector<int>& out) {
  if (vocab.mode() == TokenizerMode::word) {
    out.push_back(vocab.find(word).value_or(Vocabulary::kUnk));
    return;
  }
  if (auto id = vocab.find(word)) {
    out.push_back(*id);
    return;
  }
  // Candidate ends at code-point boundaries.
  std::vector<std::size_t> bounds{0};
  for (std::size_t i = 0; i < word.size();) {
    i += std::min(utf8_length(static_cast<unsigned char>(word[i])), word.size() - i);
    bounds.push_back(i);
  }
  std::size_t start = 0;  // index into bounds
  while (start + 1 < bounds.size()) {
    std::optional<int> match;
    std::size_t end = bounds.size() - 1;
    for (; end > start; --end) {
      std::string_view piece(word.data() + bounds[start], bounds[end] - bounds[start]);
      match = start == 0 ? vocab.find(piece) : vocab.find(continuation(piece));
      if (match) break;
    }
    if (match) {
      out.push_back(*match);
      start = end;
    } else {
      out.push_back(Vocabulary::kUnk);
      ++start;
    }
  }
}

}  // namespace

std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab) {
  std::vector<int> ids;
  for (const auto& w : pretokenize(text)) tokenize_word(w, vocab, ids);
  return ids;
}

std::vector<std::string> tokenize_to_strings(std::string_view text, const Vocabulary& vocab) {
  std::vector<std::string> pieces;
  for (int id : tokenize(text, vocab)) pieces.push_back(vocab.token(id));
  return pieces;
}

std::string detokenize(std::span<const int> ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    const std::string& tok = vocab.token(id);
    if (tok.starts_with(Vocabulary::kContinuation) && !out.empty()) {
      out += strip_continuation(tok);
    } else {
      if (!out.empty()) out += ' ';
      out += tok;
    }
  }
  return out;
}

EncodedPair EncodedPair::trimmed() const {
  std::size_t n = size();
  while (n > 0 && attention_mask[n - 1] == 0) --n;
  EncodedPair copy;
  copy.token_ids.assign(token_ids.begin(), token_ids.begin() + static_cast<std::ptrdiff_t>(n));
  copy.segment_ids.assign(segment_ids.begin(), segment_ids.begin() + static_cast<std::ptrdiff_t>(n));
  copy.position_ids.assign(position_ids.begin(), position_ids.begin() + static_cast<std::ptrdiff_t>(n));
  copy.attention_mask.assign(attention_mask.begin(),
                             attention_mask.begin() + static_cast<std::ptrdiff_t>(n));
  copy.label = label;
  return copy;
}

EncodedPair encode_ids(std::vector<int> premise, std::vector<int> hypothesis, std::size_t max_len) {
  if (max_len < 5) {
    throw ConfigError(kModule, "encode_pair: max_len must be at least 5, got " + std::to_string(max_len));
  }
  if (premise.empty() || hypothesis.empty()) {
    throw DataError(kModule, std::string("encode_pair: ") + (premise.empty() ? "premise" : "hypothesis") +
                                 " is empty after tokenization");
  }
  while (premise.size() + hypothesis.size() + 3 > max_len) {
    if (premise.size() > hypothesis.size()) {
      premise.pop_back();
    } else {
      hypothesis.pop_back();
    }
  }
  EncodedPair enc;
  enc.token_ids.reserve(max_len);
  enc.token_ids.push_back(Vocabulary::kCls);
  enc.token_ids.insert(enc.token_ids.end(), premise.begin(), premise.end());
  enc.token_ids.push_back(Vocabulary::kSep);
  const std::size_t first_segment = enc.token_ids.size();
  enc.token_ids.insert(enc.token_ids.end(), hypothesis.begin(), hypothesis.end());
  enc.token_ids.push_back(Vocabulary::kSep);
  const std::size_t used = enc.token_ids.size();
  enc.token_ids.resize(max_len, Vocabulary::kPad);
  for (std::size_t i = 0; i < max_len; ++i) {
    enc.segment_ids.push_back(i >= first_segment && i < used ? 1 : 0);
    enc.position_ids.push_back(static_cast<int>(i));
    enc.attention_mask.push_back(i < used ? 1 : 0);
  }
  return enc;
}

EncodedPair encode_pair(std::string_view premise, std::string_view hypothesis,
                        const Vocabulary& vocab, std::size_t max_len) {
  return encode_ids(tokenize(premise, vocab), tokenize(hypothesis, vocab), max_len);
}

}  // namespace mednli
