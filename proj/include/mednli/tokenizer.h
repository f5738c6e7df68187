#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mednli {

enum class TokenizerMode { wordpiece, word };

std::string to_string(TokenizerMode mode);
TokenizerMode parse_tokenizer_mode(std::string_view name);

// Token lexicon with the four specials pinned to ids 0..3.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr std::string_view kContinuation = "##";

  explicit Vocabulary(TokenizerMode mode = TokenizerMode::wordpiece);
  // First four tokens must be [PAD], [UNK], [CLS], [SEP]; no duplicates.
  Vocabulary(std::vector<std::string> tokens, TokenizerMode mode);

  std::optional<int> find(std::string_view token) const;
  bool contains(std::string_view token) const { return find(token).has_value(); }
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  TokenizerMode mode() const { return mode_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Returns the existing id when already present.
  int add(const std::string& token);

  // One token per line, line number = id.
  std::string serialize() const;
  static Vocabulary parse(std::string_view text, TokenizerMode mode);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path, TokenizerMode mode);

 private:
  TokenizerMode mode_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Lowercased words; whitespace separates, ASCII punctuation stands alone.
std::vector<std::string> pretokenize(std::string_view text);

// Greedy pair-merge lexicon. target_size counts the special tokens.
Vocabulary train_wordpiece(std::span<const std::string> corpus, std::size_t target_size);

// One entry per distinct pretokenized word, in first-occurrence order.
Vocabulary build_word_vocabulary(std::span<const std::string> corpus);

// Greedy longest-match-first per word (wordpiece mode) or whole-word lookup
// (word mode). Never fails: unknown material becomes [UNK].
std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab);
std::vector<std::string> tokenize_to_strings(std::string_view text, const Vocabulary& vocab);

// Inverse of tokenize on in-alphabet text: continuation pieces are glued to
// their predecessor, words are joined by single spaces.
std::string detokenize(std::span<const int> ids, const Vocabulary& vocab);

struct EncodedPair {
  std::vector<int> token_ids;
  std::vector<int> segment_ids;
  std::vector<int> position_ids;
  std::vector<int> attention_mask;
  std::optional<int> label;

  std::size_t size() const { return token_ids.size(); }
  // Copy without trailing [PAD] positions.
  EncodedPair trimmed() const;
};

// [CLS] premise [SEP] hypothesis [SEP], padded to max_len. Overlong pairs
// lose tail tokens from the longer side first (hypothesis on ties).
EncodedPair encode_pair(std::string_view premise, std::string_view hypothesis,
                        const Vocabulary& vocab, std::size_t max_len);
EncodedPair encode_ids(std::vector<int> premise, std::vector<int> hypothesis, std::size_t max_len);

}  // namespace mednli
