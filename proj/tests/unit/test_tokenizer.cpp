#include <doctest.h>

#include <algorithm>
#include <filesystem>

#include "mednli/error.h"
#include "mednli/rng.h"
#include "mednli/tokenizer.h"

using namespace mednli;

namespace {

std::vector<std::string> strings(std::initializer_list<const char*> items) {
  return {items.begin(), items.end()};
}

std::string random_word(Rng& rng, std::string_view alphabet, std::size_t max_len) {
  std::string w;
  const std::size_t len = 1 + rng.index(max_len);
  for (std::size_t i = 0; i < len; ++i) w += alphabet[rng.index(alphabet.size())];
  return w;
}

std::string random_sentence(Rng& rng, std::string_view alphabet, std::size_t words) {
  std::string s;
  for (std::size_t i = 0; i < words; ++i) {
    if (i) s += ' ';
    s += random_word(rng, alphabet, 7);
  }
  return s;
}

void check_encoded_invariants(const EncodedPair& e, std::size_t max_len) {
  const std::size_t len = e.size();
  REQUIRE(len == max_len);
  REQUIRE(e.segment_ids.size() == len);
  REQUIRE(e.position_ids.size() == len);
  REQUIRE(e.attention_mask.size() == len);
  CHECK(e.token_ids[0] == Vocabulary::kCls);
  std::vector<std::size_t> seps;
  for (std::size_t i = 0; i < len; ++i) {
    CHECK(e.position_ids[i] == static_cast<int>(i));
    CHECK((e.segment_ids[i] == 0 || e.segment_ids[i] == 1));
    CHECK(e.attention_mask[i] == (e.token_ids[i] == Vocabulary::kPad ? 0 : 1));
    if (e.token_ids[i] == Vocabulary::kSep) seps.push_back(i);
  }
  REQUIRE(seps.size() == 2);
  CHECK(seps[0] >= 2);
  CHECK(seps[1] >= seps[0] + 2);
  for (std::size_t i = 0; i < len; ++i) {
    if (e.attention_mask[i] == 0) {
      CHECK(i > seps[1]);
      continue;
    }
    CHECK(e.segment_ids[i] == (i <= seps[0] ? 0 : 1));
  }
}

}  // namespace

TEST_CASE("vocabulary specials and file format") {
  Vocabulary v;
  CHECK(v.size() == 4);
  CHECK(v.token(Vocabulary::kPad) == "[PAD]");
  CHECK(v.token(Vocabulary::kUnk) == "[UNK]");
  CHECK(v.token(Vocabulary::kCls) == "[CLS]");
  CHECK(v.token(Vocabulary::kSep) == "[SEP]");
  const int id = v.add("x");
  CHECK(id == 4);
  CHECK(v.add("x") == 4);
  CHECK(v.serialize() == "[PAD]\n[UNK]\n[CLS]\n[SEP]\nx\n");
  Vocabulary back = Vocabulary::parse(v.serialize(), TokenizerMode::wordpiece);
  CHECK(back.tokens() == v.tokens());
  for (int i = 0; i < static_cast<int>(back.size()); ++i) CHECK(*back.find(back.token(i)) == i);

  CHECK_THROWS_AS(Vocabulary(strings({"[UNK]", "[PAD]", "[CLS]", "[SEP]"}), TokenizerMode::word), DataError);
  CHECK_THROWS_AS(Vocabulary(strings({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "a", "a"}), TokenizerMode::word),
                  DataError);
  CHECK_THROWS_AS(v.token(99), DataError);

  auto path = std::filesystem::temp_directory_path() / "mednli_vocab_test.txt";
  v.save(path);
  CHECK(Vocabulary::load(path, TokenizerMode::wordpiece).tokens() == v.tokens());
  std::filesystem::remove(path);
}

TEST_CASE("train_wordpiece merges the most frequent pair first") {
  auto corpus = strings({"aaab", "aab"});
  // Alphabet: a, ##a, ##b. Two merges on top of specials + alphabet.
  Vocabulary v = train_wordpiece(corpus, 4 + 3 + 2);
  CHECK(v.size() == 9);
  CHECK(v.contains("aa"));
  CHECK(v.contains("a"));
  CHECK(v.contains("##a"));
  CHECK(v.contains("##b"));
}

TEST_CASE("train_wordpiece on a single-character corpus") {
  auto corpus = strings({"a"});
  Vocabulary v = train_wordpiece(corpus, 50);
  CHECK(v.tokens() == strings({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "a"}));
}

TEST_CASE("train_wordpiece rejects a target smaller than the alphabet") {
  auto corpus = strings({"abc"});
  CHECK_THROWS_AS(train_wordpiece(corpus, 6), ConfigError);
  CHECK_NOTHROW(train_wordpiece(corpus, 7));
  std::vector<std::string> empty;
  CHECK_THROWS_AS(train_wordpiece(empty, 10), DataError);
}

TEST_CASE("trained vocabulary tokenizes its corpus without [UNK]") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::string> corpus;
    for (int s = 0; s < 12; ++s) corpus.push_back(random_sentence(rng, "abcdefgh.,", 5));
    Vocabulary v = train_wordpiece(corpus, 30 + rng.index(40));
    for (const auto& s : corpus) {
      auto ids = tokenize(s, v);
      CHECK(std::count(ids.begin(), ids.end(), Vocabulary::kUnk) == 0);
    }
  }
}

TEST_CASE("tokenize examples") {
  Vocabulary v(strings({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "a", "aa", "##a", "##ab", "##b", "aaab"}),
               TokenizerMode::wordpiece);
  CHECK(tokenize("aaab", v) == std::vector<int>{9});

  Vocabulary small(strings({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "a", "aa", "##a", "##ab", "##b"}),
                   TokenizerMode::wordpiece);
  CHECK(tokenize_to_strings("aaab", small) == strings({"aa", "##ab"}));
  CHECK(tokenize("\xcf\x89", small) == std::vector<int>{Vocabulary::kUnk});  // omega
  CHECK(tokenize("AAAB", small) == tokenize("aaab", small));
}

TEST_CASE("word-level vocabulary") {
  auto corpus = strings({"The cat sat.", "the dog"});
  Vocabulary v = build_word_vocabulary(corpus);
  CHECK(v.mode() == TokenizerMode::word);
  CHECK(v.tokens() == strings({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "the", "cat", "sat", ".", "dog"}));
  CHECK(tokenize("the bird", v) == std::vector<int>{4, Vocabulary::kUnk});
}

TEST_CASE("pretokenize lowercases and splits punctuation") {
  CHECK(pretokenize("  Pt. has CHF, no MI!  ") == strings({"pt", ".", "has", "chf", ",", "no", "mi", "!"}));
  CHECK(pretokenize("").empty());
}

TEST_CASE("detokenize inverts tokenize on in-alphabet words") {
  Rng rng(2);
  std::vector<std::string> corpus;
  for (int s = 0; s < 30; ++s) corpus.push_back(random_sentence(rng, "abcdef", 4));
  Vocabulary v = train_wordpiece(corpus, 40);
  for (int trial = 0; trial < 200; ++trial) {
    std::string w = random_word(rng, "abcdef", 9);
    auto ids = tokenize(w, v);
    CHECK(detokenize(ids, v) == w);
  }
}

TEST_CASE("tokenize is prefix-stable over word concatenation") {
  Rng rng(3);
  std::vector<std::string> corpus;
  for (int s = 0; s < 30; ++s) corpus.push_back(random_sentence(rng, "abcdefg", 4));
  Vocabulary v = train_wordpiece(corpus, 45);
  for (int trial = 0; trial < 200; ++trial) {
    std::string x = random_sentence(rng, "abcdefgz", 3), y = random_sentence(rng, "abcdefgz", 2);
    auto joined = tokenize(x + " " + y, v);
    auto left = tokenize(x, v), right = tokenize(y, v);
    left.insert(left.end(), right.begin(), right.end());
    CHECK(joined == left);
    CHECK(tokenize(x, v) == tokenize(x, v));
  }
}

TEST_CASE("encode_pair layout") {
  Vocabulary v(strings({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "a", "b"}), TokenizerMode::word);
  EncodedPair e = encode_pair("a", "b", v, 8);
  CHECK(e.token_ids == std::vector<int>{2, 4, 3, 5, 3, 0, 0, 0});
  CHECK(e.segment_ids == std::vector<int>{0, 0, 0, 1, 1, 0, 0, 0});
  CHECK(e.attention_mask == std::vector<int>{1, 1, 1, 1, 1, 0, 0, 0});
  CHECK(e.position_ids == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
  EncodedPair t = e.trimmed();
  CHECK(t.token_ids == std::vector<int>{2, 4, 3, 5, 3});
  CHECK(t.segment_ids.size() == 5);
}

TEST_CASE("encode_pair truncation") {
  Vocabulary v(strings({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "p1", "p2", "p3", "p4", "h1", "h2", "h3", "h4"}),
               TokenizerMode::word);
  SUBCASE("equal lengths overflowing by two lose one token each") {
    // 3 specials + 4 + 4 = 11 tokens into 9.
    EncodedPair e = encode_pair("p1 p2 p3 p4", "h1 h2 h3 h4", v, 9);
    CHECK(e.token_ids == std::vector<int>{2, 4, 5, 6, 3, 8, 9, 10, 3});
  }
  SUBCASE("longer side is trimmed first") {
    EncodedPair e = encode_pair("p1 p2 p3 p4", "h1", v, 6);
    CHECK(e.token_ids == std::vector<int>{2, 4, 5, 3, 8, 3});
  }
  SUBCASE("ties trim the hypothesis") {
    EncodedPair e = encode_pair("p1 p2", "h1 h2", v, 6);
    CHECK(e.token_ids == std::vector<int>{2, 4, 5, 3, 8, 3});
  }
  CHECK_THROWS_AS(encode_pair("p1", "h1", v, 4), ConfigError);
  CHECK_THROWS_AS(encode_pair("", "h1", v, 8), DataError);
  CHECK_THROWS_AS(encode_pair("p1", "   ", v, 8), DataError);
}

TEST_CASE("encode_pair invariants on random pairs") {
  Rng rng(4);
  std::vector<std::string> corpus;
  for (int s = 0; s < 40; ++s) corpus.push_back(random_sentence(rng, "abcdefghij", 6));
  Vocabulary v = train_wordpiece(corpus, 60);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t max_len = 5 + rng.index(30);
    auto premise = random_sentence(rng, "abcdefghijxyz", 1 + rng.index(10));
    auto hypothesis = random_sentence(rng, "abcdefghijxyz", 1 + rng.index(10));
    check_encoded_invariants(encode_pair(premise, hypothesis, v, max_len), max_len);
  }
}

TEST_CASE("tokenizer mode names") {
  CHECK(parse_tokenizer_mode("wordpiece") == TokenizerMode::wordpiece);
  CHECK(parse_tokenizer_mode("word") == TokenizerMode::word);
  CHECK(to_string(TokenizerMode::word) == "word");
  CHECK_THROWS_AS(parse_tokenizer_mode("bpe"), ConfigError);
}
