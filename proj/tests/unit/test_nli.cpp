#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "mednli/error.h"
#include "mednli/nli.h"

using namespace mednli;

TEST_CASE("labels") {
  for (Label l : kAllLabels) CHECK(parse_label(to_string(l)) == l);
  CHECK(label_index(Label::entailment) == 0);
  CHECK(label_index(Label::contradiction) == 1);
  CHECK(label_index(Label::neutral) == 2);
  CHECK_THROWS_AS(parse_label("-"), DataError);
}

TEST_CASE("jsonl reading") {
  std::istringstream in(
      "{\"sentence1\": \"Pt has CHF.\", \"sentence2\": \"Heart failure.\", \"gold_label\": \"entailment\", "
      "\"pairID\": \"p1\", \"extra\": 3}\n"
      "\n"
      "{\"sentence1\": \"A\", \"sentence2\": \"B\", \"gold_label\": \"neutral\"}\n");
  auto examples = read_jsonl(in, "dev");
  REQUIRE(examples.size() == 2);
  CHECK(examples[0] == NLIExample{"Pt has CHF.", "Heart failure.", Label::entailment, "p1"});
  CHECK(examples[1].pair_id == "dev-3");
  CHECK(examples[1].gold_label == Label::neutral);
}

TEST_CASE("jsonl errors carry line numbers") {
  auto message = [](const std::string& text) -> std::string {
    std::istringstream in(text);
    try {
      read_jsonl(in);
    } catch (const Error& e) {
      return e.what();
    }
    return "";
  };
  const std::string good = "{\"sentence1\": \"a\", \"sentence2\": \"b\", \"gold_label\": \"neutral\"}\n";
  CHECK(message(good + "{not json\n").find("line 2") != std::string::npos);
  CHECK(message(good + good + "{\"sentence1\": \"a\", \"gold_label\": \"neutral\"}\n").find("line 3") !=
        std::string::npos);
  CHECK(message("{\"sentence1\": \"a\", \"sentence2\": \"b\", \"gold_label\": \"maybe\"}\n").find("line 1") !=
        std::string::npos);
  CHECK(message("{\"sentence1\": \"\", \"sentence2\": \"b\", \"gold_label\": \"neutral\"}\n").find("line 1") !=
        std::string::npos);
  std::istringstream bad("[1, 2]\n");
  CHECK_THROWS_AS(read_jsonl(bad), ParseError);
}

TEST_CASE("jsonl round trip is byte-identical") {
  std::vector<NLIExample> examples{{"Patient denies \"chest\" pain.", "No pain.", Label::entailment, "a-1"},
                                   {"BP 120/80 \xce\xbcg", "Hypertensive.", Label::contradiction, "a-2"},
                                   {"x\ty", "z", Label::neutral, "a-3"}};
  std::ostringstream first;
  write_jsonl(first, examples);
  std::istringstream in(first.str());
  auto back = read_jsonl(in);
  CHECK(back == examples);
  std::ostringstream second;
  write_jsonl(second, back);
  CHECK(second.str() == first.str());

  auto path = std::filesystem::temp_directory_path() / "mednli_nli_roundtrip.jsonl";
  save_dataset(path, examples);
  CHECK(load_dataset(path) == examples);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_dataset(path), DataError);
}

TEST_CASE("triples") {
  NLIExample e{"P", "h1", Label::entailment, "1"}, c{"P", "h2", Label::contradiction, "2"},
      n{"P", "h3", Label::neutral, "3"};
  NLITriple t = make_triple({n, e, c});
  CHECK(t.pairs[0] == e);
  CHECK(t.pairs[1] == c);
  CHECK(t.pairs[2] == n);
  CHECK(t.premise() == "P");
  NLIExample other = n;
  other.premise = "Q";
  CHECK_THROWS_AS(make_triple({e, c, other}), DataError);
  CHECK_THROWS_AS(make_triple({e, e, n}), DataError);
}
