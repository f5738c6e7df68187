#include "mednli/nli.h"

#include <fstream>
#include <istream>
#include <ostream>
#include <set>

#include <nlohmann/json.hpp>

#include "mednli/error.h"

namespace mednli {

namespace {
constexpr const char* kModule = "dataset";
}

std::string_view to_string(Label label) {
  switch (label) {
    case Label::entailment:
      return "entailment";
    case Label::contradiction:
      return "contradiction";
    case Label::neutral:
      return "neutral";
  }
  return "?";
}

Label parse_label(std::string_view name) {
  for (Label l : kAllLabels) {
    if (to_string(l) == name) return l;
  }
  throw DataError(kModule, "unknown gold_label '" + std::string(name) + "'");
}

NLITriple make_triple(std::array<NLIExample, kNumClasses> pairs) {
  std::set<Label> labels;
  for (const auto& p : pairs) {
    if (p.premise != pairs[0].premise) throw DataError(kModule, "triple pairs must share one premise");
    labels.insert(p.gold_label);
  }
  if (labels.size() != kNumClasses) throw DataError(kModule, "triple must hold one pair per class");
  NLITriple triple;
  for (auto& p : pairs) triple.pairs[static_cast<std::size_t>(label_index(p.gold_label))] = std::move(p);
  return triple;
}

std::vector<NLIExample> read_jsonl(std::istream& in, const std::string& source) {
  std::vector<NLIExample> examples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + " line " + std::to_string(line_no);
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(kModule, where + ": " + e.what());
    }
    if (!obj.is_object()) throw ParseError(kModule, where + ": expected a JSON object");
    auto field = [&](const char* key) -> std::string {
      auto it = obj.find(key);
      if (it == obj.end() || !it->is_string()) {
        throw DataError(kModule, where + ": missing string field '" + key + "'");
      }
      return it->get<std::string>();
    };
    NLIExample ex;
    ex.premise = field("sentence1");
    ex.hypothesis = field("sentence2");
    if (ex.premise.empty() || ex.hypothesis.empty()) throw DataError(kModule, where + ": empty sentence");
    try {
      ex.gold_label = parse_label(field("gold_label"));
    } catch (const DataError& e) {
      throw DataError(kModule, where + ": " + e.what());
    }
    auto id = obj.find("pairID");
    ex.pair_id = id != obj.end() && id->is_string() ? id->get<std::string>()
                                                    : source + "-" + std::to_string(line_no);
    examples.push_back(std::move(ex));
  }
  return examples;
}

std::vector<NLIExample> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(kModule, "cannot read " + path.string());
  return read_jsonl(in, path.filename().string());
}

void write_jsonl(std::ostream& out, const std::vector<NLIExample>& examples) {
  for (const auto& ex : examples) {
    nlohmann::ordered_json obj;
    obj["sentence1"] = ex.premise;
    obj["sentence2"] = ex.hypothesis;
    obj["gold_label"] = std::string(to_string(ex.gold_label));
    obj["pairID"] = ex.pair_id;
    out << obj.dump() << '\n';
  }
}

void save_dataset(const std::filesystem::path& path, const std::vector<NLIExample>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(kModule, "cannot write " + path.string());
  write_jsonl(out, examples);
}

}  // namespace mednli
