#include "mednli/abbrev.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "mednli/error.h"

namespace mednli {

namespace {

constexpr const char* kModule = "abbrev";

bool is_word_byte(char ch) {
  auto c = static_cast<unsigned char>(ch);
  return c >= 0x80 || std::isalnum(c);
}

char fold(char ch, bool case_sensitive) {
  auto c = static_cast<unsigned char>(ch);
  return case_sensitive || c >= 0x80 ? ch : static_cast<char>(std::tolower(c));
}

std::string fold(std::string_view s, bool case_sensitive) {
  std::string out(s);
  for (auto& ch : out) ch = fold(ch, case_sensitive);
  return out;
}

bool matches_at(std::string_view text, std::size_t pos, std::string_view surface, bool case_sensitive) {
  if (pos + surface.size() > text.size()) return false;
  for (std::size_t k = 0; k < surface.size(); ++k) {
    if (fold(text[pos + k], case_sensitive) != fold(surface[k], case_sensitive)) return false;
  }
  return true;
}

}  // namespace

AbbrevTable::AbbrevTable(std::vector<AbbrevEntry> entries, MatchPolicy policy)
    : entries_(std::move(entries)), policy_(policy) {
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (e.surface.empty()) throw DataError(kModule, "entry " + std::to_string(i + 1) + " has an empty surface");
    if (e.expansion == e.surface) {
      throw DataError(kModule, "entry '" + e.surface + "' expands to itself");
    }
    auto [it, inserted] = seen.emplace(fold(e.surface, policy_.case_sensitive), i);
    if (!inserted) {
      throw DataError(kModule, "duplicate surface '" + e.surface + "' (entries " +
                                   std::to_string(it->second + 1) + " and " + std::to_string(i + 1) + ")");
    }
  }
  by_length_.resize(entries_.size());
  std::iota(by_length_.begin(), by_length_.end(), std::size_t{0});
  std::stable_sort(by_length_.begin(), by_length_.end(), [&](std::size_t a, std::size_t b) {
    return entries_[a].surface.size() > entries_[b].surface.size();
  });
}

AbbrevTable parse_table(std::string_view text, MatchPolicy policy) {
  std::vector<AbbrevEntry> entries;
  std::vector<std::size_t> lines;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.ends_with('\r')) line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos || line.starts_with('#')) continue;
    auto tab = line.find('\t');
    if (tab == std::string_view::npos) {
      throw ParseError(kModule, "line " + std::to_string(line_no) + ": expected surface<TAB>expansion");
    }
    std::string_view surface = line.substr(0, tab), expansion = line.substr(tab + 1);
    if (surface.empty() || expansion.empty() || expansion.find('\t') != std::string_view::npos) {
      throw ParseError(kModule, "line " + std::to_string(line_no) + ": malformed entry");
    }
    entries.push_back({std::string(surface), std::string(expansion)});
    lines.push_back(line_no);
  }
  // Report duplicates with file line numbers rather than entry indices.
  std::unordered_map<std::string, std::size_t> first_line;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto [it, inserted] = first_line.emplace(fold(entries[i].surface, policy.case_sensitive), lines[i]);
    if (!inserted) {
      throw DataError(kModule, "duplicate surface '" + entries[i].surface + "' on lines " +
                                   std::to_string(it->second) + " and " + std::to_string(lines[i]));
    }
  }
  return AbbrevTable(std::move(entries), policy);
}

AbbrevTable load_table(const std::filesystem::path& path, MatchPolicy policy) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(kModule, "cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_table(buffer.str(), policy);
}

Expansion expand_with_spans(std::string_view text, const AbbrevTable& table) {
  Expansion out;
  out.text.reserve(text.size());
  const auto& policy = table.policy();
  std::size_t i = 0;
  while (i < text.size()) {
    bool replaced = false;
    const bool left_boundary = i == 0 || !is_word_byte(text[i - 1]);
    for (std::size_t idx : table.by_length()) {
      const auto& e = table.entries()[idx];
      if (policy.whole_word && !left_boundary && is_word_byte(e.surface.front())) continue;
      if (!matches_at(text, i, e.surface, policy.case_sensitive)) continue;
      const std::size_t end = i + e.surface.size();
      if (policy.whole_word && end < text.size() && is_word_byte(text[end]) &&
          is_word_byte(e.surface.back())) {
        continue;
      }
      Replacement r{i, end, out.text.size(), out.text.size() + e.expansion.size(), idx};
      out.text += e.expansion;
      out.replacements.push_back(r);
      i = end;
      replaced = true;
      break;
    }
    if (!replaced) out.text += text[i++];
  }
  return out;
}

std::string expand(std::string_view text, const AbbrevTable& table) {
  return expand_with_spans(text, table).text;
}

std::size_t ExpansionReport::total() const {
  std::size_t n = 0;
  for (const auto& [surface, count] : counts) n += count;
  return n;
}

std::string ExpansionReport::to_text() const {
  std::ostringstream os;
  for (const auto& [surface, count] : counts) os << surface << '\t' << count << '\n';
  os << "total\t" << total() << '\n';
  return os.str();
}

std::vector<NLIExample> expand_dataset(const std::vector<NLIExample>& examples,
                                       const AbbrevTable& table, ExpansionReport* report) {
  std::vector<NLIExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    NLIExample copy = ex;
    for (auto* field : {&copy.premise, &copy.hypothesis}) {
      Expansion e = expand_with_spans(*field, table);
      if (report) {
        for (const auto& r : e.replacements) ++report->counts[table.entries()[r.entry].surface];
      }
      *field = std::move(e.text);
    }
    out.push_back(std::move(copy));
  }
  return out;
}

}  // namespace mednli
