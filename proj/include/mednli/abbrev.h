#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mednli/nli.h"

namespace mednli {

struct AbbrevEntry {
  std::string surface;
  std::string expansion;
};

struct MatchPolicy {
  bool case_sensitive = false;
  bool whole_word = true;
};

// Ordered surface -> expansion entries. Surfaces are unique under the
// table's case policy.
class AbbrevTable {
 public:
  AbbrevTable() = default;
  explicit AbbrevTable(std::vector<AbbrevEntry> entries, MatchPolicy policy = {});

  const std::vector<AbbrevEntry>& entries() const { return entries_; }
  const MatchPolicy& policy() const { return policy_; }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }

  // Entry indices by descending surface length, table order on ties.
  const std::vector<std::size_t>& by_length() const { return by_length_; }

 private:
  std::vector<AbbrevEntry> entries_;
  MatchPolicy policy_;
  std::vector<std::size_t> by_length_;
};

// "surface<TAB>expansion" per line; blank and '#' lines are skipped.
AbbrevTable parse_table(std::string_view text, MatchPolicy policy = {});
AbbrevTable load_table(const std::filesystem::path& path, MatchPolicy policy = {});

struct Replacement {
  std::size_t source_begin = 0;
  std::size_t source_end = 0;
  std::size_t output_begin = 0;
  std::size_t output_end = 0;
  std::size_t entry = 0;
};

struct Expansion {
  std::string text;
  std::vector<Replacement> replacements;
};

// Single left-to-right pass; the longest surface matching at a word
// boundary is replaced and the replacement is never rescanned.
Expansion expand_with_spans(std::string_view text, const AbbrevTable& table);
std::string expand(std::string_view text, const AbbrevTable& table);

struct ExpansionReport {
  std::map<std::string, std::size_t> counts;  // table surface -> replacements
  std::size_t total() const;
  std::string to_text() const;
};

std::vector<NLIExample> expand_dataset(const std::vector<NLIExample>& examples,
                                       const AbbrevTable& table, ExpansionReport* report = nullptr);

}  // namespace mednli
