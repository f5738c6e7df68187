#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace mednli {

// Class order is also the tie-break order everywhere.
enum class Label : int { entailment = 0, contradiction = 1, neutral = 2 };

inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::array<Label, kNumClasses> kAllLabels{Label::entailment, Label::contradiction,
                                                           Label::neutral};

std::string_view to_string(Label label);
Label parse_label(std::string_view name);
inline int label_index(Label label) { return static_cast<int>(label); }

struct NLIExample {
  std::string premise;
  std::string hypothesis;
  Label gold_label = Label::entailment;
  std::string pair_id;

  bool operator==(const NLIExample&) const = default;
};

// Three pairs sharing one premise, one per class, stored in class order.
struct NLITriple {
  std::array<NLIExample, kNumClasses> pairs;

  const std::string& premise() const { return pairs[0].premise; }
};

// Throws DataError unless exactly one pair per class shares the premise.
NLITriple make_triple(std::array<NLIExample, kNumClasses> pairs);

// JSONL with MedNLI key names: sentence1, sentence2, gold_label, pairID.
// Missing pairIDs become "<source>-<line>". Unknown keys are ignored.
std::vector<NLIExample> read_jsonl(std::istream& in, const std::string& source = "input");
std::vector<NLIExample> load_dataset(const std::filesystem::path& path);
void write_jsonl(std::ostream& out, const std::vector<NLIExample>& examples);
void save_dataset(const std::filesystem::path& path, const std::vector<NLIExample>& examples);

}  // namespace mednli
