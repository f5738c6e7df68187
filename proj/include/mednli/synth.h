#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mednli/nli.h"

namespace mednli {

// Template-generated NLI pairs. Each premise mentions two findings;
// entailment restates one, contradiction negates one, neutral names a
// finding absent from the premise.
struct SynthSpec {
  std::size_t vocab_size = 24;  // content words available to one corpus
  std::size_t templates_per_class = 3;
  std::size_t count = 300;
  std::uint64_t seed = 0;
  double shift = 0.0;  // content-word divergence between source and target, in [0, 1]
  std::string id_prefix = "synth";

  void validate() const;
};

std::vector<NLIExample> generate_corpus(const SynthSpec& spec);

// Source uses spec.count pairs; target uses target_count (default
// spec.count) and a content-word pool whose Jaccard overlap with the
// source pool is 1 - shift.
std::pair<std::vector<NLIExample>, std::vector<NLIExample>> generate_transfer_pair(
    const SynthSpec& spec, std::optional<std::size_t> target_count = std::nullopt);

// Words drawn from the content pools (everything but the template words).
std::set<std::string> content_words(const std::vector<NLIExample>& corpus);

using GroupKey = std::function<std::string(const NLIExample&)>;
std::string premise_key(const NLIExample& example);

// Groups by key in first-occurrence order and emits one triple per group
// holding every class; other groups are skipped and counted.
std::vector<NLITriple> generate_triples(const std::vector<NLIExample>& corpus,
                                        std::size_t* skipped = nullptr,
                                        const GroupKey& key = premise_key);

struct DatasetSplit {
  std::vector<NLIExample> train, dev, test;
};

// 80/10/10 over premise groups, keeping each group in one split.
DatasetSplit split_dataset(const std::vector<NLIExample>& corpus);

}  // namespace mednli
