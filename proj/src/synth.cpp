#include "mednli/synth.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include "mednli/error.h"
#include "mednli/rng.h"
#include "mednli/tokenizer.h"

namespace mednli {

namespace {

constexpr const char* kModule = "synth";

constexpr std::array<const char*, 3> kSubjects{"patient", "the patient", "pt"};
constexpr std::array<const char*, 3> kPremiseTemplates{
    "{s} has {a} and {b} .", "{s} presents with {a} and {b} .", "{s} was found to have {a} and {b} ."};
constexpr std::array<const char*, 3> kEntailTemplates{"{s} has {x} .", "{x} is present .",
                                                      "{s} shows {x} ."};
constexpr std::array<const char*, 3> kContradictTemplates{"{s} has no {x} .", "{s} denies {x} .",
                                                          "there is no {x} ."};

const std::unordered_set<std::string>& template_words() {
  static const std::unordered_set<std::string> words = [] {
    std::unordered_set<std::string> w;
    auto add_all = [&](const auto& templates) {
      for (const char* t : templates) {
        for (auto& tok : pretokenize(t)) {
          if (!tok.starts_with('{')) w.insert(tok);
        }
      }
    };
    add_all(kSubjects);
    add_all(kPremiseTemplates);
    add_all(kEntailTemplates);
    add_all(kContradictTemplates);
    w.insert("{");
    w.insert("}");
    return w;
  }();
  return words;
}

// Deterministic pseudo-word for index i: two consonant-vowel syllables
// plus a coda, through a fixed permutation so neighbours look unrelated.
std::string pseudo_word(std::size_t i) {
  static constexpr std::string_view consonants = "bdfgklmnprstvz";
  static constexpr std::string_view vowels = "aeiou";
  static constexpr std::string_view codas = "nrsl";
  constexpr std::size_t syllables = 14 * 5;
  constexpr std::size_t space = syllables * syllables * 4;
  const std::size_t j = (i * 7919 + 13) % space;
  auto syl = [&](std::size_t k) {
    return std::string{consonants[k / 5], vowels[k % 5]};
  };
  return syl(j % syllables) + syl((j / syllables) % syllables) + codas[j / (syllables * syllables)];
}

std::vector<std::string> word_pool(std::size_t begin, std::size_t count) {
  std::vector<std::string> pool;
  for (std::size_t i = begin; pool.size() < count; ++i) {
    std::string w = pseudo_word(i);
    if (!template_words().contains(w)) pool.push_back(std::move(w));
  }
  return pool;
}

std::string fill(std::string_view tmpl, const std::map<char, std::string>& slots) {
  std::string out;
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    if (tmpl[i] == '{' && i + 2 < tmpl.size() && tmpl[i + 2] == '}') {
      out += slots.at(tmpl[i + 1]);
      i += 2;
    } else {
      out += tmpl[i];
    }
  }
  return out;
}

std::vector<NLIExample> generate_from_pool(const SynthSpec& spec, const std::vector<std::string>& pool) {
  Rng rng(spec.seed);
  const std::size_t groups = (spec.count + 2) / 3;
  const std::size_t t = spec.templates_per_class;
  std::vector<NLIExample> out;
  out.reserve(spec.count);
  std::unordered_set<std::string> premises;
  for (std::size_t g = 0; g < groups; ++g) {
    std::map<char, std::string> slots;
    std::string premise;
    std::size_t attempts = 0;
    do {
      if (++attempts > 1000) {
        throw ConfigError(kModule, "content pool of " + std::to_string(pool.size()) +
                                       " words is too small for " + std::to_string(groups) +
                                       " distinct premises");
      }
      std::size_t a = rng.index(pool.size());
      std::size_t b = rng.index(pool.size() - 1);
      if (b >= a) ++b;
      std::size_t y = rng.index(pool.size() - 2);
      for (std::size_t used : {std::min(a, b), std::max(a, b)}) {
        if (y >= used) ++y;
      }
      slots = {{'s', kSubjects[rng.index(kSubjects.size())]},
               {'a', pool[a]},
               {'b', pool[b]},
               {'x', rng.bernoulli(0.5) ? pool[a] : pool[b]},
               {'y', pool[y]}};
      premise = fill(kPremiseTemplates[rng.index(t)], slots);
    } while (!premises.insert(premise).second);

    char id[32];
    std::snprintf(id, sizeof id, "%05zu", g);
    const std::string base = spec.id_prefix + "-" + id;
    auto emit = [&](Label label, std::string hypothesis) {
      if (out.size() >= spec.count) return;
      out.push_back({premise, std::move(hypothesis), label,
                     base + "-" + std::string(to_string(label).substr(0, 1))});
    };
    std::map<char, std::string> neutral = slots;
    neutral['x'] = slots['y'];
    emit(Label::entailment, fill(kEntailTemplates[rng.index(t)], slots));
    emit(Label::contradiction, fill(kContradictTemplates[rng.index(t)], slots));
    emit(Label::neutral, fill(kEntailTemplates[rng.index(t)], neutral));
  }
  return out;
}

}  // namespace

void SynthSpec::validate() const {
  if (vocab_size < 3) throw ConfigError(kModule, "vocab_size must be at least 3");
  if (templates_per_class < 1 || templates_per_class > kEntailTemplates.size()) {
    throw ConfigError(kModule, "templates_per_class must lie in [1, 3]");
  }
  if (count == 0) throw ConfigError(kModule, "count must be positive");
  if (!(shift >= 0.0 && shift <= 1.0)) {
    throw ConfigError(kModule, "shift must lie in [0, 1], got " + std::to_string(shift));
  }
}

std::vector<NLIExample> generate_corpus(const SynthSpec& spec) {
  spec.validate();
  return generate_from_pool(spec, word_pool(0, spec.vocab_size));
}

std::pair<std::vector<NLIExample>, std::vector<NLIExample>> generate_transfer_pair(
    const SynthSpec& spec, std::optional<std::size_t> target_count) {
  spec.validate();
  const std::size_t v = spec.vocab_size;
  // Shared k of v words gives Jaccard k / (2v - k); solve for 1 - shift.
  const double jaccard = 1.0 - spec.shift;
  const auto shared = static_cast<std::size_t>(std::lround(2.0 * static_cast<double>(v) * jaccard / (1.0 + jaccard)));
  std::vector<std::string> source_pool = word_pool(0, v);
  std::vector<std::string> target_pool(source_pool.begin(), source_pool.begin() + static_cast<std::ptrdiff_t>(shared));
  std::vector<std::string> fresh = word_pool(v, v);
  target_pool.insert(target_pool.end(), fresh.begin(), fresh.begin() + static_cast<std::ptrdiff_t>(v - shared));

  SynthSpec source_spec = spec;
  source_spec.id_prefix = spec.id_prefix + "-src";
  SynthSpec target_spec = spec;
  target_spec.count = target_count.value_or(spec.count);
  target_spec.seed = spec.seed ^ 0xa5a5a5a5ULL;
  target_spec.id_prefix = spec.id_prefix + "-tgt";
  target_spec.validate();
  return {generate_from_pool(source_spec, source_pool), generate_from_pool(target_spec, target_pool)};
}

std::set<std::string> content_words(const std::vector<NLIExample>& corpus) {
  std::set<std::string> words;
  for (const auto& ex : corpus) {
    for (const auto* s : {&ex.premise, &ex.hypothesis}) {
      for (auto& w : pretokenize(*s)) {
        if (!template_words().contains(w)) words.insert(std::move(w));
      }
    }
  }
  return words;
}

std::string premise_key(const NLIExample& example) { return example.premise; }

std::vector<NLITriple> generate_triples(const std::vector<NLIExample>& corpus, std::size_t* skipped,
                                        const GroupKey& key) {
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<const NLIExample*>> groups;
  for (const auto& ex : corpus) {
    auto k = key(ex);
    auto [it, inserted] = groups.try_emplace(k);
    if (inserted) order.push_back(k);
    it->second.push_back(&ex);
  }
  std::vector<NLITriple> triples;
  std::size_t incomplete = 0;
  for (const auto& k : order) {
    const auto& members = groups[k];
    std::array<const NLIExample*, kNumClasses> per_class{};
    bool same_premise = true;
    for (const auto* ex : members) {
      auto& slot = per_class[static_cast<std::size_t>(label_index(ex->gold_label))];
      if (!slot) slot = ex;
      same_premise = same_premise && ex->premise == members.front()->premise;
    }
    const bool complete = same_premise && members.size() == kNumClasses &&
                          std::all_of(per_class.begin(), per_class.end(), [](auto* p) { return p != nullptr; });
    if (!complete) {
      ++incomplete;
      continue;
    }
    triples.push_back(make_triple({*per_class[0], *per_class[1], *per_class[2]}));
  }
  if (skipped) *skipped = incomplete;
  return triples;
}

DatasetSplit split_dataset(const std::vector<NLIExample>& corpus) {
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<const NLIExample*>> groups;
  for (const auto& ex : corpus) {
    auto [it, inserted] = groups.try_emplace(ex.premise);
    if (inserted) order.push_back(ex.premise);
    it->second.push_back(&ex);
  }
  const std::size_t n = order.size();
  const std::size_t train_groups = n * 8 / 10;
  const std::size_t dev_groups = (n - train_groups) / 2;
  DatasetSplit split;
  for (std::size_t g = 0; g < n; ++g) {
    auto& target = g < train_groups ? split.train : g < train_groups + dev_groups ? split.dev : split.test;
    for (const auto* ex : groups[order[g]]) target.push_back(*ex);
  }
  return split;
}

}  // namespace mednli
