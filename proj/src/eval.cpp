#include "mednli/eval.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <unordered_map>

#include "mednli/error.h"

namespace mednli {

namespace {

constexpr const char* kModule = "eval";

std::unordered_map<std::string, const NLIExample*> index_golds(const std::vector<NLIExample>& golds) {
  std::unordered_map<std::string, const NLIExample*> index;
  for (const auto& g : golds) {
    if (!index.emplace(g.pair_id, &g).second) {
      throw DataError(kModule, "duplicate gold pair id '" + g.pair_id + "'");
    }
  }
  return index;
}

const NLIExample& gold_for(const std::unordered_map<std::string, const NLIExample*>& index,
                           const std::string& pair_id) {
  auto it = index.find(pair_id);
  if (it == index.end()) throw DataError(kModule, "prediction for unknown pair id '" + pair_id + "'");
  return *it->second;
}

void require_aligned(std::size_t predictions, std::size_t golds) {
  if (predictions != golds) {
    throw DataError(kModule, std::to_string(predictions) + " predictions for " +
                                 std::to_string(golds) + " gold examples");
  }
}

std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace

Label argmax_label(const Probabilities& probs) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < probs.size(); ++k) {
    if (probs[k] > probs[best]) best = k;
  }
  return kAllLabels[best];
}

Prediction make_prediction(std::string pair_id, const Probabilities& probs) {
  return {std::move(pair_id), probs, argmax_label(probs)};
}

PointwiseResult predict_pointwise(const Model& model, const std::vector<NLIExample>& examples) {
  PointwiseResult result;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    try {
      result.predictions.push_back(make_prediction(examples[i].pair_id, model.predict(examples[i])));
    } catch (const Error& e) {
      result.errors.push_back({i, examples[i].pair_id, e.what()});
    }
  }
  return result;
}

ListwiseAssignment assign_listwise(const ProbabilityMatrix& probs) {
  std::array<int, kNumClasses> perm{0, 1, 2};
  ListwiseAssignment best;
  best.score = -std::numeric_limits<double>::infinity();
  bool first = true;
  do {
    double score = 0.0;
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      score += std::log(probs[k][static_cast<std::size_t>(perm[k])]);
    }
    if (first || score > best.score) {
      best.score = score;
      for (std::size_t k = 0; k < kNumClasses; ++k) best.labels[k] = kAllLabels[static_cast<std::size_t>(perm[k])];
      first = false;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

ListwiseAssignment predict_listwise(const Model& model, const NLITriple& triple) {
  ProbabilityMatrix probs;
  for (std::size_t k = 0; k < kNumClasses; ++k) probs[k] = model.predict(triple.pairs[k]);
  return assign_listwise(probs);
}

double accuracy(const std::vector<Prediction>& predictions, const std::vector<NLIExample>& golds) {
  require_aligned(predictions.size(), golds.size());
  if (golds.empty()) throw DataError(kModule, "accuracy of an empty set");
  auto index = index_golds(golds);
  std::size_t correct = 0;
  for (const auto& p : predictions) {
    if (gold_for(index, p.pair_id).gold_label == p.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(golds.size());
}

AgreementPartition agreement_partition(const std::vector<Prediction>& a,
                                       const std::vector<Prediction>& b,
                                       const std::vector<NLIExample>& golds) {
  require_aligned(a.size(), golds.size());
  require_aligned(b.size(), golds.size());
  if (golds.empty()) throw DataError(kModule, "agreement of an empty set");
  auto index = index_golds(golds);
  std::unordered_map<std::string, bool> b_correct;
  for (const auto& p : b) b_correct[p.pair_id] = gold_for(index, p.pair_id).gold_label == p.label;
  AgreementPartition part;
  for (const auto& p : a) {
    const bool ok_a = gold_for(index, p.pair_id).gold_label == p.label;
    auto it = b_correct.find(p.pair_id);
    if (it == b_correct.end()) throw DataError(kModule, "pair id '" + p.pair_id + "' missing from second file");
    const bool ok_b = it->second;
    if (ok_a && ok_b) {
      ++part.both;
    } else if (ok_a) {
      ++part.only_a;
    } else if (ok_b) {
      ++part.only_b;
    } else {
      ++part.neither;
    }
  }
  return part;
}

double mean_correct_confidence(const std::vector<Prediction>& predictions,
                               const std::vector<NLIExample>& golds) {
  require_aligned(predictions.size(), golds.size());
  auto index = index_golds(golds);
  double total = 0.0;
  std::size_t correct = 0;
  for (const auto& p : predictions) {
    if (gold_for(index, p.pair_id).gold_label != p.label) continue;
    total += p.probs[static_cast<std::size_t>(label_index(p.label))];
    ++correct;
  }
  if (correct == 0) throw DataError(kModule, "mean correct confidence is undefined with no correct predictions");
  return total / static_cast<double>(correct);
}

void write_predictions(std::ostream& out, const std::vector<Prediction>& predictions) {
  for (const auto& p : predictions) {
    out << p.pair_id;
    for (double v : p.probs) out << '\t' << format_double(v);
    out << '\t' << to_string(p.label) << '\n';
  }
}

std::vector<Prediction> read_predictions(std::istream& in) {
  std::vector<Prediction> predictions;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
      auto tab = line.find('\t', pos);
      fields.push_back(line.substr(pos, tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    const std::string where = "prediction line " + std::to_string(line_no);
    if (fields.size() != 5) throw ParseError(kModule, where + ": expected 5 tab-separated fields");
    Prediction p;
    p.pair_id = fields[0];
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      const auto& f = fields[k + 1];
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), p.probs[k]);
      if (ec != std::errc() || ptr != f.data() + f.size()) {
        throw ParseError(kModule, where + ": bad probability '" + f + "'");
      }
    }
    const double mass = p.probs[0] + p.probs[1] + p.probs[2];
    if (std::abs(mass - 1.0) > 1e-6) throw ParseError(kModule, where + ": probabilities do not sum to 1");
    try {
      p.label = parse_label(fields[4]);
    } catch (const Error& e) {
      throw ParseError(kModule, where + ": " + e.what());
    }
    predictions.push_back(std::move(p));
  }
  return predictions;
}

void save_predictions(const std::filesystem::path& path, const std::vector<Prediction>& predictions) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(kModule, "cannot write " + path.string());
  write_predictions(out, predictions);
}

std::vector<Prediction> load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(kModule, "cannot read " + path.string());
  return read_predictions(in);
}

}  // namespace mednli
