#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mednli/model.h"
#include "mednli/nli.h"

namespace mednli {

// First maximum in class order wins ties.
Label argmax_label(const Probabilities& probs);

struct Prediction {
  std::string pair_id;
  Probabilities probs{};
  Label label = Label::entailment;

  bool operator==(const Prediction&) const = default;
};

Prediction make_prediction(std::string pair_id, const Probabilities& probs);

struct ExampleError {
  std::size_t index = 0;
  std::string pair_id;
  std::string message;
};

struct PointwiseResult {
  std::vector<Prediction> predictions;  // input order, failed examples omitted
  std::vector<ExampleError> errors;
};

PointwiseResult predict_pointwise(const Model& model, const std::vector<NLIExample>& examples);

// Row k holds pair k's probabilities over the three labels.
using ProbabilityMatrix = std::array<Probabilities, kNumClasses>;

struct ListwiseAssignment {
  std::array<Label, kNumClasses> labels{};  // label assigned to pair k
  double score = 0.0;                       // sum of log-probabilities
};

// Best of the six label permutations by summed log-probability; ties go to
// the lexicographically smallest permutation.
ListwiseAssignment assign_listwise(const ProbabilityMatrix& probs);
ListwiseAssignment predict_listwise(const Model& model, const NLITriple& triple);

// Correct / total, aligned by pair id.
double accuracy(const std::vector<Prediction>& predictions, const std::vector<NLIExample>& golds);

struct AgreementPartition {
  std::size_t both = 0;
  std::size_t only_a = 0;
  std::size_t only_b = 0;
  std::size_t neither = 0;

  std::size_t total() const { return both + only_a + only_b + neither; }
  double fraction(std::size_t count) const {
    return static_cast<double>(count) / static_cast<double>(total());
  }
};

AgreementPartition agreement_partition(const std::vector<Prediction>& a,
                                       const std::vector<Prediction>& b,
                                       const std::vector<NLIExample>& golds);

// Mean probability of the predicted label over correct predictions only.
double mean_correct_confidence(const std::vector<Prediction>& predictions,
                               const std::vector<NLIExample>& golds);

// pair_id TAB p_entailment TAB p_contradiction TAB p_neutral TAB label
void write_predictions(std::ostream& out, const std::vector<Prediction>& predictions);
std::vector<Prediction> read_predictions(std::istream& in);
void save_predictions(const std::filesystem::path& path, const std::vector<Prediction>& predictions);
std::vector<Prediction> load_predictions(const std::filesystem::path& path);

}  // namespace mednli
