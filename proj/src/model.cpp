#include "mednli/model.h"

#include <cmath>

#include "mednli/compaggr.h"
#include "mednli/error.h"
#include "mednli/transformer.h"

namespace mednli {

std::string to_string(ModelKind kind) {
  return kind == ModelKind::transformer ? "transformer" : "compaggr";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "transformer") return ModelKind::transformer;
  if (name == "compaggr") return ModelKind::compaggr;
  throw ConfigError("model", "unknown model kind '" + std::string(name) +
                                 "' (expected transformer or compaggr)");
}

TokenizerMode tokenizer_mode_for(ModelKind kind) {
  return kind == ModelKind::transformer ? TokenizerMode::wordpiece : TokenizerMode::word;
}

PairInput Model::prepare(const NLIExample& example) const {
  PairInput input{tokenize(example.premise, vocabulary()), tokenize(example.hypothesis, vocabulary())};
  if (input.premise.empty() || input.hypothesis.empty()) {
    throw DataError("tokenizer", "pair '" + example.pair_id + "' has an empty " +
                                     (input.premise.empty() ? "premise" : "hypothesis") +
                                     " after tokenization");
  }
  return input;
}

Probabilities Model::predict(const PairInput& input) const {
  NoGradGuard guard;
  Tensor probs = forward(input, ForwardOptions{});
  return {probs(0), probs(1), probs(2)};
}

std::unique_ptr<Model> make_model(ModelKind kind, Vocabulary vocab, const nlohmann::json& config,
                                  std::uint64_t seed) {
  Rng rng(seed);
  const nlohmann::json& cfg = config.is_null() ? nlohmann::json::object() : config;
  if (kind == ModelKind::transformer) {
    return std::make_unique<TransformerClassifier>(std::move(vocab), cfg.get<TransformerConfig>(), rng);
  }
  return std::make_unique<CompAggrModel>(std::move(vocab), cfg.get<CompAggrConfig>(), rng);
}

Tensor xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::vector<double> values(rows * cols);
  for (auto& v : values) v = rng.uniform(-a, a);
  return Tensor({rows, cols}, std::move(values), true);
}

}  // namespace mednli
