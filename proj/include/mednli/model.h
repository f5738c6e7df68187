#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mednli/nli.h"
#include "mednli/rng.h"
#include "mednli/tensor.h"
#include "mednli/tokenizer.h"

namespace mednli {

enum class ModelKind { transformer, compaggr };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);
TokenizerMode tokenizer_mode_for(ModelKind kind);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParameterList = std::vector<NamedTensor>;

// Token ids of one sentence pair, before any model-specific layout.
struct PairInput {
  std::vector<int> premise;
  std::vector<int> hypothesis;
};

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;
};

using Probabilities = std::array<double, kNumClasses>;

// A trainable three-way sentence-pair classifier. Parameters are handles:
// training updates them in place through parameters().
class Model {
 public:
  virtual ~Model() = default;

  virtual ModelKind kind() const = 0;
  virtual const Vocabulary& vocabulary() const = 0;
  virtual nlohmann::json config_json() const = 0;

  // [1 x 3] class probabilities in label order.
  virtual Tensor forward(const PairInput& input, const ForwardOptions& options) const = 0;

  virtual ParameterList parameters() const = 0;
  // Subset updated by the optimizer; defaults to everything.
  virtual ParameterList trainable_parameters() const { return parameters(); }
  // Names of the classification head, re-initialized by reset_head.
  virtual std::vector<std::string> head_parameter_names() const = 0;
  virtual void reset_head(Rng& rng) = 0;

  PairInput prepare(const NLIExample& example) const;
  Probabilities predict(const PairInput& input) const;
  Probabilities predict(const NLIExample& example) const { return predict(prepare(example)); }
};

std::unique_ptr<Model> make_model(ModelKind kind, Vocabulary vocab, const nlohmann::json& config,
                                  std::uint64_t seed);

// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng);

}  // namespace mednli
