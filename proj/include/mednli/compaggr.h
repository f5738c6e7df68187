#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "mednli/model.h"
#include "mednli/tensor.h"

namespace mednli {

// Compare-Aggregate matcher. Sentences are laid out column-wise, [d x len].
struct CompAggrConfig {
  std::size_t embed_dim = 32;   // word embedding width
  std::size_t width = 32;       // contextual representation width d (two directions of d/2)
  std::vector<std::size_t> filter_widths{1, 2, 3, 4, 5};
  std::size_t filters_per_width = 16;
  std::size_t num_classes = 3;
  double dropout = 0.7;
  bool freeze_encoder = false;

  std::size_t total_filters() const { return filter_widths.size() * filters_per_width; }
  std::size_t max_filter_width() const;
  void validate() const;

  // 100-wide projection, five widths x 100 filters.
  static CompAggrConfig large();
};

void to_json(nlohmann::json& j, const CompAggrConfig& c);
void from_json(const nlohmann::json& j, CompAggrConfig& c);

// Elman recurrence h_t = tanh(x_t Wx + h_{t-1} Wh + b), one per direction.
struct RecurrentParams {
  Tensor input_w;   // [embed_dim x d/2]
  Tensor hidden_w;  // [d/2 x d/2]
  Tensor bias;      // [d/2]
};

struct CompAggrParams {
  Tensor word_embedding;  // [vocab x embed_dim]
  RecurrentParams forward_rnn;
  RecurrentParams backward_rnn;
  Tensor attention_w;  // [d x d]
  std::vector<ConvBank> banks;
  Tensor classifier_w;  // [total_filters x classes]
  Tensor classifier_b;  // [classes]

  static CompAggrParams init(const CompAggrConfig& config, std::size_t vocab_size, Rng& rng);
  ParameterList named() const;
  ParameterList encoder() const;
};

// Concatenated forward/backward recurrent states, one column per word.
Tensor contextual_encode(std::span<const int> word_ids, const CompAggrParams& params);

// premise * softmax((W premise)^T hypothesis), the softmax running over
// premise positions for each hypothesis position. weights_out, if given,
// receives the [n x m] weight matrix.
Tensor cross_attention(const Tensor& premise, const Tensor& hypothesis, const Tensor& w,
                       Tensor* weights_out = nullptr);

// Element-wise product of aligned premise and hypothesis columns.
Tensor compare(const Tensor& aligned, const Tensor& hypothesis);

// Pads to the widest filter with zero columns, convolves + max-pools, then
// affine + softmax. Returns [1 x classes].
Tensor aggregate_classify(const Tensor& compared, const CompAggrParams& params,
                          const CompAggrConfig& config, bool training = false, Rng* rng = nullptr);

class CompAggrModel final : public Model {
 public:
  CompAggrModel(Vocabulary vocab, CompAggrConfig config, Rng& rng);

  ModelKind kind() const override { return ModelKind::compaggr; }
  const Vocabulary& vocabulary() const override { return vocab_; }
  nlohmann::json config_json() const override { return config_; }
  Tensor forward(const PairInput& input, const ForwardOptions& options) const override;
  ParameterList parameters() const override { return params_.named(); }
  ParameterList trainable_parameters() const override;
  std::vector<std::string> head_parameter_names() const override;
  void reset_head(Rng& rng) override;

  const CompAggrConfig& config() const { return config_; }
  const CompAggrParams& params() const { return params_; }

 private:
  Vocabulary vocab_;
  CompAggrConfig config_;
  CompAggrParams params_;
};

}  // namespace mednli
