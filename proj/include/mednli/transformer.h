#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "mednli/model.h"
#include "mednli/tensor.h"
#include "mednli/tokenizer.h"

namespace mednli {

// Post-norm encoder: x = LN(x + MHA(x)); x = LN(x + FFN(x)). Head width is
// d_model / heads for queries, keys and values alike.
struct TransformerConfig {
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t blocks = 2;
  std::size_t d_ff = 128;
  std::size_t max_len = 64;
  std::size_t num_classes = 3;
  double dropout = 0.1;

  std::size_t head_dim() const { return d_model / heads; }
  void validate() const;

  // BERT-base geometry, for reference.
  static TransformerConfig bert_base();
};

void to_json(nlohmann::json& j, const TransformerConfig& c);
void from_json(const nlohmann::json& j, TransformerConfig& c);

struct AttentionParams {
  Tensor query_w, query_b;
  Tensor key_w, key_b;
  Tensor value_w, value_b;
  Tensor output_w, output_b;  // output_w is [(heads * head_dim) x d_model]
};

struct BlockParams {
  AttentionParams attention;
  Tensor norm1_gain, norm1_bias;
  Tensor ff1_w, ff1_b, ff2_w, ff2_b;
  Tensor norm2_gain, norm2_bias;
};

struct TransformerParams {
  Tensor token_embedding;     // [vocab x d_model]
  Tensor position_embedding;  // [max_len x d_model]
  Tensor segment_embedding;   // [2 x d_model]
  std::vector<BlockParams> blocks;
  Tensor classifier_w;  // [d_model x classes]
  Tensor classifier_b;  // [classes]

  static TransformerParams init(const TransformerConfig& config, std::size_t vocab_size, Rng& rng);
  ParameterList named() const;
};

struct DropoutContext {
  bool training = false;
  double ratio = 0.0;
  Rng* rng = nullptr;

  Tensor apply(const Tensor& x) const;
};

// Additive key mask: 0 where attended, -1e9 on padding.
inline constexpr double kMaskedLogit = -1e9;
Tensor key_mask(std::span<const int> attention_mask);

// Row i = token[token_ids[i]] + position[position_ids[i]] + segment[segment_ids[i]].
Tensor embed(const EncodedPair& encoded, const TransformerParams& params);

// Scaled dot-product attention per head over projected Q, K, V; heads are
// concatenated and projected back to d_model. When head_weights is given it
// receives the [L x L] attention matrix of every head.
Tensor multi_head_attention(const Tensor& x, std::span<const int> attention_mask,
                            const AttentionParams& params, std::size_t heads,
                            std::vector<Tensor>* head_weights = nullptr);

Tensor transformer_block(const Tensor& x, std::span<const int> attention_mask,
                         const BlockParams& params, std::size_t heads,
                         const DropoutContext& dropout = {});

// [1 x classes] probabilities from the [CLS] position's final state.
Tensor classify(const EncodedPair& encoded, const TransformerParams& params,
                const TransformerConfig& config, const DropoutContext& dropout = {});

class TransformerClassifier final : public Model {
 public:
  TransformerClassifier(Vocabulary vocab, TransformerConfig config, Rng& rng);

  ModelKind kind() const override { return ModelKind::transformer; }
  const Vocabulary& vocabulary() const override { return vocab_; }
  nlohmann::json config_json() const override { return config_; }
  Tensor forward(const PairInput& input, const ForwardOptions& options) const override;
  ParameterList parameters() const override { return params_.named(); }
  std::vector<std::string> head_parameter_names() const override;
  void reset_head(Rng& rng) override;

  const TransformerConfig& config() const { return config_; }
  const TransformerParams& params() const { return params_; }
  TransformerParams& params() { return params_; }

 private:
  Vocabulary vocab_;
  TransformerConfig config_;
  TransformerParams params_;
};

}  // namespace mednli
