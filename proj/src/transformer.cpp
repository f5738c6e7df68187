#include "mednli/transformer.h"

#include <cmath>
#include <string>

#include "mednli/error.h"

namespace mednli {

namespace {
constexpr const char* kModule = "transformer";

Tensor zeros_vec(std::size_t n, bool grad = true) { return Tensor({n}, grad); }

Tensor ones_vec(std::size_t n) { return Tensor({n}, std::vector<double>(n, 1.0), true); }

Tensor uniform_table(std::size_t rows, std::size_t cols, double range, Rng& rng) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.uniform(-range, range);
  return Tensor({rows, cols}, std::move(v), true);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }

}  // namespace

void TransformerConfig::validate() const {
  if (heads == 0 || blocks == 0) throw ConfigError(kModule, "heads and blocks must be at least 1");
  if (d_model == 0 || d_model % heads != 0) {
    throw ConfigError(kModule, "d_model " + std::to_string(d_model) + " is not divisible by " +
                                   std::to_string(heads) + " heads");
  }
  if (d_ff == 0) throw ConfigError(kModule, "d_ff must be positive");
  if (max_len < 5) throw ConfigError(kModule, "max_len must be at least 5");
  if (num_classes != kNumClasses) throw ConfigError(kModule, "num_classes must be 3");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError(kModule, "dropout must lie in [0, 1)");
}

TransformerConfig TransformerConfig::bert_base() {
  TransformerConfig c;
  c.d_model = 768;
  c.heads = 12;
  c.blocks = 12;
  c.d_ff = 3072;
  c.max_len = 512;
  return c;
}

void to_json(nlohmann::json& j, const TransformerConfig& c) {
  j = nlohmann::json{{"d_model", c.d_model}, {"heads", c.heads},     {"blocks", c.blocks},
                     {"d_ff", c.d_ff},       {"max_len", c.max_len}, {"num_classes", c.num_classes},
                     {"dropout", c.dropout}, {"norm", "post"}};
}

void from_json(const nlohmann::json& j, TransformerConfig& c) {
  TransformerConfig defaults =
      j.value("preset", std::string()) == "bert_base" ? TransformerConfig::bert_base() : TransformerConfig{};
  c.d_model = j.value("d_model", defaults.d_model);
  c.heads = j.value("heads", defaults.heads);
  c.blocks = j.value("blocks", defaults.blocks);
  c.d_ff = j.value("d_ff", defaults.d_ff);
  c.max_len = j.value("max_len", defaults.max_len);
  c.num_classes = j.value("num_classes", defaults.num_classes);
  c.dropout = j.value("dropout", defaults.dropout);
  if (j.value("norm", std::string("post")) != "post") {
    throw ConfigError(kModule, "only post-norm blocks are implemented");
  }
  c.validate();
}

TransformerParams TransformerParams::init(const TransformerConfig& config, std::size_t vocab_size,
                                          Rng& rng) {
  config.validate();
  const std::size_t d = config.d_model;
  TransformerParams p;
  p.token_embedding = uniform_table(vocab_size, d, 0.1, rng);
  p.position_embedding = uniform_table(config.max_len, d, 0.1, rng);
  p.segment_embedding = uniform_table(2, d, 0.1, rng);
  for (std::size_t b = 0; b < config.blocks; ++b) {
    BlockParams block;
    auto& a = block.attention;
    a.query_w = xavier_uniform(d, d, rng);
    a.query_b = zeros_vec(d);
    a.key_w = xavier_uniform(d, d, rng);
    a.key_b = zeros_vec(d);
    a.value_w = xavier_uniform(d, d, rng);
    a.value_b = zeros_vec(d);
    a.output_w = xavier_uniform(d, d, rng);
    a.output_b = zeros_vec(d);
    block.norm1_gain = ones_vec(d);
    block.norm1_bias = zeros_vec(d);
    block.ff1_w = xavier_uniform(d, config.d_ff, rng);
    block.ff1_b = zeros_vec(config.d_ff);
    block.ff2_w = xavier_uniform(config.d_ff, d, rng);
    block.ff2_b = zeros_vec(d);
    block.norm2_gain = ones_vec(d);
    block.norm2_bias = zeros_vec(d);
    p.blocks.push_back(std::move(block));
  }
  p.classifier_w = xavier_uniform(d, config.num_classes, rng);
  p.classifier_b = zeros_vec(config.num_classes);
  return p;
}

ParameterList TransformerParams::named() const {
  ParameterList list{{"embedding.token", token_embedding},
                     {"embedding.position", position_embedding},
                     {"embedding.segment", segment_embedding}};
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string prefix = "block" + std::to_string(b) + ".";
    const auto& blk = blocks[b];
    const auto& a = blk.attention;
    for (const auto& [name, t] :
         std::initializer_list<std::pair<const char*, const Tensor&>>{
             {"attention.query_w", a.query_w}, {"attention.query_b", a.query_b},
             {"attention.key_w", a.key_w},     {"attention.key_b", a.key_b},
             {"attention.value_w", a.value_w}, {"attention.value_b", a.value_b},
             {"attention.output_w", a.output_w}, {"attention.output_b", a.output_b},
             {"norm1.gain", blk.norm1_gain},   {"norm1.bias", blk.norm1_bias},
             {"ff1.w", blk.ff1_w},             {"ff1.b", blk.ff1_b},
             {"ff2.w", blk.ff2_w},             {"ff2.b", blk.ff2_b},
             {"norm2.gain", blk.norm2_gain},   {"norm2.bias", blk.norm2_bias}}) {
      list.push_back({prefix + name, t});
    }
  }
  list.push_back({"classifier.w", classifier_w});
  list.push_back({"classifier.b", classifier_b});
  return list;
}

Tensor DropoutContext::apply(const Tensor& x) const {
  if (!training || ratio == 0.0) return x;
  if (rng == nullptr) throw ContractError(kModule, "training-mode dropout needs a generator");
  return dropout(x, ratio, training, *rng);
}

Tensor key_mask(std::span<const int> attention_mask) {
  std::vector<double> row(attention_mask.size());
  for (std::size_t j = 0; j < row.size(); ++j) row[j] = attention_mask[j] ? 0.0 : kMaskedLogit;
  return Tensor::vector(std::move(row));
}

Tensor embed(const EncodedPair& encoded, const TransformerParams& params) {
  const std::size_t len = encoded.size();
  if (len == 0 || encoded.segment_ids.size() != len || encoded.position_ids.size() != len) {
    throw DimensionError(kModule, "embed: inconsistent encoded pair lengths");
  }
  for (int s : encoded.segment_ids) {
    if (s != 0 && s != 1) throw DataError(kModule, "embed: segment id " + std::to_string(s));
  }
  Tensor tokens = gather_rows(params.token_embedding, encoded.token_ids);
  Tensor positions = gather_rows(params.position_embedding, encoded.position_ids);
  Tensor segments = gather_rows(params.segment_embedding, encoded.segment_ids);
  return add(add(tokens, positions), segments);
}

Tensor multi_head_attention(const Tensor& x, std::span<const int> attention_mask,
                            const AttentionParams& params, std::size_t heads,
                            std::vector<Tensor>* head_weights) {
  if (x.rank() != 2) throw DimensionError(kModule, "attention input must be [L x d_model]");
  const std::size_t len = x.rows(), d = x.cols();
  if (heads == 0 || d % heads != 0) {
    throw DimensionError(kModule, "d_model " + std::to_string(d) + " not divisible by " +
                                      std::to_string(heads) + " heads");
  }
  if (attention_mask.size() != len) {
    throw DimensionError(kModule, "mask length " + std::to_string(attention_mask.size()) +
                                      " differs from sequence length " + std::to_string(len));
  }
  const std::size_t dk = d / heads;
  Tensor q = linear(x, params.query_w, params.query_b);
  Tensor k = linear(x, params.key_w, params.key_b);
  Tensor v = linear(x, params.value_w, params.value_b);
  Tensor mask = key_mask(attention_mask);
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Tensor> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dk, (h + 1) * dk);
    Tensor kh = slice_cols(k, h * dk, (h + 1) * dk);
    Tensor vh = slice_cols(v, h * dk, (h + 1) * dk);
    Tensor scores = add(scale(matmul(qh, transpose(kh)), inv_sqrt_dk), mask);
    Tensor weights = softmax(scores, 1);
    if (head_weights) head_weights->push_back(weights);
    outputs.push_back(matmul(weights, vh));
  }
  return linear(concat_cols(outputs), params.output_w, params.output_b);
}

Tensor transformer_block(const Tensor& x, std::span<const int> attention_mask,
                         const BlockParams& params, std::size_t heads, const DropoutContext& dropout) {
  Tensor attended = dropout.apply(multi_head_attention(x, attention_mask, params.attention, heads));
  Tensor h = layer_norm(add(x, attended), params.norm1_gain, params.norm1_bias);
  Tensor ff = linear(relu(linear(h, params.ff1_w, params.ff1_b)), params.ff2_w, params.ff2_b);
  return layer_norm(add(h, dropout.apply(ff)), params.norm2_gain, params.norm2_bias);
}

Tensor classify(const EncodedPair& encoded, const TransformerParams& params,
                const TransformerConfig& config, const DropoutContext& dropout) {
  if (encoded.size() > config.max_len) {
    throw DimensionError(kModule, "sequence of " + std::to_string(encoded.size()) +
                                      " exceeds max_len " + std::to_string(config.max_len));
  }
  Tensor h = dropout.apply(embed(encoded, params));
  for (const auto& block : params.blocks) {
    h = transformer_block(h, encoded.attention_mask, block, config.heads, dropout);
  }
  Tensor cls = slice_rows(h, 0, 1);
  return softmax(linear(cls, params.classifier_w, params.classifier_b), 1);
}

TransformerClassifier::TransformerClassifier(Vocabulary vocab, TransformerConfig config, Rng& rng)
    : vocab_(std::move(vocab)), config_(config) {
  if (vocab_.mode() != TokenizerMode::wordpiece) {
    throw ConfigError(kModule, "transformer classifier expects a wordpiece vocabulary");
  }
  params_ = TransformerParams::init(config_, vocab_.size(), rng);
}

Tensor TransformerClassifier::forward(const PairInput& input, const ForwardOptions& options) const {
  // Trailing padding does not change the result, so it is never materialized.
  EncodedPair enc = encode_ids(input.premise, input.hypothesis, config_.max_len).trimmed();
  DropoutContext ctx{options.training, config_.dropout, options.rng};
  return classify(enc, params_, config_, ctx);
}

std::vector<std::string> TransformerClassifier::head_parameter_names() const {
  return {"classifier.w", "classifier.b"};
}

void TransformerClassifier::reset_head(Rng& rng) {
  Tensor w = xavier_uniform(config_.d_model, config_.num_classes, rng);
  std::copy(w.data().begin(), w.data().end(), params_.classifier_w.mutable_data().begin());
  auto b = params_.classifier_b.mutable_data();
  std::fill(b.begin(), b.end(), 0.0);
}

}  // namespace mednli
