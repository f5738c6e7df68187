#include "mednli/compaggr.h"

#include <algorithm>
#include <set>
#include <string>

#include "mednli/error.h"

namespace mednli {

namespace {

constexpr const char* kModule = "compaggr";

RecurrentParams init_rnn(std::size_t in, std::size_t hidden, Rng& rng) {
  return {xavier_uniform(in, hidden, rng), xavier_uniform(hidden, hidden, rng),
          Tensor({hidden}, true)};
}

Tensor run_direction(const Tensor& inputs, const RecurrentParams& rnn, bool reverse) {
  const std::size_t n = inputs.rows(), hidden = rnn.hidden_w.rows();
  std::vector<Tensor> states(n);
  Tensor h({1, hidden});
  for (std::size_t step = 0; step < n; ++step) {
    const std::size_t t = reverse ? n - 1 - step : step;
    Tensor x = slice_rows(inputs, t, t + 1);
    h = tanh(add(add(matmul(x, rnn.input_w), matmul(h, rnn.hidden_w)), rnn.bias));
    states[t] = h;
  }
  return concat_rows(states);
}

}  // namespace

std::size_t CompAggrConfig::max_filter_width() const {
  return filter_widths.empty() ? 0 : *std::max_element(filter_widths.begin(), filter_widths.end());
}

void CompAggrConfig::validate() const {
  if (embed_dim == 0) throw ConfigError(kModule, "embed_dim must be positive");
  if (width == 0 || width % 2 != 0) {
    throw ConfigError(kModule, "representation width must be positive and even, got " +
                                   std::to_string(width));
  }
  if (filter_widths.empty() || filters_per_width == 0) {
    throw ConfigError(kModule, "need at least one filter width and one filter per width");
  }
  if (std::set<std::size_t>(filter_widths.begin(), filter_widths.end()).size() != filter_widths.size()) {
    throw ConfigError(kModule, "duplicate filter widths");
  }
  for (auto w : filter_widths) {
    if (w == 0) throw ConfigError(kModule, "filter widths must be positive");
  }
  if (num_classes != kNumClasses) throw ConfigError(kModule, "num_classes must be 3");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError(kModule, "dropout must lie in [0, 1)");
}

CompAggrConfig CompAggrConfig::large() {
  CompAggrConfig c;
  c.embed_dim = 100;
  c.width = 100;
  c.filters_per_width = 100;
  c.dropout = 0.7;
  return c;
}

void to_json(nlohmann::json& j, const CompAggrConfig& c) {
  j = nlohmann::json{{"embed_dim", c.embed_dim},
                     {"width", c.width},
                     {"filter_widths", c.filter_widths},
                     {"filters_per_width", c.filters_per_width},
                     {"num_classes", c.num_classes},
                     {"dropout", c.dropout},
                     {"freeze_encoder", c.freeze_encoder}};
}

void from_json(const nlohmann::json& j, CompAggrConfig& c) {
  CompAggrConfig d = j.value("preset", std::string()) == "large" ? CompAggrConfig::large() : CompAggrConfig{};
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.width = j.value("width", d.width);
  c.filter_widths = j.value("filter_widths", d.filter_widths);
  c.filters_per_width = j.value("filters_per_width", d.filters_per_width);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.dropout = j.value("dropout", d.dropout);
  c.freeze_encoder = j.value("freeze_encoder", d.freeze_encoder);
  c.validate();
}

CompAggrParams CompAggrParams::init(const CompAggrConfig& config, std::size_t vocab_size, Rng& rng) {
  config.validate();
  const std::size_t half = config.width / 2;
  CompAggrParams p;
  p.word_embedding = xavier_uniform(vocab_size, config.embed_dim, rng);
  p.forward_rnn = init_rnn(config.embed_dim, half, rng);
  p.backward_rnn = init_rnn(config.embed_dim, half, rng);
  p.attention_w = xavier_uniform(config.width, config.width, rng);
  for (auto w : config.filter_widths) {
    p.banks.push_back({w, xavier_uniform(config.filters_per_width, config.width * w, rng),
                       Tensor({config.filters_per_width}, true)});
  }
  p.classifier_w = xavier_uniform(config.total_filters(), config.num_classes, rng);
  p.classifier_b = Tensor({config.num_classes}, true);
  return p;
}

ParameterList CompAggrParams::encoder() const {
  return {{"embedding.word", word_embedding},
          {"encoder.forward.input_w", forward_rnn.input_w},
          {"encoder.forward.hidden_w", forward_rnn.hidden_w},
          {"encoder.forward.bias", forward_rnn.bias},
          {"encoder.backward.input_w", backward_rnn.input_w},
          {"encoder.backward.hidden_w", backward_rnn.hidden_w},
          {"encoder.backward.bias", backward_rnn.bias}};
}

ParameterList CompAggrParams::named() const {
  ParameterList list = encoder();
  list.push_back({"attention.w", attention_w});
  for (const auto& bank : banks) {
    const std::string prefix = "conv" + std::to_string(bank.width) + ".";
    list.push_back({prefix + "w", bank.weight});
    list.push_back({prefix + "b", bank.bias});
  }
  list.push_back({"classifier.w", classifier_w});
  list.push_back({"classifier.b", classifier_b});
  return list;
}

Tensor contextual_encode(std::span<const int> word_ids, const CompAggrParams& params) {
  if (word_ids.empty()) throw DataError(kModule, "contextual_encode: empty sentence");
  Tensor inputs = gather_rows(params.word_embedding, word_ids);
  std::vector<Tensor> halves{run_direction(inputs, params.forward_rnn, false),
                             run_direction(inputs, params.backward_rnn, true)};
  return transpose(concat_cols(halves));
}

Tensor cross_attention(const Tensor& premise, const Tensor& hypothesis, const Tensor& w,
                       Tensor* weights_out) {
  if (premise.rank() != 2 || hypothesis.rank() != 2 || w.rank() != 2) {
    throw DimensionError(kModule, "cross_attention expects matrices");
  }
  const std::size_t d = premise.rows();
  if (hypothesis.rows() != d || w.rows() != d || w.cols() != d) {
    throw DimensionError(kModule, "cross_attention width mismatch: premise " +
                                      shape_string(premise.shape()) + ", hypothesis " +
                                      shape_string(hypothesis.shape()) + ", W " +
                                      shape_string(w.shape()));
  }
  Tensor logits = matmul(transpose(matmul(w, premise)), hypothesis);
  Tensor weights = softmax(logits, 0);
  if (weights_out) *weights_out = weights;
  return matmul(premise, weights);
}

Tensor compare(const Tensor& aligned, const Tensor& hypothesis) {
  if (aligned.shape() != hypothesis.shape()) {
    throw DimensionError(kModule, "compare shape mismatch " + shape_string(aligned.shape()) + " vs " +
                                      shape_string(hypothesis.shape()));
  }
  return mul(aligned, hypothesis);
}

Tensor aggregate_classify(const Tensor& compared, const CompAggrParams& params,
                          const CompAggrConfig& config, bool training, Rng* rng) {
  if (compared.rank() != 2) throw DimensionError(kModule, "aggregate_classify expects [d x m]");
  Tensor c = compared;
  const std::size_t widest = config.max_filter_width();
  if (c.cols() < widest) {
    std::vector<Tensor> parts{c, Tensor({c.rows(), widest - c.cols()})};
    c = concat_cols(parts);
  }
  Tensor pooled = conv1d_maxpool(c, params.banks);
  if (training && config.dropout > 0.0) {
    if (rng == nullptr) throw ContractError(kModule, "training-mode dropout needs a generator");
    pooled = dropout(pooled, config.dropout, true, *rng);
  }
  return softmax(add(matmul(pooled, params.classifier_w), params.classifier_b), 1);
}

CompAggrModel::CompAggrModel(Vocabulary vocab, CompAggrConfig config, Rng& rng)
    : vocab_(std::move(vocab)), config_(std::move(config)) {
  if (vocab_.mode() != TokenizerMode::word) {
    throw ConfigError(kModule, "compare-aggregate model expects a word-level vocabulary");
  }
  params_ = CompAggrParams::init(config_, vocab_.size(), rng);
}

Tensor CompAggrModel::forward(const PairInput& input, const ForwardOptions& options) const {
  Tensor premise = contextual_encode(input.premise, params_);
  Tensor hypothesis = contextual_encode(input.hypothesis, params_);
  Tensor aligned = cross_attention(premise, hypothesis, params_.attention_w);
  return aggregate_classify(compare(aligned, hypothesis), params_, config_, options.training,
                            options.rng);
}

ParameterList CompAggrModel::trainable_parameters() const {
  ParameterList all = params_.named();
  if (!config_.freeze_encoder) return all;
  ParameterList enc = params_.encoder();
  std::erase_if(all, [&](const NamedTensor& p) {
    return std::any_of(enc.begin(), enc.end(), [&](const NamedTensor& e) { return e.name == p.name; });
  });
  return all;
}

std::vector<std::string> CompAggrModel::head_parameter_names() const {
  return {"classifier.w", "classifier.b"};
}

void CompAggrModel::reset_head(Rng& rng) {
  Tensor w = xavier_uniform(config_.total_filters(), config_.num_classes, rng);
  std::copy(w.data().begin(), w.data().end(), params_.classifier_w.mutable_data().begin());
  auto b = params_.classifier_b.mutable_data();
  std::fill(b.begin(), b.end(), 0.0);
}

}  // namespace mednli
