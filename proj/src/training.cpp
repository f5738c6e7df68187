#include "mednli/training.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mednli/error.h"
#include "mednli/eval.h"

namespace mednli {

namespace {

constexpr const char* kModule = "training";

std::vector<ParameterBlock> moments_to_blocks(const ParameterList& params,
                                              const std::map<std::string, std::vector<double>>& m) {
  std::vector<ParameterBlock> blocks;
  for (const auto& p : params) {
    auto it = m.find(p.name);
    if (it != m.end()) blocks.push_back({p.name, p.tensor.shape(), it->second});
  }
  return blocks;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError(kModule, "learning_rate must be positive");
  if (batch_size == 0) throw ConfigError(kModule, "batch_size must be positive");
  if (max_epochs == 0) throw ConfigError(kModule, "max_epochs must be positive");
  if (!(clip_norm > 0.0)) throw ConfigError(kModule, "clip_norm must be positive");
  if (patience == 0) throw ConfigError(kModule, "patience must be at least 1");
  if (!(step_fraction > 0.0 && step_fraction <= 1.0)) {
    throw ConfigError(kModule, "step_fraction must lie in (0, 1]");
  }
}

TrainConfig TrainConfig::fine_tune() {
  TrainConfig c;
  c.learning_rate = 2e-5;
  return c;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
                     {"max_epochs", c.max_epochs},       {"clip_norm", c.clip_norm},
                     {"patience", c.patience},           {"step_fraction", c.step_fraction},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d = j.value("preset", std::string()) == "fine_tune" ? TrainConfig::fine_tune() : TrainConfig{};
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.max_epochs = j.value("max_epochs", d.max_epochs);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
  c.patience = j.value("patience", d.patience);
  c.step_fraction = j.value("step_fraction", d.step_fraction);
  c.seed = j.value("seed", d.seed);
  c.validate();
}

void adam_step(const ParameterList& params, AdamState& state, double learning_rate,
               const AdamHyper& hyper) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError(kModule, "non-finite gradient in parameter '" + p.name + "'");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(hyper.beta1, t);
  const double correction2 = 1.0 - std::pow(hyper.beta2, t);
  for (const auto& p : params) {
    Tensor param = p.tensor;
    const std::size_t n = param.size();
    auto& m = state.first[p.name];
    auto& v = state.second[p.name];
    if (m.empty()) {
      m.assign(n, 0.0);
      v.assign(n, 0.0);
    }
    auto values = param.mutable_data();
    auto grad = param.grad();
    const bool has_grad = !grad.empty();
    for (std::size_t i = 0; i < n; ++i) {
      const double g = has_grad ? grad[i] : 0.0;
      m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g;
      v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      values[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + hyper.eps);
    }
  }
}

double clip_gradients(const ParameterList& params, double threshold) {
  double squared = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) squared += g * g;
  }
  const double norm = std::sqrt(squared);
  if (norm > threshold) {
    const double factor = threshold / norm;
    for (const auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      Tensor t = p.tensor;
      for (double& g : t.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

EarlyStopping::EarlyStopping(std::size_t patience) : patience_(patience) {
  if (patience == 0) throw ConfigError(kModule, "patience must be at least 1");
}

EarlyStopping::Decision EarlyStopping::observe(double loss) {
  ++evaluations_;
  Decision d;
  if (evaluations_ == 1 || loss < best_loss_) {
    best_loss_ = loss;
    best_evaluation_ = evaluations_;
    since_best_ = 0;
    d.improved = true;
  } else {
    ++since_best_;
    d.stop = since_best_ >= patience_;
  }
  return d;
}

DevMetrics evaluate(const Model& model, const std::vector<PairInput>& inputs,
                    const std::vector<Label>& labels) {
  if (inputs.empty()) throw DataError(kModule, "evaluation set is empty");
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Probabilities p = model.predict(inputs[i]);
    const double pg = std::max(p[static_cast<std::size_t>(label_index(labels[i]))], 1e-12);
    loss -= std::log(pg);
    if (argmax_label(p) == labels[i]) ++correct;
  }
  const double n = static_cast<double>(inputs.size());
  return {loss / n, static_cast<double>(correct) / n};
}

DevMetrics evaluate(const Model& model, const std::vector<NLIExample>& examples) {
  std::vector<PairInput> inputs;
  std::vector<Label> labels;
  for (const auto& ex : examples) {
    inputs.push_back(model.prepare(ex));
    labels.push_back(ex.gold_label);
  }
  return evaluate(model, inputs, labels);
}

TrainResult train(Model& model, const std::vector<NLIExample>& train_set,
                  const std::vector<NLIExample>& dev_set, const TrainConfig& config,
                  const TrainOptions& options) {
  config.validate();
  if (train_set.empty()) throw DataError(kModule, "training set is empty");
  if (dev_set.empty()) throw DataError(kModule, "dev set is empty");

  std::vector<PairInput> train_inputs, dev_inputs;
  std::vector<int> train_labels;
  std::vector<Label> dev_labels;
  for (const auto& ex : train_set) {
    train_inputs.push_back(model.prepare(ex));
    train_labels.push_back(label_index(ex.gold_label));
  }
  for (const auto& ex : dev_set) {
    dev_inputs.push_back(model.prepare(ex));
    dev_labels.push_back(ex.gold_label);
  }

  Rng shuffle_rng(config.seed);
  Rng dropout_rng = shuffle_rng.fork();
  const ParameterList all_params = model.parameters();
  const ParameterList trainable = model.trainable_parameters();
  AdamState adam;
  EarlyStopping stopper(config.patience);
  const auto interval = static_cast<std::size_t>(
      std::ceil(config.step_fraction * static_cast<double>(train_set.size())));

  TrainResult result;
  std::vector<MetricRow> history;
  std::vector<ParameterBlock> best_params = snapshot(all_params);
  AdamState best_adam;
  DevMetrics best_metrics;
  std::size_t seen = 0, next_eval = interval;
  double running_loss = 0.0;
  std::size_t running_count = 0;
  std::vector<std::size_t> order(train_set.size());
  bool stop = false;

  for (std::size_t epoch = 1; epoch <= config.max_epochs && !stop; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size() && !stop; start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      for (const auto& p : trainable) {
        Tensor t = p.tensor;
        t.zero_grad();
      }
      std::vector<Tensor> rows;
      std::vector<int> labels;
      ForwardOptions fwd{true, &dropout_rng};
      for (std::size_t k = start; k < end; ++k) {
        rows.push_back(model.forward(train_inputs[order[k]], fwd));
        labels.push_back(train_labels[order[k]]);
      }
      Tensor loss = nll_loss(concat_rows(rows), labels);
      running_loss += loss.item();
      running_count += labels.size();
      loss.backward();
      clip_gradients(trainable, config.clip_norm);
      adam_step(trainable, adam, config.learning_rate);
      seen += end - start;

      if (seen < next_eval) continue;
      while (next_eval <= seen) next_eval += interval;
      const std::size_t index = stopper.evaluations() + 1;
      DevMetrics dev = evaluate(model, dev_inputs, dev_labels);
      if (options.hooks.dev_loss_override) dev.loss = options.hooks.dev_loss_override(index);
      history.push_back({index, running_loss / static_cast<double>(running_count), dev.loss, dev.accuracy});
      running_loss = 0.0;
      running_count = 0;
      auto decision = stopper.observe(dev.loss);
      if (decision.improved) {
        best_params = snapshot(all_params);
        best_adam = adam;
        best_metrics = dev;
      }
      if (options.hooks.on_evaluation) options.hooks.on_evaluation(index, model);
      if (decision.stop) {
        stop = true;
        result.early_stopped = true;
      }
    }
    result.epochs = epoch;
    if (!stop && options.hooks.on_epoch_end && options.hooks.on_epoch_end(epoch, model)) stop = true;
  }

  restore(all_params, best_params);
  Checkpoint& ckpt = result.checkpoint;
  ckpt.kind = model.kind();
  ckpt.model_config = model.config_json();
  ckpt.train_config = config;
  ckpt.vocabulary = model.vocabulary().tokens();
  ckpt.parameters = std::move(best_params);
  ckpt.adam_step = best_adam.step;
  ckpt.adam_first = moments_to_blocks(all_params, best_adam.first);
  ckpt.adam_second = moments_to_blocks(all_params, best_adam.second);
  ckpt.provenance = options.prior_provenance;
  ckpt.provenance.push_back(options.dataset_name);
  ckpt.history = std::move(history);
  ckpt.best_step = stopper.best_evaluation();
  ckpt.best_dev_loss = stopper.best_loss();
  ckpt.best_dev_accuracy = best_metrics.accuracy;
  result.evaluations = stopper.evaluations();
  return result;
}

std::string to_string(HeadPolicy policy) { return policy == HeadPolicy::keep ? "keep" : "reset"; }

HeadPolicy parse_head_policy(std::string_view name) {
  if (name == "keep") return HeadPolicy::keep;
  if (name == "reset") return HeadPolicy::reset;
  throw ConfigError(kModule, "unknown head policy '" + std::string(name) + "'");
}

Vocabulary ModelFactory::build_vocabulary(
    const std::vector<const std::vector<NLIExample>*>& corpora) const {
  std::vector<std::string> sentences;
  for (const auto* corpus : corpora) {
    for (const auto& ex : *corpus) {
      sentences.push_back(ex.premise);
      sentences.push_back(ex.hypothesis);
    }
  }
  if (sentences.empty()) throw DataError(kModule, "no sentences to build a vocabulary from");
  if (kind == ModelKind::transformer) return train_wordpiece(sentences, wordpiece_size);
  return build_word_vocabulary(sentences);
}

std::unique_ptr<Model> ModelFactory::create(Vocabulary vocab) const {
  if (vocab.mode() != tokenizer_mode_for(kind)) {
    throw ConfigError(kModule, to_string(kind) + " model cannot use a " + to_string(vocab.mode()) +
                                   " vocabulary");
  }
  return make_model(kind, std::move(vocab), config, seed);
}

ChainResult run_chain(const ModelFactory& factory, const TransferChain& chain) {
  if (chain.stages.empty()) throw ConfigError(kModule, "transfer chain has no stages");
  std::vector<const std::vector<NLIExample>*> corpora;
  for (const auto& stage : chain.stages) corpora.push_back(&stage.train);

  ChainResult result;
  result.model = factory.create(factory.build_vocabulary(corpora));
  Rng head_rng(factory.seed ^ 0x5bd1e995ULL);
  std::vector<std::string> provenance;
  for (std::size_t k = 0; k < chain.stages.size(); ++k) {
    const auto& stage = chain.stages[k];
    if (k > 0 && stage.head == HeadPolicy::reset) result.model->reset_head(head_rng);
    TrainOptions options;
    options.dataset_name = stage.name;
    options.prior_provenance = provenance;
    result.stages.push_back(train(*result.model, stage.train, stage.dev, stage.config, options));
    provenance = result.stages.back().checkpoint.provenance;
  }
  result.checkpoint = result.stages.back().checkpoint;
  return result;
}

}  // namespace mednli
