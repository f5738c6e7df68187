#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mednli/checkpoint.h"
#include "mednli/model.h"
#include "mednli/nli.h"

namespace mednli {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 20;
  double clip_norm = 5.0;
  std::size_t patience = 4;
  double step_fraction = 0.2;  // dev evaluation every ceil(fraction * |train|) examples
  std::uint64_t seed = 0;

  void validate() const;

  // Fine-tuning rate used for pretrained encoders; too small for training
  // from scratch.
  static TrainConfig fine_tune();
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>> first;
  std::map<std::string, std::vector<double>> second;
};

// One bias-corrected Adam update from the current gradients. Parameters
// without a gradient are treated as having a zero gradient.
void adam_step(const ParameterList& params, AdamState& state, double learning_rate,
               const AdamHyper& hyper = {});

// Rescales every gradient by threshold / norm when the global L2 norm
// exceeds threshold. Returns the norm before clipping.
double clip_gradients(const ParameterList& params, double threshold);

// Stops after `patience` consecutive evaluations without strict improvement
// over the best loss seen.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience);

  struct Decision {
    bool improved = false;
    bool stop = false;
  };
  Decision observe(double loss);

  std::size_t evaluations() const { return evaluations_; }
  std::size_t best_evaluation() const { return best_evaluation_; }
  double best_loss() const { return best_loss_; }

 private:
  std::size_t patience_;
  std::size_t evaluations_ = 0;
  std::size_t best_evaluation_ = 0;
  std::size_t since_best_ = 0;
  double best_loss_ = 0.0;
};

struct DevMetrics {
  double loss = 0.0;  // mean negative log-likelihood
  double accuracy = 0.0;
};

DevMetrics evaluate(const Model& model, const std::vector<PairInput>& inputs,
                    const std::vector<Label>& labels);
DevMetrics evaluate(const Model& model, const std::vector<NLIExample>& examples);

struct TrainHooks {
  // Replaces the measured dev loss (scripted schedules in tests).
  std::function<double(std::size_t evaluation)> dev_loss_override;
  std::function<void(std::size_t evaluation, const Model& model)> on_evaluation;
  // Return true to end training after this epoch.
  std::function<bool(std::size_t epoch, const Model& model)> on_epoch_end;
};

struct TrainOptions {
  std::string dataset_name = "train";
  std::vector<std::string> prior_provenance;
  TrainHooks hooks;
};

struct TrainResult {
  Checkpoint checkpoint;  // best-dev-loss state
  std::size_t evaluations = 0;
  std::size_t epochs = 0;
  bool early_stopped = false;
};

// Mini-batch training with Adam, clipping and early stopping on dev loss.
// On return the model holds the best checkpoint's parameters.
TrainResult train(Model& model, const std::vector<NLIExample>& train_set,
                  const std::vector<NLIExample>& dev_set, const TrainConfig& config,
                  const TrainOptions& options = {});

enum class HeadPolicy { keep, reset };

std::string to_string(HeadPolicy policy);
HeadPolicy parse_head_policy(std::string_view name);

struct ChainStage {
  std::string name;
  std::vector<NLIExample> train;
  std::vector<NLIExample> dev;
  TrainConfig config;
  HeadPolicy head = HeadPolicy::keep;  // applied when entering this stage from a previous one
};

struct TransferChain {
  std::vector<ChainStage> stages;
};

// Builds one vocabulary over all stage corpora, then models from it.
struct ModelFactory {
  ModelKind kind = ModelKind::compaggr;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::size_t wordpiece_size = 400;

  Vocabulary build_vocabulary(const std::vector<const std::vector<NLIExample>*>& corpora) const;
  std::unique_ptr<Model> create(Vocabulary vocab) const;
};

struct ChainResult {
  Checkpoint checkpoint;
  std::unique_ptr<Model> model;
  std::vector<TrainResult> stages;
};

// Stage k starts from stage k-1's best parameters (stage 0 from fresh
// init) with a fresh optimizer.
ChainResult run_chain(const ModelFactory& factory, const TransferChain& chain);

}  // namespace mednli
