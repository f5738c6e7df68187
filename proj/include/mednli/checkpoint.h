#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mednli/model.h"

namespace mednli {

struct ParameterBlock {
  std::string name;
  Shape shape;
  std::vector<double> values;

  bool operator==(const ParameterBlock&) const = default;
};

struct MetricRow {
  std::size_t step = 0;  // evaluation index, 1-based
  double train_loss = 0.0;
  double dev_loss = 0.0;
  double dev_accuracy = 0.0;

  bool operator==(const MetricRow&) const = default;
};

// Everything needed to rebuild and continue a model.
//
// File layout (all integers and floats little-endian):
//   "MEDNLICK" | u32 format version | u64 header bytes | header JSON
//   u64 vocabulary size | per token: u32 bytes, UTF-8 text
//   u64 block count | per block: u32 name bytes, name, u32 rank,
//                      rank x u64 dims, product(dims) x f64
// Blocks are named "param/<name>", "adam.m/<name>", "adam.v/<name>".
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  ModelKind kind = ModelKind::transformer;
  nlohmann::json model_config = nlohmann::json::object();
  nlohmann::json train_config = nlohmann::json::object();
  std::vector<std::string> vocabulary;
  std::vector<ParameterBlock> parameters;
  std::uint64_t adam_step = 0;
  std::vector<ParameterBlock> adam_first;
  std::vector<ParameterBlock> adam_second;
  std::vector<std::string> provenance;
  std::vector<MetricRow> history;
  std::size_t best_step = 0;
  double best_dev_loss = 0.0;
  double best_dev_accuracy = 0.0;

  bool operator==(const Checkpoint&) const = default;
};

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Canonical header text (also what inspect prints).
std::string checkpoint_header(const Checkpoint& checkpoint);

// Tab-separated: step, train_loss, dev_loss, dev_accuracy.
std::string metrics_table(const std::vector<MetricRow>& history);

std::vector<ParameterBlock> snapshot(const ParameterList& params);
// Copies values by name; every model parameter must be present with its shape.
void restore(const ParameterList& params, const std::vector<ParameterBlock>& blocks);

std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace mednli
