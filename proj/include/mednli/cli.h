#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mednli/model.h"
#include "mednli/training.h"

namespace mednli {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

struct StageConfig {
  std::string name;
  std::filesystem::path train;
  std::filesystem::path dev;
  HeadPolicy head = HeadPolicy::keep;
  nlohmann::json train_config = nlohmann::json::object();  // merged over the run's train_config
};

// Declarative run description, read from a JSON file. Relative paths are
// resolved against the file's directory.
struct RunConfig {
  ModelKind model = ModelKind::compaggr;
  nlohmann::json model_config = nlohmann::json::object();
  TrainConfig train;
  nlohmann::json train_json = nlohmann::json::object();
  std::optional<std::filesystem::path> train_path;
  std::optional<std::filesystem::path> dev_path;
  std::vector<StageConfig> stages;
  std::optional<std::filesystem::path> abbrev_table;
  std::filesystem::path out_dir = "out";
  std::uint64_t seed = 0;
  std::size_t wordpiece_size = 400;

  // Schema and path checks; throws ConfigError.
  void validate(bool need_stages) const;
};

// Unknown keys anywhere in the document are rejected.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

// Runs one subcommand line (args exclude the program name).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mednli
