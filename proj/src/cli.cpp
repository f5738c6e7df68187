#include "mednli/cli.h"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "mednli/abbrev.h"
#include "mednli/checkpoint.h"
#include "mednli/compaggr.h"
#include "mednli/error.h"
#include "mednli/eval.h"
#include "mednli/nli.h"
#include "mednli/synth.h"
#include "mednli/transformer.h"

namespace mednli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kModule = "cli";

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(kModule, where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) throw ConfigError(kModule, "unknown key '" + key + "' in " + where);
  }
}

template <typename Config>
void check_struct_keys(const json& j, const std::string& where, const std::set<std::string>& presets) {
  if (!j.is_object()) throw ConfigError(kModule, where + " must be a JSON object");
  std::set<std::string> allowed{"preset"};
  const json defaults = Config{};
  for (const auto& [key, value] : defaults.items()) allowed.insert(key);
  check_keys(j, allowed, where);
  if (j.contains("preset") && !presets.contains(j["preset"].get<std::string>())) {
    throw ConfigError(kModule, "unknown preset '" + j["preset"].get<std::string>() + "' in " + where);
  }
  (void)j.get<Config>();
}

void check_model_config(ModelKind kind, const json& j) {
  if (kind == ModelKind::transformer) {
    check_struct_keys<TransformerConfig>(j, "model_config", {"bert_base"});
  } else {
    check_struct_keys<CompAggrConfig>(j, "model_config", {"large"});
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw ConfigError(kModule, what + " not found: " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(kModule, "cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(kModule, "cannot write " + path.string());
  out << text;
}

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string summary_line(double best_loss, double best_acc, std::optional<double> train_acc) {
  std::string s = "best_dev_loss=" + fixed6(best_loss) + ", best_dev_acc=" + fixed6(best_acc);
  if (train_acc) s += ", train_acc=" + fixed6(*train_acc);
  return s;
}

TrainConfig merged_train_config(const json& base, const json& overlay) {
  json merged = base;
  merged.update(overlay);
  return merged.get<TrainConfig>();
}

// ---- subcommands ----------------------------------------------------------

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

void cmd_synth(const SynthSpec& spec, bool transfer, std::optional<std::size_t> target_count,
               const fs::path& out_dir, Streams io) {
  spec.validate();
  auto write_split = [&](const std::vector<NLIExample>& corpus, const fs::path& dir) {
    DatasetSplit split = split_dataset(corpus);
    fs::create_directories(dir);
    save_dataset(dir / "train.jsonl", split.train);
    save_dataset(dir / "dev.jsonl", split.dev);
    save_dataset(dir / "test.jsonl", split.test);
    io.out << dir.string() << ": train=" << split.train.size() << " dev=" << split.dev.size()
           << " test=" << split.test.size() << '\n';
  };
  if (transfer) {
    auto [source, target] = generate_transfer_pair(spec, target_count);
    write_split(source, out_dir / "source");
    write_split(target, out_dir / "target");
  } else {
    write_split(generate_corpus(spec), out_dir);
  }
}

std::vector<NLIExample> load_for_training(const fs::path& path, const std::optional<AbbrevTable>& table) {
  auto examples = load_dataset(path);
  return table ? expand_dataset(examples, *table) : examples;
}

void execute_chain(const RunConfig& config, const std::vector<StageConfig>& stages, Streams io) {
  std::optional<AbbrevTable> table;
  if (config.abbrev_table) table = load_table(*config.abbrev_table);

  TransferChain chain;
  for (const auto& s : stages) {
    ChainStage stage;
    stage.name = s.name;
    stage.train = load_for_training(s.train, table);
    stage.dev = load_for_training(s.dev, table);
    stage.config = merged_train_config(config.train_json, s.train_config);
    stage.head = s.head;
    chain.stages.push_back(std::move(stage));
  }
  ModelFactory factory{config.model, config.model_config, config.seed, config.wordpiece_size};
  ChainResult result = run_chain(factory, chain);

  fs::create_directories(config.out_dir);
  save_checkpoint(config.out_dir / "checkpoint.bin", result.checkpoint);
  write_file(config.out_dir / "metrics.tsv", metrics_table(result.checkpoint.history));

  std::string summary;
  for (std::size_t k = 0; k + 1 < result.stages.size(); ++k) {
    const auto& ck = result.stages[k].checkpoint;
    summary += "stage " + chain.stages[k].name + ": " +
               summary_line(ck.best_dev_loss, ck.best_dev_accuracy, std::nullopt) + '\n';
  }
  const double train_acc = evaluate(*result.model, chain.stages.back().train).accuracy;
  summary += summary_line(result.checkpoint.best_dev_loss, result.checkpoint.best_dev_accuracy, train_acc) + '\n';
  write_file(config.out_dir / "summary.txt", summary);
  io.out << summary;
}

std::string pair_prefix_key(const NLIExample& ex) {
  auto dash = ex.pair_id.rfind('-');
  return dash == std::string::npos ? ex.pair_id : ex.pair_id.substr(0, dash);
}

void cmd_predict(const fs::path& checkpoint_path, const fs::path& data_path, const std::string& mode,
                 std::optional<ModelKind> expected, const std::string& group_by, const fs::path& out_dir,
                 Streams io) {
  require_file(checkpoint_path, "checkpoint");
  require_file(data_path, "dataset");
  if (mode != "pointwise" && mode != "listwise") throw ConfigError(kModule, "unknown mode '" + mode + "'");
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  if (expected && *expected != ckpt.kind) {
    throw ConfigError(kModule, "checkpoint holds a " + to_string(ckpt.kind) + " model, not " +
                                   to_string(*expected));
  }
  auto model = model_from_checkpoint(ckpt);
  auto examples = load_dataset(data_path);

  std::vector<std::optional<Prediction>> slots(examples.size());
  std::vector<ExampleError> errors;
  std::size_t triples = 0;
  std::vector<bool> covered(examples.size(), false);
  if (mode == "listwise") {
    GroupKey key = group_by == "pair-prefix" ? GroupKey(pair_prefix_key) : GroupKey(premise_key);
    std::unordered_map<std::string, std::size_t> position;
    for (std::size_t i = 0; i < examples.size(); ++i) position.emplace(examples[i].pair_id, i);
    for (const auto& triple : generate_triples(examples, nullptr, key)) {
      try {
        ProbabilityMatrix probs;
        for (std::size_t k = 0; k < kNumClasses; ++k) probs[k] = model->predict(triple.pairs[k]);
        auto assignment = assign_listwise(probs);
        for (std::size_t k = 0; k < kNumClasses; ++k) {
          std::size_t i = position.at(triple.pairs[k].pair_id);
          slots[i] = Prediction{triple.pairs[k].pair_id, probs[k], assignment.labels[k]};
          covered[i] = true;
        }
        ++triples;
      } catch (const Error&) {
        // Falls back to point-wise below, which records the failing pair.
      }
    }
  }
  std::size_t fallback = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (covered[i]) continue;
    if (mode == "listwise") ++fallback;
    try {
      slots[i] = make_prediction(examples[i].pair_id, model->predict(examples[i]));
    } catch (const Error& e) {
      errors.push_back({i, examples[i].pair_id, e.what()});
    }
  }
  std::vector<Prediction> predictions;
  for (auto& s : slots) {
    if (s) predictions.push_back(std::move(*s));
  }
  fs::create_directories(out_dir);
  save_predictions(out_dir / "predictions.tsv", predictions);

  std::ostringstream report;
  report << "mode=" << mode << '\n'
         << "examples=" << examples.size() << '\n'
         << "predicted=" << predictions.size() << '\n'
         << "errors=" << errors.size() << '\n';
  if (mode == "listwise") {
    report << "listwise_triples=" << triples << '\n' << "pointwise_fallback=" << fallback << '\n';
    if (fallback > 0) io.err << "warning: " << fallback << " examples not in complete triples were predicted point-wise\n";
  }
  for (const auto& e : errors) report << "error\t" << e.pair_id << '\t' << e.message << '\n';
  write_file(out_dir / "predict_report.txt", report.str());
  io.out << report.str();
}

void cmd_eval(const fs::path& gold_path, const fs::path& pred_path, const std::optional<fs::path>& pred_b_path,
              const fs::path& out_dir, Streams io) {
  require_file(gold_path, "gold dataset");
  require_file(pred_path, "prediction file");
  if (pred_b_path) require_file(*pred_b_path, "second prediction file");
  auto golds = load_dataset(gold_path);
  auto preds = load_predictions(pred_path);

  json report;
  report["examples"] = golds.size();
  report["accuracy"] = accuracy(preds, golds);
  try {
    report["mean_correct_confidence"] = mean_correct_confidence(preds, golds);
  } catch (const DataError&) {
    report["mean_correct_confidence"] = nullptr;
  }
  std::ostringstream text;
  text << "accuracy=" << fixed6(report["accuracy"].get<double>()) << '\n';
  if (report["mean_correct_confidence"].is_null()) {
    text << "mean_correct_confidence=undefined\n";
  } else {
    text << "mean_correct_confidence=" << fixed6(report["mean_correct_confidence"].get<double>()) << '\n';
  }
  if (pred_b_path) {
    auto preds_b = load_predictions(*pred_b_path);
    auto part = agreement_partition(preds, preds_b, golds);
    report["accuracy_b"] = accuracy(preds_b, golds);
    report["agreement"] = {{"both", part.both},
                           {"only_a", part.only_a},
                           {"only_b", part.only_b},
                           {"neither", part.neither}};
    text << "accuracy_b=" << fixed6(report["accuracy_b"].get<double>()) << '\n';
    for (const auto& [name, count] : {std::pair<const char*, std::size_t>{"both", part.both},
                                      {"only_a", part.only_a},
                                      {"only_b", part.only_b},
                                      {"neither", part.neither}}) {
      text << name << '=' << count << " (" << fixed6(part.fraction(count)) << ")\n";
    }
  }
  fs::create_directories(out_dir);
  write_file(out_dir / "eval.json", report.dump(2) + "\n");
  write_file(out_dir / "eval.txt", text.str());
  io.out << text.str();
}

// Rewrites only the sentence fields, leaving untouched lines byte-for-byte.
void cmd_expand(const fs::path& data_path, const fs::path& table_path, const std::optional<fs::path>& out_path,
                const fs::path& out_dir, Streams io) {
  require_file(data_path, "dataset");
  require_file(table_path, "abbreviation table");
  AbbrevTable table = load_table(table_path);
  (void)load_dataset(data_path);  // full validation with line numbers
  const std::string input = read_file(data_path);

  ExpansionReport report;
  std::string output;
  std::size_t pos = 0;
  while (pos < input.size()) {
    std::size_t nl = input.find('\n', pos);
    const bool has_newline = nl != std::string::npos;
    if (!has_newline) nl = input.size();
    std::string line = input.substr(pos, nl - pos);
    pos = nl + 1;
    std::string body = line;
    const bool crlf = !body.empty() && body.back() == '\r';
    if (crlf) body.pop_back();
    if (body.find_first_not_of(" \t") != std::string::npos) {
      auto obj = nlohmann::ordered_json::parse(body);
      bool changed = false;
      for (const char* key : {"sentence1", "sentence2"}) {
        Expansion e = expand_with_spans(obj[key].get<std::string>(), table);
        for (const auto& r : e.replacements) ++report.counts[table.entries()[r.entry].surface];
        if (!e.replacements.empty()) {
          obj[key] = e.text;
          changed = true;
        }
      }
      if (changed) line = obj.dump() + (crlf ? "\r" : "");
    }
    output += line;
    if (has_newline) output += '\n';
  }
  const fs::path target =
      out_path ? *out_path : out_dir / (data_path.stem().string() + ".expanded" + data_path.extension().string());
  write_file(target, output);
  const fs::path report_path = target.parent_path() / (target.stem().string() + ".report.txt");
  write_file(report_path, report.to_text());
  io.out << report.to_text();
}

void cmd_inspect(const fs::path& checkpoint_path, Streams io) {
  require_file(checkpoint_path, "checkpoint");
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  io.out << checkpoint_header(ckpt) << '\n';
  std::size_t total = 0;
  for (const auto& block : ckpt.parameters) {
    io.out << block.name << '\t';
    for (std::size_t d = 0; d < block.shape.size(); ++d) io.out << (d ? "x" : "") << block.shape[d];
    io.out << '\t' << block.values.size() << '\n';
    total += block.values.size();
  }
  io.out << "parameters\t" << total << '\n';
}

}  // namespace

void RunConfig::validate(bool need_stages) const {
  check_model_config(model, model_config);
  train.validate();
  if (need_stages) {
    if (stages.empty()) throw ConfigError(kModule, "transfer needs at least one stage");
  } else if (!train_path || !dev_path) {
    throw ConfigError(kModule, "train needs both a train and a dev dataset");
  }
  if (train_path) require_file(*train_path, "train dataset");
  if (dev_path) require_file(*dev_path, "dev dataset");
  for (const auto& s : stages) {
    require_file(s.train, "stage '" + s.name + "' train dataset");
    require_file(s.dev, "stage '" + s.name + "' dev dataset");
    (void)merged_train_config(train_json, s.train_config);
  }
  if (abbrev_table) require_file(*abbrev_table, "abbreviation table");
  if (wordpiece_size < 5) throw ConfigError(kModule, "wordpiece_size must be at least 5");
}

RunConfig parse_run_config(const json& j, const fs::path& base_dir) {
  check_keys(j,
             {"model", "tokenizer", "model_config", "train_config", "train", "dev", "stages", "abbrev_table",
              "out_dir", "seed", "wordpiece_size"},
             "run config");
  RunConfig c;
  if (!j.contains("model")) throw ConfigError(kModule, "run config must name a model");
  c.model = parse_model_kind(j["model"].get<std::string>());
  if (j.contains("tokenizer") &&
      parse_tokenizer_mode(j["tokenizer"].get<std::string>()) != tokenizer_mode_for(c.model)) {
    throw ConfigError(kModule, to_string(c.model) + " requires the " + to_string(tokenizer_mode_for(c.model)) +
                                   " tokenizer");
  }
  c.model_config = j.value("model_config", json::object());
  check_model_config(c.model, c.model_config);
  c.seed = j.value("seed", std::uint64_t{0});
  c.train_json = j.value("train_config", json::object());
  check_struct_keys<TrainConfig>(c.train_json, "train_config", {"fine_tune"});
  if (!c.train_json.contains("seed")) c.train_json["seed"] = c.seed;
  c.train = c.train_json.get<TrainConfig>();
  if (j.contains("train")) c.train_path = resolve(base_dir, j["train"].get<std::string>());
  if (j.contains("dev")) c.dev_path = resolve(base_dir, j["dev"].get<std::string>());
  if (j.contains("abbrev_table")) c.abbrev_table = resolve(base_dir, j["abbrev_table"].get<std::string>());
  if (j.contains("out_dir")) c.out_dir = resolve(base_dir, j["out_dir"].get<std::string>());
  c.wordpiece_size = j.value("wordpiece_size", c.wordpiece_size);
  for (const auto& s : j.value("stages", json::array())) {
    check_keys(s, {"name", "train", "dev", "head", "train_config"}, "stage");
    StageConfig stage;
    if (!s.contains("train") || !s.contains("dev")) throw ConfigError(kModule, "every stage needs train and dev");
    stage.train = resolve(base_dir, s["train"].get<std::string>());
    stage.dev = resolve(base_dir, s["dev"].get<std::string>());
    stage.name = s.value("name", stage.train.stem().string());
    stage.head = parse_head_policy(s.value("head", std::string("keep")));
    stage.train_config = s.value("train_config", json::object());
    check_struct_keys<TrainConfig>(stage.train_config, "stage train_config", {"fine_tune"});
    c.stages.push_back(std::move(stage));
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  require_file(path, "config");
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(kModule, path.string() + ": " + e.what());
  }
  return parse_run_config(j, path.parent_path());
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sentence-pair inference toolkit", "mednli"};
  app.require_subcommand(1);
  Streams io{out, err};

  std::string out_dir_flag;
  std::optional<std::uint64_t> seed_flag;
  std::string config_flag, model_flag, mode_flag = "pointwise";

  auto* synth = app.add_subcommand("synth", "Generate synthetic train/dev/test JSONL files");
  SynthSpec spec;
  spec.count = 1000;
  bool transfer_pair = false;
  std::optional<std::size_t> target_count;
  synth->add_option("--count", spec.count, "Examples per corpus");
  synth->add_option("--vocab-size", spec.vocab_size, "Content words per corpus");
  synth->add_option("--templates", spec.templates_per_class, "Templates per class (1-3)");
  synth->add_option("--shift", spec.shift, "Source/target content-word divergence in [0, 1]");
  synth->add_flag("--transfer", transfer_pair, "Write source/ and target/ corpora");
  synth->add_option("--target-count", target_count, "Target corpus size with --transfer");

  auto* train_cmd = app.add_subcommand("train", "Train one model");
  auto* transfer_cmd = app.add_subcommand("transfer", "Train through a chain of datasets");
  std::string train_flag, dev_flag;
  for (auto* cmd : {train_cmd, transfer_cmd}) cmd->add_option("--config", config_flag, "Run config JSON");
  train_cmd->add_option("--train", train_flag, "Train JSONL (overrides config)");
  train_cmd->add_option("--dev", dev_flag, "Dev JSONL (overrides config)");

  auto* predict_cmd = app.add_subcommand("predict", "Write predictions for a dataset");
  std::string checkpoint_flag, data_flag, group_flag = "premise";
  predict_cmd->add_option("--checkpoint", checkpoint_flag, "Checkpoint file")->required();
  predict_cmd->add_option("--data", data_flag, "Dataset JSONL")->required();
  predict_cmd->add_option("--mode", mode_flag, "pointwise or listwise");
  predict_cmd->add_option("--group-by", group_flag, "Triple grouping key: premise or pair-prefix")
      ->check(CLI::IsMember({"premise", "pair-prefix"}));

  auto* eval_cmd = app.add_subcommand("eval", "Score prediction files against gold labels");
  std::string gold_flag, pred_flag;
  std::optional<std::string> pred_b_flag;
  eval_cmd->add_option("--gold", gold_flag, "Gold JSONL")->required();
  eval_cmd->add_option("--pred", pred_flag, "Prediction file")->required();
  eval_cmd->add_option("--pred-b", pred_b_flag, "Second prediction file for the agreement partition");

  auto* expand_cmd = app.add_subcommand("expand", "Expand abbreviations in a dataset");
  std::string table_flag;
  std::optional<std::string> expand_out;
  expand_cmd->add_option("--data", data_flag, "Dataset JSONL")->required();
  expand_cmd->add_option("--table", table_flag, "surface<TAB>expansion table")->required();
  expand_cmd->add_option("--out", expand_out, "Output JSONL path");

  auto* inspect_cmd = app.add_subcommand("inspect-checkpoint", "Print a checkpoint header and shapes");
  inspect_cmd->add_option("--checkpoint", checkpoint_flag, "Checkpoint file")->required();

  for (auto* cmd : app.get_subcommands({})) {
    if (cmd != inspect_cmd && cmd != eval_cmd && cmd != expand_cmd) {
      cmd->add_option("--seed", seed_flag, "Random seed");
    }
    if (cmd != inspect_cmd) cmd->add_option("--out-dir", out_dir_flag, "Output directory");
    if (cmd == train_cmd || cmd == transfer_cmd || cmd == predict_cmd) {
      cmd->add_option("--model", model_flag, "transformer or compaggr")
          ->check(CLI::IsMember({"transformer", "compaggr"}));
    }
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const fs::path default_out = out_dir_flag.empty() ? fs::path("out") : fs::path(out_dir_flag);
  try {
    if (synth->parsed()) {
      if (seed_flag) spec.seed = *seed_flag;
      cmd_synth(spec, transfer_pair, target_count, default_out, io);
    } else if (train_cmd->parsed() || transfer_cmd->parsed()) {
      const bool transfer = transfer_cmd->parsed();
      json raw = json::object();
      fs::path base;
      if (!config_flag.empty()) {
        require_file(config_flag, "config");
        try {
          raw = json::parse(read_file(config_flag));
        } catch (const json::parse_error& e) {
          throw ConfigError(kModule, config_flag + ": " + e.what());
        }
        base = fs::path(config_flag).parent_path();
      } else if (transfer) {
        throw ConfigError(kModule, "transfer needs --config");
      }
      if (!model_flag.empty()) raw["model"] = model_flag;
      if (!raw.contains("model")) raw["model"] = "compaggr";
      if (seed_flag) raw["seed"] = *seed_flag;
      RunConfig config = parse_run_config(raw, base);
      if (seed_flag) config.train_json["seed"] = *seed_flag;
      if (!train_flag.empty()) config.train_path = fs::path(train_flag);
      if (!dev_flag.empty()) config.dev_path = fs::path(dev_flag);
      if (!out_dir_flag.empty()) config.out_dir = out_dir_flag;
      config.validate(transfer);
      std::vector<StageConfig> stages = config.stages;
      if (!transfer) {
        stages = {StageConfig{config.train_path->stem().string(), *config.train_path, *config.dev_path,
                              HeadPolicy::keep, json::object()}};
      }
      execute_chain(config, stages, io);
    } else if (predict_cmd->parsed()) {
      std::optional<ModelKind> expected;
      if (!model_flag.empty()) expected = parse_model_kind(model_flag);
      cmd_predict(checkpoint_flag, data_flag, mode_flag, expected, group_flag, default_out, io);
    } else if (eval_cmd->parsed()) {
      std::optional<fs::path> pred_b;
      if (pred_b_flag) pred_b = *pred_b_flag;
      cmd_eval(gold_flag, pred_flag, pred_b, default_out, io);
    } else if (expand_cmd->parsed()) {
      std::optional<fs::path> target;
      if (expand_out) target = *expand_out;
      cmd_expand(data_flag, table_flag, target, default_out, io);
    } else if (inspect_cmd->parsed()) {
      cmd_inspect(checkpoint_flag, io);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const json::exception& e) {
    err << "error: cli: invalid config value: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace mednli
