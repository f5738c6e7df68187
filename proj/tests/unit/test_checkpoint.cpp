#include <doctest.h>

#include <filesystem>

#include "mednli/checkpoint.h"
#include "mednli/error.h"
#include "mednli/training.h"

using namespace mednli;

namespace {

const std::vector<std::string> kCorpus{"patient has fever", "no fever", "denies chest pain", "has pain"};

std::unique_ptr<Model> small_model(ModelKind kind, std::uint64_t seed) {
  Vocabulary vocab = kind == ModelKind::compaggr ? build_word_vocabulary(kCorpus) : train_wordpiece(kCorpus, 40);
  nlohmann::json config = kind == ModelKind::compaggr
                              ? nlohmann::json{{"embed_dim", 4}, {"width", 6}, {"filter_widths", {1, 2}}, {"filters_per_width", 3}}
                              : nlohmann::json{{"d_model", 8}, {"heads", 2}, {"blocks", 1}, {"d_ff", 8}, {"max_len", 16}};
  return make_model(kind, std::move(vocab), config, seed);
}

Checkpoint checkpoint_of(const Model& model) {
  Checkpoint c;
  c.kind = model.kind();
  c.model_config = model.config_json();
  c.train_config = TrainConfig{};
  c.vocabulary = model.vocabulary().tokens();
  c.parameters = snapshot(model.parameters());
  c.adam_step = 7;
  c.adam_first = snapshot(model.parameters());
  c.adam_second = snapshot(model.parameters());
  c.provenance = {"source", "target"};
  c.history = {{1, 1.25, 1.0, 0.5}, {2, 0.1 + 0.2, 1.0 / 3.0, 2.0 / 3.0}};
  c.best_step = 2;
  c.best_dev_loss = 1.0 / 3.0;
  c.best_dev_accuracy = 2.0 / 3.0;
  return c;
}

}  // namespace

TEST_CASE("save, load, save is byte-identical") {
  for (auto kind : {ModelKind::transformer, ModelKind::compaggr}) {
    auto model = small_model(kind, 3);
    Checkpoint c = checkpoint_of(*model);
    const std::string bytes = serialize_checkpoint(c);
    CHECK(bytes.substr(0, 8) == "MEDNLICK");
    Checkpoint back = deserialize_checkpoint(bytes);
    CHECK(back == c);
    CHECK(serialize_checkpoint(back) == bytes);

    auto path = std::filesystem::temp_directory_path() / "mednli_ckpt_test.bin";
    save_checkpoint(path, c);
    CHECK(load_checkpoint(path) == c);
    CHECK(std::filesystem::file_size(path) == bytes.size());
    std::filesystem::remove(path);
  }
}

TEST_CASE("model_from_checkpoint reproduces predictions") {
  for (auto kind : {ModelKind::transformer, ModelKind::compaggr}) {
    auto model = small_model(kind, 4);
    auto copy = model_from_checkpoint(deserialize_checkpoint(serialize_checkpoint(checkpoint_of(*model))));
    CHECK(copy->kind() == kind);
    NLIExample e{"patient has chest pain", "no fever", Label::neutral, "x"};
    CHECK(model->predict(e) == copy->predict(e));
  }
}

TEST_CASE("restore") {
  auto model = small_model(ModelKind::compaggr, 5);
  auto other = small_model(ModelKind::compaggr, 6);
  restore(other->parameters(), snapshot(model->parameters()));
  CHECK(snapshot(other->parameters()) == snapshot(model->parameters()));

  auto blocks = snapshot(model->parameters());
  blocks.pop_back();
  CHECK_THROWS_AS(restore(other->parameters(), blocks), DataError);
  blocks = snapshot(model->parameters());
  blocks[0].shape = {1, blocks[0].values.size()};
  CHECK_THROWS_AS(restore(other->parameters(), blocks), DimensionError);
}

TEST_CASE("corrupt checkpoints are rejected") {
  auto model = small_model(ModelKind::compaggr, 7);
  const std::string bytes = serialize_checkpoint(checkpoint_of(*model));

  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bad), ParseError);
  bad = bytes;
  bad[8] = 9;  // version
  CHECK_THROWS_AS(deserialize_checkpoint(bad), ParseError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes + "x"), ParseError);
  for (std::size_t cut = 0; cut < bytes.size(); cut += 1 + cut / 8) {
    CAPTURE(cut);
    CHECK_THROWS_AS(deserialize_checkpoint(std::string_view(bytes).substr(0, cut)), ParseError);
  }
  bad = bytes;
  auto pos = bad.find("param/");
  REQUIRE(pos != std::string::npos);
  bad.replace(pos, 6, "parax/");
  CHECK_THROWS_AS(deserialize_checkpoint(bad), ParseError);
  bad = bytes;
  pos = bad.find("\"model_kind\"");
  REQUIRE(pos != std::string::npos);
  bad[pos + 1] = 'x';
  CHECK_THROWS_AS(deserialize_checkpoint(bad), ParseError);

  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin"), DataError);
}

TEST_CASE("header and metrics table") {
  auto model = small_model(ModelKind::transformer, 8);
  Checkpoint c = checkpoint_of(*model);
  auto header = nlohmann::json::parse(checkpoint_header(c));
  CHECK(header["model_kind"] == "transformer");
  CHECK(header["provenance"] == nlohmann::json{"source", "target"});
  CHECK(header["best_step"] == 2);
  const std::string table = metrics_table({{1, 0.5, 0.25, 1.0}});
  CHECK(table == "step\ttrain_loss\tdev_loss\tdev_accuracy\n1\t0.5\t0.25\t1\n");
}
