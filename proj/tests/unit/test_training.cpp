#include <doctest.h>

#include <cmath>

#include "mednli/error.h"
#include "mednli/synth.h"
#include "mednli/training.h"

using namespace mednli;

namespace {

const nlohmann::json kTinyCompAggr{{"embed_dim", 8}, {"width", 8}, {"filter_widths", {1, 2}},
                                   {"filters_per_width", 4}, {"dropout", 0.0}};

std::vector<NLIExample> synth(std::size_t count, std::uint64_t seed, const std::string& prefix) {
  SynthSpec spec;
  spec.count = count;
  spec.seed = seed;
  spec.id_prefix = prefix;
  return generate_corpus(spec);
}

TrainConfig quick_config(std::size_t epochs = 2) {
  TrainConfig c;
  c.learning_rate = 1e-2;
  c.batch_size = 4;
  c.max_epochs = epochs;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("train config") {
  TrainConfig c;
  CHECK(c.learning_rate == 1e-3);
  CHECK(c.clip_norm == 5.0);
  CHECK(c.patience == 4);
  CHECK(c.step_fraction == 0.2);
  CHECK(TrainConfig::fine_tune().learning_rate == 2e-5);
  c.step_fraction = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.patience = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.learning_rate = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  nlohmann::json j = quick_config();
  CHECK(nlohmann::json(j.get<TrainConfig>()) == j);
}

TEST_CASE("adam examples") {
  SUBCASE("zero gradient leaves parameters unchanged and decays moments") {
    Tensor w = Tensor::vector({1.0, -2.0}, true);
    ParameterList params{{"w", w}};
    AdamState state;
    w.zero_grad();
    w.mutable_grad()[0] = 1.0;
    adam_step(params, state, 0.1);
    const double m_after_one = state.first["w"][0];
    const std::vector<double> before(w.data().begin(), w.data().end());
    w.zero_grad();
    adam_step(params, state, 0.1);
    CHECK(state.first["w"][0] == doctest::Approx(0.9 * m_after_one).epsilon(1e-15));
    CHECK(w(1) == before[1]);
  }
  SUBCASE("first step moves by the learning rate") {
    for (double g : {1e-3, 0.5, -7.0}) {
      Tensor w = Tensor::vector({0.0}, true);
      w.zero_grad();
      w.mutable_grad()[0] = g;
      AdamState state;
      adam_step({{"w", w}}, state, 0.01);
      CHECK(std::abs(w(0)) == doctest::Approx(0.01).epsilon(1e-4));
      CHECK((w(0) < 0) == (g > 0));
    }
  }
  SUBCASE("matches a hand-coded loop on (w - 3)^2") {
    double ref = 0.0, m = 0.0, v = 0.0;
    Tensor w = Tensor::vector({0.0}, true);
    AdamState state;
    double previous = 0.0;
    for (int t = 1; t <= 10; ++t) {
      const double g = 2.0 * (ref - 3.0);
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      ref -= 0.5 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);

      w.zero_grad();
      w.mutable_grad()[0] = 2.0 * (w(0) - 3.0);
      adam_step({{"w", w}}, state, 0.5);
      CHECK(w(0) == doctest::Approx(ref).epsilon(1e-12));
      // w rises every step; it passes 3 at step 7, so the gap itself is not monotone.
      CHECK(w(0) > previous);
      previous = w(0);
    }
    CHECK(std::abs(w(0) - 3.0) < 3.0);
  }
  SUBCASE("non-finite gradient names the parameter") {
    Tensor w = Tensor::vector({0.0}, true);
    w.zero_grad();
    w.mutable_grad()[0] = NAN;
    AdamState state;
    try {
      adam_step({{"layer.w", w}}, state, 0.1);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("layer.w") != std::string::npos);
    }
  }
}

TEST_CASE("clip_gradients examples") {
  auto with_grad = [](std::vector<double> g) {
    Tensor t = Tensor::vector(std::vector<double>(g.size(), 0.0), true);
    t.zero_grad();
    std::copy(g.begin(), g.end(), t.mutable_grad().begin());
    return t;
  };
  Tensor a = with_grad({0.0, 3.0});
  CHECK(clip_gradients({{"a", a}}, 5.0) == 3.0);
  CHECK(a.grad()[1] == 3.0);
  Tensor b = with_grad({3.0, 4.0});
  CHECK(clip_gradients({{"b", b}}, 5.0) == 5.0);
  CHECK(b.grad()[0] == 3.0);
  CHECK(b.grad()[1] == 4.0);
  Tensor c = with_grad({6.0, 8.0});
  CHECK(clip_gradients({{"c", c}}, 5.0) == 10.0);
  CHECK(c.grad()[0] == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(c.grad()[1] == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("clipping shrinks and preserves direction") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    ParameterList params;
    std::vector<std::vector<double>> before;
    for (int k = 0; k < 3; ++k) {
      std::vector<double> g(1 + rng.index(5));
      for (auto& x : g) x = rng.uniform(-4, 4);
      Tensor t = Tensor::vector(std::vector<double>(g.size(), 0.0), true);
      t.zero_grad();
      std::copy(g.begin(), g.end(), t.mutable_grad().begin());
      params.push_back({"p" + std::to_string(k), t});
      before.push_back(g);
    }
    const double threshold = rng.uniform(0.5, 8.0);
    const double norm = clip_gradients(params, threshold);
    const double ratio = norm > threshold ? threshold / norm : 1.0;
    for (std::size_t k = 0; k < params.size(); ++k)
      for (std::size_t i = 0; i < before[k].size(); ++i) {
        const double after = params[k].tensor.grad()[i];
        CHECK(std::abs(after) <= std::abs(before[k][i]));
        CHECK(after == doctest::Approx(before[k][i] * ratio).epsilon(1e-13));
      }
  }
}

TEST_CASE("early stopping rule") {
  SUBCASE("patience 4") {
    EarlyStopping s(4);
    const std::vector<double> losses{1.0, 0.9, 0.91, 0.92, 0.93, 0.94};
    for (std::size_t i = 0; i < losses.size(); ++i) {
      auto d = s.observe(losses[i]);
      CHECK(d.stop == (i == 5));
    }
    CHECK(s.best_evaluation() == 2);
    CHECK(s.best_loss() == 0.9);
  }
  SUBCASE("patience 1 with rising loss") {
    EarlyStopping s(1);
    CHECK_FALSE(s.observe(1.0).stop);
    CHECK(s.observe(1.1).stop);
    CHECK(s.best_evaluation() == 1);
  }
  SUBCASE("ties do not count as improvement") {
    EarlyStopping s(2);
    CHECK(s.observe(1.0).improved);
    CHECK_FALSE(s.observe(1.0).improved);
    CHECK(s.observe(1.0).stop);
  }
  SUBCASE("an improvement resets the counter") {
    EarlyStopping s(2);
    s.observe(1.0);
    s.observe(1.5);
    CHECK(s.observe(0.5).improved);
    CHECK_FALSE(s.observe(0.7).stop);
    CHECK(s.observe(0.6).stop);
    CHECK(s.best_evaluation() == 3);
  }
  CHECK_THROWS_AS(EarlyStopping(0), ConfigError);
}

TEST_CASE("train stops on a scripted dev loss and restores the best state") {
  auto data = synth(30, 1, "t");
  auto dev = synth(6, 2, "d");
  for (std::size_t patience : {1u, 2u, 4u}) {
    CAPTURE(patience);
    ModelFactory factory{ModelKind::compaggr, kTinyCompAggr, 5};
    auto model = factory.create(factory.build_vocabulary({&data}));
    TrainConfig config = quick_config(50);
    config.patience = patience;
    // 1.0, 0.9, then rising forever.
    std::vector<std::vector<ParameterBlock>> seen;
    TrainOptions options;
    options.hooks.dev_loss_override = [](std::size_t k) { return k == 1 ? 1.0 : k == 2 ? 0.9 : 0.9 + 0.01 * double(k); };
    options.hooks.on_evaluation = [&](std::size_t, const Model& m) { seen.push_back(snapshot(m.parameters())); };
    TrainResult r = train(*model, data, dev, config, options);
    CHECK(r.early_stopped);
    CHECK(r.evaluations == 2 + patience);
    CHECK(r.checkpoint.best_step == 2);
    CHECK(r.checkpoint.best_dev_loss == 0.9);
    CHECK(r.checkpoint.history.size() == 2 + patience);
    REQUIRE(seen.size() == 2 + patience);
    CHECK(snapshot(model->parameters()) == seen[1]);
    CHECK(r.checkpoint.parameters == seen[1]);
    for (const auto& row : r.checkpoint.history) CHECK(r.checkpoint.best_dev_loss <= row.dev_loss);
  }
}

TEST_CASE("evaluation interval is ceil(fraction * |train|)") {
  auto data = synth(30, 1, "t");
  auto dev = synth(6, 2, "d");
  ModelFactory factory{ModelKind::compaggr, kTinyCompAggr, 5};
  auto model = factory.create(factory.build_vocabulary({&data}));
  TrainConfig config = quick_config(2);
  config.patience = 100;
  config.step_fraction = 0.3;  // every 9 examples, checked after each batch of 4: 12, 20, 28, 38, 46, 54
  TrainResult r = train(*model, data, dev, config);
  CHECK(r.epochs == 2);
  CHECK_FALSE(r.early_stopped);
  CHECK(r.evaluations == 6);
}

TEST_CASE("training errors") {
  auto data = synth(6, 1, "t");
  ModelFactory factory{ModelKind::compaggr, kTinyCompAggr, 5};
  auto model = factory.create(factory.build_vocabulary({&data}));
  std::vector<NLIExample> empty;
  CHECK_THROWS_AS(train(*model, empty, data, quick_config()), DataError);
  CHECK_THROWS_AS(train(*model, data, empty, quick_config()), DataError);
  ModelFactory transformer{ModelKind::transformer, nlohmann::json::object(), 1};
  CHECK_THROWS_AS(transformer.create(factory.build_vocabulary({&data})), ConfigError);
  TransferChain none;
  CHECK_THROWS_AS(run_chain(factory, none), ConfigError);
  CHECK(parse_head_policy("reset") == HeadPolicy::reset);
  CHECK_THROWS_AS(parse_head_policy("drop"), ConfigError);
}

TEST_CASE("chains") {
  auto s = synth(24, 1, "s"), m = synth(24, 2, "m"), t = synth(24, 3, "t");
  auto dev = synth(6, 4, "dev");
  ModelFactory factory{ModelKind::compaggr, kTinyCompAggr, 9};

  SUBCASE("single stage equals plain train") {
    TransferChain chain{{{"only", t, dev, quick_config(), HeadPolicy::keep}}};
    ChainResult chained = run_chain(factory, chain);
    auto model = factory.create(factory.build_vocabulary({&t}));
    TrainOptions options;
    options.dataset_name = "only";
    TrainResult plain = train(*model, t, dev, quick_config(), options);
    CHECK(serialize_checkpoint(chained.checkpoint) == serialize_checkpoint(plain.checkpoint));
  }
  SUBCASE("provenance and determinism") {
    TransferChain chain{{{"S", s, dev, quick_config(1), HeadPolicy::keep},
                         {"M", m, dev, quick_config(1), HeadPolicy::reset},
                         {"T", t, dev, quick_config(1), HeadPolicy::keep}}};
    ChainResult a = run_chain(factory, chain);
    CHECK(a.checkpoint.provenance == std::vector<std::string>{"S", "M", "T"});
    CHECK(a.stages.size() == 3);
    CHECK(a.stages[0].checkpoint.provenance == std::vector<std::string>{"S"});
    ChainResult b = run_chain(factory, chain);
    CHECK(serialize_checkpoint(a.checkpoint) == serialize_checkpoint(b.checkpoint));
  }
  SUBCASE("stage k starts from stage k-1's best parameters") {
    TransferChain chain{{{"S", s, dev, quick_config(1), HeadPolicy::keep},
                         {"T", t, dev, quick_config(1), HeadPolicy::keep}}};
    ChainResult chained = run_chain(factory, chain);
    auto model = factory.create(factory.build_vocabulary({&s, &t}));
    TrainOptions first;
    first.dataset_name = "S";
    train(*model, s, dev, quick_config(1), first);
    TrainOptions second;
    second.dataset_name = "T";
    second.prior_provenance = {"S"};
    TrainResult manual = train(*model, t, dev, quick_config(1), second);
    CHECK(serialize_checkpoint(chained.checkpoint) == serialize_checkpoint(manual.checkpoint));
  }
}
