#include <doctest.h>

#include <cmath>

#include "ncaswarm/train/trainer.hpp"

using namespace ncaswarm;
using namespace ncaswarm::train;

namespace {

TrainConfig tiny(const std::string& dataset = "polyomino-4") {
  TrainConfig c;
  c.dataset = dataset;
  c.batch_size = 16;
  c.pool_size = 64;
  c.hidden = 24;
  c.t_min = 2;
  c.t_max = 5;
  c.iterations = 5;
  return c;
}

void check_pool(const Trainer& t) {
  SampleFactory f(t.dataset(), t.config().channels, t.config().rotate);
  const std::size_t c = t.config().channels;
  REQUIRE(t.pool().size() == t.config().pool_size);
  for (const auto& s : t.pool()) {
    REQUIRE(s.alive == f.footprint(s.label));
    for (std::size_t i = 0; i < s.alive.size(); ++i) {
      if (s.alive[i]) {
        REQUIRE(s.state[i * c] == 1.0f);
        REQUIRE(s.theta[i] < 4);
      } else {
        for (std::size_t ch = 0; ch < c; ++ch) REQUIRE(s.state[i * c + ch] == 0.0f);
      }
    }
  }
}

}  // namespace

TEST_CASE("adam") {
  Adam a(3, 1e-3);
  std::vector<float> p = {1, 2, 3};
  a.step(p, {0, 0, 0});
  CHECK(p == std::vector<float>{1, 2, 3});
  Adam b(2, 1e-3);
  std::vector<float> q = {0, 0};
  b.step(q, {4.0f, -0.5f});
  CHECK(q[0] == doctest::Approx(-1e-3).epsilon(1e-4));
  CHECK(q[1] == doctest::Approx(1e-3).epsilon(1e-4));
}

TEST_CASE("config validation and json") {
  TrainConfig c;
  c.k_new = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.t_min = 50;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.learning_rate = 3e-4;
  const auto back = config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  auto doc = to_json(c);
  doc["batchsize"] = 3;
  CHECK_THROWS_AS(config_from_json(doc), ConfigError);
  CHECK(config_from_json(nlohmann::json::object()).batch_size == 512);
}

TEST_CASE("sample mutation keeps surviving channels") {
  const auto ds = make_dataset("polyomino-4");
  SampleFactory f(ds, 14, true);
  CounterRng rng(3);
  auto s = f.seed(3, rng);
  for (std::size_t i = 0; i < s.alive.size(); ++i)
    if (s.alive[i])
      for (std::size_t ch = 1; ch < 14; ++ch) s.state[i * 14 + ch] = static_cast<float>(i + ch);
  const auto before = s;
  f.mutate(s, 7, rng);
  CHECK(s.label == 7);
  CHECK(s.alive == f.footprint(7));
  for (std::size_t i = 0; i < s.alive.size(); ++i) {
    if (s.alive[i] && before.alive[i]) {
      for (std::size_t ch = 0; ch < 14; ++ch) CHECK(s.state[i * 14 + ch] == before.state[i * 14 + ch]);
    } else if (s.alive[i]) {
      CHECK(s.state[i * 14] == 1.0f);
      for (std::size_t ch = 1; ch < 14; ++ch) CHECK(s.state[i * 14 + ch] == 0.0f);
    }
  }
}

TEST_CASE("pool invariants across iterations") {
  Trainer t(tiny(), make_dataset("polyomino-4"));
  check_pool(t);
  for (int i = 0; i < 6; ++i) {
    const auto st = t.iterate();
    CHECK(std::isfinite(st.loss));
    CHECK(st.steps >= 2);
    CHECK(st.steps <= 5);
    check_pool(t);
  }
}

TEST_CASE("replacement limits") {
  SUBCASE("k_new = 1 reseeds every batch entry") {
    auto c = tiny();
    c.pool_size = c.batch_size;
    c.k_new = 1.0;
    c.k_replaced = 0.0;
    Trainer t(c, make_dataset(c.dataset));
    for (int i = 0; i < 3; ++i) {
      t.iterate();
      for (const auto& s : t.pool()) CHECK(s.steps_lived == 0);
    }
  }
  SUBCASE("k_replaced = 0 never changes a label") {
    auto c = tiny();
    c.k_new = 0.0;
    c.k_replaced = 0.0;
    Trainer t(c, make_dataset(c.dataset));
    std::vector<int> labels;
    for (const auto& s : t.pool()) labels.push_back(s.label);
    for (int i = 0; i < 4; ++i) t.iterate();
    for (std::size_t i = 0; i < labels.size(); ++i) CHECK(t.pool()[i].label == labels[i]);
  }
}

TEST_CASE("training is deterministic for a seed") {
  auto c = tiny();
  Trainer a(c, make_dataset(c.dataset)), b(c, make_dataset(c.dataset));
  for (int i = 0; i < 4; ++i) {
    a.iterate();
    b.iterate();
  }
  CHECK(a.params() == b.params());
  c.seed = 2;
  Trainer d(c, make_dataset(c.dataset));
  for (int i = 0; i < 4; ++i) d.iterate();
  CHECK(a.params() != d.params());
}

TEST_CASE("mean steps lived grows over the first 50 iterations with defaults") {
  Trainer t(TrainConfig{}, make_dataset("digits-symmetric"));
  double last = t.mean_steps_lived();
  for (int i = 0; i < 50; ++i) {
    const double now = t.iterate().mean_steps_lived;
    CHECK(now > last);
    last = now;
  }
}

TEST_CASE("untrained model sits at chance level") {
  TrainConfig c;
  const auto ds = make_dataset("polyomino-4");
  const auto m = initial_model(c, ds);
  EvalOptions opt;
  opt.steps = {5};
  opt.per_class = 2;
  opt.repeats = 1;
  const auto r = evaluate(m, ds, opt);
  CHECK(r.mean(0) == doctest::Approx(1.0 / ds.class_count()).epsilon(1e-9));
}

TEST_CASE("ablation schedules") {
  CHECK(log_schedule(5000) ==
        std::vector<std::size_t>{1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000});
  AblationCurve c{{10, 1000, 1010, 2000}, {0.2, 0.4, 0.6, 0.8}};
  CHECK(c.post_change_mean(1000) == doctest::Approx(0.7));
  CHECK(c.at(1004) == 0.4);
}
