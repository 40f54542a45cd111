// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Trained checkpoints are read from data/checkpoints
// and trained in place when missing (slow: tens of minutes per model).
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "../common/gradcheck.hpp"
#include "ncaswarm/model/checkpoint.hpp"
#include "ncaswarm/model/compiler.hpp"
#include "ncaswarm/model/firefly.hpp"
#include "ncaswarm/sim/firefly_experiment.hpp"
#include "ncaswarm/sim/metrics.hpp"
#include "ncaswarm/sim/scenario.hpp"
#include "ncaswarm/train/trainer.hpp"

using namespace ncaswarm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << std::fixed << v;
  return s.str();
}

fs::path g_data;

// ---------------------------------------------------------------- models

model::NcaModel trained(const std::string& dataset, const std::string& subdir, std::uint64_t seed, double k_replaced) {
  const auto dir = g_data / "checkpoints" / dataset / subdir;
  if (fs::exists(dir / "model.json")) return model::load_checkpoint((dir / "model.json").string());
  std::cerr << "  training " << dir.string() << " (no shipped checkpoint)\n";
  train::TrainConfig cfg;
  cfg.dataset = dataset;
  cfg.seed = seed;
  cfg.k_replaced = k_replaced;
  return train::train_to_directory(cfg, dir.string());
}

model::NcaModel digits_model(std::uint64_t seed) {
  return trained("digits-symmetric", "seed_" + std::to_string(seed), seed, 0.1);
}

// ---------------------------------------------------------------- 1

model::NcaModel random_model(CounterRng& rng) {
  const std::size_t c = 4 + rng.below(11), h = 8 + rng.below(57), classes = 2 + rng.below(4);
  std::optional<std::size_t> head;
  if (rng.uniform() < 0.7f) head = 2 + rng.below(c - 2);
  const std::size_t cls = head ? classes : std::min(classes, c - 1);
  auto m = model::NcaModel::zeros(c, h, model::KernelSet::classification(), cls, head);
  // Gains keep 40 steps bounded; unchecked growth reaches ~1e6, where a
  // 1e-5 tolerance is below one float ulp.
  const float s1 = 1.0f / std::sqrt(static_cast<float>(m.perception_size()));
  const float s2 = 0.15f / std::sqrt(static_cast<float>(h));
  for (auto& v : m.w1) v = rng.normal() * s1;
  for (auto& v : m.b1) v = rng.normal() * 0.1f;
  for (auto& v : m.w2) v = rng.normal() * s2;
  for (auto& v : m.b2) v = rng.normal() * 0.05f;
  if (m.head)
    for (auto& v : m.head->weights) v = rng.normal() * 0.3f;
  for (auto& v : m.glyphs) v = rng.uniform();
  return m;
}

Outcome vm_equivalence() {
  CounterRng rng(0xACCE551);
  double worst = 0.0, peak = 0.0;
  std::size_t compared = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto m = random_model(rng);
    const std::size_t c = m.channels;
    const int W = 3 + static_cast<int>(rng.below(4)), H = 3 + static_cast<int>(rng.below(4));
    std::vector<std::uint8_t> alive(W * H), turns(W * H);
    for (int i = 0; i < W * H; ++i) {
      alive[i] = rng.uniform() < 0.7f;
      turns[i] = static_cast<std::uint8_t>(rng.below(4));
    }
    alive[0] = 1;

    train::BatchGraph g;
    const auto grid_of_row = train::append_sample(g, W, H, alive.data(), turns.data(), 0);
    std::vector<float> s(g.rows * c);
    for (std::size_t r = 0; r < g.rows; ++r) {
      s[r * c] = 1.0f;
      for (std::size_t ch = 1; ch < c; ++ch) s[r * c + ch] = rng.normal() * 0.5f;
    }

    sim::World w;
    w.set_program(std::make_shared<const vm::Program>(model::compile(m)));
    std::vector<std::uint32_t> ids(g.rows);
    for (std::size_t r = 0; r < g.rows; ++r) {
      const int idx = static_cast<int>(grid_of_row[r]);
      ids[r] = w.add_cell(sim::GridPos{idx % W, idx / W}, model::Rotation{turns[idx]});
      w.set_state(ids[r], std::span<const float>(s.data() + r * c, c));
    }

    const auto params = train::pack_params<float>(m);
    const train::KernelContext ctx{&m.kernels, train::ParamLayout::for_model(m), train::Engine::Reference};
    std::vector<float> next(s.size());
    for (int step = 0; step < 40; ++step) {
      train::forward_step<float>(ctx, g, params.data(), s.data(), next.data(), {}, nullptr);
      s.swap(next);
      w.tick();
      for (std::size_t r = 0; r < g.rows; ++r) {
        const auto& st = w.cell(ids[r]).state;
        for (std::size_t ch = 0; ch < c; ++ch) {
          worst = std::max(worst, static_cast<double>(std::abs(st[ch] - s[r * c + ch])));
          peak = std::max(peak, static_cast<double>(std::abs(s[r * c + ch])));
        }
      }
    }
    compared += g.rows * c;
  }
  return {worst <= 1e-5, "1000 configs x 40 steps, max |vm - reference| = " + fmt(worst, 9) + " over " +
                             std::to_string(compared) + " channels per step, max |state| " + fmt(peak, 2)};
}

// ---------------------------------------------------------------- 2

Outcome gradient_check() {
  std::size_t checked = 0, kinks = 0;
  double worst = 0.0;
  std::vector<std::size_t> per(5, 0);
  for (std::uint64_t seed : {11, 12}) {
    auto p = testing::make_grad_problem(seed, 8, 16, 4, 5);
    const auto rep = testing::check_gradients(p, 13, 1e-3, seed);
    checked += rep.checked;
    kinks += rep.kinks_skipped;
    worst = std::max(worst, rep.max_rel_error);
    for (int k = 0; k < 5; ++k) per[k] += rep.per_tensor[k];
  }
  const bool all_tensors = std::all_of(per.begin(), per.end(), [](std::size_t n) { return n > 0; });
  return {checked >= 100 && all_tensors && worst <= 1e-3,
          std::to_string(checked) + " coordinates (W1 " + std::to_string(per[0]) + ", B1 " + std::to_string(per[1]) +
              ", W2 " + std::to_string(per[2]) + ", B2 " + std::to_string(per[3]) + ", WC " + std::to_string(per[4]) +
              "), max rel error " + fmt(worst, 7) + ", " + std::to_string(kinks) + " kink probes redrawn"};
}

// ---------------------------------------------------------------- 3

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("missing fixture " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome binary_format() {
  const auto dir = g_data / "fixtures";
  nlohmann::json manifest;
  std::ifstream(dir / "manifest.json") >> manifest;
  std::size_t golden = 0, malformed = 0;
  std::vector<std::string> problems;
  for (const auto& name : manifest.at("golden")) {
    const auto bytes = read_bytes(dir / name.get<std::string>());
    try {
      if (vm::save_program(vm::load_program(bytes)) == bytes)
        ++golden;
      else
        problems.push_back(name.get<std::string>() + " did not round-trip");
    } catch (const std::exception& e) {
      problems.push_back(name.get<std::string>() + ": " + e.what());
    }
  }
  for (const auto& [name, code] : manifest.at("malformed").items()) {
    try {
      vm::load_program(read_bytes(dir / name));
      problems.push_back(name + " was accepted");
    } catch (const vm::ProgramError& e) {
      if (vm::to_string(e.code()) == code.get<std::string>())
        ++malformed;
      else
        problems.push_back(name + " gave " + std::string(vm::to_string(e.code())));
    }
  }
  std::string detail = std::to_string(golden) + " golden round-trips, " + std::to_string(malformed) + " rejections";
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty() && golden > 0 && malformed >= 4, detail};
}

// ---------------------------------------------------------------- 4-6

struct EvalSummary {
  std::vector<double> at50, at150;
  double mean50 = 0, mean150 = 0;
};

EvalSummary eval_models(const std::vector<model::NcaModel>& models, const train::Dataset& ds, bool random_theta) {
  EvalSummary s;
  for (std::size_t i = 0; i < models.size(); ++i) {
    train::EvalOptions opt;
    opt.random_theta = random_theta;
    opt.seed = 1000 + i;
    const auto r = train::evaluate(models[i], ds, opt);
    s.at50.push_back(r.mean(0));
    s.at150.push_back(r.mean(2));
  }
  for (std::size_t i = 0; i < models.size(); ++i) {
    s.mean50 += s.at50[i] / static_cast<double>(models.size());
    s.mean150 += s.at150[i] / static_cast<double>(models.size());
  }
  return s;
}

std::string list(const std::vector<double>& v) {
  std::string out;
  for (double x : v) out += (out.empty() ? "" : " ") + fmt(x, 3);
  return out;
}

Outcome digits_training() {
  std::vector<model::NcaModel> ms;
  for (std::uint64_t s = 1; s <= 3; ++s) ms.push_back(digits_model(s));
  const auto e = eval_models(ms, train::make_dataset("digits-symmetric"), true);
  const double drift = std::abs(e.mean150 - e.mean50);
  return {e.mean50 >= 0.85 && drift <= 0.03, "mean@50 " + fmt(e.mean50, 3) + " [" + list(e.at50) + "], mean@150 " +
                                                  fmt(e.mean150, 3) + ", |150-50| " + fmt(drift, 3)};
}

Outcome polyomino_training() {
  std::vector<model::NcaModel> p4, p5;
  for (std::uint64_t s = 1; s <= 3; ++s) {
    p4.push_back(trained("polyomino-4", "rate_0.1_seed_" + std::to_string(s), s, 0.1));
    p5.push_back(trained("polyomino-5", "seed_" + std::to_string(s), s, 0.1));
  }
  const auto e4 = eval_models(p4, train::make_dataset("polyomino-4"), true);
  const auto e5 = eval_models(p5, train::make_dataset("polyomino-5"), true);
  return {e4.mean50 >= 0.70 && e5.mean50 >= 0.25, "polyomino-4 mean@50 " + fmt(e4.mean50, 3) + " [" + list(e4.at50) +
                                                     "], polyomino-5 mean@50 " + fmt(e5.mean50, 3) + " [" +
                                                     list(e5.at50) + "]"};
}

Outcome rotation_invariance() {
  const auto ds = train::make_dataset("digits-symmetric");
  std::vector<model::NcaModel> ms;
  for (std::uint64_t s = 1; s <= 3; ++s) ms.push_back(digits_model(s));
  const auto rnd = eval_models(ms, ds, true);
  const auto fixed = eval_models(ms, ds, false);
  double worst = 0.0;
  for (std::size_t i = 0; i < ms.size(); ++i) worst = std::max(worst, std::abs(rnd.at50[i] - fixed.at50[i]));
  return {worst <= 0.05, "@50 random theta [" + list(rnd.at50) + "] vs theta=0 [" + list(fixed.at50) +
                             "], max |diff| " + fmt(worst, 3)};
}

// ---------------------------------------------------------------- 7

Outcome replacement_ablation() {
  const auto ds = train::make_dataset("polyomino-4");
  double mean[2] = {0, 0};
  std::vector<double> per[2];
  const double rates[2] = {0.1, 0.0};
  for (int r = 0; r < 2; ++r) {
    for (std::uint64_t s = 1; s <= 5; ++s) {
      const auto m = trained("polyomino-4", std::string(r == 0 ? "rate_0.1" : "rate_0") + "_seed_" + std::to_string(s), s,
                             rates[r]);
      train::AblationOptions opt;
      opt.protocol = train::AblationProtocol::Periodic;
      opt.total_steps = 5000;
      opt.change_every = 1000;
      opt.seed = s;
      const double v = train::run_ablation(m, ds, opt).post_change_mean(opt.change_every);
      per[r].push_back(v);
      mean[r] += v / 5.0;
    }
  }
  return {mean[0] >= mean[1], "post-change mean: rate 0.1 " + fmt(mean[0], 3) + " [" + list(per[0]) + "], rate 0 " +
                                  fmt(mean[1], 3) + " [" + list(per[1]) + "]"};
}

// ---------------------------------------------------------------- 8

Outcome firefly_sync() {
  std::size_t synced = 0, decreasing = 0;
  std::string times;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    sim::FireflyExperimentConfig cfg;
    cfg.seed = seed;
    const auto series = sim::run_firefly_experiment(cfg);
    const auto t = series.first_below(0.02);
    if (t) ++synced;
    if (sim::trend_slope(sim::window_means(series.sigma, 10)) < 0.0) ++decreasing;
    times += (times.empty() ? "" : " ") + (t ? fmt(*t, 0) + "s" : std::string("never"));
  }
  return {synced >= 4 && decreasing == 5, std::to_string(synced) + "/5 seeds reach sigma < 0.02 (" + times + "), " +
                                              std::to_string(decreasing) + "/5 with a decreasing 10 s trend"};
}

// ---------------------------------------------------------------- 9

using RawShape = std::vector<std::pair<int, int>>;

RawShape translate_to_origin(RawShape s) {
  int mx = INT32_MAX, my = INT32_MAX;
  for (auto [x, y] : s) mx = std::min(mx, x), my = std::min(my, y);
  for (auto& [x, y] : s) x -= mx, y -= my;
  std::sort(s.begin(), s.end());
  return s;
}

RawShape min_rotation(const RawShape& s) {
  RawShape best = translate_to_origin(s), cur = s;
  for (int k = 0; k < 3; ++k) {
    for (auto& [x, y] : cur) std::tie(x, y) = std::make_pair(-y, x);
    best = std::min(best, translate_to_origin(cur));
  }
  return best;
}

bool connected(const RawShape& s) {
  std::set<std::pair<int, int>> left(s.begin(), s.end()), seen;
  std::vector<std::pair<int, int>> stack{s.front()};
  while (!stack.empty()) {
    auto [x, y] = stack.back();
    stack.pop_back();
    if (!left.count({x, y}) || seen.count({x, y})) continue;
    seen.insert({x, y});
    stack.insert(stack.end(), {{x + 1, y}, {x - 1, y}, {x, y + 1}, {x, y - 1}});
  }
  return seen.size() == s.size();
}

// Every n-subset of the n x n box, kept if edge-connected.
std::set<RawShape> brute_force_fixed(int n) {
  std::set<RawShape> out;
  const int cells = n * n;
  std::vector<int> pick(n);
  std::function<void(int, int)> rec = [&](int k, int from) {
    if (k == n) {
      RawShape s;
      for (int i : pick) s.emplace_back(i % n, i / n);
      if (connected(s)) out.insert(translate_to_origin(s));
      return;
    }
    for (int i = from; i < cells; ++i) {
      pick[k] = i;
      rec(k + 1, i + 1);
    }
  };
  rec(0, 0);
  return out;
}

Outcome polyomino_counts() {
  const int expected[5] = {1, 1, 2, 7, 18};
  bool ok = true;
  std::string detail;
  for (int n = 1; n <= 5; ++n) {
    std::set<RawShape> brute;
    for (const auto& s : brute_force_fixed(n)) brute.insert(min_rotation(s));
    std::set<RawShape> lib;
    for (const auto& s : train::one_sided_polyominoes(n)) {
      RawShape r;
      for (const auto& c : s) r.emplace_back(c.x, c.y);
      lib.insert(min_rotation(r));
    }
    const auto count = train::one_sided_polyominoes(n).size();
    ok &= count == static_cast<std::size_t>(expected[n - 1]) && brute.size() == count && lib == brute;
    detail += (detail.empty() ? "" : ", ") + std::to_string(count) + "/" + std::to_string(brute.size());
  }
  return {ok, "enumerator/brute force for n=1..5: " + detail};
}

// ---------------------------------------------------------------- 10

int majority(const sim::MetricsRow& row, std::size_t classes) {
  std::vector<int> votes(classes, 0);
  for (auto [id, c] : row.classes)
    if (c >= 0) ++votes[static_cast<std::size_t>(c)];
  return static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

struct RotationTrial {
  bool settled = false;
  bool recovered = false;
};

RotationTrial rotate_tile_trial(const model::NcaModel& m, std::shared_ptr<const vm::Program> prog,
                                const train::SampleFactory& factory, int label, std::uint64_t seed) {
  sim::World w(sim::WorldConfig{seed, sim::SchedulerKind::Jittered, 0.5, 1, 50});
  w.set_program(std::move(prog));
  CounterRng rng(derive_key(seed, static_cast<std::uint64_t>(label)));
  const auto mask = factory.footprint(label);
  std::vector<std::uint32_t> ids;
  for (int i = 0; i < factory.width() * factory.height(); ++i)
    if (mask[i])
      ids.push_back(w.add_cell(sim::GridPos{i % factory.width(), i / factory.width()},
                               model::Rotation{static_cast<std::uint8_t>(rng.below(4))}));
  sim::MetricsSpec spec{m, label, std::nullopt};
  w.run(150);
  RotationTrial t;
  t.settled = majority(sim::measure(w, spec), m.classes) == label;
  w.rotate(ids[rng.below(ids.size())], model::Rotation{1});
  w.run(40);
  t.recovered = majority(sim::measure(w, spec), m.classes) == label;
  return t;
}

sim::Scenario random_scenario(std::uint64_t seed, std::size_t commands) {
  sim::Scenario sc;
  sc.world = {seed, sim::SchedulerKind::Jittered, 0.1, 1, 50};
  sc.phase_channel = model::kFireflyPhase;
  sim::World probe(sc.world);
  probe.set_program(std::make_shared<const vm::Program>(model::compile_firefly({})));
  CounterRng rng(seed);
  std::uint32_t next_id = 1;
  auto free_pos = [&] {
    for (;;) {
      sim::GridPos p{static_cast<int>(rng.below(9)) - 4, static_cast<int>(rng.below(9)) - 4};
      if (!probe.cell_at(p)) return p;
    }
  };
  std::uint64_t tick = 0;
  while (sc.commands.size() < commands) {
    tick += rng.below(4);
    while (probe.tick_count() < tick) probe.tick();
    const auto ids = probe.cell_ids();
    const auto any = ids.empty() ? 0u : ids[rng.below(ids.size())];
    sim::Command c{tick, "", {}};
    switch (ids.size() < 6 ? 0 : rng.below(7)) {
      case 0: {
        const auto p = free_pos();
        c.op = "attach";
        c.args = {{"id", next_id++}, {"pos", {p.x, p.y}}, {"rot", 90 * static_cast<int>(rng.below(4))}};
        break;
      }
      case 1: c.op = "detach"; c.args = {{"id", any}}; break;
      case 2: {
        const auto p = free_pos();
        c.op = "move";
        c.args = {{"id", any}, {"pos", {p.x, p.y}}};
        break;
      }
      case 3: c.op = "rotate"; c.args = {{"id", any}, {"degrees", 90 * static_cast<int>(1 + rng.below(3))}}; break;
      case 4: c.op = "power"; c.args = {{"id", any}, {"on", !probe.cell(any).powered}}; break;
      case 5: c.op = "set_state"; c.args = {{"id", any}, {"state", {1.0f, rng.uniform(), 0.0f}}}; break;
      default: c.op = "remove"; c.args = {{"id", any}}; break;
    }
    sim::apply_command(probe, c, {});
    sc.commands.push_back(std::move(c));
  }
  sc.ticks = tick + 100;
  return sc;
}

Outcome scenario_suite() {
  std::vector<std::string> notes;
  bool ok = true;

  // Detach / re-attach persistence with the trained model.
  const auto m = digits_model(1);
  const auto prog = std::make_shared<const vm::Program>(model::compile(m));
  {
    sim::World w(sim::WorldConfig{7, sim::SchedulerKind::Jittered, 0.5, 1, 50});
    w.set_program(prog);
    std::vector<std::uint32_t> ids;
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) ids.push_back(w.add_cell(sim::GridPos{x, y}));
    w.run(30);
    const auto before = w.cell(ids[4]).state;
    w.detach(ids[4]);
    w.run(200);
    const bool same_gap = w.cell(ids[4]).state == before;
    w.attach(ids[4], sim::GridPos{1, 1}, model::Rotation{2});
    const bool same_attach = w.cell(ids[4]).state == before;
    ok &= same_gap && same_attach;
    notes.push_back(std::string("detach persistence ") + (same_gap && same_attach ? "bit-identical" : "CHANGED"));
  }

  // Single-tile rotation on settled digits.
  {
    const auto ds = train::make_dataset("digits-symmetric");
    const train::SampleFactory factory(ds, m.channels, true);
    std::size_t settled = 0, recovered = 0, trials = 0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed)
      for (int label = 0; label < static_cast<int>(ds.class_count()); ++label) {
        const auto t = rotate_tile_trial(m, prog, factory, label, seed);
        ++trials;
        if (!t.settled) continue;
        ++settled;
        if (t.recovered) ++recovered;
      }
    const bool pass = settled * 2 >= trials && recovered == settled;
    ok &= pass;
    notes.push_back("rotate re-convergence " + std::to_string(recovered) + "/" + std::to_string(settled) +
                    " settled digits back within 40 ticks (" + std::to_string(trials) + " trials)");
  }

  // Replay determinism of a 50-command scenario, including a JSON round trip.
  {
    const auto sc = random_scenario(99, 50);
    const auto ff = std::make_shared<const vm::Program>(model::compile_firefly({}));
    const auto a = sim::replay(sc, ff, {}).save();
    const auto b = sim::replay(sc, ff, {}).save();
    const auto c = sim::replay(sim::parse_scenario(sim::to_json(sc)), ff, {}).save();
    const bool same = a == b && a == c;
    ok &= same;
    notes.push_back(std::string("50-command replay ") + (same ? "identical" : "DIVERGED"));
  }

  std::string detail;
  for (const auto& n : notes) detail += (detail.empty() ? "" : "; ") + n;
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-10"};
  std::string data = NCASWARM_DATA_DIR;
  std::vector<int> only;
  app.add_option("--data", data, "Directory holding fixtures/ and checkpoints/")->capture_default_str();
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);
  g_data = data;

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"VM/reference equivalence", vm_equivalence},
      {"gradient check", gradient_check},
      {"binary format fixtures", binary_format},
      {"digits-symmetric training", digits_training},
      {"polyomino training", polyomino_training},
      {"rotation invariance", rotation_invariance},
      {"replacement ablation", replacement_ablation},
      {"firefly synchronisation", firefly_sync},
      {"polyomino class counts", polyomino_counts},
      {"scenario suite", scenario_suite},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), n) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failures;
    std::cout << "criterion " << n << " " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << ": "
              << o.detail << " (" << fmt(secs, 1) << " s)" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
