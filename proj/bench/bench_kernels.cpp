#include <benchmark/benchmark.h>

#include "ncaswarm/train/trainer.hpp"

using namespace ncaswarm;
using namespace ncaswarm::train;

namespace {

// A realistic batch: default model shape, digits-symmetric samples.
struct Fixture {
  model::NcaModel m;
  ParamLayout layout;
  std::vector<float> params;
  Batch batch;

  explicit Fixture(std::size_t samples) {
    TrainConfig cfg;
    const auto ds = make_dataset(cfg.dataset);
    m = initial_model(cfg, ds);
    CounterRng rng(7);
    for (auto& v : m.w2) v = rng.normal() * 0.02f;
    layout = ParamLayout::for_model(m);
    params = pack_params<float>(m);
    SampleFactory factory(ds, cfg.channels, true);
    std::vector<PoolSample> pool;
    for (std::size_t i = 0; i < samples; ++i)
      pool.push_back(factory.seed(static_cast<int>(i % ds.class_count()), rng));
    std::vector<const PoolSample*> ptrs;
    for (const auto& s : pool) ptrs.push_back(&s);
    batch = gather_batch(ptrs, factory.width(), factory.height(), cfg.channels);
  }
  KernelContext ctx(Engine e) const { return {&m.kernels, layout, e}; }
};

void forward(benchmark::State& state, Engine engine) {
  Fixture f(static_cast<std::size_t>(state.range(0)));
  std::vector<float> out(f.batch.state.size());
  const StepNoise noise{0.5f, 0.02f, 3};
  for (auto _ : state) {
    forward_step<float>(f.ctx(engine), f.batch.graph, f.params.data(), f.batch.state.data(), out.data(), noise, nullptr);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.batch.graph.rows));
}

void gradient(benchmark::State& state, Engine engine) {
  Fixture f(static_cast<std::size_t>(state.range(0)));
  std::vector<float> grad;
  const RolloutNoise noise{0.5f, 0.02f, 3};
  for (auto _ : state) {
    auto s = f.batch.state;
    benchmark::DoNotOptimize(loss_and_gradient<float>(f.ctx(engine), f.batch.graph, f.params.data(), s, 20, noise, grad));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.batch.graph.rows) * 20);
}

}  // namespace

BENCHMARK_CAPTURE(forward, reference, Engine::Reference)->Arg(64)->Arg(512)->Unit(benchmark::kMicrosecond);
BENCHMARK_CAPTURE(forward, parallel, Engine::Parallel)->Arg(64)->Arg(512)->Unit(benchmark::kMicrosecond);
BENCHMARK_CAPTURE(gradient, reference, Engine::Reference)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(gradient, parallel, Engine::Parallel)->Arg(64)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
