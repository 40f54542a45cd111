#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ncaswarm/model/model.hpp"
#include "ncaswarm/rng.hpp"
#include "ncaswarm/train/dataset.hpp"
#include "ncaswarm/train/kernels.hpp"

namespace ncaswarm::train {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::string dataset = "digits-symmetric";
  std::size_t batch_size = 512;
  std::size_t pool_size = 5120;
  std::size_t channels = 14;
  std::size_t hidden = 120;
  std::size_t head_inputs = 10;  // 0 reads classes straight from channels 1..C
  std::size_t t_min = 10;
  std::size_t t_max = 40;
  double k_new = 0.1;
  double k_replaced = 0.1;
  double dropout = 0.5;
  double noise_sigma = 2e-2;
  double learning_rate = 1e-3;
  bool rotate = true;  // false trains with theta = 0 everywhere
  std::size_t iterations = 4000;
  std::size_t save_every = 1000;
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig config_from_json(const nlohmann::json& doc);

// One pool entry on a W x H grid. Exactly the target's cells are alive.
struct PoolSample {
  int label = 0;
  std::vector<float> state;          // W*H*c, zero for dead cells
  std::vector<std::uint8_t> alive;   // W*H
  std::vector<std::uint8_t> theta;   // W*H quarter turns
  std::uint64_t steps_lived = 0;
};

class SampleFactory {
 public:
  SampleFactory(const Dataset& ds, std::size_t channels, bool rotate);

  PoolSample seed(int label, CounterRng& rng) const;
  // Switches the target: alive flags and theta change, surviving cells keep
  // their channels, new cells start from the seed vector.
  void mutate(PoolSample& s, int new_label, CounterRng& rng) const;
  void randomize_theta(PoolSample& s, CounterRng& rng) const;
  // Footprint of a class centred on the grid (alive mask W*H).
  std::vector<std::uint8_t> footprint(int label) const;

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t classes() const noexcept { return classes_.size(); }

 private:
  int width_, height_;
  std::size_t channels_;
  bool rotate_;
  std::vector<std::vector<std::uint8_t>> classes_;
};

// Rows for a set of samples plus their stacked states.
struct Batch {
  BatchGraph graph;
  std::vector<float> state;                       // rows x c
  std::vector<std::vector<std::uint32_t>> cells;  // per sample: grid index of each row
};

Batch gather_batch(const std::vector<const PoolSample*>& samples, int width, int height, std::size_t channels);
void scatter_batch(const Batch& b, const std::vector<PoolSample*>& samples, std::size_t channels);

class Adam {
 public:
  Adam(std::size_t size, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(std::vector<float>& params, const std::vector<float>& grad);
  std::size_t steps() const noexcept { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<double> m_, v_;
};

model::NcaModel initial_model(const TrainConfig& cfg, const Dataset& ds);

struct IterationStats {
  std::size_t iteration = 0;
  std::size_t steps = 0;
  double loss = 0.0;
  double accuracy = 0.0;  // batch, final step, alive cells
  double mean_steps_lived = 0.0;
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, Dataset ds, Engine engine = Engine::Parallel);

  IterationStats iterate();

  const TrainConfig& config() const noexcept { return cfg_; }
  const Dataset& dataset() const noexcept { return ds_; }
  model::NcaModel model() const;
  const std::vector<float>& params() const noexcept { return params_; }
  const std::vector<PoolSample>& pool() const noexcept { return pool_; }
  std::size_t iteration() const noexcept { return iteration_; }
  double mean_steps_lived() const;

 private:
  TrainConfig cfg_;
  Dataset ds_;
  Engine engine_;
  model::NcaModel model_;
  ParamLayout layout_;
  std::vector<float> params_;
  Adam adam_;
  SampleFactory factory_;
  std::vector<PoolSample> pool_;
  std::size_t iteration_ = 0;
};

// Runs cfg.iterations iterations, writing config.json, metrics.csv,
// checkpoint_<iteration>.json every save_every iterations and model.json.
// progress (optional) is called after every iteration.
model::NcaModel train_to_directory(const TrainConfig& cfg, const std::string& out_dir,
                                   const std::function<void(const IterationStats&)>& progress = {});

struct EvalOptions {
  std::vector<std::size_t> steps = {50, 100, 150};
  std::size_t per_class = 16;  // rollouts per class and repetition
  std::size_t repeats = 5;
  bool random_theta = true;
  double dropout = 0.5;
  double noise_sigma = 0.0;
  std::uint64_t seed = 1;
};

struct EvalResult {
  std::vector<std::size_t> steps;
  std::vector<std::vector<double>> accuracy;  // [repeat][step index]

  double mean(std::size_t step_index) const;
  double stddev(std::size_t step_index) const;
};

// Fraction of alive cells whose argmax output equals the label, averaged over
// rollouts started from fresh seeds.
EvalResult evaluate(const model::NcaModel& m, const Dataset& ds, const EvalOptions& opt);

// Per-row accuracy of one state; used by evaluation and ablation.
double batch_accuracy(const model::NcaModel& m, const BatchGraph& g, const std::vector<float>& state);

enum class AblationProtocol { Static, Periodic };

struct AblationOptions {
  AblationProtocol protocol = AblationProtocol::Static;
  std::size_t total_steps = 5000;
  std::size_t change_every = 1000;  // periodic only
  std::size_t per_class = 8;
  bool random_theta = true;
  double dropout = 0.5;
  std::uint64_t seed = 1;
};

struct AblationCurve {
  std::vector<std::size_t> steps;
  std::vector<double> accuracy;

  // Mean accuracy over logged steps strictly after the first target change.
  double post_change_mean(std::size_t change_every) const;
  // Accuracy at the logged step closest to `step`.
  double at(std::size_t step) const;
};

// Static protocol logs on 1, 2, 5, 10, 20, 50, ... up to total_steps; the
// periodic protocol logs every 10 steps.
AblationCurve run_ablation(const model::NcaModel& m, const Dataset& ds, const AblationOptions& opt);
std::vector<std::size_t> log_schedule(std::size_t total);

}  // namespace ncaswarm::train
