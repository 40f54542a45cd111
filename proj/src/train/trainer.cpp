#include "ncaswarm/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "ncaswarm/model/checkpoint.hpp"

namespace ncaswarm::train {

using nlohmann::json;

void TrainConfig::validate() const {
  auto fraction = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
  };
  fraction(k_new, "k_new");
  fraction(k_replaced, "k_replaced");
  fraction(dropout, "dropout");
  if (k_new + k_replaced > 1.0) throw ConfigError("k_new + k_replaced must not exceed 1");
  if (t_min > t_max) throw ConfigError("t_min must not exceed t_max");
  if (batch_size == 0 || batch_size > pool_size) throw ConfigError("batch_size must be in [1, pool_size]");
  if (channels < 1 || hidden < 1) throw ConfigError("channels and hidden must be positive");
  if (head_inputs > channels) throw ConfigError("head_inputs must not exceed channels");
  if (noise_sigma < 0.0 || learning_rate <= 0.0) throw ConfigError("noise_sigma >= 0 and learning_rate > 0 required");
  const auto& names = dataset_names();
  if (std::find(names.begin(), names.end(), dataset) == names.end())
    throw ConfigError("unknown dataset '" + dataset + "'");
}

json to_json(const TrainConfig& c) {
  return {{"dataset", c.dataset},         {"batch_size", c.batch_size}, {"pool_size", c.pool_size},
          {"channels", c.channels},       {"hidden", c.hidden},         {"head_inputs", c.head_inputs},
          {"t_min", c.t_min},             {"t_max", c.t_max},           {"k_new", c.k_new},
          {"k_replaced", c.k_replaced},   {"dropout", c.dropout},       {"noise_sigma", c.noise_sigma},
          {"learning_rate", c.learning_rate}, {"rotate", c.rotate},     {"iterations", c.iterations},
          {"save_every", c.save_every},   {"seed", c.seed}};
}

TrainConfig config_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("training config must be a JSON object");
  TrainConfig c;
  const json defaults = to_json(c);
  for (auto it = doc.begin(); it != doc.end(); ++it)
    if (!defaults.contains(it.key())) throw ConfigError("unknown config key '" + it.key() + "'");
  try {
    auto get = [&](const char* key, auto& field) {
      if (doc.contains(key)) field = doc.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("dataset", c.dataset);
    get("batch_size", c.batch_size);
    get("pool_size", c.pool_size);
    get("channels", c.channels);
    get("hidden", c.hidden);
    get("head_inputs", c.head_inputs);
    get("t_min", c.t_min);
    get("t_max", c.t_max);
    get("k_new", c.k_new);
    get("k_replaced", c.k_replaced);
    get("dropout", c.dropout);
    get("noise_sigma", c.noise_sigma);
    get("learning_rate", c.learning_rate);
    get("rotate", c.rotate);
    get("iterations", c.iterations);
    get("save_every", c.save_every);
    get("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------- samples

SampleFactory::SampleFactory(const Dataset& ds, std::size_t channels, bool rotate)
    : width_(ds.grid_width), height_(ds.grid_height), channels_(channels), rotate_(rotate) {
  for (const auto& cls : ds.classes) {
    int w = 0, h = 0;
    for (auto c : cls.cells) {
      w = std::max(w, c.x + 1);
      h = std::max(h, c.y + 1);
    }
    if (w > width_ || h > height_) throw ConfigError("shape '" + cls.name + "' does not fit the grid");
    const int ox = (width_ - w) / 2, oy = (height_ - h) / 2;
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(width_ * height_), 0);
    for (auto c : cls.cells) mask[static_cast<std::size_t>((c.y + oy) * width_ + c.x + ox)] = 1;
    classes_.push_back(std::move(mask));
  }
}

std::vector<std::uint8_t> SampleFactory::footprint(int label) const { return classes_.at(static_cast<std::size_t>(label)); }

void SampleFactory::randomize_theta(PoolSample& s, CounterRng& rng) const {
  for (auto& t : s.theta) t = rotate_ ? static_cast<std::uint8_t>(rng.below(4)) : 0;
}

PoolSample SampleFactory::seed(int label, CounterRng& rng) const {
  const auto cells = static_cast<std::size_t>(width_ * height_);
  PoolSample s;
  s.label = label;
  s.alive = footprint(label);
  s.state.assign(cells * channels_, 0.0f);
  s.theta.assign(cells, 0);
  for (std::size_t i = 0; i < cells; ++i)
    if (s.alive[i]) s.state[i * channels_] = 1.0f;
  randomize_theta(s, rng);
  return s;
}

void SampleFactory::mutate(PoolSample& s, int new_label, CounterRng& rng) const {
  const auto next = footprint(new_label);
  for (std::size_t i = 0; i < next.size(); ++i) {
    float* st = s.state.data() + i * channels_;
    if (!next[i]) {
      std::fill(st, st + channels_, 0.0f);
    } else if (!s.alive[i]) {
      std::fill(st, st + channels_, 0.0f);
      st[0] = 1.0f;
    }
  }
  s.alive = next;
  s.label = new_label;
  randomize_theta(s, rng);
}

Batch gather_batch(const std::vector<const PoolSample*>& samples, int width, int height, std::size_t channels) {
  Batch b;
  for (const auto* s : samples) {
    auto cells = append_sample(b.graph, width, height, s->alive.data(), s->theta.data(), s->label);
    for (auto idx : cells) {
      const float* src = s->state.data() + static_cast<std::size_t>(idx) * channels;
      b.state.insert(b.state.end(), src, src + channels);
    }
    b.cells.push_back(std::move(cells));
  }
  return b;
}

void scatter_batch(const Batch& b, const std::vector<PoolSample*>& samples, std::size_t channels) {
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const std::size_t r0 = b.graph.sample_begin[k];
    const auto& cells = b.cells[k];
    for (std::size_t j = 0; j < cells.size(); ++j) {
      const float* src = b.state.data() + (r0 + j) * channels;
      std::copy(src, src + channels, samples[k]->state.data() + static_cast<std::size_t>(cells[j]) * channels);
    }
  }
}

// ---------------------------------------------------------------- optimiser

Adam::Adam(std::size_t size, double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(size, 0.0), v_(size, 0.0) {}

void Adam::step(std::vector<float>& params, const std::vector<float>& grad) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * g * g;
    const double mhat = m_[i] / c1, vhat = v_[i] / c2;
    params[i] = static_cast<float>(params[i] - lr_ * mhat / (std::sqrt(vhat) + eps_));
  }
}

// ---------------------------------------------------------------- trainer

model::NcaModel initial_model(const TrainConfig& cfg, const Dataset& ds) {
  const auto C = ds.class_count();
  std::optional<std::size_t> head;
  if (cfg.head_inputs > 0) head = cfg.head_inputs;
  auto m = model::NcaModel::zeros(cfg.channels, cfg.hidden, model::KernelSet::classification(), C, head);
  m.glyphs = ds.glyph_table();
  auto rng = CounterRng::for_stream(cfg.seed, 0);
  const double w1_scale = std::sqrt(2.0 / static_cast<double>(m.perception_size())) * 0.5;
  for (auto& w : m.w1) w = static_cast<float>(rng.normal() * w1_scale);
  if (m.head)
    for (auto& w : m.head->weights) w = static_cast<float>(rng.normal() * 0.1);
  m.validate();
  return m;
}

Trainer::Trainer(TrainConfig cfg, Dataset ds, Engine engine)
    : cfg_(std::move(cfg)),
      ds_(std::move(ds)),
      engine_(engine),
      model_(initial_model(cfg_, ds_)),
      layout_(ParamLayout::for_model(model_)),
      params_(pack_params<float>(model_)),
      adam_(layout_.total, cfg_.learning_rate),
      factory_(ds_, cfg_.channels, cfg_.rotate) {
  cfg_.validate();
  auto rng = CounterRng::for_stream(cfg_.seed, 1);
  pool_.reserve(cfg_.pool_size);
  for (std::size_t i = 0; i < cfg_.pool_size; ++i)
    pool_.push_back(factory_.seed(static_cast<int>(rng.below(ds_.class_count())), rng));
}

model::NcaModel Trainer::model() const {
  auto m = model_;
  unpack_params(params_, m);
  return m;
}

double Trainer::mean_steps_lived() const {
  double total = 0.0;
  for (const auto& s : pool_) total += static_cast<double>(s.steps_lived);
  return pool_.empty() ? 0.0 : total / static_cast<double>(pool_.size());
}

namespace {

double accuracy_of(const ParamLayout& L, const BatchGraph& g, const float* params, const std::vector<float>& state) {
  std::vector<float> out(g.rows * L.C);
  classify_rows(L, g, params, state.data(), out.data());
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t b = 0; b < g.samples(); ++b) {
    const std::size_t r0 = g.sample_begin[b], r1 = g.sample_begin[b + 1];
    if (r1 == r0) continue;
    std::size_t hits = 0;
    for (std::size_t r = r0; r < r1; ++r)
      hits += model::argmax(std::span<const float>(out.data() + r * L.C, L.C)) == static_cast<std::size_t>(g.labels[b]);
    sum += static_cast<double>(hits) / static_cast<double>(r1 - r0);
    ++counted;
  }
  return counted ? sum / static_cast<double>(counted) : 0.0;
}

int other_label(int current, std::size_t classes, CounterRng& rng) {
  if (classes < 2) return current;
  const auto shift = 1 + rng.below(classes - 1);
  return static_cast<int>((static_cast<std::size_t>(current) + shift) % classes);
}

}  // namespace

IterationStats Trainer::iterate() {
  auto rng = CounterRng::for_stream(cfg_.seed, 0x100000 + iteration_);
  const std::size_t B = cfg_.batch_size;

  // Partial Fisher-Yates for a batch without repetition.
  std::vector<std::size_t> order(pool_.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < B; ++i) std::swap(order[i], order[i + rng.below(order.size() - i)]);
  order.resize(B);

  const std::size_t steps = cfg_.t_min + rng.below(cfg_.t_max - cfg_.t_min + 1);
  std::vector<const PoolSample*> in;
  std::vector<PoolSample*> out;
  for (auto i : order) {
    in.push_back(&pool_[i]);
    out.push_back(&pool_[i]);
  }
  Batch batch = gather_batch(in, factory_.width(), factory_.height(), cfg_.channels);

  const KernelContext ctx{&model_.kernels, layout_, engine_};
  const RolloutNoise noise{static_cast<float>(cfg_.dropout), static_cast<float>(cfg_.noise_sigma), rng.next_u64()};
  std::vector<float> grad;
  const float loss = loss_and_gradient<float>(ctx, batch.graph, params_.data(), batch.state, steps, noise, grad);

  IterationStats stats;
  stats.iteration = iteration_;
  stats.steps = steps;
  stats.loss = loss;
  stats.accuracy = accuracy_of(layout_, batch.graph, params_.data(), batch.state);

  adam_.step(params_, grad);

  scatter_batch(batch, out, cfg_.channels);
  for (auto* s : out) s->steps_lived += steps;

  const auto n_new = static_cast<std::size_t>(std::lround(cfg_.k_new * static_cast<double>(B)));
  const auto n_rep = std::min(B - n_new, static_cast<std::size_t>(std::lround(cfg_.k_replaced * static_cast<double>(B))));
  for (std::size_t k = 0; k < n_new; ++k)
    *out[k] = factory_.seed(static_cast<int>(rng.below(ds_.class_count())), rng);
  for (std::size_t k = n_new; k < n_new + n_rep; ++k)
    factory_.mutate(*out[k], other_label(out[k]->label, ds_.class_count(), rng), rng);

  ++iteration_;
  stats.mean_steps_lived = mean_steps_lived();
  return stats;
}

model::NcaModel train_to_directory(const TrainConfig& cfg, const std::string& out_dir,
                                   const std::function<void(const IterationStats&)>& progress) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  {
    std::ofstream f(fs::path(out_dir) / "config.json");
    f << to_json(cfg).dump(2) << '\n';
  }
  std::ofstream metrics(fs::path(out_dir) / "metrics.csv");
  metrics << "iteration,loss,accuracy,steps,mean_steps_lived\n";
  Trainer trainer(cfg, make_dataset(cfg.dataset));
  for (std::size_t i = 0; i < cfg.iterations; ++i) {
    const auto st = trainer.iterate();
    metrics << st.iteration << ',' << st.loss << ',' << st.accuracy << ',' << st.steps << ',' << st.mean_steps_lived
            << '\n';
    if (progress) progress(st);
    if (cfg.save_every > 0 && (i + 1) % cfg.save_every == 0 && i + 1 < cfg.iterations)
      model::save_checkpoint((fs::path(out_dir) / ("checkpoint_" + std::to_string(i + 1) + ".json")).string(),
                             trainer.model());
  }
  metrics.flush();
  auto m = trainer.model();
  model::save_checkpoint((fs::path(out_dir) / "model.json").string(), m);
  return m;
}

// ---------------------------------------------------------------- evaluation

double EvalResult::mean(std::size_t i) const {
  double s = 0.0;
  for (const auto& r : accuracy) s += r[i];
  return accuracy.empty() ? 0.0 : s / static_cast<double>(accuracy.size());
}

double EvalResult::stddev(std::size_t i) const {
  if (accuracy.size() < 2) return 0.0;
  const double m = mean(i);
  double s = 0.0;
  for (const auto& r : accuracy) s += (r[i] - m) * (r[i] - m);
  return std::sqrt(s / static_cast<double>(accuracy.size() - 1));
}

double batch_accuracy(const model::NcaModel& m, const BatchGraph& g, const std::vector<float>& state) {
  const auto params = pack_params<float>(m);
  return accuracy_of(ParamLayout::for_model(m), g, params.data(), state);
}

namespace {

std::vector<PoolSample> fresh_samples(const SampleFactory& f, std::size_t per_class, CounterRng& rng) {
  std::vector<PoolSample> out;
  for (std::size_t k = 0; k < per_class; ++k)
    for (std::size_t c = 0; c < f.classes(); ++c) out.push_back(f.seed(static_cast<int>(c), rng));
  return out;
}

Batch gather_all(const std::vector<PoolSample>& samples, const SampleFactory& f) {
  std::vector<const PoolSample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  return gather_batch(ptrs, f.width(), f.height(), f.channels());
}

}  // namespace

EvalResult evaluate(const model::NcaModel& m, const Dataset& ds, const EvalOptions& opt) {
  m.validate();
  if (m.classes != ds.class_count()) throw ConfigError("model and dataset disagree on the class count");
  const SampleFactory factory(ds, m.channels, opt.random_theta);
  const auto L = ParamLayout::for_model(m);
  const auto params = pack_params<float>(m);
  const KernelContext ctx{&m.kernels, L, Engine::Parallel};
  EvalResult result;
  result.steps = opt.steps;
  std::vector<std::size_t> sorted = opt.steps;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t rep = 0; rep < opt.repeats; ++rep) {
    auto rng = CounterRng::for_stream(opt.seed, 0x200000 + rep);
    auto samples = fresh_samples(factory, opt.per_class, rng);
    Batch batch = gather_all(samples, factory);
    const RolloutNoise noise{static_cast<float>(opt.dropout), static_cast<float>(opt.noise_sigma), rng.next_u64()};
    std::vector<double> acc(opt.steps.size(), 0.0);
    std::size_t done = 0;
    for (auto target : sorted) {
      rollout<float>(ctx, batch.graph, params.data(), batch.state, target - done, noise, done);
      done = target;
      const double a = accuracy_of(L, batch.graph, params.data(), batch.state);
      for (std::size_t i = 0; i < opt.steps.size(); ++i)
        if (opt.steps[i] == target) acc[i] = a;
    }
    result.accuracy.push_back(std::move(acc));
  }
  return result;
}

std::vector<std::size_t> log_schedule(std::size_t total) {
  std::vector<std::size_t> out;
  for (std::size_t decade = 1; decade <= total; decade *= 10)
    for (std::size_t mult : {1, 2, 5})
      if (decade * mult <= total) out.push_back(decade * mult);
  if (out.empty() || out.back() != total) out.push_back(total);
  return out;
}

double AblationCurve::post_change_mean(std::size_t change_every) const {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < steps.size(); ++i)
    if (steps[i] > change_every) {
      s += accuracy[i];
      ++n;
    }
  return n ? s / static_cast<double>(n) : 0.0;
}

double AblationCurve::at(std::size_t step) const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < steps.size(); ++i) {
    const auto d = [&](std::size_t k) { return steps[k] > step ? steps[k] - step : step - steps[k]; };
    if (d(i) < d(best)) best = i;
  }
  return steps.empty() ? 0.0 : accuracy[best];
}

AblationCurve run_ablation(const model::NcaModel& m, const Dataset& ds, const AblationOptions& opt) {
  m.validate();
  const SampleFactory factory(ds, m.channels, opt.random_theta);
  const auto L = ParamLayout::for_model(m);
  const auto params = pack_params<float>(m);
  const KernelContext ctx{&m.kernels, L, Engine::Parallel};
  auto rng = CounterRng::for_stream(opt.seed, 0x300000);
  auto samples = fresh_samples(factory, opt.per_class, rng);
  Batch batch = gather_all(samples, factory);
  const RolloutNoise noise{static_cast<float>(opt.dropout), 0.0f, rng.next_u64()};

  std::set<std::size_t> logged;
  if (opt.protocol == AblationProtocol::Static) {
    for (auto s : log_schedule(opt.total_steps)) logged.insert(s);
  } else {
    for (std::size_t s = 10; s <= opt.total_steps; s += 10) logged.insert(s);
  }
  AblationCurve curve;
  for (std::size_t step = 1; step <= opt.total_steps; ++step) {
    rollout<float>(ctx, batch.graph, params.data(), batch.state, 1, noise, step - 1);
    if (logged.count(step)) {
      curve.steps.push_back(step);
      curve.accuracy.push_back(accuracy_of(L, batch.graph, params.data(), batch.state));
    }
    if (opt.protocol == AblationProtocol::Periodic && opt.change_every > 0 && step % opt.change_every == 0 &&
        step < opt.total_steps) {
      std::vector<PoolSample*> ptrs;
      for (auto& s : samples) ptrs.push_back(&s);
      scatter_batch(batch, ptrs, m.channels);
      for (auto& s : samples) factory.mutate(s, other_label(s.label, ds.class_count(), rng), rng);
      batch = gather_all(samples, factory);
    }
  }
  return curve;
}

}  // namespace ncaswarm::train
