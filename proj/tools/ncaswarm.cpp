#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ncaswarm/model/checkpoint.hpp"
#include "ncaswarm/model/compiler.hpp"
#include "ncaswarm/model/firefly.hpp"
#include "ncaswarm/service/server.hpp"
#include "ncaswarm/sim/firefly_experiment.hpp"
#include "ncaswarm/sim/metrics.hpp"
#include "ncaswarm/sim/scenario.hpp"
#include "ncaswarm/train/trainer.hpp"
#include "svg_plot.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ncaswarm;

namespace {

// Raised for bad flags, missing files and similar caller mistakes (exit 1).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot open " + path);
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw UsageError(path + ": " + e.what());
  }
}

std::ofstream open_out(const std::string& path) {
  if (const auto dir = fs::path(path).parent_path(); !dir.empty()) fs::create_directories(dir);
  std::ofstream f(path);
  if (!f) throw UsageError("cannot write " + path);
  return f;
}

// Writes to the named file, or stdout when the name is empty or "-".
class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty() && path != "-") file_ = open_out(path);
  }
  std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

 private:
  std::ofstream file_;
};

std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  for (std::string tok; std::getline(ss, tok, ',');) {
    try {
      out.push_back(std::stoul(tok));
    } catch (const std::exception&) {
      throw UsageError("bad integer '" + tok + "' in list");
    }
  }
  if (out.empty()) throw UsageError("empty list");
  return out;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string tok; std::getline(ss, tok, ',');) {
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw UsageError("bad number '" + tok + "' in list");
    }
  }
  if (out.empty()) throw UsageError("empty list");
  return out;
}

// Dataset for a checkpoint: explicit flag first, then a config.json written
// next to it by `train`.
train::Dataset dataset_for(const std::string& model_path, const std::string& flag) {
  if (!flag.empty()) return train::make_dataset(flag);
  const auto cfg = fs::path(model_path).parent_path() / "config.json";
  if (fs::exists(cfg)) return train::make_dataset(train::config_from_json(read_json(cfg.string())).dataset);
  throw UsageError("--dataset is required (no config.json next to " + model_path + ")");
}

std::shared_ptr<const vm::Program> resolve_program(const std::string& ref) {
  if (ref == "firefly") return std::make_shared<const vm::Program>(model::compile_firefly({}));
  if (!fs::exists(ref)) throw UsageError("no program '" + ref + "'");
  return std::make_shared<const vm::Program>(vm::read_program_file(ref));
}

std::string format_rate(double r) {
  std::ostringstream s;
  s << r;
  return s.str();
}

int cmd_train(const std::string& dataset, const std::string& config, const std::string& out, std::uint64_t seed,
              bool seed_given, std::optional<std::size_t> iterations) {
  train::TrainConfig cfg;
  if (!config.empty()) cfg = train::config_from_json(read_json(config));
  if (!dataset.empty()) cfg.dataset = dataset;
  if (seed_given) cfg.seed = seed;
  if (iterations) cfg.iterations = *iterations;
  cfg.validate();
  std::cerr << "training " << cfg.dataset << " for " << cfg.iterations << " iterations (seed " << cfg.seed
            << ") into " << out << "\n";
  train::train_to_directory(cfg, out, [](const train::IterationStats& s) {
    if (s.iteration % 100 == 0)
      std::cerr << "iter " << s.iteration << " loss " << s.loss << " acc " << s.accuracy << " steps " << s.steps
                << "\n";
  });
  return 0;
}

int cmd_disasm(const std::string& path) {
  std::cout << vm::disassemble(vm::read_program_file(path));
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& dataset, const std::string& steps, std::size_t repeats,
             std::size_t per_class, bool fixed_theta, std::uint64_t seed, const std::string& out) {
  const auto m = model::load_checkpoint(model_path);
  const auto ds = dataset_for(model_path, dataset);
  train::EvalOptions opt;
  opt.steps = parse_size_list(steps);
  opt.repeats = repeats;
  opt.per_class = per_class;
  opt.random_theta = !fixed_theta;
  opt.seed = seed;
  const auto r = train::evaluate(m, ds, opt);
  Output o(out);
  auto& os = o.stream();
  os << "dataset,steps,mean,std,repeats,theta\n" << std::setprecision(6);
  for (std::size_t i = 0; i < r.steps.size(); ++i)
    os << ds.name << ',' << r.steps[i] << ',' << r.mean(i) << ',' << r.stddev(i) << ',' << repeats << ','
       << (fixed_theta ? "fixed" : "random") << "\n";
  return 0;
}

struct AblateArgs {
  std::string dataset = "polyomino-4";
  std::string rates = "0,0.1,0.5,0.9";
  std::string protocol = "static";
  std::string out = "ablation";
  std::string models_dir;
  std::string config;
  std::size_t seeds = 1;
  std::size_t total_steps = 5000;
  std::size_t change_every = 1000;
  std::size_t per_class = 8;
  std::optional<std::size_t> iterations;
};

int cmd_ablate(const AblateArgs& a, std::uint64_t seed) {
  if (a.protocol != "static" && a.protocol != "periodic") throw UsageError("--protocol must be static or periodic");
  const auto rates = parse_double_list(a.rates);
  const auto models_dir = a.models_dir.empty() ? (fs::path(a.out) / "models").string() : a.models_dir;
  train::TrainConfig base;
  if (!a.config.empty()) base = train::config_from_json(read_json(a.config));
  base.dataset = a.dataset;
  if (a.iterations) base.iterations = *a.iterations;
  const auto ds = train::make_dataset(a.dataset);

  fs::create_directories(a.out);
  auto curves = open_out((fs::path(a.out) / ("ablation_" + a.protocol + ".csv")).string());
  auto summary = open_out((fs::path(a.out) / ("ablation_" + a.protocol + "_summary.csv")).string());
  curves << "protocol,rate,seed,step,accuracy\n";
  summary << "protocol,rate,seed,post_change_mean,final_accuracy\n";
  std::vector<cli::Series> plot;
  for (double rate : rates) {
    cli::Series mean_curve{"rate " + format_rate(rate), {}, {}};
    for (std::size_t k = 0; k < a.seeds; ++k) {
      const std::uint64_t s = seed + k;
      const auto dir = fs::path(models_dir) / ("rate_" + format_rate(rate) + "_seed_" + std::to_string(s));
      model::NcaModel m;
      if (fs::exists(dir / "model.json")) {
        m = model::load_checkpoint((dir / "model.json").string());
      } else {
        auto cfg = base;
        cfg.k_replaced = rate;
        cfg.seed = s;
        cfg.validate();
        std::cerr << "training rate " << rate << " seed " << s << " into " << dir.string() << "\n";
        m = train::train_to_directory(cfg, dir.string());
      }
      train::AblationOptions opt;
      opt.protocol = a.protocol == "static" ? train::AblationProtocol::Static : train::AblationProtocol::Periodic;
      opt.total_steps = a.total_steps;
      opt.change_every = a.change_every;
      opt.per_class = a.per_class;
      opt.seed = s;
      const auto c = train::run_ablation(m, ds, opt);
      for (std::size_t i = 0; i < c.steps.size(); ++i) {
        curves << a.protocol << ',' << rate << ',' << s << ',' << c.steps[i] << ',' << c.accuracy[i] << "\n";
        if (k == 0) {
          mean_curve.x.push_back(static_cast<double>(c.steps[i]));
          mean_curve.y.push_back(c.accuracy[i] / static_cast<double>(a.seeds));
        } else {
          mean_curve.y[i] += c.accuracy[i] / static_cast<double>(a.seeds);
        }
      }
      summary << a.protocol << ',' << rate << ',' << s << ','
              << (opt.protocol == train::AblationProtocol::Periodic ? c.post_change_mean(a.change_every)
                                                                    : c.accuracy.back())
              << ',' << c.accuracy.back() << "\n";
    }
    plot.push_back(std::move(mean_curve));
  }
  cli::write_svg_plot((fs::path(a.out) / ("ablation_" + a.protocol + ".svg")).string(),
                      "accuracy vs step (" + a.protocol + ")", plot, a.protocol == "static");
  return 0;
}

int cmd_firefly(std::size_t cells, double seconds, double jitter, bool uncoupled, std::optional<double> remove_at,
                std::uint64_t seed, const std::string& out, const std::string& plot) {
  sim::FireflyExperimentConfig cfg;
  cfg.cells = cells;
  cfg.seconds = seconds;
  cfg.jitter = jitter;
  cfg.coupled = !uncoupled;
  cfg.remove_at_second = remove_at;
  cfg.seed = seed;
  const auto r = sim::run_firefly_experiment(cfg);
  Output o(out);
  auto& os = o.stream();
  os << "second,sigma\n" << std::setprecision(8);
  for (std::size_t i = 0; i < r.seconds.size(); ++i) os << r.seconds[i] << ',' << r.sigma[i] << "\n";
  if (!plot.empty()) cli::write_svg_plot(plot, "circular std of phases", {{"sigma", r.seconds, r.sigma}});
  if (const auto t = r.first_below(0.02)) std::cerr << "sigma < 0.02 first at " << *t << " s\n";
  return 0;
}

int cmd_sim(const std::string& scenario_path, const std::string& program, const std::string& model_path,
            std::optional<int> target, std::uint64_t seed, bool seed_given, const std::string& out,
            const std::string& snapshot) {
  auto s = sim::load_scenario(scenario_path);
  if (seed_given) s.world.seed = seed;
  if (target) s.target = target;
  std::shared_ptr<const vm::Program> prog;
  std::optional<model::NcaModel> m;
  if (!model_path.empty()) {
    m = model::load_checkpoint(model_path);
    prog = std::make_shared<const vm::Program>(model::compile(*m));
  }
  if (!program.empty())
    prog = resolve_program(program);
  else if (!prog && s.program)
    prog = resolve_program(*s.program);
  if (prog == nullptr) throw UsageError("no program given (use --program, --model or a scenario 'program')");
  if (!s.phase_channel && program == "firefly") s.phase_channel = model::kFireflyPhase;

  sim::MetricsSpec spec{m, s.target, s.phase_channel};
  Output o(out);
  auto& os = o.stream();
  sim::write_metrics_header(os);
  const auto every = std::max<std::uint64_t>(s.metrics_every, 1);
  const auto world = sim::replay(s, prog, resolve_program, [&](const sim::World& w) {
    if (w.tick_count() % every == 0) sim::write_metrics_row(os, sim::measure(w, spec));
  });
  if (!snapshot.empty()) {
    const auto bytes = world.save();
    auto f = open_out(snapshot);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  return 0;
}

std::atomic<bool> g_stop{false};

int cmd_serve(const std::string& addr, double tick_rate, const std::string& session_dir, const std::string& models_dir,
              std::uint64_t seed) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw UsageError("--addr must look like host:port");
  const auto host = addr.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(addr.substr(colon + 1));
  } catch (const std::exception&) {
    throw UsageError("bad port in --addr");
  }
  service::ServiceConfig cfg;
  cfg.tick_rate_hz = tick_rate;
  cfg.session_dir = session_dir;
  cfg.models_dir = models_dir;
  cfg.seed = seed;
  service::Service svc(cfg);
  service::Server server(svc, host, static_cast<std::uint16_t>(port));
  server.start();
  std::cerr << "listening on " << host << ":" << server.port() << "\n";
  std::signal(SIGINT, [](int) { g_stop = true; });
  std::signal(SIGTERM, [](int) { g_stop = true; });
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-classifying cellular automata: training, compilation, simulation"};
  app.require_subcommand(1);
  app.fallthrough();
  std::uint64_t seed = 1;
  auto* seed_opt = app.add_option("--seed", seed, "Seed for every random stream")->capture_default_str();

  std::string dataset, config, out, model_path, steps = "50,100,150", program, scenario, plot, snapshot;
  std::size_t repeats = 5, per_class = 16, cells = 29;
  std::optional<std::size_t> iterations;
  std::optional<int> target;
  std::optional<double> remove_at;
  double seconds = 300, jitter = 0.05, tick_rate = 20;
  bool fixed_theta = false, uncoupled = false;
  std::string addr = "127.0.0.1:7878", session_dir = "sessions", models_dir;
  AblateArgs ab;

  auto* train_cmd = app.add_subcommand("train", "Train a classifier and write checkpoints");
  train_cmd->add_option("--dataset", dataset)->check(CLI::IsMember(train::dataset_names()));
  train_cmd->add_option("--config", config, "JSON training config")->check(CLI::ExistingFile);
  train_cmd->add_option("--out", out, "Output directory")->required();
  train_cmd->add_option("--iterations", iterations);

  auto* compile_cmd = app.add_subcommand("compile", "Compile a checkpoint to a .ncap program");
  compile_cmd->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
  compile_cmd->add_option("--out", out)->required();

  auto* disasm_cmd = app.add_subcommand("disasm", "List the operations of a .ncap program");
  disasm_cmd->add_option("program", program)->required()->check(CLI::ExistingFile);

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint (CSV)");
  eval_cmd->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--dataset", dataset)->check(CLI::IsMember(train::dataset_names()));
  eval_cmd->add_option("--steps", steps)->capture_default_str();
  eval_cmd->add_option("--repeats", repeats)->capture_default_str();
  eval_cmd->add_option("--per-class", per_class)->capture_default_str();
  eval_cmd->add_flag("--fixed-theta", fixed_theta, "All cells at rotation 0");
  eval_cmd->add_option("--out", out, "CSV path (default stdout)");

  auto* ablate_cmd = app.add_subcommand("ablate-replacement", "Replacement-rate ablation (CSV + SVG)");
  ablate_cmd->add_option("--dataset", ab.dataset)->check(CLI::IsMember(train::dataset_names()))->capture_default_str();
  ablate_cmd->add_option("--rates", ab.rates)->capture_default_str();
  ablate_cmd->add_option("--protocol", ab.protocol)->check(CLI::IsMember({"static", "periodic"}))->capture_default_str();
  ablate_cmd->add_option("--out", ab.out)->capture_default_str();
  ablate_cmd->add_option("--models-dir", ab.models_dir, "Trained models are cached here (default <out>/models)");
  ablate_cmd->add_option("--config", ab.config, "JSON training config for models that need training");
  ablate_cmd->add_option("--seeds", ab.seeds, "Number of consecutive seeds")->capture_default_str();
  ablate_cmd->add_option("--total-steps", ab.total_steps)->capture_default_str();
  ablate_cmd->add_option("--change-every", ab.change_every)->capture_default_str();
  ablate_cmd->add_option("--per-class", ab.per_class)->capture_default_str();
  ablate_cmd->add_option("--iterations", ab.iterations);

  auto* ff_cmd = app.add_subcommand("firefly", "Firefly synchronisation run (CSV)");
  ff_cmd->add_option("--cells", cells)->capture_default_str();
  ff_cmd->add_option("--seconds", seconds)->capture_default_str();
  ff_cmd->add_option("--jitter", jitter)->capture_default_str();
  ff_cmd->add_flag("--uncoupled", uncoupled);
  ff_cmd->add_option("--remove-at", remove_at, "Remove one cell at this simulated second");
  ff_cmd->add_option("--out", out, "CSV path (default stdout)");
  ff_cmd->add_option("--plot", plot, "Optional SVG path");

  auto* sim_cmd = app.add_subcommand("sim", "Headless scenario replay with metrics (CSV)");
  sim_cmd->add_option("--scenario", scenario)->required()->check(CLI::ExistingFile);
  sim_cmd->add_option("--program", program, ".ncap path or 'firefly'");
  sim_cmd->add_option("--model", model_path, "Checkpoint: compiled and used for class metrics")->check(CLI::ExistingFile);
  sim_cmd->add_option("--target", target);
  sim_cmd->add_option("--out", out, "CSV path (default stdout)");
  sim_cmd->add_option("--snapshot", snapshot, "Write the final world snapshot here");

  auto* serve_cmd = app.add_subcommand("serve", "Run the session service");
  serve_cmd->add_option("--addr", addr)->capture_default_str();
  serve_cmd->add_option("--tick-rate", tick_rate, "Ticks per second for running sessions")->capture_default_str();
  serve_cmd->add_option("--session-dir", session_dir)->capture_default_str();
  serve_cmd->add_option("--models-dir", models_dir, "Directory of precompiled .ncap programs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*train_cmd) return cmd_train(dataset, config, out, seed, seed_opt->count() > 0, iterations);
    if (*compile_cmd) {
      vm::write_program_file(out, model::compile(model::load_checkpoint(model_path)));
      return 0;
    }
    if (*disasm_cmd) return cmd_disasm(program);
    if (*eval_cmd) return cmd_eval(model_path, dataset, steps, repeats, per_class, fixed_theta, seed, out);
    if (*ablate_cmd) return cmd_ablate(ab, seed);
    if (*ff_cmd) return cmd_firefly(cells, seconds, jitter, uncoupled, remove_at, seed, out, plot);
    if (*sim_cmd) return cmd_sim(scenario, program, model_path, target, seed, seed_opt->count() > 0, out, snapshot);
    if (*serve_cmd) return cmd_serve(addr, tick_rate, session_dir, models_dir, seed);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const vm::ProgramError& e) {
    std::cerr << "program error: " << e.what() << "\n";
    return 1;
  } catch (const model::ModelError& e) {
    std::cerr << "model error: " << e.what() << "\n";
    return 1;
  } catch (const train::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const sim::SimError& e) {
    std::cerr << "simulation error: " << e.what() << "\n";
    return 1;
  } catch (const sim::CorruptSnapshot& e) {
    std::cerr << "snapshot error: " << e.what() << "\n";
    return 1;
  } catch (const boost::system::system_error& e) {
    std::cerr << "network error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
