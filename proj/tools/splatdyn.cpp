// splatdyn: build hierarchies, simulate, train, validate, benchmark and serve.
//
// Exit codes: 0 success, 1 invariant failure or runtime error, 2 bad
// configuration or unreadable input.

#include "splatdyn/bench.hpp"
#include "splatdyn/config.hpp"
#include "splatdyn/service/server.hpp"
#include "splatdyn/trajectory_io.hpp"
#include "splatdyn/validation.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>

using namespace splatdyn;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

// "a.b.c=value": value is parsed as JSON, falling back to a plain string.
void apply_override(nlohmann::json& j, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) throw Error(ErrorCode::config, "override '" + spec + "' is not key=value");
  const std::string value = spec.substr(eq + 1);
  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(value);
  } catch (const nlohmann::json::exception&) {
    parsed = value;
  }
  nlohmann::json* node = &j;
  std::string_view key(spec.data(), eq);
  while (true) {
    const auto dot = key.find('.');
    const std::string part(key.substr(0, dot));
    if (part.empty()) throw Error(ErrorCode::config, "override '" + spec + "' has an empty key");
    if (!node->is_object()) *node = nlohmann::json::object();
    node = &(*node)[part];
    if (dot == std::string_view::npos) break;
    key.remove_prefix(dot + 1);
  }
  *node = parsed;
}

EngineConfig load(const Common& c) {
  nlohmann::json j = nlohmann::json::object();
  if (!c.config_path.empty()) {
    std::string text;
    try {
      text = io::read_file(c.config_path);
    } catch (const Error& e) {
      throw Error(ErrorCode::config, e.what());
    }
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::config, c.config_path + ": " + e.what());
    }
  }
  for (const auto& o : c.overrides) apply_override(j, o);
  EngineConfig cfg = config_from_json(j);
  // One seed drives the scene generator, the weight initialisation and training.
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.synthetic.seed = *c.seed;
    cfg.model.seed = *c.seed;
    cfg.training.seed = *c.seed;
  }
  return cfg;
}

void print_levels(const Hierarchy& h) {
  const HierarchyStats s = prediction_count(h);
  std::cout << "level counts:";
  for (std::size_t n : s.level_counts) std::cout << ' ' << n;
  std::cout << "\nN_F = " << s.predictions << "\nN_F/N_K = " << std::fixed << std::setprecision(4) << s.ratio
            << std::defaultfloat << '\n';
}

int run_gen_scene(const Common& common, const std::string& out, const std::optional<std::size_t>& count,
                  const std::optional<std::string>& shape) {
  EngineConfig cfg = load(common);
  SyntheticSceneSpec spec = cfg.synthetic;
  if (count) spec.count = *count;
  if (shape) {
    if (*shape == "beam") {
      spec.shape = SyntheticShape::beam;
    } else if (*shape == "sphere-cloud") {
      spec.shape = SyntheticShape::sphere_cloud;
    } else {
      throw Error(ErrorCode::config, "unknown shape '" + *shape + "' (beam | sphere-cloud)");
    }
  }
  const SceneTemplate scene = generate_synthetic_scene(spec);
  save_scene(scene, out);
  std::cout << "wrote " << scene.size() << " kernels to " << out << " (root kernel " << scene.root_kernel_id << ")\n";
  return 0;
}

int run_build(const Common& common, const std::string& out) {
  const EngineConfig cfg = load(common);
  const World w = make_world(cfg);
  print_levels(w.hierarchy);
  if (!out.empty()) {
    const HierarchyStats s = prediction_count(w.hierarchy);
    nlohmann::json j = {{"level_counts", s.level_counts},
                        {"predictions", s.predictions},
                        {"ratio", s.ratio},
                        {"radii", w.hierarchy.radii},
                        {"root_kernel", w.scene.root_kernel_id}};
    io::write_file(out, j.dump(2) + "\n");
    std::cout << "wrote " << out << '\n';
  }
  return 0;
}

int run_simulate(const Common& common, const std::string& out, const std::optional<std::size_t>& steps) {
  EngineConfig cfg = load(common);
  if (steps) cfg.steps = *steps;
  const World w = make_world(cfg);
  auto provider = make_provider(cfg, w.hierarchy);
  RolloutOptions opts;
  opts.scene_hash = scene_hash(w.scene);
  const Trajectory t = rollout(bootstrap(w.scene, w.hierarchy, cfg.dt), w.hierarchy, *provider, w.scene, cfg.steps,
                               cfg.forces, opts);
  if (out.size() >= 6 && out.ends_with(".jsonl")) {
    io::write_file(out, trajectory_to_jsonl(t));
  } else {
    save_trajectory(t, out);
  }
  double max_disp = 0.0;
  for (std::size_t k = 0; k < w.scene.size(); ++k) {
    max_disp = std::max(max_disp, (t.frames.back()[k] - w.scene.kernels[k].position).norm());
  }
  std::cout << "provider " << provider->name() << ", " << t.frames.size() << " frames of " << w.scene.size()
            << " kernels -> " << out << "\nmax final displacement " << max_disp << '\n';
  return 0;
}

int run_train(const Common& common, const std::string& out, const std::string& loss_csv,
              const std::optional<int>& epochs) {
  EngineConfig cfg = load(common);
  if (epochs) cfg.training.epochs = *epochs;
  const World w = make_world(cfg);
  std::vector<TrainingTrajectory> data;
  for (const Trajectory& t : oscillator_dataset(w, cfg.dataset, cfg.dt)) data.push_back(training_trajectory(w.hierarchy, t));
  GraphModel model(model_for(cfg, w.hierarchy));
  std::cout << "model: " << model.parameter_count() << " parameters, " << prediction_count(w.hierarchy).predictions
            << " nodes\n";
  std::ofstream csv;
  if (!loss_csv.empty()) {
    csv.open(loss_csv);
    if (!csv) throw Error(ErrorCode::io, "cannot write " + loss_csv);
    csv << "epoch,rollout,loss,position_loss,static_loss,static_terms,seconds\n";
  }
  const TrainingReport rep = train(model, w.hierarchy, w.scene, data, cfg.training, [&](const EpochStats& s) {
    std::cout << "epoch " << s.epoch << "  T=" << s.rollout << "  loss " << s.loss << "  (" << s.seconds << " s)\n";
    if (csv) {
      csv << s.epoch << ',' << s.rollout << ',' << s.loss << ',' << s.position_loss << ',' << s.static_loss << ','
          << s.static_terms << ',' << s.seconds << '\n';
    }
  });
  save_model(model, out, {{"scene_hash", scene_hash(w.scene)}, {"dt", cfg.dt}});
  std::cout << "static residual " << rep.initial_static_residual << " -> " << rep.final_static_residual << "\nwrote "
            << out << '\n';
  return 0;
}

// Gradients with det F = 1.331 everywhere: a deliberately broken predictor.
class InflatingProvider final : public GradientProvider {
 public:
  FieldSet predict(const ProviderInput& in) override {
    FieldSet f = identity_fields(*in.hierarchy);
    for (auto& level : f) {
      for (auto& g : level.gradients) g.lambda = Vec3::Constant(1.1);
    }
    return f;
  }
  std::string name() const override { return "inflating fixture"; }
};

int run_validate(const Common& common, bool inject_bad_gradient) {
  const EngineConfig cfg = load(common);
  const World w = make_world(cfg);
  std::unique_ptr<GradientProvider> provider =
      inject_bad_gradient ? std::make_unique<InflatingProvider>() : make_provider(cfg, w.hierarchy);
  ValidationOptions opt;
  opt.seed = cfg.seed;
  std::cout << "validating " << w.scene.size() << " kernels, provider " << provider->name() << '\n';
  bool all = true;
  for (const InvariantCheck& c : run_invariant_suite(w.scene, w.hierarchy, *provider, cfg.dt, opt)) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.group << ": " << c.detail << '\n';
    all = all && c.passed;
  }
  return all ? 0 : kExitFailure;
}

int run_bench(const Common& common, const std::vector<std::size_t>& counts, std::size_t steps, bool timing) {
  if (!counts.empty()) {
    const HierarchyStats s = prediction_count(counts);
    std::cout << "level counts:";
    for (std::size_t n : s.level_counts) std::cout << ' ' << n;
    std::cout << "\nN_F = " << s.predictions << "\nN_F/N_K = " << std::fixed << std::setprecision(4) << s.ratio
              << std::defaultfloat << '\n';
    return 0;
  }
  const EngineConfig cfg = load(common);
  const World w = make_world(cfg);
  print_levels(w.hierarchy);
  const Hierarchy flat = flat_hierarchy(w.scene, cfg.radii.front());
  const std::size_t flat_n = prediction_count(flat).predictions;
  const std::size_t hier_n = prediction_count(w.hierarchy).predictions;
  std::cout << "flat path predictions = " << flat_n << "\nreduction = " << std::fixed << std::setprecision(2)
            << 100.0 * (1.0 - static_cast<double>(hier_n) / static_cast<double>(flat_n)) << "%\n"
            << std::defaultfloat;
  if (timing) {
    const PathTiming th = time_learned_steps(w.scene, w.hierarchy, cfg.model, cfg.dt, steps);
    const PathTiming tf = time_learned_steps(w.scene, flat, cfg.model, cfg.dt, steps);
    std::cout << "hierarchical step " << 1e3 * th.seconds_per_step << " ms (" << th.predictions << " predictions)\n"
              << "flat step         " << 1e3 * tf.seconds_per_step << " ms (" << tf.predictions << " predictions)\n"
              << "speedup " << tf.seconds_per_step / th.seconds_per_step << "x\n";
  }
  return 0;
}

std::atomic<bool> g_stop{false};

int run_serve(const Common& common, const std::optional<int>& port, const std::optional<double>& fps,
              const std::optional<std::string>& axis, const std::string& static_dir) {
  EngineConfig cfg = load(common);
  if (port) cfg.service.port = *port;
  if (fps) cfg.service.max_fps = *fps;
  if (axis) {
    if (axis->size() != 1) throw Error(ErrorCode::config, "axis must be x, y or z");
    cfg.service.axis = (*axis)[0];
  }
  if (!static_dir.empty()) cfg.service.static_dir = static_dir;
  validate_config(cfg);
  service::Simulation sim(cfg);
  service::Server server(sim, cfg.service);
  server.start();
  std::cout << "serving " << sim.world().scene.size() << " kernels on ws://127.0.0.1:" << server.port() << '\n'
            << std::flush;
  std::signal(SIGINT, [](int) { g_stop = true; });
  std::signal(SIGTERM, [](int) { g_stop = true; });
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  std::cout << "stopped after " << sim.forces_applied() << " forces\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical Gaussian-kernel elastic dynamics"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", common.config_path, "engine config (JSON)");
    sub->add_option("--set", common.overrides, "override a config key, e.g. --set dt=0.04 --set training.epochs=3");
    sub->add_option("--seed", common.seed, "seed for scene generation, initialisation and training");
  };

  std::string out;
  std::optional<std::size_t> count;
  std::optional<std::string> shape;
  auto* gen = app.add_subcommand("gen-scene", "write a synthetic scene (.spds or .json)");
  add_common(gen);
  gen->add_option("-o,--out", out, "output scene path")->required();
  gen->add_option("--count", count, "kernel count");
  gen->add_option("--shape", shape, "beam | sphere-cloud");

  auto* build = app.add_subcommand("build", "build the hierarchy and report level counts");
  add_common(build);
  build->add_option("-o,--out", out, "optional JSON stats path");

  std::optional<std::size_t> steps;
  auto* sim = app.add_subcommand("simulate", "roll out the configured provider");
  add_common(sim);
  sim->add_option("-o,--out", out, "trajectory path (.spdt binary or .jsonl)")->required();
  sim->add_option("--steps", steps, "number of steps");

  std::string loss_csv;
  std::optional<int> epochs;
  auto* tr = app.add_subcommand("train", "train the learned provider on oscillator trajectories");
  add_common(tr);
  tr->add_option("-o,--out", out, "checkpoint path")->required();
  tr->add_option("--loss-csv", loss_csv, "per-epoch loss log");
  tr->add_option("--epochs", epochs, "epoch count");

  bool inject = false;
  auto* val = app.add_subcommand("validate", "run the invariant suites");
  add_common(val);
  val->add_flag("--inject-bad-gradient", inject, "use a det F != 1 predictor (must fail)");

  std::vector<std::size_t> counts;
  std::size_t bench_steps = 3;
  bool no_timing = false;
  auto* bench = app.add_subcommand("bench", "prediction counts and hierarchical vs flat step time");
  add_common(bench);
  bench->add_option("--counts", counts, "level counts (kernels first) instead of a scene")->delimiter(',');
  bench->add_option("--steps", bench_steps, "timed steps per path")->check(CLI::PositiveNumber);
  bench->add_flag("--no-timing", no_timing, "counts only");

  std::optional<int> port;
  std::optional<double> fps;
  std::optional<std::string> axis;
  std::string static_dir;
  auto* serve = app.add_subcommand("serve", "stream the simulation over WebSocket");
  add_common(serve);
  serve->add_option("--port", port, "TCP port (0 = any free port)");
  serve->add_option("--max-fps", fps, "frame rate cap");
  serve->add_option("--axis", axis, "camera axis x | y | z");
  serve->add_option("--static-dir", static_dir, "viewer bundle to serve over HTTP");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen) return run_gen_scene(common, out, count, shape);
    if (*build) return run_build(common, out);
    if (*sim) return run_simulate(common, out, steps);
    if (*tr) return run_train(common, out, loss_csv, epochs);
    if (*val) return run_validate(common, inject);
    if (*bench) return run_bench(common, counts, bench_steps, !no_timing);
    if (*serve) return run_serve(common, port, fps, axis, static_dir);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    switch (e.code()) {
      case ErrorCode::config:
      case ErrorCode::io:
      case ErrorCode::malformed_record:
      case ErrorCode::version_mismatch:
        return kExitConfig;
      default:
        return kExitFailure;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
