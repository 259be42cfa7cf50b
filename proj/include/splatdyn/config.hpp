#pragma once

#include "splatdyn/engine.hpp"
#include "splatdyn/learned/checkpoint.hpp"
#include "splatdyn/learned/training.hpp"
#include "splatdyn/providers/oscillator.hpp"
#include "splatdyn/scene_io.hpp"

#include <nlohmann/json.hpp>

#include <memory>
#include <optional>

// Engine configuration file (JSON). Every field is optional; missing fields
// take the defaults below. Unknown top-level keys are rejected so typos do
// not silently fall back to defaults.
namespace splatdyn {

struct DatasetConfig {
  std::vector<double> amplitudes{0.3, 0.5, 0.7};
  std::size_t steps = 150;            // frames per training trajectory
  OscillatorParams oscillator{Vec3::UnitZ(), 0.5, 2.0 * std::numbers::pi, 0.2, 0.5};
};

struct ServiceConfig {
  int port = 8765;
  double max_fps = 30.0;
  char axis = 'z';                    // orthographic view direction
  std::size_t frame_buffer = 4;       // per-client queued frames before dropping
  bool binary_frames = true;
  double pick_radius = 0.03;
  std::string static_dir;             // optional viewer bundle
};

struct EngineConfig {
  // Scene: a file path, or a synthetic generator spec when the path is empty.
  std::string scene_path;
  SyntheticSceneSpec synthetic;

  std::vector<double> radii{0.04, 0.5};
  double dt = 1.0 / 50.0;
  int sh_degree = 0;

  std::string provider = "identity";  // identity | oscillator | learned
  OscillatorParams oscillator;
  std::string checkpoint;             // learned provider weights

  ModelConfig model = [] {
    ModelConfig m;
    m.rounds = 2;
    m.embedding_dim = 8;
    m.rest_anchor = true;
    return m;
  }();
  TrainingConfig training;
  DatasetConfig dataset;
  ServiceConfig service;

  std::size_t steps = 100;            // simulate
  std::vector<ForceEvent> forces;     // simulate schedule
  std::uint64_t seed = 7;
};

inline constexpr double kDtReady = 1.0 / 50.0;  // 50 FPS captures
inline constexpr double kDtBunny = 1.0 / 24.0;  // 24 FPS scenes

namespace detail {

inline Vec3 vec3_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::config, "expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline nlohmann::json vec3_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::config, where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw Error(ErrorCode::config, "unknown key '" + key + "' in " + where);
  }
}

inline OscillatorParams oscillator_from(const nlohmann::json& j, OscillatorParams p) {
  check_keys(j, {"axis", "amplitude", "angular_frequency", "damping", "level_falloff"}, "oscillator");
  if (j.contains("axis")) p.axis = vec3_from(j["axis"]);
  p.amplitude = j.value("amplitude", p.amplitude);
  p.angular_frequency = j.value("angular_frequency", p.angular_frequency);
  p.damping = j.value("damping", p.damping);
  p.level_falloff = j.value("level_falloff", p.level_falloff);
  return p;
}

inline nlohmann::json oscillator_json(const OscillatorParams& p) {
  return {{"axis", vec3_json(p.axis)},
          {"amplitude", p.amplitude},
          {"angular_frequency", p.angular_frequency},
          {"damping", p.damping},
          {"level_falloff", p.level_falloff}};
}

}  // namespace detail

inline void validate_config(const EngineConfig& c) {
  if (c.radii.empty()) throw Error(ErrorCode::config, "radii: at least one level is required");
  for (std::size_t i = 0; i < c.radii.size(); ++i) {
    if (!(c.radii[i] > 0.0)) throw Error(ErrorCode::config, "radii: every radius must be positive");
    if (i > 0 && !(c.radii[i] > c.radii[i - 1])) {
      throw Error(ErrorCode::config, "radii must be strictly increasing (radius " + std::to_string(i) + " is " +
                                         std::to_string(c.radii[i]) + ", previous " + std::to_string(c.radii[i - 1]) + ")");
    }
  }
  if (!(c.dt > 0.0) || !std::isfinite(c.dt)) throw Error(ErrorCode::config, "dt must be positive");
  if (c.sh_degree < 0 || c.sh_degree > 3) throw Error(ErrorCode::config, "sh_degree must be in 0..3");
  if (c.provider != "identity" && c.provider != "oscillator" && c.provider != "learned") {
    throw Error(ErrorCode::config, "unknown provider '" + c.provider + "' (identity | oscillator | learned)");
  }
  if (c.provider == "learned" && c.checkpoint.empty()) {
    throw Error(ErrorCode::config, "learned provider needs a checkpoint path");
  }
  if (!(c.model.edges.material_factor > 0.0) || !(c.model.edges.deformed_factor > 0.0)) {
    throw Error(ErrorCode::config, "edge thresholds must be positive");
  }
  if (c.model.rounds < 1 || c.model.width < 1 || c.model.embedding_dim < 0) {
    throw Error(ErrorCode::config, "model needs rounds >= 1, width >= 1 and embedding_dim >= 0");
  }
  if (c.service.axis != 'x' && c.service.axis != 'y' && c.service.axis != 'z') {
    throw Error(ErrorCode::config, "service axis must be x, y or z");
  }
}

inline EngineConfig config_from_json(const nlohmann::json& j) {
  EngineConfig c;
  try {
    detail::check_keys(j,
                       {"format", "scene", "radii", "dt", "sh_degree", "provider", "edges", "model", "training",
                        "dataset", "simulation", "service", "seed"},
                       "config");
    if (j.contains("scene")) {
      const auto& s = j["scene"];
      detail::check_keys(s, {"path", "synthetic"}, "scene");
      c.scene_path = s.value("path", std::string{});
      if (s.contains("synthetic")) {
        const auto& g = s["synthetic"];
        detail::check_keys(g, {"shape", "count", "spacing", "seed", "density"}, "scene.synthetic");
        const std::string shape = g.value("shape", std::string("beam"));
        if (shape == "beam") {
          c.synthetic.shape = SyntheticShape::beam;
        } else if (shape == "sphere-cloud") {
          c.synthetic.shape = SyntheticShape::sphere_cloud;
        } else {
          throw Error(ErrorCode::config, "unknown synthetic shape '" + shape + "'");
        }
        c.synthetic.count = g.value("count", c.synthetic.count);
        c.synthetic.spacing = g.value("spacing", c.synthetic.spacing);
        c.synthetic.seed = g.value("seed", c.synthetic.seed);
        c.synthetic.density = g.value("density", c.synthetic.density);
      }
    }
    if (j.contains("radii")) c.radii = j["radii"].get<std::vector<double>>();
    c.dt = j.value("dt", c.dt);
    c.sh_degree = j.value("sh_degree", c.sh_degree);
    c.seed = j.value("seed", c.seed);
    if (j.contains("provider")) {
      const auto& p = j["provider"];
      detail::check_keys(p, {"type", "oscillator", "checkpoint"}, "provider");
      c.provider = p.value("type", c.provider);
      if (p.contains("oscillator")) c.oscillator = detail::oscillator_from(p["oscillator"], c.oscillator);
      c.checkpoint = p.value("checkpoint", c.checkpoint);
    }
    if (j.contains("edges")) {
      detail::check_keys(j["edges"], {"material_factor", "deformed_factor"}, "edges");
      c.model.edges.material_factor = j["edges"].value("material_factor", c.model.edges.material_factor);
      c.model.edges.deformed_factor = j["edges"].value("deformed_factor", c.model.edges.deformed_factor);
    }
    if (j.contains("model")) {
      detail::check_keys(j["model"], {"rounds", "width", "seed", "embedding_dim", "rest_anchor"}, "model");
      c.model.rounds = j["model"].value("rounds", c.model.rounds);
      c.model.embedding_dim = j["model"].value("embedding_dim", c.model.embedding_dim);
      c.model.rest_anchor = j["model"].value("rest_anchor", c.model.rest_anchor);
      c.model.width = j["model"].value("width", c.model.width);
      c.model.seed = j["model"].value("seed", c.model.seed);
    }
    if (j.contains("training")) {
      const auto& t = j["training"];
      detail::check_keys(t,
                         {"epochs", "max_rollout", "fixed_rollout", "batches_per_epoch", "batch_size", "learning_rate",
                          "final_lr_fraction", "momentum_weight", "static_weight", "input_noise", "threads", "seed"},
                         "training");
      auto& tc = c.training;
      tc.epochs = t.value("epochs", tc.epochs);
      tc.max_rollout = t.value("max_rollout", tc.max_rollout);
      tc.fixed_rollout = t.value("fixed_rollout", tc.fixed_rollout);
      tc.batches_per_epoch = t.value("batches_per_epoch", tc.batches_per_epoch);
      tc.batch_size = t.value("batch_size", tc.batch_size);
      tc.learning_rate = t.value("learning_rate", tc.learning_rate);
      tc.final_lr_fraction = t.value("final_lr_fraction", tc.final_lr_fraction);
      tc.momentum_weight = t.value("momentum_weight", tc.momentum_weight);
      tc.static_weight = t.value("static_weight", tc.static_weight);
      tc.input_noise = t.value("input_noise", tc.input_noise);
      tc.threads = t.value("threads", tc.threads);
      tc.seed = t.value("seed", tc.seed);
    }
    if (j.contains("dataset")) {
      const auto& d = j["dataset"];
      detail::check_keys(d, {"amplitudes", "steps", "oscillator"}, "dataset");
      if (d.contains("amplitudes")) c.dataset.amplitudes = d["amplitudes"].get<std::vector<double>>();
      c.dataset.steps = d.value("steps", c.dataset.steps);
      if (d.contains("oscillator")) c.dataset.oscillator = detail::oscillator_from(d["oscillator"], c.dataset.oscillator);
    }
    if (j.contains("simulation")) {
      const auto& s = j["simulation"];
      detail::check_keys(s, {"steps", "forces"}, "simulation");
      c.steps = s.value("steps", c.steps);
      if (s.contains("forces")) {
        for (const auto& f : s["forces"]) {
          detail::check_keys(f, {"kernel_ids", "force", "step"}, "simulation.forces[]");
          ForceEvent e;
          e.kernel_ids = f.at("kernel_ids").get<std::vector<std::size_t>>();
          e.force = detail::vec3_from(f.at("force"));
          e.step = f.value("step", std::size_t{0});
          c.forces.push_back(std::move(e));
        }
      }
    }
    if (j.contains("service")) {
      const auto& s = j["service"];
      detail::check_keys(s, {"port", "max_fps", "axis", "frame_buffer", "binary_frames", "pick_radius", "static_dir"},
                         "service");
      auto& sc = c.service;
      sc.port = s.value("port", sc.port);
      sc.max_fps = s.value("max_fps", sc.max_fps);
      const std::string axis = s.value("axis", std::string(1, sc.axis));
      if (axis.size() != 1) throw Error(ErrorCode::config, "service axis must be x, y or z");
      sc.axis = axis[0];
      sc.frame_buffer = s.value("frame_buffer", sc.frame_buffer);
      sc.binary_frames = s.value("binary_frames", sc.binary_frames);
      sc.pick_radius = s.value("pick_radius", sc.pick_radius);
      sc.static_dir = s.value("static_dir", sc.static_dir);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, std::string("config: ") + e.what());
  }
  c.synthetic.sh_degree = c.sh_degree;
  c.model.levels = static_cast<int>(c.radii.size());
  validate_config(c);
  return c;
}

inline nlohmann::json config_to_json(const EngineConfig& c) {
  nlohmann::json j;
  j["format"] = "splatdyn-config";
  j["scene"]["path"] = c.scene_path;
  j["scene"]["synthetic"] = {{"shape", c.synthetic.shape == SyntheticShape::beam ? "beam" : "sphere-cloud"},
                             {"count", c.synthetic.count},
                             {"spacing", c.synthetic.spacing},
                             {"seed", c.synthetic.seed},
                             {"density", c.synthetic.density}};
  j["radii"] = c.radii;
  j["dt"] = c.dt;
  j["sh_degree"] = c.sh_degree;
  j["seed"] = c.seed;
  j["provider"] = {{"type", c.provider}, {"oscillator", detail::oscillator_json(c.oscillator)}, {"checkpoint", c.checkpoint}};
  j["edges"] = {{"material_factor", c.model.edges.material_factor}, {"deformed_factor", c.model.edges.deformed_factor}};
  j["model"] = {{"rounds", c.model.rounds},
                {"width", c.model.width},
                {"seed", c.model.seed},
                {"embedding_dim", c.model.embedding_dim},
                {"rest_anchor", c.model.rest_anchor}};
  const auto& t = c.training;
  j["training"] = {{"epochs", t.epochs},
                   {"max_rollout", t.max_rollout},
                   {"fixed_rollout", t.fixed_rollout},
                   {"batches_per_epoch", t.batches_per_epoch},
                   {"batch_size", t.batch_size},
                   {"learning_rate", t.learning_rate},
                   {"final_lr_fraction", t.final_lr_fraction},
                   {"momentum_weight", t.momentum_weight},
                   {"static_weight", t.static_weight},
                   {"input_noise", t.input_noise},
                   {"threads", t.threads},
                   {"seed", t.seed}};
  j["dataset"] = {{"amplitudes", c.dataset.amplitudes},
                  {"steps", c.dataset.steps},
                  {"oscillator", detail::oscillator_json(c.dataset.oscillator)}};
  auto forces = nlohmann::json::array();
  for (const auto& f : c.forces) {
    forces.push_back({{"kernel_ids", f.kernel_ids}, {"force", detail::vec3_json(f.force)}, {"step", f.step}});
  }
  j["simulation"] = {{"steps", c.steps}, {"forces", forces}};
  j["service"] = {{"port", c.service.port},
                  {"max_fps", c.service.max_fps},
                  {"axis", std::string(1, c.service.axis)},
                  {"frame_buffer", c.service.frame_buffer},
                  {"binary_frames", c.service.binary_frames},
                  {"pick_radius", c.service.pick_radius},
                  {"static_dir", c.service.static_dir}};
  return j;
}

inline EngineConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::config, e.what());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, path + ": " + e.what());
  }
  return config_from_json(j);
}

// Everything a run needs, built from a config.
struct World {
  SceneTemplate scene;
  Hierarchy hierarchy;
};

inline World make_world(const EngineConfig& c) {
  World w;
  w.scene = c.scene_path.empty() ? generate_synthetic_scene(c.synthetic) : load_scene(c.scene_path);
  w.hierarchy = build_hierarchy(w.scene, c.radii);
  return w;
}

// Network shape for a concrete world: level count, attribute width and one
// embedding row per CMS come from the hierarchy.
inline ModelConfig model_for(const EngineConfig& c, const Hierarchy& h) {
  ModelConfig m = c.model;
  m.levels = h.top_level();
  m.attribute_dim = h.kernel_count() == 0 ? 0 : static_cast<int>(h.level(0).front().attribute_vector.size());
  m.embedding_rows = 0;
  if (m.embedding_dim > 0) {
    for (int l = 1; l <= h.top_level(); ++l) m.embedding_rows += h.level(l).size();
  }
  return m;
}

inline std::unique_ptr<GradientProvider> make_provider(const EngineConfig& c, const Hierarchy& h) {
  if (c.provider == "oscillator") return std::make_unique<OscillatorProvider>(c.oscillator);
  if (c.provider == "learned") {
    GraphModel m = load_model(c.checkpoint);
    if (m.config().levels != h.top_level()) {
      throw Error(ErrorCode::config, "checkpoint was trained for " + std::to_string(m.config().levels) +
                                         " levels, config builds " + std::to_string(h.top_level()));
    }
    const ModelConfig expected = model_for(c, h);
    if (m.config().embedding_rows > 0 && m.config().embedding_rows != expected.embedding_rows) {
      throw Error(ErrorCode::config, "checkpoint embeds " + std::to_string(m.config().embedding_rows) +
                                         " nodes, this scene's hierarchy has " +
                                         std::to_string(expected.embedding_rows));
    }
    return std::make_unique<LearnedProvider>(std::move(m));
  }
  return std::make_unique<IdentityProvider>();
}

// Oscillator ground-truth trajectories, one per configured amplitude.
inline std::vector<Trajectory> oscillator_dataset(const World& w, const DatasetConfig& d, double dt) {
  std::vector<Trajectory> out;
  for (double a : d.amplitudes) {
    OscillatorParams p = d.oscillator;
    p.amplitude = a;
    OscillatorProvider osc(p);
    out.push_back(rollout(bootstrap(w.scene, w.hierarchy, dt), w.hierarchy, osc, w.scene, d.steps));
  }
  return out;
}

}  // namespace splatdyn
