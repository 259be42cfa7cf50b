#pragma once

#include "splatdyn/config.hpp"
#include "splatdyn/service/protocol.hpp"

#include <deque>
#include <mutex>

namespace splatdyn::service {

// Fixed-capacity FIFO that drops its oldest entry instead of blocking.
template <typename T>
class BoundedBuffer {
 public:
  explicit BoundedBuffer(std::size_t capacity) : capacity_(std::max<std::size_t>(1, capacity)) {}

  void push(T value) {
    if (items_.size() == capacity_) {
      items_.pop_front();
      ++dropped_;
    }
    items_.push_back(std::move(value));
  }

  std::optional<T> pop() {
    if (items_.empty()) return std::nullopt;
    T v = std::move(items_.front());
    items_.pop_front();
    return v;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t dropped() const { return dropped_; }
  std::size_t capacity() const { return capacity_; }

 private:
  std::size_t capacity_;
  std::deque<T> items_;
  std::size_t dropped_ = 0;
};

// Reply to a client message: JSON text, or a state frame for probes.
struct Reply {
  nlohmann::json json;
  std::shared_ptr<const StateFrame> frame;
};

// Owns the simulation. The loop thread is the only caller of tick(); any
// thread may call handle() and snapshot(). Forces and controls travel
// through one FIFO that tick() drains before stepping, so they take effect
// in arrival order.
class Simulation {
 public:
  explicit Simulation(EngineConfig config)
      : config_(std::move(config)), world_(make_world(config_)), camera_{config_.service.axis} {
    provider_ = make_provider(config_, world_.hierarchy);
    provider_name_ = config_.provider;
    state_ = bootstrap(world_.scene, world_.hierarchy, config_.dt);
    publish();
  }

  nlohmann::json scene_info() const {
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
    for (const auto& k : world_.scene.kernels) {
      lo = lo.cwiseMin(k.position);
      hi = hi.cwiseMax(k.position);
    }
    auto colors = nlohmann::json::array();
    auto opacity = nlohmann::json::array();
    for (const auto& k : world_.scene.kernels) {
      const Vec3 rgb = sh_to_display_rgb(evaluate_sh(k.sh_degree, k.sh_coeffs, -camera_.view()));
      colors.insert(colors.end(), {rgb.x(), rgb.y(), rgb.z()});
      opacity.push_back(k.opacity);
    }
    const auto o = camera_.order();
    return {{"v", kProtocolVersion},
            {"type", "scene-info"},
            {"kernel_count", world_.scene.size()},
            {"bounds", {{"min", {lo.x(), lo.y(), lo.z()}}, {"max", {hi.x(), hi.y(), hi.z()}}}},
            {"dt", config_.dt},
            {"axis", std::string(1, camera_.axis)},
            {"screen_axes", {o[0], o[1]}},
            {"provider", provider_name_},
            {"binary_frames", config_.service.binary_frames},
            {"colors", colors},
            {"opacity", opacity}};
  }

  Reply handle(std::string_view text) {
    Request req;
    try {
      req = parse_request(text);
    } catch (const Error& e) {
      return {error_message(e.what()), nullptr};
    }
    if (std::holds_alternative<ProbeRequest>(req)) return {nlohmann::json(), snapshot()};
    if (auto* c = std::get_if<ControlRequest>(&req)) {
      if (c->action == "set-provider") {
        try {
          EngineConfig probe = config_;
          probe.provider = c->provider;
          validate_config(probe);
        } catch (const Error& e) {
          return {error_message(e.what(), "control"), nullptr};
        }
      }
      enqueue(*c);
      return {{{"v", kProtocolVersion}, {"type", "ack"}, {"request", "control"}, {"action", c->action}}, nullptr};
    }
    auto& f = std::get<ForceRequest>(req);
    ForceEvent event;
    event.force = f.force;
    event.kernel_ids = f.kernel_ids;
    if (f.pick) {
      try {
        const auto snap = snapshot();
        Positions pos(snap->kernel_count());
        for (std::size_t k = 0; k < pos.size(); ++k) {
          pos[k] = Vec3(snap->positions[3 * k], snap->positions[3 * k + 1], snap->positions[3 * k + 2]);
        }
        const auto picked = pick_kernels(f.pick->origin, f.pick->direction, f.pick->radius, pos);
        event.kernel_ids.insert(event.kernel_ids.end(), picked.begin(), picked.end());
      } catch (const Error& e) {
        return {error_message(e.what(), "force"), nullptr};
      }
    }
    if (event.kernel_ids.empty()) return {error_message("empty selection", "force"), nullptr};
    for (std::size_t id : event.kernel_ids) {
      if (id >= world_.scene.size()) return {error_message("unknown kernel id " + std::to_string(id), "force"), nullptr};
    }
    const std::size_t n = event.kernel_ids.size();
    enqueue(std::move(event));
    return {{{"v", kProtocolVersion}, {"type", "ack"}, {"request", "force"}, {"kernels", n}}, nullptr};
  }

  struct TickResult {
    bool published = false;  // a new frame is available
    bool forced = false;     // it shows freshly applied forces
  };

  // Applies queued commands in order, then advances one step unless paused.
  // A tick that applied forces does not step, so the published frame shows
  // the displacement before the provider reacts to it.
  TickResult tick() {
    std::deque<Command> pending;
    {
      std::lock_guard lock(queue_mutex_);
      pending.swap(queue_);
    }
    TickResult res;
    for (auto& cmd : pending) {
      if (auto* f = std::get_if<ForceEvent>(&cmd)) {
        f->step = state_.t;
        state_ = apply_force(state_, *f, world_.hierarchy);
        ++forces_applied_;
        res.forced = true;
      } else {
        const auto& c = std::get<ControlRequest>(cmd);
        if (c.action == "pause") paused_ = true;
        if (c.action == "resume") paused_ = false;
        if (c.action == "reset") {
          state_ = bootstrap(world_.scene, world_.hierarchy, config_.dt);
          res.published = true;
        }
        if (c.action == "set-provider") {
          EngineConfig next = config_;
          next.provider = c.provider;
          provider_ = make_provider(next, world_.hierarchy);
          provider_name_ = c.provider;
        }
      }
    }
    if (!paused_ && !res.forced) {
      state_ = step(state_, world_.hierarchy, *provider_, world_.scene);
      res.published = true;
    }
    res.published = res.published || res.forced;
    if (res.published) publish();
    return res;
  }

  std::shared_ptr<const StateFrame> snapshot() const {
    std::lock_guard lock(snapshot_mutex_);
    return snapshot_;
  }

  bool paused() const { return paused_; }
  std::size_t forces_applied() const { return forces_applied_; }
  const SimState& state() const { return state_; }
  const World& world() const { return world_; }
  const EngineConfig& config() const { return config_; }

 private:
  using Command = std::variant<ForceEvent, ControlRequest>;

  void enqueue(Command c) {
    std::lock_guard lock(queue_mutex_);
    queue_.push_back(std::move(c));
  }

  void publish() {
    auto f = std::make_shared<StateFrame>();
    f->frame = next_frame_++;
    f->time = static_cast<double>(state_.t) * state_.dt;
    const auto& pos = state_.current.kernel_positions();
    f->positions.reserve(3 * pos.size());
    f->ellipses.reserve(5 * pos.size());
    for (std::size_t k = 0; k < pos.size(); ++k) {
      for (int a = 0; a < 3; ++a) f->positions.push_back(static_cast<float>(pos[k](a)));
      const Ellipse2D e = project_ellipse(pos[k], state_.current.covariances[k], camera_);
      for (double v : {e.cx, e.cy, e.major, e.minor, e.angle}) f->ellipses.push_back(static_cast<float>(v));
    }
    std::lock_guard lock(snapshot_mutex_);
    snapshot_ = std::move(f);
  }

  EngineConfig config_;
  World world_;
  Camera camera_;
  std::unique_ptr<GradientProvider> provider_;
  std::string provider_name_;
  SimState state_;
  bool paused_ = false;
  std::size_t forces_applied_ = 0;
  std::uint64_t next_frame_ = 0;

  std::mutex queue_mutex_;
  std::deque<Command> queue_;
  mutable std::mutex snapshot_mutex_;
  std::shared_ptr<const StateFrame> snapshot_;
};

}  // namespace splatdyn::service
