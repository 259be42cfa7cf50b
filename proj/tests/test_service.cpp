#include "splatdyn/service/server.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace splatdyn;
using namespace splatdyn::service;

namespace {

EngineConfig small_config(std::size_t kernels = 200) {
  EngineConfig c;
  c.synthetic.count = kernels;
  return c;
}

std::string force_json(const std::vector<std::size_t>& ids, const Vec3& f) {
  return nlohmann::json{{"v", 1}, {"type", "force"}, {"kernel_ids", ids}, {"force", {f.x(), f.y(), f.z()}}}.dump();
}

std::string control_json(const std::string& action) {
  return nlohmann::json{{"v", 1}, {"type", "control"}, {"action", action}}.dump();
}

const std::string kProbe = R"({"v":1,"type":"probe"})";

Vec3 frame_position(const StateFrame& f, std::size_t k) {
  return {f.positions[3 * k], f.positions[3 * k + 1], f.positions[3 * k + 2]};
}

}  // namespace

// 2x2 closed form: eigenvalues (a + d)/2 +- sqrt(((a - d)/2)^2 + b^2), major
// axis angle atan2(2b, a - d) / 2.
TEST(Projection, MatchesClosedForm) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (char axis : {'x', 'y', 'z'}) {
    const Camera cam{axis};
    const auto o = cam.order();
    for (int trial = 0; trial < 200; ++trial) {
      Mat3 a;
      for (int i = 0; i < 9; ++i) a(i / 3, i % 3) = u(rng);
      const Mat3 cov = a * a.transpose() + 0.01 * Mat3::Identity();
      const Vec3 pos(u(rng), u(rng), u(rng));
      const Ellipse2D e = project_ellipse(pos, cov, cam);
      const double sa = cov(o[0], o[0]), sb = cov(o[0], o[1]), sd = cov(o[1], o[1]);
      const double mid = 0.5 * (sa + sd), rad = std::hypot(0.5 * (sa - sd), sb);
      EXPECT_NEAR(e.major, std::sqrt(mid + rad), 1e-12);
      EXPECT_NEAR(e.minor, std::sqrt(mid - rad), 1e-12);
      EXPECT_EQ(e.cx, pos(o[0]));
      EXPECT_EQ(e.cy, pos(o[1]));
      const double expected = 0.5 * std::atan2(2.0 * sb, sa - sd);
      // Axes are undirected: compare modulo pi.
      const double diff = std::remainder(e.angle - expected, std::numbers::pi);
      EXPECT_NEAR(diff, 0.0, 1e-9);
      EXPECT_GT(e.angle, -std::numbers::pi / 2);
      EXPECT_LE(e.angle, std::numbers::pi / 2);
    }
  }
}

TEST(Projection, AxisAlignedExample) {
  const Mat3 cov = Vec3(4.0, 1.0, 9.0).asDiagonal();
  const Ellipse2D z = project_ellipse(Vec3(1, 2, 3), cov, Camera{'z'});
  EXPECT_DOUBLE_EQ(z.major, 2.0);
  EXPECT_DOUBLE_EQ(z.minor, 1.0);
  EXPECT_NEAR(z.angle, 0.0, 1e-15);
  // Looking down x the screen axes are (y, z): major along z.
  const Ellipse2D x = project_ellipse(Vec3(1, 2, 3), cov, Camera{'x'});
  EXPECT_DOUBLE_EQ(x.cx, 2.0);
  EXPECT_DOUBLE_EQ(x.major, 3.0);
  EXPECT_NEAR(std::abs(x.angle), std::numbers::pi / 2, 1e-12);
}

// Independent oracle: distance to the half-line via the cross product for
// points ahead of the origin, plain distance to the origin behind it.
TEST(Picking, AgreesWithBruteForceOverRandomRays) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Positions pts(400);
  for (auto& p : pts) p = Vec3(u(rng), u(rng), u(rng));
  for (int ray = 0; ray < 1000; ++ray) {
    const Vec3 origin = 2.0 * Vec3(u(rng), u(rng), u(rng));
    const Vec3 dir = Vec3(u(rng), u(rng), u(rng)).normalized();
    const double radius = 0.3 * (u(rng) + 1.0);
    std::vector<std::size_t> expected;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const Vec3 rel = pts[i] - origin;
      const double d = rel.dot(dir) >= 0.0 ? rel.cross(dir).norm() : rel.norm();
      if (d <= radius) expected.push_back(i);
    }
    EXPECT_EQ(pick_kernels(origin, dir, radius, pts), expected) << "ray " << ray;
  }
}

TEST(Picking, ZeroRadiusHitsExactly) {
  const Positions pts{Vec3(0.5, 0.25, 0.125), Vec3(0.5, 0.25, -2.0), Vec3(0.5, 0.375, 0.125)};
  // Kernel 1 lies on the line but behind the origin.
  EXPECT_EQ(pick_kernels(Vec3(0.5, 0.25, -1.0), Vec3::UnitZ(), 0.0, pts), std::vector<std::size_t>{0});
  EXPECT_TRUE(pick_kernels(Vec3(0.5, 0.25, -1.0), -Vec3::UnitZ(), 0.0, pts) == std::vector<std::size_t>{1});
}

TEST(Picking, RejectsBadInput) {
  const Positions pts{Vec3::Zero()};
  EXPECT_THROW(pick_kernels(Vec3::Zero(), Vec3(2, 0, 0), 0.1, pts), Error);
  EXPECT_THROW(pick_kernels(Vec3::Zero(), Vec3::UnitX(), -0.1, pts), Error);
}

TEST(Protocol, BinaryFrameRoundTripAndLayout) {
  StateFrame f;
  f.frame = 42;
  f.time = 0.84;
  f.positions = {1, 2, 3, 4, 5, 6};
  f.ellipses = {0.1f, 0.2f, 0.3f, 0.4f, 0.5f, -0.1f, -0.2f, -0.3f, -0.4f, -0.5f};
  const std::string bytes = encode_binary(f);
  EXPECT_EQ(bytes.size(), 4u + 4u + 8u + 8u + 4u + 2u * 32u);
  EXPECT_EQ(bytes.substr(0, 4), "SPSF");
  const StateFrame back = decode_binary(bytes);
  EXPECT_EQ(back.frame, 42u);
  EXPECT_EQ(back.time, 0.84);
  EXPECT_EQ(back.positions, f.positions);
  EXPECT_EQ(back.ellipses, f.ellipses);
  EXPECT_THROW(decode_binary(bytes.substr(0, bytes.size() - 1)), Error);
}

TEST(Protocol, ParsesRequests) {
  const Request force = parse_request(
      R"({"v":1,"type":"force","pick":{"origin":[0,0,-1],"direction":[0,0,1],"radius":0.1},"force":[0,0,-9.8]})");
  const auto& f = std::get<ForceRequest>(force);
  ASSERT_TRUE(f.pick.has_value());
  EXPECT_EQ(f.pick->radius, 0.1);
  EXPECT_EQ(f.force, Vec3(0, 0, -9.8));
  const auto& c = std::get<ControlRequest>(parse_request(R"({"v":1,"type":"control","action":"set-provider","provider":"oscillator"})"));
  EXPECT_EQ(c.provider, "oscillator");
  EXPECT_TRUE(std::holds_alternative<ProbeRequest>(parse_request(kProbe)));
}

TEST(Protocol, RejectsMalformedRequests) {
  auto code = [](std::string_view text) {
    try {
      parse_request(text);
    } catch (const Error& e) {
      return e.code();
    }
    ADD_FAILURE() << "accepted " << text;
    return ErrorCode::invalid_argument;
  };
  EXPECT_EQ(code("{nope"), ErrorCode::malformed_record);
  EXPECT_EQ(code(R"({"type":"probe"})"), ErrorCode::malformed_record);
  EXPECT_EQ(code(R"({"v":2,"type":"probe"})"), ErrorCode::version_mismatch);
  EXPECT_EQ(code(R"({"v":1,"type":"teleport"})"), ErrorCode::malformed_record);
  EXPECT_EQ(code(R"({"v":1,"type":"control","action":"explode"})"), ErrorCode::malformed_record);
  EXPECT_EQ(code(R"({"v":1,"type":"force","kernel_ids":[0]})"), ErrorCode::malformed_record);
  EXPECT_EQ(code(R"({"v":1,"type":"force","kernel_ids":[0],"force":[0,"x",0]})"), ErrorCode::malformed_record);
}

TEST(BoundedBuffer, DropsOldest) {
  BoundedBuffer<int> b(3);
  for (int i = 1; i <= 5; ++i) b.push(i);
  EXPECT_EQ(b.size(), 3u);
  EXPECT_EQ(b.dropped(), 2u);
  EXPECT_EQ(b.pop(), 3);
  EXPECT_EQ(b.pop(), 4);
  EXPECT_EQ(b.pop(), 5);
  EXPECT_FALSE(b.pop().has_value());
}

TEST(Simulation, SceneInfoDescribesTheScene) {
  Simulation sim(small_config());
  const auto info = sim.scene_info();
  EXPECT_EQ(info["type"], "scene-info");
  EXPECT_EQ(info["kernel_count"].get<std::size_t>(), 200u);
  EXPECT_EQ(info["colors"].size(), 600u);
  EXPECT_EQ(info["opacity"].size(), 200u);
  EXPECT_EQ(info["dt"].get<double>(), sim.config().dt);
}

TEST(Simulation, PauseFreezesFrames) {
  Simulation sim(small_config());
  sim.tick();
  sim.tick();
  sim.handle(control_json("pause"));
  const auto first = sim.handle(kProbe).frame;
  for (int i = 0; i < 3; ++i) sim.tick();
  const auto second = sim.handle(kProbe).frame;
  ASSERT_TRUE(first && second);
  EXPECT_EQ(first->frame, second->frame);
  EXPECT_EQ(first->positions, second->positions);
  EXPECT_TRUE(sim.paused());
  sim.handle(control_json("resume"));
  sim.tick();
  EXPECT_GT(sim.handle(kProbe).frame->frame, second->frame);
}

TEST(Simulation, EmptySelectionIsAnError) {
  Simulation sim(small_config());
  const auto far = sim.handle(
      R"({"v":1,"type":"force","pick":{"origin":[50,50,50],"direction":[1,0,0],"radius":0.01},"force":[0,0,1]})");
  EXPECT_EQ(far.json["type"], "error");
  EXPECT_EQ(far.json["message"], "empty selection");
  EXPECT_EQ(sim.handle(force_json({}, Vec3(0, 0, 1))).json["message"], "empty selection");
  EXPECT_EQ(sim.handle(force_json({100000}, Vec3(0, 0, 1))).json["type"], "error");
  EXPECT_EQ(sim.forces_applied(), 0u);
}

TEST(Simulation, RejectsUnavailableProvider) {
  Simulation sim(small_config());
  const auto r = sim.handle(R"({"v":1,"type":"control","action":"set-provider","provider":"learned"})");
  EXPECT_EQ(r.json["type"], "error");
  EXPECT_EQ(sim.handle(R"({"v":1,"type":"control","action":"set-provider","provider":"oscillator"})").json["type"],
            "ack");
}

// force A, reset, force B on one kernel: only B survives if the queue is
// drained in arrival order.
TEST(Simulation, CommandsApplyInArrivalOrder) {
  Simulation sim(small_config());
  sim.handle(control_json("pause"));
  sim.tick();
  sim.handle(force_json({7}, Vec3(0, 0, -50)));
  sim.handle(control_json("reset"));
  sim.handle(force_json({7}, Vec3(30, 0, 0)));
  sim.tick();

  const Hierarchy& h = sim.world().hierarchy;
  const SimState expected = apply_force(bootstrap(sim.world().scene, h, sim.config().dt), {{7}, Vec3(30, 0, 0), 0}, h);
  EXPECT_EQ(sim.state().current.kernel_positions()[7], expected.current.kernel_positions()[7]);
  EXPECT_EQ(sim.forces_applied(), 2u);
}

TEST(Simulation, ForceIsVisibleInTheNextFrame) {
  Simulation sim(small_config());
  sim.tick();
  const auto before = sim.snapshot();
  ASSERT_EQ(sim.handle(force_json({3, 4}, Vec3(0, 0, -100))).json["type"], "ack");
  const auto r = sim.tick();
  EXPECT_TRUE(r.forced);
  const auto after = sim.snapshot();
  EXPECT_GT(after->frame, before->frame);
  EXPECT_LT(frame_position(*after, 3).z(), frame_position(*before, 3).z());
  EXPECT_EQ(frame_position(*after, 5), frame_position(*before, 5));
}

TEST(Simulation, PickedForceUsesTheLatestFrame) {
  Simulation sim(small_config());
  const Vec3 target = sim.world().scene.kernels[10].position;
  const nlohmann::json msg = {{"v", 1},
                              {"type", "force"},
                              {"pick", {{"origin", {target.x(), target.y(), target.z() + 5.0}},
                                        {"direction", {0, 0, -1}},
                                        {"radius", 1e-4}}},
                              {"force", {0, 0, -1}}};
  const auto r = sim.handle(msg.dump());
  EXPECT_EQ(r.json["type"], "ack");
  EXPECT_GE(r.json["kernels"].get<std::size_t>(), 1u);
}

namespace {

struct Client {
  net::io_context io;
  websocket::stream<tcp::socket> ws{io};

  explicit Client(unsigned short port) {
    tcp::resolver resolver(io);
    net::connect(ws.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws.handshake("127.0.0.1", "/");
  }

  std::pair<std::string, bool> read() {
    beast::flat_buffer buf;
    ws.read(buf);
    return {beast::buffers_to_string(buf.data()), ws.got_binary()};
  }

  void send(const std::string& text) {
    ws.text(true);
    ws.write(net::buffer(text));
  }

  // Next text message of the given type; frames in between are skipped.
  nlohmann::json read_json(const std::string& type) {
    for (int i = 0; i < 1000; ++i) {
      auto [msg, binary] = read();
      if (binary) continue;
      auto j = nlohmann::json::parse(msg);
      if (j["type"] == type) return j;
    }
    throw std::runtime_error("no " + type + " message");
  }

  StateFrame read_frame() {
    for (;;) {
      auto [msg, binary] = read();
      if (binary) return decode_binary(msg);
    }
  }
};

}  // namespace

TEST(Server, LoopbackSessionStreamsFramesAndAcceptsForces) {
  EngineConfig cfg = small_config(500);
  cfg.service.port = 0;
  Simulation sim(cfg);
  Server server(sim, cfg.service);
  server.start();

  Client client(server.port());
  auto [first, binary] = client.read();
  ASSERT_FALSE(binary);
  const auto info = nlohmann::json::parse(first);
  EXPECT_EQ(info["type"], "scene-info");
  EXPECT_EQ(info["kernel_count"].get<std::size_t>(), 500u);

  const StateFrame f0 = client.read_frame();
  EXPECT_EQ(f0.kernel_count(), 500u);

  client.send(control_json("pause"));
  EXPECT_EQ(client.read_json("ack")["action"], "pause");
  client.send(force_json({12}, Vec3(0, 0, -100)));
  EXPECT_EQ(client.read_json("ack")["kernels"].get<std::size_t>(), 1u);
  const Vec3 rest = sim.world().scene.kernels[12].position;
  bool displaced = false;
  for (int i = 0; i < 50 && !displaced; ++i) displaced = frame_position(client.read_frame(), 12).z() < rest.z() - 1e-6;
  EXPECT_TRUE(displaced);

  client.send(R"({"v":9,"type":"probe"})");
  EXPECT_NE(client.read_json("error")["message"].get<std::string>().find("version"), std::string::npos);

  client.ws.close(websocket::close_code::normal);
  server.stop();
}

TEST(Server, ServesStaticFilesOrNotFound) {
  const auto dir = std::filesystem::temp_directory_path() / "splatdyn_static_test";
  std::filesystem::create_directories(dir);
  io::write_file((dir / "index.html").string(), "<html>viewer</html>");
  EngineConfig cfg = small_config(50);
  cfg.service.port = 0;
  cfg.service.static_dir = dir.string();
  Simulation sim(cfg);
  Server server(sim, cfg.service);
  server.start();

  auto get = [&](const std::string& target) {
    net::io_context io;
    beast::tcp_stream s(io);
    tcp::resolver resolver(io);
    s.connect(resolver.resolve("127.0.0.1", std::to_string(server.port())));
    http::request<http::empty_body> req{http::verb::get, target, 11};
    req.set(http::field::host, "127.0.0.1");
    http::write(s, req);
    beast::flat_buffer buf;
    http::response<http::string_body> res;
    http::read(s, buf, res);
    return res;
  };
  const auto ok = get("/");
  EXPECT_EQ(ok.result(), http::status::ok);
  EXPECT_EQ(ok.body(), "<html>viewer</html>");
  EXPECT_EQ(get("/missing.js").result(), http::status::not_found);
  EXPECT_EQ(get("/../../etc/passwd").result(), http::status::not_found);
  server.stop();
  std::filesystem::remove_all(dir);
}
