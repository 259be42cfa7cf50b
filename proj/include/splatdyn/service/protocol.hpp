#pragma once

#include "splatdyn/binary_io.hpp"
#include "splatdyn/common.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <variant>

// Wire protocol shared with the viewer. JSON messages are objects with a
// protocol version "v" and a "type" tag. State frames go out as a compact
// little-endian binary record (or as JSON when binary frames are disabled):
//
//   "SPSF" | u32 version | u64 frame | f64 time | u32 kernel count
//   per kernel: f32 x, y, z | f32 cx, cy, major, minor, angle
//
// (cx, cy) is the projected center, major >= minor are 1-sigma semi-axes of
// the projected covariance, angle (radians) is the major axis direction
// measured from screen x towards screen y.
namespace splatdyn::service {

inline constexpr int kProtocolVersion = 1;
inline constexpr std::uint32_t kFrameVersion = 1;

struct Ellipse2D {
  double cx = 0.0, cy = 0.0;
  double major = 0.0, minor = 0.0;
  double angle = 0.0;
};

// Orthographic projection along a coordinate axis. Screen axes are the two
// remaining coordinates in cyclic order (z -> (x, y), x -> (y, z), y -> (z, x)).
struct Camera {
  char axis = 'z';

  std::array<int, 3> order() const {
    switch (axis) {
      case 'x': return {1, 2, 0};
      case 'y': return {2, 0, 1};
      case 'z': return {0, 1, 2};
      default: throw Error(ErrorCode::invalid_argument, std::string("unknown camera axis '") + axis + "'");
    }
  }
  Vec3 screen_x() const { return Vec3::Unit(order()[0]); }
  Vec3 screen_y() const { return Vec3::Unit(order()[1]); }
  Vec3 view() const { return Vec3::Unit(order()[2]); }
};

inline Ellipse2D project_ellipse(const Vec3& position, const Mat3& covariance, const Camera& cam) {
  const auto o = cam.order();
  Eigen::Matrix2d s;
  s << covariance(o[0], o[0]), covariance(o[0], o[1]), covariance(o[1], o[0]), covariance(o[1], o[1]);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(s);
  const Eigen::Vector2d values = eig.eigenvalues().cwiseMax(0.0);  // ascending
  const Eigen::Vector2d major = eig.eigenvectors().col(1);
  Ellipse2D e;
  e.cx = position(o[0]);
  e.cy = position(o[1]);
  e.major = std::sqrt(values(1));
  e.minor = std::sqrt(values(0));
  e.angle = std::atan2(major.y(), major.x());
  if (e.angle > std::numbers::pi / 2) e.angle -= std::numbers::pi;   // undirected axis: keep in (-pi/2, pi/2]
  if (e.angle <= -std::numbers::pi / 2) e.angle += std::numbers::pi;
  return e;
}

// Kernels whose centers lie within `radius` of the half-line origin + s d,
// s >= 0, in ascending id order.
inline std::vector<std::size_t> pick_kernels(const Vec3& origin, const Vec3& direction, double radius,
                                             std::span<const Vec3> positions) {
  if (std::abs(direction.norm() - 1.0) > 1e-9) throw Error(ErrorCode::invalid_argument, "pick direction must be unit length");
  if (!(radius >= 0.0)) throw Error(ErrorCode::invalid_argument, "pick radius must be non-negative");
  std::vector<std::size_t> out;
  const double r2 = radius * radius;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const Vec3 rel = positions[i] - origin;
    const double s = std::max(0.0, rel.dot(direction));
    if ((rel - s * direction).squaredNorm() <= r2) out.push_back(i);
  }
  return out;
}

struct StateFrame {
  std::uint64_t frame = 0;
  double time = 0.0;
  std::vector<float> positions;  // 3 per kernel
  std::vector<float> ellipses;   // 5 per kernel

  std::size_t kernel_count() const { return positions.size() / 3; }
};

inline std::string encode_binary(const StateFrame& f) {
  io::ByteWriter w;
  w.bytes("SPSF");
  w.u32(kFrameVersion);
  w.u64(f.frame);
  w.f64(f.time);
  w.u32(static_cast<std::uint32_t>(f.kernel_count()));
  for (std::size_t k = 0; k < f.kernel_count(); ++k) {
    for (int a = 0; a < 3; ++a) w.f32(f.positions[3 * k + static_cast<std::size_t>(a)]);
    for (int a = 0; a < 5; ++a) w.f32(f.ellipses[5 * k + static_cast<std::size_t>(a)]);
  }
  return w.take();
}

inline StateFrame decode_binary(std::string_view data) {
  io::ByteReader r(data);
  r.context("state frame header");
  if (r.bytes(4) != "SPSF") throw Error(ErrorCode::malformed_record, "not a state frame");
  if (r.u32() != kFrameVersion) throw Error(ErrorCode::version_mismatch, "unsupported state frame version");
  StateFrame f;
  f.frame = r.u64();
  f.time = r.f64();
  const std::uint32_t n = r.u32();
  r.context("state frame kernels");
  f.positions.resize(3 * std::size_t{n});
  f.ellipses.resize(5 * std::size_t{n});
  for (std::size_t k = 0; k < n; ++k) {
    for (int a = 0; a < 3; ++a) f.positions[3 * k + static_cast<std::size_t>(a)] = r.f32();
    for (int a = 0; a < 5; ++a) f.ellipses[5 * k + static_cast<std::size_t>(a)] = r.f32();
  }
  return f;
}

inline nlohmann::json encode_json(const StateFrame& f) {
  return {{"v", kProtocolVersion}, {"type", "state"},        {"frame", f.frame},
          {"time", f.time},        {"positions", f.positions}, {"ellipses", f.ellipses}};
}

inline nlohmann::json error_message(const std::string& message, const std::string& request = {}) {
  nlohmann::json j{{"v", kProtocolVersion}, {"type", "error"}, {"message", message}};
  if (!request.empty()) j["request"] = request;
  return j;
}

// Parsed client requests.
struct ForceRequest {
  std::vector<std::size_t> kernel_ids;
  struct Pick {
    Vec3 origin, direction;
    double radius;
  };
  std::optional<Pick> pick;
  Vec3 force = Vec3::Zero();
};

struct ControlRequest {
  std::string action;    // pause | resume | reset | set-provider
  std::string provider;  // for set-provider
};

struct ProbeRequest {};

using Request = std::variant<ForceRequest, ControlRequest, ProbeRequest>;

namespace detail {

inline Vec3 vec3(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 3 || !j[0].is_number() || !j[1].is_number() || !j[2].is_number()) {
    throw Error(ErrorCode::malformed_record, std::string(what) + " must be a numeric 3-vector");
  }
  const Vec3 v(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
  if (!v.allFinite()) throw Error(ErrorCode::non_finite, std::string(what) + " must be finite");
  return v;
}

}  // namespace detail

inline Request parse_request(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::malformed_record, "message is not valid JSON");
  }
  if (!j.is_object()) throw Error(ErrorCode::malformed_record, "message must be a JSON object");
  if (!j.contains("v") || !j["v"].is_number_integer()) throw Error(ErrorCode::malformed_record, "missing protocol version");
  if (j["v"].get<int>() != kProtocolVersion) {
    throw Error(ErrorCode::version_mismatch, "protocol version " + std::to_string(j["v"].get<int>()) +
                                                 " unsupported (server speaks " + std::to_string(kProtocolVersion) + ")");
  }
  const std::string type = j.value("type", std::string{});
  try {
    if (type == "force") {
      ForceRequest f;
      if (j.contains("kernel_ids")) f.kernel_ids = j["kernel_ids"].get<std::vector<std::size_t>>();
      if (j.contains("pick")) {
        const auto& p = j["pick"];
        f.pick = ForceRequest::Pick{detail::vec3(p.at("origin"), "pick.origin"),
                                    detail::vec3(p.at("direction"), "pick.direction"), p.value("radius", 0.0)};
      }
      f.force = detail::vec3(j.at("force"), "force");
      return f;
    }
    if (type == "control") {
      ControlRequest c;
      c.action = j.at("action").get<std::string>();
      if (c.action != "pause" && c.action != "resume" && c.action != "reset" && c.action != "set-provider") {
        throw Error(ErrorCode::malformed_record, "unknown control action '" + c.action + "'");
      }
      if (c.action == "set-provider") c.provider = j.at("provider").get<std::string>();
      return c;
    }
    if (type == "probe") return ProbeRequest{};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::malformed_record, type + ": " + e.what());
  }
  throw Error(ErrorCode::malformed_record, "unknown message type '" + type + "'");
}

}  // namespace splatdyn::service
