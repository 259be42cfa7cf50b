#pragma once

#include "splatdyn/binary_io.hpp"
#include "splatdyn/engine.hpp"

#include <nlohmann/json.hpp>

#include <sstream>

// Trajectory file (little-endian):
//   "SPDT" | u32 version | u64 kernel count | f64 dt | u64 scene hash | u64 frame count
//   per frame: u64 frame index | f64 timestamp (index * dt) | kernel count x 3 f64 positions
namespace splatdyn {

inline constexpr std::uint32_t kTrajectoryVersion = 1;

inline std::string serialize_trajectory(const Trajectory& t) {
  const std::size_t n = t.frames.empty() ? 0 : t.frames.front().size();
  io::ByteWriter w;
  w.bytes("SPDT");
  w.u32(kTrajectoryVersion);
  w.u64(n);
  w.f64(t.dt);
  w.u64(t.scene_hash);
  w.u64(t.frames.size());
  for (std::size_t i = 0; i < t.frames.size(); ++i) {
    if (t.frames[i].size() != n) throw Error(ErrorCode::shape_mismatch, "trajectory frames differ in kernel count");
    const std::size_t index = t.first_step + i;
    w.u64(index);
    w.f64(static_cast<double>(index) * t.dt);
    for (const Vec3& p : t.frames[i]) w.vec3(p);
  }
  return w.take();
}

inline Trajectory deserialize_trajectory(std::string_view data) {
  io::ByteReader r(data);
  r.context("trajectory header");
  if (r.bytes(4) != "SPDT") throw Error(ErrorCode::malformed_record, "not a trajectory file (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kTrajectoryVersion) {
    throw Error(ErrorCode::version_mismatch, "trajectory version " + std::to_string(version) + ", expected " +
                                                 std::to_string(kTrajectoryVersion));
  }
  Trajectory t;
  const std::uint64_t n = r.u64();
  t.dt = r.f64();
  t.scene_hash = r.u64();
  const std::uint64_t frames = r.u64();
  if (frames > 0 && (n * 24 + 16) * frames > r.remaining()) {
    throw Error(ErrorCode::malformed_record, "truncated record: trajectory frames");
  }
  t.frames.resize(frames);
  for (std::uint64_t i = 0; i < frames; ++i) {
    r.context("trajectory frame " + std::to_string(i));
    const std::uint64_t index = r.u64();
    if (i == 0) t.first_step = index;
    if (index != t.first_step + i) throw Error(ErrorCode::malformed_record, "frame " + std::to_string(i) + " out of order");
    r.f64();
    t.frames[i].resize(n);
    for (auto& p : t.frames[i]) p = r.vec3();
  }
  return t;
}

// One JSON object per line: {"frame", "time", "positions": [[x,y,z], ...]}.
inline std::string trajectory_to_jsonl(const Trajectory& t) {
  std::ostringstream out;
  for (std::size_t i = 0; i < t.frames.size(); ++i) {
    nlohmann::json line;
    line["frame"] = t.first_step + i;
    line["time"] = static_cast<double>(t.first_step + i) * t.dt;
    auto& pos = line["positions"] = nlohmann::json::array();
    for (const Vec3& p : t.frames[i]) pos.push_back({p.x(), p.y(), p.z()});
    out << line.dump() << '\n';
  }
  return out.str();
}

inline void save_trajectory(const Trajectory& t, const std::string& path) {
  io::write_file(path, serialize_trajectory(t));
}

inline Trajectory load_trajectory(const std::string& path) { return deserialize_trajectory(io::read_file(path)); }

}  // namespace splatdyn
