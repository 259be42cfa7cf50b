#pragma once

#include "splatdyn/binary_io.hpp"
#include "splatdyn/splat_model.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <numbers>
#include <random>

namespace splatdyn {

inline constexpr std::string_view kSceneMagic = "SPDS";
inline constexpr std::uint32_t kSceneVersion = 1;

namespace detail {

inline void check_scene_record(const GaussianKernel& k, std::size_t i) {
  if (!k.position.allFinite() || !k.covariance.allFinite()) {
    throw Error(ErrorCode::malformed_record, "kernel " + std::to_string(i) + " has non-finite values");
  }
  if (!is_spd(k.covariance)) {
    throw Error(ErrorCode::non_spd, "kernel " + std::to_string(i) + " covariance is not SPD");
  }
  if (!(k.opacity >= 0.0 && k.opacity <= 1.0)) {
    throw Error(ErrorCode::malformed_record, "kernel " + std::to_string(i) + " opacity outside [0,1]");
  }
}

inline Mat3 from_upper(const std::array<double, 6>& u) {
  Mat3 m;
  m << u[0], u[1], u[2], u[1], u[3], u[4], u[2], u[4], u[5];
  return m;
}

inline std::array<double, 6> to_upper(const Mat3& m) {
  return {m(0, 0), m(0, 1), m(0, 2), m(1, 1), m(1, 2), m(2, 2)};
}

}  // namespace detail

// Binary layout (all little-endian):
//   "SPDS" u32 version u64 kernel_count u32 attribute_dim u64 root_kernel_id
//   kernel_count x { f64 pos[3], f64 cov_upper[6] (xx xy xz yy yz zz),
//                    u32 sh_degree, f64 sh[3 (deg+1)^2], f64 opacity }
//   kernel_count x { f64 density, f64 attribute[attribute_dim] }
//   u32 units_length, units bytes (UTF-8)
inline std::string serialize_scene(const SceneTemplate& scene, std::string_view units = "scene units") {
  validate_scene(scene);
  io::ByteWriter w;
  w.bytes(kSceneMagic);
  w.u32(kSceneVersion);
  w.u64(scene.size());
  const std::size_t dim = scene.attributes.empty() ? 0 : scene.attributes.front().attribute_vector.size();
  w.u32(static_cast<std::uint32_t>(dim));
  w.u64(scene.root_kernel_id);
  for (const GaussianKernel& k : scene.kernels) {
    w.vec3(k.position);
    for (double v : detail::to_upper(k.covariance)) w.f64(v);
    w.u32(static_cast<std::uint32_t>(k.sh_degree));
    for (Eigen::Index i = 0; i < k.sh_coeffs.size(); ++i) w.f64(k.sh_coeffs[i]);
    w.f64(k.opacity);
  }
  for (const MaterialAttributes& a : scene.attributes) {
    w.f64(a.density);
    for (Eigen::Index i = 0; i < a.attribute_vector.size(); ++i) w.f64(a.attribute_vector[i]);
  }
  w.u32(static_cast<std::uint32_t>(units.size()));
  w.bytes(units);
  return w.take();
}

inline SceneTemplate deserialize_scene(std::string_view data) {
  io::ByteReader r(data);
  if (data.size() < 4 || r.bytes(4) != kSceneMagic) {
    throw Error(ErrorCode::malformed_record, "not a scene file (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kSceneVersion) {
    throw Error(ErrorCode::version_mismatch, "scene version " + std::to_string(version) + " is not supported");
  }
  const std::uint64_t count = r.u64();
  const std::uint32_t dim = r.u32();
  const std::uint64_t root = r.u64();
  // Each kernel record is at least 11 doubles + a u32.
  if (count > r.remaining() / (11 * 8 + 4)) {
    throw Error(ErrorCode::malformed_record, "kernel count exceeds file size");
  }
  SceneTemplate s;
  s.root_kernel_id = root;
  s.kernels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    r.context("kernel record " + std::to_string(i));
    GaussianKernel& k = s.kernels[i];
    k.position = r.vec3();
    std::array<double, 6> u;
    for (double& v : u) v = r.f64();
    k.covariance = detail::from_upper(u);
    const std::uint32_t degree = r.u32();
    if (degree > kMaxShDegree) {
      throw Error(ErrorCode::malformed_record, "kernel record " + std::to_string(i) + " has SH degree " +
                                                   std::to_string(degree));
    }
    k.sh_degree = static_cast<int>(degree);
    k.sh_coeffs.resize(static_cast<Eigen::Index>(sh_coeff_count(k.sh_degree)));
    for (Eigen::Index c = 0; c < k.sh_coeffs.size(); ++c) k.sh_coeffs[c] = r.f64();
    k.opacity = r.f64();
    detail::check_scene_record(k, i);
  }
  s.attributes.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    r.context("attribute record " + std::to_string(i));
    MaterialAttributes& a = s.attributes[i];
    a.density = r.f64();
    a.attribute_vector.resize(dim);
    for (std::uint32_t c = 0; c < dim; ++c) a.attribute_vector[c] = r.f64();
    if (!(a.density > 0.0) || !std::isfinite(a.density) || !a.attribute_vector.allFinite()) {
      throw Error(ErrorCode::malformed_record, "attribute record " + std::to_string(i) + " is invalid");
    }
  }
  r.context("units note");
  const std::uint32_t ulen = r.u32();
  r.bytes(ulen);
  if (count > 0 && root >= count) {
    throw Error(ErrorCode::malformed_record, "root kernel id " + std::to_string(root) + " out of range");
  }
  return s;
}

inline nlohmann::json scene_to_json(const SceneTemplate& scene, std::string_view units = "scene units") {
  validate_scene(scene);
  nlohmann::json j;
  j["format"] = "splatdyn-scene";
  j["version"] = kSceneVersion;
  j["root_kernel_id"] = scene.root_kernel_id;
  j["units"] = std::string(units);
  auto& ks = j["kernels"] = nlohmann::json::array();
  for (const GaussianKernel& k : scene.kernels) {
    ks.push_back({{"position", {k.position.x(), k.position.y(), k.position.z()}},
                  {"covariance_upper", detail::to_upper(k.covariance)},
                  {"sh_degree", k.sh_degree},
                  {"sh_coeffs", std::vector<double>(k.sh_coeffs.data(), k.sh_coeffs.data() + k.sh_coeffs.size())},
                  {"opacity", k.opacity}});
  }
  auto& as = j["attributes"] = nlohmann::json::array();
  for (const MaterialAttributes& a : scene.attributes) {
    as.push_back({{"density", a.density},
                  {"attribute", std::vector<double>(a.attribute_vector.data(),
                                                    a.attribute_vector.data() + a.attribute_vector.size())}});
  }
  return j;
}

inline SceneTemplate scene_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", "") != "splatdyn-scene") {
    throw Error(ErrorCode::malformed_record, "not a splatdyn scene document");
  }
  const auto version = j.value("version", 0u);
  if (version != kSceneVersion) {
    throw Error(ErrorCode::version_mismatch, "scene version " + std::to_string(version) + " is not supported");
  }
  SceneTemplate s;
  try {
    s.root_kernel_id = j.at("root_kernel_id").get<std::size_t>();
    const auto& ks = j.at("kernels");
    const auto& as = j.at("attributes");
    if (ks.size() != as.size()) throw Error(ErrorCode::malformed_record, "kernel/attribute record counts differ");
    for (std::size_t i = 0; i < ks.size(); ++i) {
      try {
        GaussianKernel k;
        const auto p = ks[i].at("position").get<std::array<double, 3>>();
        k.position = Vec3(p[0], p[1], p[2]);
        k.covariance = detail::from_upper(ks[i].at("covariance_upper").get<std::array<double, 6>>());
        k.sh_degree = ks[i].at("sh_degree").get<int>();
        const auto c = ks[i].at("sh_coeffs").get<std::vector<double>>();
        if (k.sh_degree < 0 || k.sh_degree > kMaxShDegree || c.size() != sh_coeff_count(k.sh_degree)) {
          throw Error(ErrorCode::malformed_record, "kernel record " + std::to_string(i) + " has bad SH layout");
        }
        k.sh_coeffs = Eigen::Map<const VecX>(c.data(), static_cast<Eigen::Index>(c.size()));
        k.opacity = ks[i].at("opacity").get<double>();
        detail::check_scene_record(k, i);
        s.kernels.push_back(std::move(k));
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::malformed_record, "kernel record " + std::to_string(i) + ": " + e.what());
      }
    }
    for (std::size_t i = 0; i < as.size(); ++i) {
      try {
        MaterialAttributes a;
        a.density = as[i].at("density").get<double>();
        const auto v = as[i].at("attribute").get<std::vector<double>>();
        a.attribute_vector = Eigen::Map<const VecX>(v.data(), static_cast<Eigen::Index>(v.size()));
        if (!(a.density > 0.0)) {
          throw Error(ErrorCode::malformed_record, "attribute record " + std::to_string(i) + " density <= 0");
        }
        s.attributes.push_back(std::move(a));
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::malformed_record, "attribute record " + std::to_string(i) + ": " + e.what());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::malformed_record, e.what());
  }
  if (!s.kernels.empty() && s.root_kernel_id >= s.kernels.size()) {
    throw Error(ErrorCode::malformed_record, "root kernel id out of range");
  }
  return s;
}

inline bool is_json_path(const std::string& path) {
  return path.size() >= 5 && path.compare(path.size() - 5, 5, ".json") == 0;
}

inline void save_scene(const SceneTemplate& scene, const std::string& path) {
  if (is_json_path(path)) {
    io::write_file(path, scene_to_json(scene).dump(1));
  } else {
    io::write_file(path, serialize_scene(scene));
  }
}

inline SceneTemplate load_scene(const std::string& path) {
  const std::string data = io::read_file(path);
  if (data.size() >= 4 && std::string_view(data).substr(0, 4) == kSceneMagic) return deserialize_scene(data);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(data);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::malformed_record, path + ": neither a binary nor a JSON scene (" + e.what() + ")");
  }
  return scene_from_json(j);
}

inline std::uint64_t scene_hash(const SceneTemplate& scene) { return io::fnv1a64(serialize_scene(scene)); }

enum class SyntheticShape { beam, sphere_cloud };

struct SyntheticSceneSpec {
  SyntheticShape shape = SyntheticShape::beam;
  std::size_t count = 2000;
  double spacing = 0.02;
  std::uint64_t seed = 0;
  double density = 1.0;
  int attribute_dim = 4;
  int sh_degree = 0;  // higher bands get small seeded coefficients
};

// Beam: a regular grid 16:2:1 in cells (x along the beam), anchored at x = 0.
// Sphere cloud: uniform samples in a ball at the same number density,
// anchored at its lowest point. Colors are seeded; attributes are zero.
inline SceneTemplate generate_synthetic_scene(const SyntheticSceneSpec& spec) {
  if (spec.count < 1) throw Error(ErrorCode::invalid_argument, "scene needs at least one kernel");
  if (!(spec.spacing > 0.0)) throw Error(ErrorCode::invalid_argument, "spacing must be positive");
  if (spec.sh_degree < 0 || spec.sh_degree > 3) throw Error(ErrorCode::invalid_argument, "SH degree must be 0..3");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SceneTemplate s;
  s.kernels.reserve(spec.count);
  Positions pts;
  Vec3 anchor = Vec3::Zero();

  if (spec.shape == SyntheticShape::beam) {
    const std::size_t nz = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(std::cbrt(static_cast<double>(spec.count) / 16.0))));
    const std::size_t ny = 2 * nz;
    const std::size_t nx = (spec.count + ny * nz - 1) / (ny * nz);
    for (std::size_t ix = 0; ix < nx && pts.size() < spec.count; ++ix)
      for (std::size_t iy = 0; iy < ny && pts.size() < spec.count; ++iy)
        for (std::size_t iz = 0; iz < nz && pts.size() < spec.count; ++iz)
          pts.emplace_back(spec.spacing * static_cast<double>(ix), spec.spacing * static_cast<double>(iy),
                           spec.spacing * static_cast<double>(iz));
    anchor = Vec3(0.0, spec.spacing * static_cast<double>(ny - 1) / 2.0,
                  spec.spacing * static_cast<double>(nz - 1) / 2.0);
  } else {
    const double radius = spec.spacing * std::cbrt(3.0 * static_cast<double>(spec.count) / (4.0 * std::numbers::pi));
    if (spec.count == 1) {
      pts.emplace_back(0.0, 0.0, 0.0);
    } else {
      while (pts.size() < spec.count) {
        const Vec3 p(2.0 * unit(rng) - 1.0, 2.0 * unit(rng) - 1.0, 2.0 * unit(rng) - 1.0);
        if (p.squaredNorm() <= 1.0) pts.push_back(radius * p);
      }
    }
    anchor = Vec3(0.0, 0.0, -radius);
  }

  const double sigma = spec.spacing / 2.0;
  std::size_t root = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    GaussianKernel k;
    k.position = pts[i];
    k.covariance = sigma * sigma * Mat3::Identity();
    k.sh_degree = spec.sh_degree;
    k.sh_coeffs = VecX(static_cast<Eigen::Index>(sh_coeff_count(spec.sh_degree)));
    for (Eigen::Index c = 0; c < k.sh_coeffs.size(); ++c) k.sh_coeffs[c] = (c < 3 ? 1.0 : 0.1) * (unit(rng) - 0.5);
    k.opacity = 0.5 + 0.5 * unit(rng);
    s.kernels.push_back(std::move(k));
    MaterialAttributes a;
    a.density = spec.density;
    a.attribute_vector = VecX::Zero(spec.attribute_dim);
    s.attributes.push_back(std::move(a));
    const double d = (pts[i] - anchor).squaredNorm();
    if (d < best) {
      best = d;
      root = i;
    }
  }
  s.root_kernel_id = root;
  return s;
}

}  // namespace splatdyn
