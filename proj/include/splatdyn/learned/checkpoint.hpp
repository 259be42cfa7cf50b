#pragma once

#include "splatdyn/binary_io.hpp"
#include "splatdyn/learned/model.hpp"

#include <nlohmann/json.hpp>

// Model checkpoint layout (little-endian):
//   "SPDM" | u32 version | u32 header bytes | JSON header
//   u64 parameter count | f64 parameters (layer order from the header)
//   4 x (u64 n | f64[n]): node mean, node scale, edge mean, edge scale
// The JSON header echoes the model config and lists every layer shape.
namespace splatdyn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"rounds", c.rounds},
          {"width", c.width},
          {"attribute_dim", c.attribute_dim},
          {"levels", c.levels},
          {"seed", c.seed},
          {"embedding_dim", c.embedding_dim},
          {"embedding_rows", c.embedding_rows},
          {"rest_anchor", c.rest_anchor},
          {"edges", {{"material_factor", c.edges.material_factor}, {"deformed_factor", c.edges.deformed_factor}}}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.rounds = j.value("rounds", c.rounds);
    c.width = j.value("width", c.width);
    c.attribute_dim = j.value("attribute_dim", c.attribute_dim);
    c.levels = j.value("levels", c.levels);
    c.seed = j.value("seed", c.seed);
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    c.embedding_rows = j.value("embedding_rows", c.embedding_rows);
    c.rest_anchor = j.value("rest_anchor", c.rest_anchor);
    if (j.contains("edges")) {
      c.edges.material_factor = j["edges"].value("material_factor", c.edges.material_factor);
      c.edges.deformed_factor = j["edges"].value("deformed_factor", c.edges.deformed_factor);
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, std::string("model config: ") + e.what());
  }
}

inline std::string serialize_model(const GraphModel& m, const nlohmann::json& extra = {}) {
  nlohmann::json header = {{"format", "splatdyn-model"}, {"config", model_config_to_json(m.config())}};
  auto& layers = header["layers"] = nlohmann::json::array();
  for (const auto& l : m.layers()) layers.push_back({{"name", l.name}, {"rows", l.rows}, {"cols", l.cols}});
  header["parameter_count"] = m.parameter_count();
  if (!extra.is_null()) header["extra"] = extra;
  const std::string text = header.dump();

  io::ByteWriter w;
  w.bytes("SPDM");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  auto array = [&](const VecX& v) {
    w.u64(static_cast<std::uint64_t>(v.size()));
    for (double x : v) w.f64(x);
  };
  array(m.parameters());
  array(m.node_scaler().mean);
  array(m.node_scaler().scale);
  array(m.edge_scaler().mean);
  array(m.edge_scaler().scale);
  return w.take();
}

inline GraphModel deserialize_model(std::string_view data) {
  io::ByteReader r(data);
  r.context("checkpoint magic");
  if (r.bytes(4) != "SPDM") throw Error(ErrorCode::malformed_record, "not a model checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::version_mismatch, "checkpoint version " + std::to_string(version) + ", expected " +
                                                 std::to_string(kCheckpointVersion));
  }
  r.context("checkpoint header");
  const std::uint32_t len = r.u32();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.bytes(len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::malformed_record, std::string("checkpoint header: ") + e.what());
  }
  GraphModel m(model_config_from_json(header.at("config")));
  const auto& layers = header.at("layers");
  if (layers.size() != m.layers().size()) throw Error(ErrorCode::malformed_record, "checkpoint layer table mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = m.layers()[i];
    if (layers[i].at("name") != l.name || layers[i].at("rows") != l.rows || layers[i].at("cols") != l.cols) {
      throw Error(ErrorCode::malformed_record, "checkpoint layer " + std::to_string(i) + " does not match config");
    }
  }
  auto array = [&](const char* what) {
    r.context(std::string("checkpoint ") + what);
    const std::uint64_t n = r.u64();
    if (n > r.remaining() / 8) throw Error(ErrorCode::malformed_record, std::string("truncated record: ") + what);
    VecX v(static_cast<Eigen::Index>(n));
    for (auto& x : v) x = r.f64();
    return v;
  };
  VecX params = array("parameters");
  if (static_cast<std::size_t>(params.size()) != m.parameter_count()) {
    throw Error(ErrorCode::malformed_record, "checkpoint parameter count does not match layers");
  }
  m.parameters() = std::move(params);
  m.node_scaler().mean = array("node mean");
  m.node_scaler().scale = array("node scale");
  m.edge_scaler().mean = array("edge mean");
  m.edge_scaler().scale = array("edge scale");
  return m;
}

inline void save_model(const GraphModel& m, const std::string& path, const nlohmann::json& extra = {}) {
  io::write_file(path, serialize_model(m, extra));
}

inline GraphModel load_model(const std::string& path) { return deserialize_model(io::read_file(path)); }

}  // namespace splatdyn
