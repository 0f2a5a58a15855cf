#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "tate/model/model.hpp"

namespace tate {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

// Layout:
// {"format": "tate-checkpoint", "version": 1, "kind": "student"|"teacher",
//  "trained": bool, "config": {...},
//  "parameters": [{"name": str, "shape": [..], "data": [..]}, ...]}
// Doubles are written in shortest round-trip form, so load(save(x)) == x bitwise.

inline nlohmann::json checkpoint_json(const std::string& kind, const ModelConfig& config, const ParameterSet& params,
                                      bool trained) {
  nlohmann::json params_json = nlohmann::json::array();
  for (const auto& v : params.all()) {
    params_json.push_back({{"name", v->name}, {"shape", v->value.shape()}, {"data", v->value.storage()}});
  }
  return {{"format", "tate-checkpoint"}, {"version", kCheckpointVersion}, {"kind", kind},
          {"trained", trained},          {"config", to_json(config)},      {"parameters", std::move(params_json)}};
}

namespace detail {

// Overwrites the freshly initialised `skeleton` with stored values, insisting
// on identical names, order and shapes.
inline void restore_parameters(const nlohmann::json& stored, ParameterSet& skeleton) {
  if (!stored.is_array() || stored.size() != skeleton.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(stored.is_array() ? stored.size() : 0) +
                          " parameters, expected " + std::to_string(skeleton.size()));
  }
  for (std::size_t i = 0; i < skeleton.size(); ++i) {
    const auto& entry = stored[i];
    const Var& target = skeleton.all()[i];
    const auto name = entry.at("name").get<std::string>();
    if (name != target->name) throw CheckpointError("parameter " + std::to_string(i) + " is '" + name + "', expected '" + target->name + "'");
    const auto shape = entry.at("shape").get<Shape>();
    if (shape != target->value.shape()) {
      throw CheckpointError("parameter '" + name + "' has shape " + shape_string(shape) + ", expected " +
                            shape_string(target->value.shape()));
    }
    auto data = entry.at("data").get<std::vector<double>>();
    target->value = Tensor(shape, std::move(data));
    if (!target->value.all_finite()) throw CheckpointError("parameter '" + name + "' holds non-finite values");
  }
}

inline nlohmann::json read_checkpoint_json(const std::string& path, const std::string& kind) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt checkpoint '" + path + "': " + e.what());
  }
  if (!j.is_object() || j.value("format", "") != "tate-checkpoint") {
    throw CheckpointError("'" + path + "' is not a tate checkpoint");
  }
  if (j.value("version", 0) != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version in '" + path + "'");
  if (j.value("kind", "") != kind) {
    throw CheckpointError("'" + path + "' holds a " + j.value("kind", std::string("?")) + " checkpoint, expected " + kind);
  }
  return j;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw CheckpointError("write to '" + path + "' failed");
}

}  // namespace detail

inline std::string serialize(const Model& m) { return checkpoint_json("student", m.config, m.params, m.trained).dump() + "\n"; }
inline std::string serialize(const Teacher& t) { return checkpoint_json("teacher", t.config, t.params, t.trained).dump() + "\n"; }

inline void save_model(const std::string& path, const Model& m) { detail::write_text(path, serialize(m)); }
inline void save_teacher(const std::string& path, const Teacher& t) { detail::write_text(path, serialize(t)); }

inline Model load_model(const std::string& path) {
  const auto j = detail::read_checkpoint_json(path, "student");
  try {
    Model m = make_model(model_config_from_json(j.at("config")), 0);
    detail::restore_parameters(j.at("parameters"), m.params);
    m.trained = j.at("trained").get<bool>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt checkpoint '" + path + "': " + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError("corrupt checkpoint '" + path + "': " + e.what());
  }
}

inline Teacher load_teacher(const std::string& path) {
  const auto j = detail::read_checkpoint_json(path, "teacher");
  try {
    Teacher t = make_teacher(model_config_from_json(j.at("config")), 0);
    detail::restore_parameters(j.at("parameters"), t.params);
    t.trained = j.at("trained").get<bool>();
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt checkpoint '" + path + "': " + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError("corrupt checkpoint '" + path + "': " + e.what());
  }
}

}  // namespace tate
