#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tate/data/segment.hpp"
#include "tate/model/attention.hpp"
#include "tate/model/params.hpp"

namespace tate {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  std::size_t hidden = 300;
  std::size_t heads = 4;
  std::size_t classes = 3;
  double dropout = 0.3;
  std::array<std::size_t, 3> input_widths{0, 0, 0};
  // Ablation switches.
  bool use_tag = true;
  bool use_common_space = true;
  std::array<bool, 3> modalities{true, true, true};

  std::size_t common_width() const { return hidden / 2; }
  std::size_t joint_width() const { return 3 * hidden + (use_tag ? 4 : 0); }

  void validate() const {
    if (hidden == 0 || hidden % 2 != 0) throw ConfigError("hidden size must be a positive even number");
    if (heads == 0 || hidden % heads != 0) {
      throw ConfigError("hidden size " + std::to_string(hidden) + " is not divisible by " + std::to_string(heads) +
                        " heads");
    }
    if (classes < 2) throw ConfigError("class count must be at least 2");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    for (std::size_t m = 0; m < 3; ++m) {
      if (modalities[m] && input_widths[m] == 0) {
        throw ConfigError(std::string(kModalityNames[m]) + " input width is unset");
      }
    }
    if (!modalities[0] && !modalities[1] && !modalities[2]) throw ConfigError("at least one modality must be enabled");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"hidden", c.hidden},
          {"heads", c.heads},
          {"classes", c.classes},
          {"dropout", c.dropout},
          {"input_widths", c.input_widths},
          {"use_tag", c.use_tag},
          {"use_common_space", c.use_common_space},
          {"modalities", c.modalities}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.hidden = j.at("hidden").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.classes = j.at("classes").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.input_widths = j.at("input_widths").get<std::array<std::size_t, 3>>();
  c.use_tag = j.at("use_tag").get<bool>();
  c.use_common_space = j.at("use_common_space").get<bool>();
  c.modalities = j.at("modalities").get<std::array<bool, 3>>();
  c.validate();
  return c;
}

/// Inference vs training behaviour for one forward pass.
struct RunMode {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // dropout masks; required when training with dropout > 0
};

// ---------------------------------------------------------------------------
// Student network

struct Model {
  ModelConfig config;
  ParameterSet params;
  bool trained = false;
};

inline std::string modality_prefix(Modality m) { return std::string(name_of(m)); }

/// Fresh model with Glorot-uniform matrices and zero biases.
inline Model make_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model model{config, {}, false};
  auto rng = stream_rng(seed, Stream::init);
  auto& p = model.params;
  const std::size_t d = config.hidden, dc = config.common_width(), joint = config.joint_width();
  for (Modality m : kModalities) {
    if (!config.modalities[index_of(m)]) continue;
    const std::string name = modality_prefix(m);
    p.add("input." + name, xavier_uniform(config.input_widths[index_of(m)], d, rng));
    add_attention(p, "attn." + name, d, config.heads, rng);
  }
  if (config.use_common_space) {
    p.add("common.va", xavier_uniform(d, dc, rng));
    p.add("common.vt", xavier_uniform(d, dc, rng));
    p.add("common.ta", xavier_uniform(d, dc, rng));
  }
  for (const std::string block : {"encoder", "decoder"}) {
    add_attention(p, block + ".attn", joint, config.heads, rng);
    p.add(block + ".w1", xavier_uniform(joint, joint, rng));
    p.add(block + ".b1", Tensor({1, joint}));
    p.add(block + ".w2", xavier_uniform(joint, joint, rng));
    p.add(block + ".b2", Tensor({1, joint}));
  }
  p.add("classifier.w", xavier_uniform(joint, config.classes, rng));
  p.add("classifier.b", Tensor({1, config.classes}));
  return model;
}

/// Bias-free projection to width d, self-attention, mean over time: [1 x d].
/// A disabled modality contributes a zero vector.
inline Var encode_modality(const Model& model, const Tensor& sequence, Modality m, RunMode mode = {}) {
  const auto& cfg = model.config;
  if (!cfg.modalities[index_of(m)]) return constant(Tensor({1, cfg.hidden}));
  if (sequence.empty() || sequence.rank() != 2) {
    throw ContractError("encode_modality: " + std::string(name_of(m)) + " sequence is empty");
  }
  const std::string name = modality_prefix(m);
  Var x = matmul(constant(sequence), model.params.at("input." + name));
  const auto attn = find_attention(model.params, "attn." + name, cfg.hidden, cfg.heads);
  Var e = dropout(multi_head_attention(x, x, x, attn), cfg.dropout, mode.rng, mode.training);
  return mean_pool(e);
}

/// E_all = [C_v || C_a || C_t || tag] with C_v = [E_v W_va || E_v W_vt],
/// C_a = [E_a W_va || E_a W_ta], C_t = [E_t W_vt || E_t W_ta]. Without the
/// common space the modality vectors are concatenated as they are; without the
/// tag the four digits are left off.
inline Var common_space_project(const Model& model, const Var& ev, const Var& ea, const Var& et, const Tag& tag) {
  const auto& cfg = model.config;
  std::vector<Var> parts;
  if (cfg.use_common_space) {
    const Var& va = model.params.at("common.va");
    const Var& vt = model.params.at("common.vt");
    const Var& ta = model.params.at("common.ta");
    parts = {matmul(ev, va), matmul(ev, vt), matmul(ea, va), matmul(ea, ta), matmul(et, vt), matmul(et, ta)};
  } else {
    parts = {ev, ea, et};
  }
  if (cfg.use_tag) parts.push_back(constant(Tensor::matrix(1, 4, tag.as_doubles())));
  return concat(parts, 1);
}

/// One attention + feed-forward sublayer over a length-1 sequence:
/// relu(MHA(x, x, x) W1 + b1) W2 + b2, with dropout after each sublayer.
inline Var transformer_block(const Model& model, const std::string& block, const Var& x, RunMode mode = {}) {
  const auto& cfg = model.config;
  const auto& p = model.params;
  const std::size_t joint = cfg.joint_width();
  if (x->value.rank() != 2 || x->value.cols() != joint) {
    throw DimensionError(block + ": expected width " + std::to_string(joint) + ", got " + shape_string(x->value.shape()));
  }
  const auto attn = find_attention(p, block + ".attn", joint, cfg.heads);
  Var a = dropout(multi_head_attention(x, x, x, attn), cfg.dropout, mode.rng, mode.training);
  Var h = relu(add(matmul(a, p.at(block + ".w1")), p.at(block + ".b1")));
  Var o = add(matmul(h, p.at(block + ".w2")), p.at(block + ".b2"));
  return dropout(o, cfg.dropout, mode.rng, mode.training);
}

inline Var transformer_encode(const Model& model, const Var& e_all, RunMode mode = {}) {
  return transformer_block(model, "encoder", e_all, mode);
}

inline Var transformer_decode(const Model& model, const Var& e_out, RunMode mode = {}) {
  return transformer_block(model, "decoder", e_out, mode);
}

/// softmax(E_out W_c + b_c) as a [1 x classes] row.
inline Var classify(const Model& model, const Var& e_out) {
  return softmax(add(matmul(e_out, model.params.at("classifier.w")), model.params.at("classifier.b")), 1);
}

struct StudentOutput {
  std::array<Var, 3> modality;
  Tag tag;
  Var joint;    // E_all
  Var encoded;  // E_out
  Var decoded;  // D_out
  Var probs;    // P_c
};

/// Full encoder branch on an already-masked segment; the tag is derived from
/// the segment's recorded missing pattern.
inline StudentOutput student_forward(const Model& model, const Segment& masked, RunMode mode = {}) {
  StudentOutput out;
  for (Modality m : kModalities) out.modality[index_of(m)] = encode_modality(model, masked[m], m, mode);
  out.tag = encode_tag(masked.missing);
  out.joint = common_space_project(model, out.modality[0], out.modality[1], out.modality[2], out.tag);
  out.encoded = transformer_encode(model, out.joint, mode);
  out.decoded = transformer_decode(model, out.encoded, mode);
  out.probs = classify(model, out.encoded);
  return out;
}

// ---------------------------------------------------------------------------
// Full-modality teacher

struct Teacher {
  ModelConfig config;  // shares widths and class count with the student
  ParameterSet params;
  bool trained = false;

  std::size_t output_width() const { return params.at("teacher.lift.b")->value.cols(); }
};

/// Teacher whose representation width equals `config.joint_width()`.
inline Teacher make_teacher(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Teacher t{config, {}, false};
  auto rng = stream_rng(seed, Stream::teacher_init);
  const std::size_t d = config.hidden, joint = config.joint_width();
  for (Modality m : kModalities) {
    t.params.add("teacher.input." + modality_prefix(m), xavier_uniform(config.input_widths[index_of(m)], d, rng));
  }
  t.params.add("teacher.lift.w", xavier_uniform(3 * d, joint, rng));
  t.params.add("teacher.lift.b", Tensor({1, joint}));
  t.params.add("teacher.classifier.w", xavier_uniform(joint, config.classes, rng));
  t.params.add("teacher.classifier.b", Tensor({1, config.classes}));
  return t;
}

struct TeacherOutput {
  Var representation;  // E_pre
  Var probs;
};

/// Projects and mean-pools each complete modality, concatenates them, and lifts
/// linearly to the student's joint width. Rejects segments with masked modalities.
inline TeacherOutput teacher_forward(const Teacher& teacher, const Segment& full) {
  if (!full.missing.empty()) throw ContractError("teacher_forward: the teacher only accepts complete segments");
  std::vector<Var> pooled;
  for (Modality m : kModalities) {
    pooled.push_back(mean_pool(matmul(constant(full[m]), teacher.params.at("teacher.input." + modality_prefix(m)))));
  }
  TeacherOutput out;
  out.representation = add(matmul(concat(pooled, 1), teacher.params.at("teacher.lift.w")), teacher.params.at("teacher.lift.b"));
  out.probs = softmax(add(matmul(out.representation, teacher.params.at("teacher.classifier.w")),
                          teacher.params.at("teacher.classifier.b")),
                      1);
  return out;
}

inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace tate
