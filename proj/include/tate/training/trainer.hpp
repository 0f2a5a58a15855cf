#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tate/data/segment.hpp"
#include "tate/losses.hpp"
#include "tate/model/model.hpp"
#include "tate/training/adam.hpp"
#include "tate/training/metrics.hpp"

namespace tate {

struct TrainConfig {
  double lr = 0.001;
  std::size_t batch = 32;
  std::size_t epochs = 20;
  double eta = 0.0;
  MissingMode mode = MissingMode::single;
  LossWeights weights;
  std::uint64_t seed = 7;
  LossKind forward_kind = LossKind::js;
  LossKind backward_kind = LossKind::js;
  LossKind tag_kind = LossKind::mae;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (batch == 0) throw ConfigError("batch size must be at least 1");
    if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("missing rate must lie in [0, 1]");
    weights.validate();
  }
};

/// Which auxiliary terms a configuration trains with. A term whose weight is
/// zero (or the tag term without a tag) is left out of the objective entirely.
struct ActiveTerms {
  bool forward = true;
  bool backward = true;
  bool tag = true;

  static ActiveTerms of(const ModelConfig& mc, const TrainConfig& tc) {
    return {tc.weights.forward > 0.0, tc.weights.backward > 0.0, tc.weights.tag > 0.0 && mc.use_tag};
  }
};

struct EpochStats {
  std::size_t epoch = 0;
  double cls = 0.0;
  double forward = 0.0;
  double backward = 0.0;
  double tag = 0.0;
  double total = 0.0;
  double train_acc = 0.0;
};

struct History {
  ActiveTerms terms;
  std::vector<EpochStats> epochs;

  std::vector<std::string> columns() const {
    std::vector<std::string> cols{"epoch", "cls"};
    if (terms.forward) cols.emplace_back("forward");
    if (terms.backward) cols.emplace_back("backward");
    if (terms.tag) cols.emplace_back("tag");
    cols.emplace_back("total");
    cols.emplace_back("train_acc");
    return cols;
  }
};

inline std::string format_double(double v) {
  std::ostringstream oss;
  oss.precision(17);
  oss << v;
  return oss.str();
}

/// One row per epoch; columns for disabled loss terms are omitted.
inline void write_history_csv(std::ostream& out, const History& h) {
  const auto cols = h.columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& e : h.epochs) {
    out << e.epoch << ',' << format_double(e.cls);
    if (h.terms.forward) out << ',' << format_double(e.forward);
    if (h.terms.backward) out << ',' << format_double(e.backward);
    if (h.terms.tag) out << ',' << format_double(e.tag);
    out << ',' << format_double(e.total) << ',' << format_double(e.train_acc) << '\n';
  }
}

/// Copies the dataset's feature widths and class count into a model config.
inline ModelConfig configure_for(const Dataset& ds, ModelConfig base) {
  base.input_widths = ds.widths;
  base.classes = ds.class_count;
  return base;
}

using EpochCallback = std::function<void(const EpochStats&)>;

// ---------------------------------------------------------------------------
// Teacher pre-training

struct TeacherResult {
  Teacher teacher;
  History history;
};

/// Cross-entropy training of the full-modality teacher on complete segments.
inline TeacherResult pretrain_teacher(const Dataset& data, const ModelConfig& mc, const TrainConfig& tc,
                                      const EpochCallback& on_epoch = {}) {
  if (data.empty()) throw std::invalid_argument("pretrain_teacher: dataset is empty");
  tc.validate();
  TeacherResult result{make_teacher(mc, tc.seed), {{false, false, false}, {}}};
  Teacher& teacher = result.teacher;
  if (tc.epochs == 0) return result;

  auto shuffle_rng = stream_rng(tc.seed, Stream::teacher_shuffle);
  AdamState adam;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochStats stats;
    stats.epoch = epoch;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch) {
      const std::size_t end = std::min(order.size(), start + tc.batch);
      std::vector<Var> probs;
      std::vector<std::size_t> labels;
      for (std::size_t i = start; i < end; ++i) {
        const Segment& s = data.segments[order[i]];
        auto out = teacher_forward(teacher, s);
        if (argmax(out.probs->value.values()) == s.label) ++correct;
        probs.push_back(out.probs);
        labels.push_back(s.label);
      }
      Var loss = cls_loss(probs, labels);
      backward(loss);
      adam_step(teacher.params, adam, tc.lr);
      teacher.params.zero_grad();
      const double weight = static_cast<double>(end - start);
      stats.cls += loss->value.item() * weight;
    }
    const double n = static_cast<double>(data.size());
    stats.cls /= n;
    stats.total = stats.cls;
    stats.train_acc = static_cast<double>(correct) / n;
    result.history.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  teacher.trained = true;
  return result;
}

// ---------------------------------------------------------------------------
// Student training

struct TrainResult {
  Model model;
  History history;
};

/// Two-branch training: per batch, the masked segments run through the
/// encoder branch while the frozen teacher supplies E_pre for the complete
/// segments; the weighted objective updates the student only.
///
/// Missing patterns are drawn once per sample from `tc.seed`. `teacher` may be
/// null only when the forward term is inactive.
inline TrainResult train(const Dataset& data, const Teacher* teacher, const ModelConfig& mc, const TrainConfig& tc,
                         const EpochCallback& on_epoch = {}) {
  if (data.empty()) throw std::invalid_argument("train: dataset is empty");
  tc.validate();
  mc.validate();
  const ActiveTerms terms = ActiveTerms::of(mc, tc);
  if (terms.forward) {
    if (teacher == nullptr) throw ConfigError("train: the forward loss needs a pre-trained teacher");
    if (teacher->output_width() != mc.joint_width()) {
      throw ConfigError("train: teacher width " + std::to_string(teacher->output_width()) +
                        " does not match the student joint width " + std::to_string(mc.joint_width()));
    }
  }

  TrainResult result{make_model(mc, tc.seed), {terms, {}}};
  Model& model = result.model;

  const auto patterns = assign_patterns(data.size(), tc.eta, tc.mode, tc.seed);
  std::vector<Segment> masked;
  masked.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) masked.push_back(mask_missing(data.segments[i], patterns[i]));

  std::vector<Tensor> teacher_reps;
  if (terms.forward) {
    NoGradGuard no_grad;
    teacher_reps.reserve(data.size());
    for (const auto& s : data.segments) teacher_reps.push_back(teacher_forward(*teacher, s).representation->value);
  }

  auto shuffle_rng = stream_rng(tc.seed, Stream::shuffle);
  auto dropout_rng = stream_rng(tc.seed, Stream::dropout);
  const RunMode mode{true, &dropout_rng};
  AdamState adam;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochStats stats;
    stats.epoch = epoch;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch) {
      const std::size_t end = std::min(order.size(), start + tc.batch);
      const double bsz = static_cast<double>(end - start);
      std::vector<Var> probs, fwd_terms, bwd_terms, decoded;
      std::vector<std::size_t> labels;
      std::vector<Tag> tags;
      for (std::size_t i = start; i < end; ++i) {
        const std::size_t idx = order[i];
        const Segment& seg = masked[idx];
        StudentOutput out;
        for (Modality m : kModalities) out.modality[index_of(m)] = encode_modality(model, seg[m], m, mode);
        out.tag = encode_tag(seg.missing);
        out.joint = common_space_project(model, out.modality[0], out.modality[1], out.modality[2], out.tag);
        out.encoded = transformer_encode(model, out.joint, mode);
        out.probs = classify(model, out.encoded);
        if (terms.backward || terms.tag) out.decoded = transformer_decode(model, out.encoded, mode);

        if (argmax(out.probs->value.values()) == seg.label) ++correct;
        probs.push_back(out.probs);
        labels.push_back(seg.label);
        if (terms.forward) fwd_terms.push_back(forward_loss(out.encoded, constant(teacher_reps[idx]), tc.forward_kind));
        if (terms.backward) bwd_terms.push_back(backward_loss(out.decoded, out.joint, tc.backward_kind));
        if (terms.tag) {
          tags.push_back(out.tag);
          decoded.push_back(out.decoded);
        }
      }
      Var cls = cls_loss(probs, labels);
      Var fwd = terms.forward ? mean(concat(fwd_terms, 0)) : nullptr;
      Var bwd = terms.backward ? mean(concat(bwd_terms, 0)) : nullptr;
      Var tag = terms.tag ? tag_loss(tags, decoded, tc.tag_kind) : nullptr;
      Var total = total_loss(cls, fwd, bwd, tag, tc.weights);
      backward(total);
      adam_step(model.params, adam, tc.lr);
      model.params.zero_grad();

      stats.cls += cls->value.item() * bsz;
      if (fwd) stats.forward += fwd->value.item() * bsz;
      if (bwd) stats.backward += bwd->value.item() * bsz;
      if (tag) stats.tag += tag->value.item() * bsz;
      stats.total += total->value.item() * bsz;
    }
    const double n = static_cast<double>(data.size());
    stats.cls /= n;
    stats.forward /= n;
    stats.backward /= n;
    stats.tag /= n;
    stats.total /= n;
    stats.train_acc = static_cast<double>(correct) / n;
    if (!std::isfinite(stats.total)) throw NumericError("non-finite training loss in epoch " + std::to_string(epoch));
    result.history.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  model.trained = tc.epochs > 0;
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

struct Prediction {
  std::size_t label = 0;
  std::size_t predicted = 0;
  MissingPattern pattern;
  StudentOutput outputs;
};

/// Inference on every segment after seeded masking at rate `eta`.
inline std::vector<Prediction> predict(const Model& model, const Dataset& data, double eta, MissingMode mode,
                                       std::uint64_t seed) {
  NoGradGuard no_grad;
  const auto patterns = assign_patterns(data.size(), eta, mode, seed);
  std::vector<Prediction> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Segment seg = mask_missing(data.segments[i], patterns[i]);
    Prediction p;
    p.label = seg.label;
    p.pattern = seg.missing;
    p.outputs = student_forward(model, seg);
    p.predicted = argmax(p.outputs.probs->value.values());
    out.push_back(std::move(p));
  }
  return out;
}

inline Metrics evaluate(const Model& model, const Dataset& data, double eta, MissingMode mode, std::uint64_t seed) {
  if (data.empty()) throw std::invalid_argument("evaluate: dataset is empty");
  std::vector<std::size_t> truth, predicted;
  for (const auto& p : predict(model, data, eta, mode, seed)) {
    truth.push_back(p.label);
    predicted.push_back(p.predicted);
  }
  return metrics_from_confusion(confusion_from_predictions(truth, predicted, model.config.classes));
}

/// Teacher accuracy on complete segments.
inline double teacher_accuracy(const Teacher& teacher, const Dataset& data) {
  if (data.empty()) throw std::invalid_argument("teacher_accuracy: dataset is empty");
  NoGradGuard no_grad;
  std::size_t correct = 0;
  for (const auto& s : data.segments) {
    if (argmax(teacher_forward(teacher, s).probs->value.values()) == s.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace tate
