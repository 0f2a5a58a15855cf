#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "tate/data/segment.hpp"
#include "tate/numerics/autodiff.hpp"

namespace tate {

// Added inside every logarithm.
inline constexpr double kLogEpsilon = 1e-8;

struct LossWeights {
  double forward = 0.1;   // lambda1
  double backward = 0.1;  // lambda2
  double tag = 0.1;       // lambda3

  void validate() const {
    for (double w : {forward, backward, tag}) {
      if (!(std::isfinite(w) && w >= 0.0)) throw std::invalid_argument("loss weights must be finite and non-negative");
    }
  }
};

/// Distance used for the forward, backward and tag terms.
enum class LossKind { js, mae, cosine };

inline std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::js: return "js";
    case LossKind::mae: return "mae";
    case LossKind::cosine: return "cosine";
  }
  return "?";
}

inline LossKind parse_loss_kind(std::string_view s) {
  if (s == "js") return LossKind::js;
  if (s == "mae") return LossKind::mae;
  if (s == "cosine") return LossKind::cosine;
  throw std::invalid_argument("unknown loss kind '" + std::string(s) + "' (expected js|mae|cosine)");
}

namespace detail {
inline void require_same_size(const char* op, const Var& a, const Var& b) {
  if (a->value.size() != b->value.size()) {
    throw DimensionError(std::string(op) + ": length mismatch " + shape_string(a->value.shape()) + " vs " +
                         shape_string(b->value.shape()));
  }
}

inline Var last_axis_softmax(const Var& x) { return softmax(x, x->value.rank() - 1); }
}  // namespace detail

/// sum_i p_i (log(p_i + eps) - log(q_i + eps)) for two distributions of equal shape.
inline Var kl_divergence(const Var& p, const Var& q) {
  detail::require_same_size("kl_divergence", p, q);
  if (!p->value.same_shape(q->value)) throw DimensionError("kl_divergence: shape mismatch");
  Var log_ratio = sub(log(add_scalar(p, kLogEpsilon)), log(add_scalar(q, kLogEpsilon)));
  return sum(mul(p, log_ratio));
}

/// 1/2 (KL(a'||b') + KL(b'||a')) where a', b' are the softmax-normalised inputs.
inline Var js_divergence(const Var& a, const Var& b) {
  detail::require_same_size("js_divergence", a, b);
  Var pa = detail::last_axis_softmax(a);
  Var pb = detail::last_axis_softmax(b);
  return scale(add(kl_divergence(pa, pb), kl_divergence(pb, pa)), 0.5);
}

inline Var mae_distance(const Var& a, const Var& b) {
  detail::require_same_size("mae_distance", a, b);
  return mean(abs(sub(a, b)));
}

/// 1 - cos(a, b).
inline Var cosine_distance(const Var& a, const Var& b) {
  detail::require_same_size("cosine_distance", a, b);
  constexpr double tiny = 1e-12;
  Var dot = sum(mul(a, b));
  Var na = sqrt(add_scalar(sum(mul(a, a)), tiny));
  Var nb = sqrt(add_scalar(sum(mul(b, b)), tiny));
  return add_scalar(scale(div(dot, mul(na, nb)), -1.0), 1.0);
}

inline Var representation_loss(LossKind kind, const Var& a, const Var& b) {
  switch (kind) {
    case LossKind::js: return js_divergence(a, b);
    case LossKind::mae: return mae_distance(a, b);
    case LossKind::cosine: return cosine_distance(a, b);
  }
  throw std::logic_error("unreachable");
}

/// Student E_out against the frozen teacher E_pre. No gradient reaches the teacher.
inline Var forward_loss(const Var& e_out, const Var& e_pre, LossKind kind = LossKind::js) {
  if (e_out->value.size() != e_pre->value.size()) {
    throw DimensionError("forward_loss: E_out width " + std::to_string(e_out->value.size()) + " != E_pre width " +
                         std::to_string(e_pre->value.size()));
  }
  return representation_loss(kind, e_out, detach(e_pre));
}

/// Decoder output against the joint representation it reconstructs.
inline Var backward_loss(const Var& d_out, const Var& e_all, LossKind kind = LossKind::js) {
  if (d_out->value.size() != e_all->value.size()) {
    throw DimensionError("backward_loss: D_out width " + std::to_string(d_out->value.size()) + " != E_all width " +
                         std::to_string(e_all->value.size()));
  }
  return representation_loss(kind, d_out, e_all);
}

/// Per-sample tag recovery: distance between the tag digits and
/// sigmoid(D_out[-4:]); MAE averages over the four digits.
inline Var tag_recovery(const Tag& tag, const Var& d_out, LossKind kind = LossKind::mae) {
  const std::size_t n = d_out->value.cols();
  if (d_out->value.rank() != 2 || n < 4) throw DimensionError("tag_recovery: D_out needs at least 4 entries");
  Var recovered = sigmoid(slice(d_out, n - 4, n));
  Var target = constant(Tensor::matrix(1, 4, tag.as_doubles()));
  return representation_loss(kind, target, recovered);
}

/// Batch mean of tag_recovery.
inline Var tag_loss(const std::vector<Tag>& tags, const std::vector<Var>& d_outs, LossKind kind = LossKind::mae) {
  if (tags.size() != d_outs.size() || tags.empty()) throw DimensionError("tag_loss: batch size mismatch");
  std::vector<Var> terms;
  for (std::size_t i = 0; i < tags.size(); ++i) terms.push_back(tag_recovery(tags[i], d_outs[i], kind));
  return mean(concat(terms, 0));
}

/// -(1/N) sum_n log(P[n, y_n] + eps).
inline Var cls_loss(const std::vector<Var>& probs, const std::vector<std::size_t>& labels) {
  if (probs.size() != labels.size() || probs.empty()) throw DimensionError("cls_loss: batch size mismatch");
  std::vector<Var> picked;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const std::size_t classes = probs[i]->value.cols();
    if (labels[i] >= classes) {
      throw std::out_of_range("cls_loss: label " + std::to_string(labels[i]) + " out of range for " +
                              std::to_string(classes) + " classes");
    }
    picked.push_back(slice(probs[i], labels[i], labels[i] + 1));
  }
  Var stacked = concat(picked, 0);
  return scale(mean(log_floor(stacked, kLogEpsilon)), -1.0);
}

/// cls + lambda1 fwd + lambda2 bwd + lambda3 tag. Null terms are skipped.
inline Var total_loss(const Var& cls, const Var& fwd, const Var& bwd, const Var& tag, const LossWeights& w) {
  Var total = cls;
  if (fwd) total = add(total, scale(fwd, w.forward));
  if (bwd) total = add(total, scale(bwd, w.backward));
  if (tag) total = add(total, scale(tag, w.tag));
  return total;
}

inline double total_loss(double cls, double fwd, double bwd, double tag, const LossWeights& w) {
  return cls + w.forward * fwd + w.backward * bwd + w.tag * tag;
}

}  // namespace tate
