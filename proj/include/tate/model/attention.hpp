#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tate/model/params.hpp"

namespace tate {

/// Splits `total` columns into `heads` contiguous slices whose widths differ by
/// at most one (the leading slices take the remainder).
inline std::vector<std::size_t> head_widths(std::size_t total, std::size_t heads) {
  if (heads == 0 || heads > total) {
    throw ContractError("cannot split width " + std::to_string(total) + " into " + std::to_string(heads) + " heads");
  }
  std::vector<std::size_t> w(heads, total / heads);
  for (std::size_t i = 0; i < total % heads; ++i) ++w[i];
  return w;
}

/// Handles onto one multi-head attention block's weights.
///
/// Head i reads its own column slice of the input and projects it with square
/// query/key/value matrices of the slice width; the concatenated heads pass
/// through the square output matrix.
struct AttentionWeights {
  std::vector<Var> query, key, value;
  Var output;
  std::vector<std::size_t> widths;

  std::size_t model_width() const {
    std::size_t w = 0;
    for (auto x : widths) w += x;
    return w;
  }
};

template <typename Rng>
AttentionWeights add_attention(ParameterSet& params, const std::string& prefix, std::size_t width,
                               std::size_t heads, Rng& rng) {
  AttentionWeights a;
  a.widths = head_widths(width, heads);
  for (std::size_t i = 0; i < heads; ++i) {
    const std::size_t w = a.widths[i];
    const std::string idx = std::to_string(i);
    a.query.push_back(params.add(prefix + ".q" + idx, xavier_uniform(w, w, rng)));
    a.key.push_back(params.add(prefix + ".k" + idx, xavier_uniform(w, w, rng)));
    a.value.push_back(params.add(prefix + ".v" + idx, xavier_uniform(w, w, rng)));
  }
  a.output = params.add(prefix + ".o", xavier_uniform(width, width, rng));
  return a;
}

inline AttentionWeights find_attention(const ParameterSet& params, const std::string& prefix, std::size_t width,
                                       std::size_t heads) {
  AttentionWeights a;
  a.widths = head_widths(width, heads);
  for (std::size_t i = 0; i < heads; ++i) {
    const std::string idx = std::to_string(i);
    a.query.push_back(params.at(prefix + ".q" + idx));
    a.key.push_back(params.at(prefix + ".k" + idx));
    a.value.push_back(params.at(prefix + ".v" + idx));
  }
  a.output = params.at(prefix + ".o");
  return a;
}

/// Concat(head_1..head_h) W^o with head_i = softmax(Q_i K_i^T / sqrt(d)) V_i,
/// where d is the full input width and Q_i = q[:, slice_i] W_i^Q (likewise K, V).
inline Var multi_head_attention(const Var& q, const Var& k, const Var& v, const AttentionWeights& w) {
  const std::size_t d = w.model_width();
  for (const Var* x : {&q, &k, &v}) {
    if ((*x)->value.rank() != 2 || (*x)->value.cols() != d) {
      throw DimensionError("multi_head_attention: input " + shape_string((*x)->value.shape()) +
                           " does not have width " + std::to_string(d));
    }
  }
  if (k->value.rows() != v->value.rows()) throw DimensionError("multi_head_attention: key/value lengths differ");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<Var> heads;
  heads.reserve(w.widths.size());
  std::size_t offset = 0;
  for (std::size_t i = 0; i < w.widths.size(); ++i) {
    const std::size_t end = offset + w.widths[i];
    if (q->value.rows() == 1 && k->value.rows() == 1) {
      // A single key takes the full attention weight whatever the scores are.
      heads.push_back(matmul(slice(v, offset, end), w.value[i]));
      offset = end;
      continue;
    }
    Var qi = matmul(slice(q, offset, end), w.query[i]);
    Var ki = matmul(slice(k, offset, end), w.key[i]);
    Var vi = matmul(slice(v, offset, end), w.value[i]);
    Var scores = scale(matmul(qi, transpose(ki)), inv_sqrt_d);
    heads.push_back(matmul(softmax(scores, 1), vi));
    offset = end;
  }
  Var joined = heads.size() == 1 ? heads[0] : concat(heads, 1);
  return matmul(joined, w.output);
}

}  // namespace tate
