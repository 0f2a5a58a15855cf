#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

namespace tate {

using ConfusionMatrix = std::vector<std::vector<std::size_t>>;  // [true][predicted]

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> per_class_f1;
  ConfusionMatrix confusion;
};

/// Accuracy = trace / N. Per class, precision uses the predicted-column total
/// and recall the true-row total; an empty denominator gives 0, and F1 is 0
/// whenever P + R = 0. Macro-F1 is the unweighted mean over classes.
inline Metrics metrics_from_confusion(const ConfusionMatrix& cm) {
  const std::size_t k = cm.size();
  if (k == 0) throw std::invalid_argument("confusion matrix is empty");
  for (const auto& row : cm) {
    if (row.size() != k) throw std::invalid_argument("confusion matrix must be square");
  }
  Metrics m;
  m.confusion = cm;
  std::size_t total = 0, correct = 0;
  std::vector<std::size_t> row_sum(k, 0), col_sum(k, 0);
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t p = 0; p < k; ++p) {
      total += cm[t][p];
      row_sum[t] += cm[t][p];
      col_sum[p] += cm[t][p];
    }
    correct += cm[t][t];
  }
  if (total == 0) throw std::invalid_argument("confusion matrix holds no samples");
  m.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    const double tp = static_cast<double>(cm[c][c]);
    const double precision = col_sum[c] ? tp / static_cast<double>(col_sum[c]) : 0.0;
    const double recall = row_sum[c] ? tp / static_cast<double>(row_sum[c]) : 0.0;
    const double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    m.per_class_f1.push_back(f1);
    f1_sum += f1;
  }
  m.macro_f1 = f1_sum / static_cast<double>(k);
  return m;
}

inline ConfusionMatrix confusion_from_predictions(const std::vector<std::size_t>& truth,
                                                  const std::vector<std::size_t>& predicted, std::size_t classes) {
  if (truth.size() != predicted.size()) throw std::invalid_argument("prediction count differs from label count");
  ConfusionMatrix cm(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= classes || predicted[i] >= classes) throw std::out_of_range("class index out of range");
    ++cm[truth[i]][predicted[i]];
  }
  return cm;
}

inline nlohmann::json to_json(const Metrics& m) {
  return {{"accuracy", m.accuracy}, {"macro_f1", m.macro_f1}, {"per_class_f1", m.per_class_f1}, {"confusion", m.confusion}};
}

}  // namespace tate
