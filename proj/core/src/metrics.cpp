#include "adapt/metrics.hpp"

#include <cmath>
#include <string>

#include "adapt/error.hpp"

namespace adapt {

std::size_t ConfusionCounts::total() const {
  std::size_t n = 0;
  for (const auto& row : counts)
    for (std::size_t c : row) n += c;
  return n;
}

std::size_t ConfusionCounts::support(std::size_t cls) const {
  std::size_t n = 0;
  for (std::size_t c : counts.at(cls)) n += c;
  return n;
}

std::size_t ConfusionCounts::predicted(std::size_t cls) const {
  std::size_t n = 0;
  for (const auto& row : counts) n += row.at(cls);
  return n;
}

ConfusionCounts confusion(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                          std::size_t n_classes) {
  if (predictions.size() != labels.size()) {
    throw ShapeError("metrics: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw DataError("metrics: nothing to evaluate");
  if (n_classes < 2) throw ConfigError("metrics: need at least 2 classes");
  ConfusionCounts out{std::vector<std::vector<std::size_t>>(n_classes, std::vector<std::size_t>(n_classes, 0))};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= n_classes || predictions[i] >= n_classes) {
      throw DataError("metrics: class index out of range at position " + std::to_string(i));
    }
    ++out.counts[labels[i]][predictions[i]];
  }
  return out;
}

Metrics compute_metrics(const ConfusionCounts& counts) {
  const std::size_t c = counts.n_classes();
  const double total = static_cast<double>(counts.total());
  Metrics m;
  double recall_sum = 0.0;
  std::size_t present = 0;
  std::vector<double> recall(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    const std::size_t support = counts.support(k);
    const double tp = static_cast<double>(counts.counts[k][k]);
    if (support == 0) {
      m.absent_classes.push_back(k);
      continue;
    }
    recall[k] = tp / static_cast<double>(support);
    recall_sum += recall[k];
    ++present;
    const std::size_t predicted = counts.predicted(k);
    const double precision = predicted ? tp / static_cast<double>(predicted) : 0.0;
    const double f1 = precision + recall[k] > 0.0 ? 2.0 * precision * recall[k] / (precision + recall[k]) : 0.0;
    m.f1 += f1 * static_cast<double>(support) / total;
  }
  m.acc = present ? recall_sum / static_cast<double>(present) : 0.0;
  if (c == 2) {
    // An absent class leaves its rate undefined; report it as absent rather than 0.
    if (counts.support(1)) m.tpr = recall[1];
    if (counts.support(0)) m.tnr = recall[0];
  }
  return m;
}

Metrics compute_metrics(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                        std::size_t n_classes) {
  return compute_metrics(confusion(predictions, labels, n_classes));
}

std::map<std::string, double> percent_map(const Metrics& m) {
  std::map<std::string, double> out{{"ACC", 100.0 * m.acc}, {"F1", 100.0 * m.f1}};
  if (m.tpr) out["TPR"] = 100.0 * *m.tpr;
  if (m.tnr) out["TNR"] = 100.0 * *m.tnr;
  return out;
}

double round1(double percent) { return std::round(percent * 10.0) / 10.0; }

}  // namespace adapt
