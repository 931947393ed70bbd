#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace adapt {

// counts[t][p]: samples with true class t predicted as p.
struct ConfusionCounts {
  std::vector<std::vector<std::size_t>> counts;

  std::size_t n_classes() const noexcept { return counts.size(); }
  std::size_t total() const;
  std::size_t support(std::size_t cls) const;
  std::size_t predicted(std::size_t cls) const;
};

ConfusionCounts confusion(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                          std::size_t n_classes);

// Fractions in [0, 1]. TPR/TNR are set for binary tasks only.
struct Metrics {
  double acc = 0.0;
  double f1 = 0.0;
  std::optional<double> tpr;
  std::optional<double> tnr;
  // Classes with no labelled sample; left out of ACC.
  std::vector<std::size_t> absent_classes;

  bool warning() const noexcept { return !absent_classes.empty(); }
};

Metrics compute_metrics(const ConfusionCounts& counts);
Metrics compute_metrics(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                        std::size_t n_classes);

// Metric name -> percent ("ACC", "F1", and for binary tasks "TPR", "TNR").
std::map<std::string, double> percent_map(const Metrics& m);

// Percent value rounded to one decimal.
double round1(double percent);

}  // namespace adapt
