#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "conki/data.hpp"

namespace conki {

struct MetricsReport {
  double mae = 0.0;
  double corr = 0.0;
  bool corr_degenerate = false;  // constant predictions or labels; corr reported as 0
  double acc7 = 0.0;
  // Setting A: negative vs non-negative, zero-labeled samples included.
  double acc2_nonneg = 0.0;
  double f1_nonneg = 0.0;
  // Setting B: negative vs positive, zero-labeled samples excluded.
  double acc2_pos = 0.0;
  double f1_pos = 0.0;
  std::size_t n_eval = 0;
  std::size_t n_eval_pos = 0;

  bool operator==(const MetricsReport&) const = default;
};

MetricsReport compute_metrics(std::span<const double> preds, std::span<const double> labels,
                              LabelRange range = {});

/// Pearson correlation; returns 0 and sets `degenerate` when either side has zero variance.
double pearson(std::span<const double> x, std::span<const double> y, bool* degenerate = nullptr);

/// Support-weighted F1 over the two classes of a binary labeling.
double weighted_f1(std::span<const int> predicted, std::span<const int> actual);

/// Single-line JSON object.
std::string metrics_json(const MetricsReport& m);
/// Aligned table: MAE, Corr, Acc-7, Acc-2 (A/B), F1 (A/B).
std::string metrics_table(const MetricsReport& m);

}  // namespace conki
