#include "conki/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "json.hpp"

#include "conki/errors.hpp"

namespace conki {

double pearson(std::span<const double> x, std::span<const double> y, bool* degenerate) {
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  const bool degen = !(sxx > 0.0) || !(syy > 0.0);
  if (degenerate != nullptr) *degenerate = degen;
  if (degen) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double weighted_f1(std::span<const int> predicted, std::span<const int> actual) {
  if (actual.empty()) return 0.0;
  double total = 0.0;
  for (int c = 0; c < 2; ++c) {
    std::size_t tp = 0, pred_c = 0, act_c = 0;
    for (std::size_t i = 0; i < actual.size(); ++i) {
      if (predicted[i] == c) ++pred_c;
      if (actual[i] == c) ++act_c;
      if (predicted[i] == c && actual[i] == c) ++tp;
    }
    if (act_c == 0) continue;
    const double precision = pred_c == 0 ? 0.0 : static_cast<double>(tp) / pred_c;
    const double recall = static_cast<double>(tp) / act_c;
    const double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    total += f1 * static_cast<double>(act_c);
  }
  return total / static_cast<double>(actual.size());
}

MetricsReport compute_metrics(std::span<const double> preds, std::span<const double> labels,
                              LabelRange range) {
  if (preds.size() != labels.size()) throw InvalidInputError("compute_metrics: length mismatch");
  if (preds.empty()) throw InvalidInputError("compute_metrics: empty input");
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!std::isfinite(preds[i]) || !std::isfinite(labels[i])) {
      throw InvalidInputError("compute_metrics: non-finite value at index " + std::to_string(i));
    }
  }

  MetricsReport m;
  const std::size_t n = preds.size();
  m.n_eval = n;
  std::size_t hit7 = 0, hit_a = 0, hit_b = 0;
  std::vector<int> pa, la, pb, lb;
  double abs_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    abs_sum += std::abs(preds[i] - labels[i]);
    if (round_to_interval(preds[i], range) == round_to_interval(labels[i], range)) ++hit7;

    const int p_cls = preds[i] < 0.0 ? 0 : 1;
    const int l_cls = labels[i] < 0.0 ? 0 : 1;
    pa.push_back(p_cls);
    la.push_back(l_cls);
    if (p_cls == l_cls) ++hit_a;
    if (labels[i] != 0.0) {
      pb.push_back(p_cls);
      lb.push_back(l_cls);
      if (p_cls == l_cls) ++hit_b;
    }
  }
  m.mae = abs_sum / static_cast<double>(n);
  m.corr = pearson(preds, labels, &m.corr_degenerate);
  m.acc7 = static_cast<double>(hit7) / static_cast<double>(n);
  m.acc2_nonneg = static_cast<double>(hit_a) / static_cast<double>(n);
  m.f1_nonneg = weighted_f1(pa, la);
  m.n_eval_pos = lb.size();
  if (!lb.empty()) {
    m.acc2_pos = static_cast<double>(hit_b) / static_cast<double>(lb.size());
    m.f1_pos = weighted_f1(pb, lb);
  }
  return m;
}

std::string metrics_json(const MetricsReport& m) {
  nlohmann::ordered_json j;
  j["mae"] = m.mae;
  j["corr"] = m.corr;
  j["corr_degenerate"] = m.corr_degenerate;
  j["acc7"] = m.acc7;
  j["acc2_nonneg"] = m.acc2_nonneg;
  j["acc2_pos"] = m.acc2_pos;
  j["f1_nonneg"] = m.f1_nonneg;
  j["f1_pos"] = m.f1_pos;
  j["n_eval"] = m.n_eval;
  j["n_eval_pos"] = m.n_eval_pos;
  return j.dump();
}

std::string metrics_table(const MetricsReport& m) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%8s %8s %8s %12s %12s %12s %12s\n"
                "%8.4f %8.4f %8.2f %12.2f %12.2f %12.2f %12.2f\n",
                "MAE", "Corr", "Acc-7", "Acc-2(A)", "Acc-2(B)", "F1(A)", "F1(B)", m.mae, m.corr,
                100.0 * m.acc7, 100.0 * m.acc2_nonneg, 100.0 * m.acc2_pos, 100.0 * m.f1_nonneg,
                100.0 * m.f1_pos);
  return buf;
}

}  // namespace conki
