#include "pcp/metrics.hpp"

#include <cmath>

namespace pcp {

namespace {

double f1_for_class(const std::vector<int>& predictions, const std::vector<int>& golds, int cls) {
  int64_t tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < golds.size(); ++i) {
    const bool p = predictions[i] == cls, g = golds[i] == cls;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  const double denom = 2.0 * tp + fp + fn;
  return denom == 0.0 ? 0.0 : 2.0 * tp / denom;
}

}  // namespace

double compute_metric(Metric kind, const std::vector<int>& predictions,
                      const std::vector<int>& golds, int num_labels) {
  if (predictions.size() != golds.size())
    throw ContractError("compute_metric: " + std::to_string(predictions.size()) +
                        " predictions vs " + std::to_string(golds.size()) + " golds");
  if (golds.empty()) throw ContractError("compute_metric: empty inputs");

  switch (kind) {
    case Metric::kAccuracy: {
      int64_t correct = 0;
      for (size_t i = 0; i < golds.size(); ++i) correct += predictions[i] == golds[i];
      return static_cast<double>(correct) / static_cast<double>(golds.size());
    }
    case Metric::kBinaryF1:
      return f1_for_class(predictions, golds, 1);
    case Metric::kMacroF1: {
      double total = 0.0;
      for (int c = 0; c < num_labels; ++c) total += f1_for_class(predictions, golds, c);
      return total / num_labels;
    }
    case Metric::kMatthews: {
      int64_t tp = 0, tn = 0, fp = 0, fn = 0;
      for (size_t i = 0; i < golds.size(); ++i) {
        const bool p = predictions[i] == 1, g = golds[i] == 1;
        tp += p && g;
        tn += !p && !g;
        fp += p && !g;
        fn += !p && g;
      }
      const double denom = std::sqrt(static_cast<double>((tp + fp) * (tp + fn))) *
                           std::sqrt(static_cast<double>((tn + fp) * (tn + fn)));
      if (denom == 0.0) return 0.0;
      return (static_cast<double>(tp) * tn - static_cast<double>(fp) * fn) / denom;
    }
  }
  throw ContractError("compute_metric: unknown metric");
}

}  // namespace pcp
