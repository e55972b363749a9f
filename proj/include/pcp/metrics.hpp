#pragma once

#include <vector>

#include "pcp/templates.hpp"

namespace pcp {

// accuracy: fraction correct.
// binary_f1: F1 of the positive class, which is label id 1.
// macro_f1: unweighted mean of per-class F1 over num_labels classes; classes
//           with no support and no predictions contribute 0.
// matthews: binary MCC from the confusion matrix; 0 when any marginal is 0.
double compute_metric(Metric kind, const std::vector<int>& predictions,
                      const std::vector<int>& golds, int num_labels);

}  // namespace pcp
