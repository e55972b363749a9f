#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "pcp/rng.hpp"
#include "pcp/tensor.hpp"

namespace testutil {

inline pcp::Tensor random_tensor(std::vector<int> dims, pcp::Rng& rng, bool requires_grad = true,
                                 float scale = 1.0f) {
  pcp::Tensor t = pcp::Tensor::zeros(std::move(dims), requires_grad);
  for (auto& v : t.values()) v = rng.normal(0.0f, scale);
  return t;
}

// Norm-based relative error between two gradient vectors. The denominator is
// floored at 0.25 per coordinate: float32 central differences with h = 1e-3
// resolve gradients down to roughly 1e-4, so below the floor the comparison
// is an absolute one at 2.5e-4 per coordinate (real backward bugs err at the
// signal's own scale and still trip it).
inline double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double floor = 0.25 * std::sqrt(static_cast<double>(a.size()));
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

// Central finite difference of loss_fn wrt one coordinate of t. loss_fn must
// evaluate the forward pass from current parameter values (no tape needed).
inline double finite_diff(pcp::Tensor t, int64_t idx, const std::function<double()>& loss_fn,
                          float h = 1e-3f) {
  auto v = t.values();
  const float orig = v[idx];
  v[idx] = orig + h;
  const double up = loss_fn();
  v[idx] = orig - h;
  const double down = loss_fn();
  v[idx] = orig;
  return (up - down) / (2.0 * static_cast<double>(h));
}

// Coordinates to probe: everything for small tensors, otherwise the top
// entries by |analytic gradient| plus a few random ones.
inline std::vector<int64_t> probe_coords(std::span<const float> analytic, pcp::Rng& rng,
                                         int64_t max_coords = 24) {
  const int64_t n = static_cast<int64_t>(analytic.size());
  std::vector<int64_t> coords(static_cast<size_t>(n));
  std::iota(coords.begin(), coords.end(), 0);
  if (n <= max_coords) return coords;
  std::sort(coords.begin(), coords.end(), [&](int64_t a, int64_t b) {
    return std::fabs(analytic[static_cast<size_t>(a)]) >
           std::fabs(analytic[static_cast<size_t>(b)]);
  });
  coords.resize(static_cast<size_t>(max_coords - 4));
  for (int i = 0; i < 4; ++i)
    coords.push_back(rng.uniform_int(static_cast<int>(n)));
  std::sort(coords.begin(), coords.end());
  coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
  return coords;
}

// Runs one tape-recorded backward pass via make_loss, then compares the
// analytic gradient of every tensor in params against central finite
// differences at probed coordinates. Returns the worst per-tensor rel error.
// value_fn, when given, is the forward evaluation used by the differences
// (e.g. a double-precision reduction of the same float32 outputs).
inline double check_gradients(const std::function<pcp::Tensor()>& make_loss,
                              std::vector<pcp::Tensor> params, pcp::Rng& rng,
                              std::function<double()> value_fn = {}) {
  for (auto& p : params) p.zero_grad();
  {
    pcp::Tape tape;
    pcp::Tensor loss = make_loss();
    pcp::backward(loss);
  }
  if (!value_fn) value_fn = [&]() -> double { return make_loss().item(); };
  double worst = 0.0;
  for (auto& p : params) {
    if (!p.has_grad()) p.grad();  // untouched parameter: gradient is zero
    const auto analytic_span = p.grad();
    const auto coords = probe_coords(analytic_span, rng);
    std::vector<double> analytic, fd;
    for (const int64_t c : coords) {
      analytic.push_back(analytic_span[static_cast<size_t>(c)]);
      fd.push_back(finite_diff(p, c, value_fn));
    }
    worst = std::max(worst, rel_err(analytic, fd));
  }
  for (auto& p : params) p.zero_grad();
  return worst;
}

}  // namespace testutil
