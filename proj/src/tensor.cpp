#include "pcp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pcp {

namespace {

int64_t checked_numel(const std::vector<int>& dims) {
  if (dims.empty()) throw ShapeError("tensor: dims must be non-empty");
  int64_t n = 1;
  for (const int d : dims) {
    // dim 0 is allowed only so that empty results (e.g. zero requested MLM
    // positions) have a well-formed shape; regular tensors have dims >= 1.
    if (d < 0) throw ShapeError("tensor: negative dim in " + Tensor::shape_str(dims));
    n *= d;
  }
  return n;
}

thread_local Tape* g_active_tape = nullptr;

constexpr float kNegInf = -std::numeric_limits<float>::infinity();

// C[m,n] += A[m,k] * B[k,n]
void mm_acc(std::span<float> c, std::span<const float> a, std::span<const float> b,
            int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    float* __restrict__ crow = c.data() + static_cast<int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const float aip = a[static_cast<int64_t>(i) * k + p];
      const float* __restrict__ brow = b.data() + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
void mm_nt_acc(std::span<float> c, std::span<const float> a, std::span<const float> b,
               int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const float* __restrict__ arow = a.data() + static_cast<int64_t>(i) * k;
    float* __restrict__ crow = c.data() + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const float* __restrict__ brow = b.data() + static_cast<int64_t>(j) * k;
      float acc = 0.0f;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
void mm_tn_acc(std::span<float> c, std::span<const float> a, std::span<const float> b,
               int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const float* __restrict__ arow = a.data() + static_cast<int64_t>(i) * k;
    const float* __restrict__ brow = b.data() + static_cast<int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const float aip = arow[p];
      float* __restrict__ crow = c.data() + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.dims().size() != 2)
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + t.shape_str());
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(std::vector<int> dims, bool requires_grad) {
  const int64_t n = checked_numel(dims);
  Tensor t;
  t.d_ = std::make_shared<Data>();
  t.d_->dims = std::move(dims);
  t.d_->values.assign(static_cast<size_t>(n), 0.0f);
  t.d_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(std::vector<int> dims, float value, bool requires_grad) {
  Tensor t = zeros(std::move(dims), requires_grad);
  std::fill(t.d_->values.begin(), t.d_->values.end(), value);
  return t;
}

Tensor Tensor::from_values(std::vector<int> dims, std::vector<float> values,
                           bool requires_grad) {
  const int64_t n = checked_numel(dims);
  if (n != static_cast<int64_t>(values.size()))
    throw ShapeError("tensor: " + shape_str(dims) + " needs " + std::to_string(n) +
                     " values, got " + std::to_string(values.size()));
  Tensor t;
  t.d_ = std::make_shared<Data>();
  t.d_->dims = std::move(dims);
  t.d_->values = std::move(values);
  t.d_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

float Tensor::item() const {
  if (size() != 1) throw ContractError("item: tensor is not scalar, shape " + shape_str());
  return d_->values[0];
}

std::span<float> Tensor::grad() {
  if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0f);
  return d_->grad;
}

std::span<const float> Tensor::grad() const {
  if (d_->grad.empty()) throw ContractError("grad: no gradient present");
  return d_->grad;
}

Tensor Tensor::detached_copy() const {
  Tensor t;
  t.d_ = std::make_shared<Data>();
  t.d_->dims = d_->dims;
  t.d_->values = d_->values;
  t.d_->requires_grad = d_->requires_grad;
  return t;
}

std::string Tensor::shape_str(const std::vector<int>& dims) {
  std::string s;
  for (size_t i = 0; i < dims.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(dims[i]);
  }
  return s;
}

// ---- Tape -------------------------------------------------------------------

Tape::Tape() : prev_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(Tensor output, std::function<void()> back) {
  nodes_.push_back({std::move(output), std::move(back)});
}

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (tape == nullptr) throw ContractError("backward: no active tape");
  if (!loss.defined() || loss.size() != 1)
    throw ContractError("backward: loss must be scalar");
  Tensor seed = loss;
  seed.grad()[0] += 1.0f;
  for (auto it = tape->nodes_.rbegin(); it != tape->nodes_.rend(); ++it) {
    if (!it->output.has_grad()) continue;  // dead branch, nothing to propagate
    it->back();
  }
}

bool grad_enabled(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

namespace {

// Shared epilogue: mark the output as grad-carrying and push the node.
void record_op(Tensor& out, std::function<void()> back) {
  out.set_requires_grad(true);
  Tape::active()->record(out, std::move(back));
}

}  // namespace

// ---- ops --------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw ShapeError("matmul: inner dims disagree, " + a.shape_str() + " vs " + b.shape_str());
  Tensor out = Tensor::zeros({m, n});
  mm_acc(out.values(), a.values(), b.values(), m, k, n);
  if (grad_enabled({&a, &b})) {
    record_op(out, [a = a, b = b, out, m, k, n]() mutable {
      const auto g = out.grad();
      if (a.requires_grad()) mm_nt_acc(a.grad(), g, b.values(), m, n, k);  // dA += G B^T
      if (b.requires_grad()) mm_tn_acc(b.grad(), a.values(), g, m, k, n);  // dB += A^T G
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (k != b.dim(1))
    throw ShapeError("matmul_nt: inner dims disagree, " + a.shape_str() + " vs " + b.shape_str());
  Tensor out = Tensor::zeros({m, n});
  mm_nt_acc(out.values(), a.values(), b.values(), m, k, n);
  if (grad_enabled({&a, &b})) {
    record_op(out, [a = a, b = b, out, m, k, n]() mutable {
      const auto g = out.grad();
      if (a.requires_grad()) mm_acc(a.grad(), g, b.values(), m, n, k);     // dA += G B
      if (b.requires_grad()) mm_tn_acc(b.grad(), g, a.values(), m, n, k);  // dB += G^T A
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims())
    throw ShapeError("add: shape mismatch, " + a.shape_str() + " vs " + b.shape_str());
  Tensor out = Tensor::zeros(a.dims());
  const auto av = a.values(), bv = b.values();
  auto ov = out.values();
  for (int64_t i = 0; i < out.size(); ++i) ov[i] = av[i] + bv[i];
  if (grad_enabled({&a, &b})) {
    record_op(out, [a = a, b = b, out]() mutable {
      const auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  const int n = x.last_dim();
  if (b.dims().size() != 1 || b.dim(0) != n)
    throw ShapeError("add_bias: bias " + b.shape_str() + " does not match last dim of " +
                     x.shape_str());
  Tensor out = Tensor::zeros(x.dims());
  const auto xv = x.values(), bv = b.values();
  auto ov = out.values();
  const int64_t rows = x.rows();
  for (int64_t r = 0; r < rows; ++r)
    for (int j = 0; j < n; ++j) ov[r * n + j] = xv[r * n + j] + bv[j];
  if (grad_enabled({&x, &b})) {
    record_op(out, [x = x, b = b, out, rows, n]() mutable {
      const auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (int64_t r = 0; r < rows; ++r)
          for (int j = 0; j < n; ++j) gb[j] += g[r * n + j];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims())
    throw ShapeError("mul: shape mismatch, " + a.shape_str() + " vs " + b.shape_str());
  Tensor out = Tensor::zeros(a.dims());
  const auto av = a.values(), bv = b.values();
  auto ov = out.values();
  for (int64_t i = 0; i < out.size(); ++i) ov[i] = av[i] * bv[i];
  if (grad_enabled({&a, &b})) {
    record_op(out, [a = a, b = b, out]() mutable {
      const auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        const auto bv2 = b.values();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        const auto av2 = a.values();
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, float c) {
  Tensor out = Tensor::zeros(x.dims());
  const auto xv = x.values();
  auto ov = out.values();
  for (int64_t i = 0; i < out.size(); ++i) ov[i] = xv[i] * c;
  if (grad_enabled({&x})) {
    record_op(out, [x = x, out, c]() mutable {
      const auto g = out.grad();
      auto gx = x.grad();
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * c;
    });
  }
  return out;
}

namespace {
constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)
constexpr float kGeluA = 0.044715f;
}  // namespace

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.dims());
  const auto xv = x.values();
  auto ov = out.values();
  for (int64_t i = 0; i < out.size(); ++i) {
    const float v = xv[i];
    ov[i] = 0.5f * v * (1.0f + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  if (grad_enabled({&x})) {
    record_op(out, [x = x, out]() mutable {
      const auto g = out.grad();
      const auto xv2 = x.values();
      auto gx = x.grad();
      for (size_t i = 0; i < g.size(); ++i) {
        const float v = xv2[i];
        const float t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        const float du = kGeluC * (1.0f + 3.0f * kGeluA * v * v);
        gx[i] += g[i] * (0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * du);
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.dims());
  const auto xv = x.values();
  auto ov = out.values();
  for (int64_t i = 0; i < out.size(); ++i) ov[i] = xv[i] > 0.0f ? xv[i] : 0.0f;
  if (grad_enabled({&x})) {
    record_op(out, [x = x, out]() mutable {
      const auto g = out.grad();
      const auto xv2 = x.values();
      auto gx = x.grad();
      for (size_t i = 0; i < g.size(); ++i)
        if (xv2[i] > 0.0f) gx[i] += g[i];
    });
  }
  return out;
}

Tensor tanh_act(const Tensor& x) {
  Tensor out = Tensor::zeros(x.dims());
  const auto xv = x.values();
  auto ov = out.values();
  for (int64_t i = 0; i < out.size(); ++i) ov[i] = std::tanh(xv[i]);
  if (grad_enabled({&x})) {
    record_op(out, [x = x, out]() mutable {
      const auto g = out.grad();
      const auto yv = out.values();
      auto gx = x.grad();
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0f - yv[i] * yv[i]);
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  if (eps <= 0.0f) throw ContractError("layer_norm: eps must be positive");
  const int n = x.last_dim();
  if (gain.dims().size() != 1 || gain.dim(0) != n || bias.dims().size() != 1 || bias.dim(0) != n)
    throw ShapeError("layer_norm: gain/bias must be rank-1 of size " + std::to_string(n));
  const int64_t rows = x.rows();
  Tensor out = Tensor::zeros(x.dims());
  std::vector<float> xhat(static_cast<size_t>(x.size()));
  std::vector<float> inv_std(static_cast<size_t>(rows));
  {
    const auto xv = x.values(), gv = gain.values(), bv = bias.values();
    auto ov = out.values();
    for (int64_t r = 0; r < rows; ++r) {
      const float* row = xv.data() + r * n;
      double mean = 0.0;
      for (int j = 0; j < n; ++j) mean += row[j];
      mean /= n;
      double var = 0.0;
      for (int j = 0; j < n; ++j) {
        const double d = row[j] - mean;
        var += d * d;
      }
      var /= n;
      const float inv = 1.0f / std::sqrt(static_cast<float>(var) + eps);
      inv_std[static_cast<size_t>(r)] = inv;
      for (int j = 0; j < n; ++j) {
        const float xh = (row[j] - static_cast<float>(mean)) * inv;
        xhat[static_cast<size_t>(r * n + j)] = xh;
        ov[r * n + j] = gv[j] * xh + bv[j];
      }
    }
  }
  if (grad_enabled({&x, &gain, &bias})) {
    record_op(out, [x = x, gain = gain, bias = bias, out, rows, n, xhat = std::move(xhat),
                    inv_std = std::move(inv_std)]() mutable {
      const auto g = out.grad();
      const auto gv = gain.values();
      for (int64_t r = 0; r < rows; ++r) {
        const float* grow = g.data() + r * n;
        const float* xh = xhat.data() + r * n;
        if (gain.requires_grad()) {
          auto gg = gain.grad();
          for (int j = 0; j < n; ++j) gg[j] += grow[j] * xh[j];
        }
        if (bias.requires_grad()) {
          auto gb = bias.grad();
          for (int j = 0; j < n; ++j) gb[j] += grow[j];
        }
        if (x.requires_grad()) {
          // dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
          double s1 = 0.0, s2 = 0.0;
          for (int j = 0; j < n; ++j) {
            const double dxh = static_cast<double>(grow[j]) * gv[j];
            s1 += dxh;
            s2 += dxh * xh[j];
          }
          s1 /= n;
          s2 /= n;
          const float inv = inv_std[static_cast<size_t>(r)];
          auto gx = x.grad();
          for (int j = 0; j < n; ++j) {
            const float dxh = grow[j] * gv[j];
            gx[r * n + j] += inv * (dxh - static_cast<float>(s1) -
                                    xh[j] * static_cast<float>(s2));
          }
        }
      }
    });
  }
  return out;
}

Tensor softmax_lastdim(const Tensor& x) {
  const int n = x.last_dim();
  const int64_t rows = x.rows();
  Tensor out = Tensor::zeros(x.dims());
  {
    const auto xv = x.values();
    auto ov = out.values();
    for (int64_t r = 0; r < rows; ++r) {
      const float* row = xv.data() + r * n;
      float mx = kNegInf;
      for (int j = 0; j < n; ++j) mx = std::max(mx, row[j]);
      if (mx == kNegInf) continue;  // fully masked row stays all-zero
      double denom = 0.0;
      for (int j = 0; j < n; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
      const float invd = static_cast<float>(1.0 / denom);
      for (int j = 0; j < n; ++j)
        ov[r * n + j] = std::exp(row[j] - mx) * invd;
    }
  }
  if (grad_enabled({&x})) {
    record_op(out, [x = x, out, rows, n]() mutable {
      const auto g = out.grad();
      const auto yv = out.values();
      auto gx = x.grad();
      for (int64_t r = 0; r < rows; ++r) {
        const float* grow = g.data() + r * n;
        const float* yrow = yv.data() + r * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += static_cast<double>(grow[j]) * yrow[j];
        for (int j = 0; j < n; ++j)
          gx[r * n + j] += yrow[j] * (grow[j] - static_cast<float>(dot));
      }
    });
  }
  return out;
}

Tensor embedding_gather(const Tensor& table, std::span<const int> ids) {
  require_rank2(table, "embedding_gather");
  const int vocab = table.dim(0), dim = table.dim(1);
  for (const int id : ids)
    if (id < 0 || id >= vocab)
      throw IndexError("embedding_gather: id " + std::to_string(id) + " out of range [0, " +
                       std::to_string(vocab) + ")");
  const int n = static_cast<int>(ids.size());
  Tensor out = Tensor::zeros({n, dim});
  if (n == 0) return out;
  {
    const auto tv = table.values();
    auto ov = out.values();
    for (int i = 0; i < n; ++i)
      std::copy_n(tv.data() + static_cast<int64_t>(ids[i]) * dim, dim,
                  ov.data() + static_cast<int64_t>(i) * dim);
  }
  if (grad_enabled({&table})) {
    std::vector<int> ids_copy(ids.begin(), ids.end());
    record_op(out, [table = table, out, ids_copy = std::move(ids_copy), dim]() mutable {
      const auto g = out.grad();
      auto gt = table.grad();
      for (size_t i = 0; i < ids_copy.size(); ++i) {
        float* dst = gt.data() + static_cast<int64_t>(ids_copy[i]) * dim;
        const float* src = g.data() + static_cast<int64_t>(i) * dim;
        for (int j = 0; j < dim; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, float p, Rng& rng, bool training) {
  if (p < 0.0f || p >= 1.0f) throw ContractError("dropout: p must be in [0, 1)");
  if (!training || p == 0.0f) return x;  // identity
  Tensor out = Tensor::zeros(x.dims());
  std::vector<float> mask(static_cast<size_t>(x.size()));
  const float keep_scale = 1.0f / (1.0f - p);
  {
    const auto xv = x.values();
    auto ov = out.values();
    for (int64_t i = 0; i < x.size(); ++i) {
      mask[static_cast<size_t>(i)] = rng.uniform() < p ? 0.0f : keep_scale;
      ov[i] = xv[i] * mask[static_cast<size_t>(i)];
    }
  }
  if (grad_enabled({&x})) {
    record_op(out, [x = x, out, mask = std::move(mask)]() mutable {
      const auto g = out.grad();
      auto gx = x.grad();
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
    });
  }
  return out;
}

Tensor row_select(const Tensor& x, std::span<const int> rows) {
  const int n = x.last_dim();
  const int64_t nrows = x.rows();
  for (const int r : rows)
    if (r < 0 || r >= nrows)
      throw IndexError("row_select: row " + std::to_string(r) + " out of range [0, " +
                       std::to_string(nrows) + ")");
  const int m = static_cast<int>(rows.size());
  Tensor out = Tensor::zeros({m, n});
  if (m == 0) return out;
  {
    const auto xv = x.values();
    auto ov = out.values();
    for (int i = 0; i < m; ++i)
      std::copy_n(xv.data() + static_cast<int64_t>(rows[i]) * n, n,
                  ov.data() + static_cast<int64_t>(i) * n);
  }
  if (grad_enabled({&x})) {
    std::vector<int> rows_copy(rows.begin(), rows.end());
    record_op(out, [x = x, out, rows_copy = std::move(rows_copy), n]() mutable {
      const auto g = out.grad();
      auto gx = x.grad();
      for (size_t i = 0; i < rows_copy.size(); ++i) {
        float* dst = gx.data() + static_cast<int64_t>(rows_copy[i]) * n;
        const float* src = g.data() + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor col_select(const Tensor& x, std::span<const int> cols) {
  require_rank2(x, "col_select");
  const int m = x.dim(0), n = x.dim(1);
  for (const int c : cols)
    if (c < 0 || c >= n)
      throw IndexError("col_select: column " + std::to_string(c) + " out of range [0, " +
                       std::to_string(n) + ")");
  const int k = static_cast<int>(cols.size());
  if (k == 0) throw ContractError("col_select: empty column list");
  Tensor out = Tensor::zeros({m, k});
  {
    const auto xv = x.values();
    auto ov = out.values();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < k; ++j)
        ov[static_cast<int64_t>(i) * k + j] = xv[static_cast<int64_t>(i) * n + cols[j]];
  }
  if (grad_enabled({&x})) {
    std::vector<int> cols_copy(cols.begin(), cols.end());
    record_op(out, [x = x, out, cols_copy = std::move(cols_copy), m, n]() mutable {
      const auto g = out.grad();
      auto gx = x.grad();
      const int kk = static_cast<int>(cols_copy.size());
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < kk; ++j)
          gx[static_cast<int64_t>(i) * n + cols_copy[j]] += g[static_cast<int64_t>(i) * kk + j];
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (const float v : x.values()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (grad_enabled({&x})) {
    record_op(out, [x = x, out]() mutable {
      const float g = out.grad()[0];
      auto gx = x.grad();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_id) {
  require_rank2(logits, "cross_entropy");
  const int m = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(targets.size()) != m)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(m) + " rows");
  for (const int t : targets)
    if (t != ignore_id && (t < 0 || t >= c))
      throw IndexError("cross_entropy: target " + std::to_string(t) + " out of range [0, " +
                       std::to_string(c) + ")");
  int kept = 0;
  for (const int t : targets) kept += t != ignore_id;
  if (kept == 0) return Tensor::scalar(0.0f);

  // Save row softmax for the backward pass; accumulate the loss in double.
  std::vector<float> probs(static_cast<size_t>(logits.size()));
  double loss = 0.0;
  {
    const auto lv = logits.values();
    for (int i = 0; i < m; ++i) {
      const float* row = lv.data() + static_cast<int64_t>(i) * c;
      float mx = row[0];
      for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
      double denom = 0.0;
      for (int j = 0; j < c; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
      const double log_denom = std::log(denom);
      for (int j = 0; j < c; ++j)
        probs[static_cast<size_t>(i) * c + j] =
            static_cast<float>(std::exp(static_cast<double>(row[j] - mx)) / denom);
      if (targets[static_cast<size_t>(i)] != ignore_id)
        loss += log_denom - static_cast<double>(row[targets[static_cast<size_t>(i)]] - mx);
    }
  }
  Tensor out = Tensor::scalar(static_cast<float>(loss / kept));
  if (grad_enabled({&logits})) {
    std::vector<int> tgt(targets.begin(), targets.end());
    record_op(out, [logits = logits, out, probs = std::move(probs), tgt = std::move(tgt), m, c,
                    ignore_id, kept]() mutable {
      const float g = out.grad()[0] / static_cast<float>(kept);
      auto gl = logits.grad();
      for (int i = 0; i < m; ++i) {
        if (tgt[static_cast<size_t>(i)] == ignore_id) continue;
        const float* prow = probs.data() + static_cast<int64_t>(i) * c;
        float* grow = gl.data() + static_cast<int64_t>(i) * c;
        for (int j = 0; j < c; ++j) grow[j] += g * prow[j];
        grow[tgt[static_cast<size_t>(i)]] -= g;
      }
    });
  }
  return out;
}

namespace {

void require_attention_shapes(const Tensor& t, int batch, int seq, int heads, const char* op) {
  require_rank2(t, op);
  if (t.dim(0) != batch * seq)
    throw ShapeError(std::string(op) + ": expected " + std::to_string(batch * seq) +
                     " rows, got " + t.shape_str());
  if (t.dim(1) % heads != 0)
    throw ShapeError(std::string(op) + ": dim " + std::to_string(t.dim(1)) +
                     " not divisible by " + std::to_string(heads) + " heads");
}

}  // namespace

Tensor attention_scores(const Tensor& q, const Tensor& k, int batch, int seq, int heads) {
  require_attention_shapes(q, batch, seq, heads, "attention_scores");
  require_attention_shapes(k, batch, seq, heads, "attention_scores");
  if (q.dim(1) != k.dim(1))
    throw ShapeError("attention_scores: q " + q.shape_str() + " vs k " + k.shape_str());
  const int dim = q.dim(1), dh = dim / heads;
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));
  Tensor out = Tensor::zeros({batch * heads * seq, seq});
  {
    const auto qv = q.values(), kv = k.values();
    auto ov = out.values();
    for (int b = 0; b < batch; ++b)
      for (int h = 0; h < heads; ++h)
        for (int i = 0; i < seq; ++i) {
          const float* qrow = qv.data() + (static_cast<int64_t>(b) * seq + i) * dim + h * dh;
          float* orow = ov.data() + ((static_cast<int64_t>(b) * heads + h) * seq + i) * seq;
          for (int j = 0; j < seq; ++j) {
            const float* krow = kv.data() + (static_cast<int64_t>(b) * seq + j) * dim + h * dh;
            float acc = 0.0f;
            for (int c = 0; c < dh; ++c) acc += qrow[c] * krow[c];
            orow[j] = acc * inv_sqrt;
          }
        }
  }
  if (grad_enabled({&q, &k})) {
    record_op(out, [q = q, k = k, out, batch, seq, heads, dim, dh, inv_sqrt]() mutable {
      const auto g = out.grad();
      const auto qv = q.values(), kv = k.values();
      for (int b = 0; b < batch; ++b)
        for (int h = 0; h < heads; ++h)
          for (int i = 0; i < seq; ++i) {
            const float* grow = g.data() + ((static_cast<int64_t>(b) * heads + h) * seq + i) * seq;
            for (int j = 0; j < seq; ++j) {
              const float gs = grow[j] * inv_sqrt;
              if (gs == 0.0f) continue;
              const int64_t qoff = (static_cast<int64_t>(b) * seq + i) * dim + h * dh;
              const int64_t koff = (static_cast<int64_t>(b) * seq + j) * dim + h * dh;
              if (q.requires_grad()) {
                auto gq = q.grad();
                for (int c = 0; c < dh; ++c) gq[qoff + c] += gs * kv[koff + c];
              }
              if (k.requires_grad()) {
                auto gk = k.grad();
                for (int c = 0; c < dh; ++c) gk[koff + c] += gs * qv[qoff + c];
              }
            }
          }
    });
  }
  return out;
}

Tensor add_key_mask(const Tensor& scores, std::span<const float> attention_mask,
                    int batch, int seq, int heads) {
  require_rank2(scores, "add_key_mask");
  if (scores.dim(0) != batch * heads * seq || scores.dim(1) != seq)
    throw ShapeError("add_key_mask: scores " + scores.shape_str() + " do not match batch/seq/heads");
  if (static_cast<int>(attention_mask.size()) != batch * seq)
    throw ShapeError("add_key_mask: attention mask has " + std::to_string(attention_mask.size()) +
                     " entries, expected " + std::to_string(batch * seq));
  Tensor out = Tensor::zeros(scores.dims());
  {
    const auto sv = scores.values();
    auto ov = out.values();
    for (int b = 0; b < batch; ++b) {
      const float* mrow = attention_mask.data() + static_cast<int64_t>(b) * seq;
      for (int h = 0; h < heads; ++h)
        for (int i = 0; i < seq; ++i) {
          const int64_t off = ((static_cast<int64_t>(b) * heads + h) * seq + i) * seq;
          for (int j = 0; j < seq; ++j)
            ov[off + j] = mrow[j] > 0.0f ? sv[off + j] : kNegInf;
        }
    }
  }
  if (grad_enabled({&scores})) {
    std::vector<float> mask_copy(attention_mask.begin(), attention_mask.end());
    record_op(out, [scores = scores, out, mask_copy = std::move(mask_copy), batch, seq, heads]() mutable {
      const auto g = out.grad();
      auto gs = scores.grad();
      for (int b = 0; b < batch; ++b) {
        const float* mrow = mask_copy.data() + static_cast<int64_t>(b) * seq;
        for (int h = 0; h < heads; ++h)
          for (int i = 0; i < seq; ++i) {
            const int64_t off = ((static_cast<int64_t>(b) * heads + h) * seq + i) * seq;
            for (int j = 0; j < seq; ++j)
              if (mrow[j] > 0.0f) gs[off + j] += g[off + j];
          }
      }
    });
  }
  return out;
}

Tensor attention_mix(const Tensor& probs, const Tensor& v, int batch, int seq, int heads) {
  require_rank2(probs, "attention_mix");
  require_attention_shapes(v, batch, seq, heads, "attention_mix");
  if (probs.dim(0) != batch * heads * seq || probs.dim(1) != seq)
    throw ShapeError("attention_mix: probs " + probs.shape_str() + " do not match batch/seq/heads");
  const int dim = v.dim(1), dh = dim / heads;
  Tensor out = Tensor::zeros({batch * seq, dim});
  {
    const auto pv = probs.values(), vv = v.values();
    auto ov = out.values();
    for (int b = 0; b < batch; ++b)
      for (int h = 0; h < heads; ++h)
        for (int i = 0; i < seq; ++i) {
          const float* prow = pv.data() + ((static_cast<int64_t>(b) * heads + h) * seq + i) * seq;
          float* orow = ov.data() + (static_cast<int64_t>(b) * seq + i) * dim + h * dh;
          for (int j = 0; j < seq; ++j) {
            const float p = prow[j];
            if (p == 0.0f) continue;
            const float* vrow = vv.data() + (static_cast<int64_t>(b) * seq + j) * dim + h * dh;
            for (int c = 0; c < dh; ++c) orow[c] += p * vrow[c];
          }
        }
  }
  if (grad_enabled({&probs, &v})) {
    record_op(out, [probs = probs, v = v, out, batch, seq, heads, dim, dh]() mutable {
      const auto g = out.grad();
      const auto pv = probs.values(), vv = v.values();
      for (int b = 0; b < batch; ++b)
        for (int h = 0; h < heads; ++h)
          for (int i = 0; i < seq; ++i) {
            const int64_t poff = ((static_cast<int64_t>(b) * heads + h) * seq + i) * seq;
            const float* grow = g.data() + (static_cast<int64_t>(b) * seq + i) * dim + h * dh;
            for (int j = 0; j < seq; ++j) {
              const float* vrow = vv.data() + (static_cast<int64_t>(b) * seq + j) * dim + h * dh;
              if (probs.requires_grad()) {
                float acc = 0.0f;
                for (int c = 0; c < dh; ++c) acc += grow[c] * vrow[c];
                probs.grad()[poff + j] += acc;
              }
              if (v.requires_grad()) {
                const float p = pv[poff + j];
                if (p != 0.0f) {
                  auto gv = v.grad();
                  float* gvrow = gv.data() + (static_cast<int64_t>(b) * seq + j) * dim + h * dh;
                  for (int c = 0; c < dh; ++c) gvrow[c] += p * grow[c];
                }
              }
            }
          }
    });
  }
  return out;
}

}  // namespace pcp
