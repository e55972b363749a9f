#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pcp/error.hpp"
#include "pcp/rng.hpp"

namespace pcp {

// Dense rank-N float32 tensor with optional gradient. Value-semantic handle
// over shared storage; copying a Tensor aliases the same values/grad buffers.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> dims, bool requires_grad = false);
  static Tensor full(std::vector<int> dims, float value, bool requires_grad = false);
  static Tensor from_values(std::vector<int> dims, std::vector<float> values,
                            bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(d_); }
  const std::vector<int>& dims() const { return d_->dims; }
  int64_t size() const { return static_cast<int64_t>(d_->values.size()); }
  int dim(int i) const { return d_->dims.at(static_cast<size_t>(i)); }
  int last_dim() const { return d_->dims.back(); }
  int64_t rows() const { return size() / last_dim(); }  // size of all leading dims

  std::span<float> values() { return d_->values; }
  std::span<const float> values() const { return d_->values; }
  float item() const;

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool flag) { d_->requires_grad = flag; }

  bool has_grad() const { return !d_->grad.empty(); }
  std::span<float> grad();  // allocates a zero buffer on first use
  std::span<const float> grad() const;
  void zero_grad() { d_->grad.clear(); }

  Tensor detached_copy() const;
  bool same_storage(const Tensor& other) const { return d_ == other.d_; }

  static std::string shape_str(const std::vector<int>& dims);
  std::string shape_str() const { return shape_str(d_->dims); }

 private:
  struct Data {
    std::vector<int> dims;
    std::vector<float> values;
    std::vector<float> grad;  // empty until touched
    bool requires_grad = false;
  };
  std::shared_ptr<Data> d_;
};

// Reverse-mode tape. Constructing one installs it as the active tape for the
// current thread (restored on destruction); differentiable ops append one
// node each, and backward() replays them in exact reverse creation order.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(Tensor output, std::function<void()> back);
  size_t node_count() const { return nodes_.size(); }

 private:
  friend void backward(const Tensor& loss);

  struct Node {
    Tensor output;
    std::function<void()> back;
  };
  std::vector<Node> nodes_;
  Tape* prev_;
};

// Populates grads of every requires_grad tensor reachable from `loss`,
// accumulating additively across uses. `loss` must be scalar and produced
// under the currently active tape.
void backward(const Tensor& loss);

// True when an op over these inputs should be recorded.
bool grad_enabled(std::initializer_list<const Tensor*> inputs);

// ---- operation set -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k] x [k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k] x [n,k]^T -> [m,n]

Tensor add(const Tensor& a, const Tensor& b);        // same shape
Tensor add_bias(const Tensor& x, const Tensor& b);   // b broadcast over rows
Tensor mul(const Tensor& a, const Tensor& b);        // elementwise
Tensor scale(const Tensor& x, float c);
Tensor gelu(const Tensor& x);  // tanh approximation
Tensor relu(const Tensor& x);
Tensor tanh_act(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  float eps = 1e-5f);
Tensor softmax_lastdim(const Tensor& x);
Tensor embedding_gather(const Tensor& table, std::span<const int> ids);
Tensor dropout(const Tensor& x, float p, Rng& rng, bool training);
Tensor row_select(const Tensor& x, std::span<const int> rows);
Tensor col_select(const Tensor& x, std::span<const int> cols);
Tensor sum(const Tensor& x);

// Mean negative log-softmax over rows whose target != ignore_id. Returns a
// scalar zero (no tape node) when every row is ignored.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     int ignore_id = -1);

// Multi-head attention pieces over row-major [batch*seq, dim] activations.
Tensor attention_scores(const Tensor& q, const Tensor& k, int batch, int seq, int heads);
Tensor add_key_mask(const Tensor& scores, std::span<const float> attention_mask,
                    int batch, int seq, int heads);
Tensor attention_mix(const Tensor& probs, const Tensor& v, int batch, int seq, int heads);

}  // namespace pcp
