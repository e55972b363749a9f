#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pcp/optim.hpp"
#include "pcp/rng.hpp"
#include "pcp/tensor.hpp"
#include "pcp/vocab.hpp"

namespace pcp {

struct ModelConfig {
  int vocab_size = 0;
  int hidden_dim = 64;
  int num_layers = 4;
  int num_heads = 4;
  int feedforward_dim = 256;
  int max_sequence_length = 64;
  float dropout_p = 0.1f;
  int num_labels = 2;
  uint64_t seed = 42;
};

void validate_config(const ModelConfig& config);

// Token-id sequence with its attention mask; padding is always a suffix.
struct Encoding {
  std::vector<int> ids;
  std::vector<float> attention_mask;
  std::optional<int> mask_position;
};

// A padded batch of encodings, row-major [batch, seq].
struct EncodingBatch {
  int batch = 0;
  int seq = 0;
  std::vector<int> ids;
  std::vector<float> attention_mask;
  std::vector<std::pair<int, int>> mask_positions;  // (row, col), rows with a mask slot
};

EncodingBatch make_batch(const std::vector<Encoding>& encodings, int pad_id);

struct LayerParams {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_gain, ln2_bias;
  Tensor ff_w1, ff_b1, ff_w2, ff_b2;
};

enum class ParamGroup {
  kAll,
  kEncoderMlm,  // everything except the CLS head
  kEncoderCls,  // everything except the MLM head extras
};

// Transformer encoder weights. The MLM output projection is the token
// embedding table itself (tied); there is no separate projection matrix.
struct ModelParameters {
  ModelConfig config;
  Tensor tok_emb;  // [vocab, d], also the MLM output projection
  Tensor pos_emb;  // [max_seq, d]
  std::vector<LayerParams> layers;
  Tensor final_ln_gain, final_ln_bias;
  Tensor mlm_transform, mlm_transform_bias;  // [d, d], [d]
  Tensor mlm_ln_gain, mlm_ln_bias;
  Tensor mlm_output_bias;  // [vocab]
  Tensor cls_w1, cls_b1;   // [d, d], [d]
  Tensor cls_w2, cls_b2;   // [d, num_labels], [num_labels]

  std::vector<NamedParam> named(ParamGroup group = ParamGroup::kAll) const;
  ModelParameters clone() const;
};

// Weights ~ Normal(0, 0.02), biases and layer-norm biases 0, gains 1;
// deterministic per config.seed.
ModelParameters init_model(const ModelConfig& config);

// Runs the pre-layer-norm encoder stack. Returns hidden states as a
// [batch*seq, d] tensor; positions with attention_mask 0 are never attended
// to. Training mode applies dropout driven by `dropout_rng`.
Tensor encode_forward(const ModelParameters& params, const EncodingBatch& batch,
                      bool training = false, Rng* dropout_rng = nullptr);

// MLM logits at the requested (row, col) positions: transform -> gelu ->
// layer norm -> tied projection + bias. Result is [positions, vocab].
Tensor mlm_logits(const ModelParameters& params, const Tensor& hidden,
                  const EncodingBatch& batch,
                  const std::vector<std::pair<int, int>>& positions);

// Two-layer perceptron (tanh inner activation) on the [CLS] hidden state of
// every row; result is [batch, num_labels].
Tensor cls_logits(const ModelParameters& params, const Tensor& hidden,
                  const EncodingBatch& batch);

}  // namespace pcp
