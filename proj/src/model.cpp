#include "pcp/model.hpp"

#include <algorithm>

namespace pcp {

void validate_config(const ModelConfig& config) {
  if (config.vocab_size < 1) throw ConfigError("model: vocab_size must be positive");
  if (config.hidden_dim < 1 || config.num_layers < 1 || config.num_heads < 1 ||
      config.feedforward_dim < 1 || config.max_sequence_length < 1 || config.num_labels < 1)
    throw ConfigError("model: all dimensions must be positive");
  if (config.hidden_dim % config.num_heads != 0)
    throw ConfigError("model: hidden_dim " + std::to_string(config.hidden_dim) +
                      " not divisible by num_heads " + std::to_string(config.num_heads));
  if (config.dropout_p < 0.0f || config.dropout_p >= 1.0f)
    throw ConfigError("model: dropout_p must be in [0, 1)");
}

EncodingBatch make_batch(const std::vector<Encoding>& encodings, int pad_id) {
  if (encodings.empty()) throw ContractError("make_batch: empty batch");
  EncodingBatch b;
  b.batch = static_cast<int>(encodings.size());
  b.seq = 0;
  for (const auto& e : encodings) b.seq = std::max(b.seq, static_cast<int>(e.ids.size()));
  b.ids.assign(static_cast<size_t>(b.batch) * b.seq, pad_id);
  b.attention_mask.assign(static_cast<size_t>(b.batch) * b.seq, 0.0f);
  for (int r = 0; r < b.batch; ++r) {
    const auto& e = encodings[static_cast<size_t>(r)];
    for (size_t j = 0; j < e.ids.size(); ++j) {
      b.ids[static_cast<size_t>(r) * b.seq + j] = e.ids[j];
      b.attention_mask[static_cast<size_t>(r) * b.seq + j] = e.attention_mask[j];
    }
    if (e.mask_position) b.mask_positions.emplace_back(r, *e.mask_position);
  }
  return b;
}

namespace {

Tensor normal_tensor(std::vector<int> dims, Rng& rng, float stddev) {
  Tensor t = Tensor::zeros(std::move(dims), /*requires_grad=*/true);
  for (auto& v : t.values()) v = rng.normal(0.0f, stddev);
  return t;
}

Tensor zeros_param(std::vector<int> dims) { return Tensor::zeros(std::move(dims), true); }

Tensor ones_param(std::vector<int> dims) { return Tensor::full(std::move(dims), 1.0f, true); }

}  // namespace

ModelParameters init_model(const ModelConfig& config) {
  validate_config(config);
  const int d = config.hidden_dim, ff = config.feedforward_dim;
  Rng rng(config.seed);
  ModelParameters p;
  p.config = config;
  p.tok_emb = normal_tensor({config.vocab_size, d}, rng, 0.02f);
  p.pos_emb = normal_tensor({config.max_sequence_length, d}, rng, 0.02f);
  p.layers.resize(static_cast<size_t>(config.num_layers));
  for (auto& l : p.layers) {
    l.ln1_gain = ones_param({d});
    l.ln1_bias = zeros_param({d});
    l.wq = normal_tensor({d, d}, rng, 0.02f);
    l.bq = zeros_param({d});
    l.wk = normal_tensor({d, d}, rng, 0.02f);
    l.bk = zeros_param({d});
    l.wv = normal_tensor({d, d}, rng, 0.02f);
    l.bv = zeros_param({d});
    l.wo = normal_tensor({d, d}, rng, 0.02f);
    l.bo = zeros_param({d});
    l.ln2_gain = ones_param({d});
    l.ln2_bias = zeros_param({d});
    l.ff_w1 = normal_tensor({d, ff}, rng, 0.02f);
    l.ff_b1 = zeros_param({ff});
    l.ff_w2 = normal_tensor({ff, d}, rng, 0.02f);
    l.ff_b2 = zeros_param({d});
  }
  p.final_ln_gain = ones_param({d});
  p.final_ln_bias = zeros_param({d});
  p.mlm_transform = normal_tensor({d, d}, rng, 0.02f);
  p.mlm_transform_bias = zeros_param({d});
  p.mlm_ln_gain = ones_param({d});
  p.mlm_ln_bias = zeros_param({d});
  p.mlm_output_bias = zeros_param({config.vocab_size});
  p.cls_w1 = normal_tensor({d, d}, rng, 0.02f);
  p.cls_b1 = zeros_param({d});
  p.cls_w2 = normal_tensor({d, config.num_labels}, rng, 0.02f);
  p.cls_b2 = zeros_param({config.num_labels});
  return p;
}

std::vector<NamedParam> ModelParameters::named(ParamGroup group) const {
  std::vector<NamedParam> out;
  out.push_back({"tok_emb", tok_emb});
  out.push_back({"pos_emb", pos_emb});
  for (size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string prefix = "layer" + std::to_string(i) + ".";
    out.push_back({prefix + "ln1.gain", l.ln1_gain});
    out.push_back({prefix + "ln1.bias", l.ln1_bias});
    out.push_back({prefix + "attn.wq", l.wq});
    out.push_back({prefix + "attn.bq", l.bq});
    out.push_back({prefix + "attn.wk", l.wk});
    out.push_back({prefix + "attn.bk", l.bk});
    out.push_back({prefix + "attn.wv", l.wv});
    out.push_back({prefix + "attn.bv", l.bv});
    out.push_back({prefix + "attn.wo", l.wo});
    out.push_back({prefix + "attn.bo", l.bo});
    out.push_back({prefix + "ln2.gain", l.ln2_gain});
    out.push_back({prefix + "ln2.bias", l.ln2_bias});
    out.push_back({prefix + "ff.w1", l.ff_w1});
    out.push_back({prefix + "ff.b1", l.ff_b1});
    out.push_back({prefix + "ff.w2", l.ff_w2});
    out.push_back({prefix + "ff.b2", l.ff_b2});
  }
  out.push_back({"final_ln.gain", final_ln_gain});
  out.push_back({"final_ln.bias", final_ln_bias});
  if (group != ParamGroup::kEncoderCls) {
    out.push_back({"mlm.transform", mlm_transform});
    out.push_back({"mlm.transform_bias", mlm_transform_bias});
    out.push_back({"mlm.ln_gain", mlm_ln_gain});
    out.push_back({"mlm.ln_bias", mlm_ln_bias});
    out.push_back({"mlm.output_bias", mlm_output_bias});
  }
  if (group != ParamGroup::kEncoderMlm) {
    out.push_back({"cls.w1", cls_w1});
    out.push_back({"cls.b1", cls_b1});
    out.push_back({"cls.w2", cls_w2});
    out.push_back({"cls.b2", cls_b2});
  }
  return out;
}

ModelParameters ModelParameters::clone() const {
  ModelParameters p;
  p.config = config;
  p.tok_emb = tok_emb.detached_copy();
  p.pos_emb = pos_emb.detached_copy();
  p.layers.resize(layers.size());
  for (size_t i = 0; i < layers.size(); ++i) {
    const auto& src = layers[i];
    auto& dst = p.layers[i];
    dst.ln1_gain = src.ln1_gain.detached_copy();
    dst.ln1_bias = src.ln1_bias.detached_copy();
    dst.wq = src.wq.detached_copy();
    dst.bq = src.bq.detached_copy();
    dst.wk = src.wk.detached_copy();
    dst.bk = src.bk.detached_copy();
    dst.wv = src.wv.detached_copy();
    dst.bv = src.bv.detached_copy();
    dst.wo = src.wo.detached_copy();
    dst.bo = src.bo.detached_copy();
    dst.ln2_gain = src.ln2_gain.detached_copy();
    dst.ln2_bias = src.ln2_bias.detached_copy();
    dst.ff_w1 = src.ff_w1.detached_copy();
    dst.ff_b1 = src.ff_b1.detached_copy();
    dst.ff_w2 = src.ff_w2.detached_copy();
    dst.ff_b2 = src.ff_b2.detached_copy();
  }
  p.final_ln_gain = final_ln_gain.detached_copy();
  p.final_ln_bias = final_ln_bias.detached_copy();
  p.mlm_transform = mlm_transform.detached_copy();
  p.mlm_transform_bias = mlm_transform_bias.detached_copy();
  p.mlm_ln_gain = mlm_ln_gain.detached_copy();
  p.mlm_ln_bias = mlm_ln_bias.detached_copy();
  p.mlm_output_bias = mlm_output_bias.detached_copy();
  p.cls_w1 = cls_w1.detached_copy();
  p.cls_b1 = cls_b1.detached_copy();
  p.cls_w2 = cls_w2.detached_copy();
  p.cls_b2 = cls_b2.detached_copy();
  return p;
}

Tensor encode_forward(const ModelParameters& params, const EncodingBatch& batch,
                      bool training, Rng* dropout_rng) {
  const auto& cfg = params.config;
  if (batch.seq > cfg.max_sequence_length)
    throw ShapeError("encode_forward: sequence length " + std::to_string(batch.seq) +
                     " exceeds max " + std::to_string(cfg.max_sequence_length));
  for (const int id : batch.ids)
    if (id < 0 || id >= cfg.vocab_size)
      throw IndexError("encode_forward: token id " + std::to_string(id) + " out of range");
  if (training && cfg.dropout_p > 0.0f && dropout_rng == nullptr)
    throw ContractError("encode_forward: training with dropout requires an rng");

  Rng unused(0);
  Rng& drop = dropout_rng ? *dropout_rng : unused;
  const float p = cfg.dropout_p;

  std::vector<int> positions(static_cast<size_t>(batch.batch) * batch.seq);
  for (int r = 0; r < batch.batch; ++r)
    for (int s = 0; s < batch.seq; ++s) positions[static_cast<size_t>(r) * batch.seq + s] = s;

  Tensor x = add(embedding_gather(params.tok_emb, batch.ids),
                 embedding_gather(params.pos_emb, positions));
  x = dropout(x, p, drop, training);

  for (const auto& l : params.layers) {
    Tensor a = layer_norm(x, l.ln1_gain, l.ln1_bias);
    Tensor q = add_bias(matmul(a, l.wq), l.bq);
    Tensor k = add_bias(matmul(a, l.wk), l.bk);
    Tensor v = add_bias(matmul(a, l.wv), l.bv);
    Tensor scores = attention_scores(q, k, batch.batch, batch.seq, cfg.num_heads);
    scores = add_key_mask(scores, batch.attention_mask, batch.batch, batch.seq, cfg.num_heads);
    Tensor probs = softmax_lastdim(scores);
    probs = dropout(probs, p, drop, training);
    Tensor ctx = attention_mix(probs, v, batch.batch, batch.seq, cfg.num_heads);
    Tensor attn_out = dropout(add_bias(matmul(ctx, l.wo), l.bo), p, drop, training);
    x = add(x, attn_out);

    Tensor h = layer_norm(x, l.ln2_gain, l.ln2_bias);
    Tensor f = gelu(add_bias(matmul(h, l.ff_w1), l.ff_b1));
    f = dropout(add_bias(matmul(f, l.ff_w2), l.ff_b2), p, drop, training);
    x = add(x, f);
  }
  return layer_norm(x, params.final_ln_gain, params.final_ln_bias);
}

Tensor mlm_logits(const ModelParameters& params, const Tensor& hidden,
                  const EncodingBatch& batch,
                  const std::vector<std::pair<int, int>>& positions) {
  if (positions.empty()) return Tensor::zeros({0, params.config.vocab_size});
  std::vector<int> rows;
  rows.reserve(positions.size());
  for (const auto& [r, c] : positions) {
    if (r < 0 || r >= batch.batch || c < 0 || c >= batch.seq)
      throw IndexError("mlm_logits: position (" + std::to_string(r) + ", " + std::to_string(c) +
                       ") out of range");
    rows.push_back(r * batch.seq + c);
  }
  Tensor sel = row_select(hidden, rows);
  Tensor t = gelu(add_bias(matmul(sel, params.mlm_transform), params.mlm_transform_bias));
  t = layer_norm(t, params.mlm_ln_gain, params.mlm_ln_bias);
  return add_bias(matmul_nt(t, params.tok_emb), params.mlm_output_bias);
}

Tensor cls_logits(const ModelParameters& params, const Tensor& hidden,
                  const EncodingBatch& batch) {
  std::vector<int> rows(static_cast<size_t>(batch.batch));
  for (int r = 0; r < batch.batch; ++r) rows[static_cast<size_t>(r)] = r * batch.seq;
  Tensor c = row_select(hidden, rows);
  Tensor z = tanh_act(add_bias(matmul(c, params.cls_w1), params.cls_b1));
  return add_bias(matmul(z, params.cls_w2), params.cls_b2);
}

}  // namespace pcp
