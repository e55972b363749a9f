#include "pcp/objectives.hpp"

namespace pcp {

MaskedBatch apply_mlm_masking(const EncodingBatch& batch, const Vocabulary& vocab, float p,
                              Rng& rng) {
  if (p < 0.0f || p > 1.0f) throw ContractError("apply_mlm_masking: p must be in [0, 1]");
  MaskedBatch out;
  out.batch = batch;
  out.mlm_labels.assign(batch.ids.size(), kIgnoreId);
  const int regular = vocab.size() - vocab.first_regular_id();
  for (size_t i = 0; i < batch.ids.size(); ++i) {
    if (batch.attention_mask[i] == 0.0f) continue;
    const int id = batch.ids[i];
    if (vocab.is_special(id) || vocab.is_soft(id)) continue;
    if (rng.uniform() >= p) continue;
    out.mlm_labels[i] = id;
    const double r = rng.uniform();
    if (r < 0.8) {
      out.batch.ids[i] = vocab.mask_id();
    } else if (r < 0.9 && regular > 0) {
      out.batch.ids[i] = vocab.first_regular_id() + rng.uniform_int(regular);
    }  // else keep the original token
  }
  return out;
}

Tensor mlm_loss(const ModelParameters& params, const MaskedBatch& masked, bool training,
                Rng* dropout_rng) {
  std::vector<std::pair<int, int>> positions;
  std::vector<int> targets;
  for (int r = 0; r < masked.batch.batch; ++r)
    for (int s = 0; s < masked.batch.seq; ++s) {
      const int label = masked.mlm_labels[static_cast<size_t>(r) * masked.batch.seq + s];
      if (label == kIgnoreId) continue;
      positions.emplace_back(r, s);
      targets.push_back(label);
    }
  if (positions.empty()) return Tensor::scalar(0.0f);
  Tensor hidden = encode_forward(params, masked.batch, training, dropout_rng);
  Tensor logits = mlm_logits(params, hidden, masked.batch, positions);
  return cross_entropy(logits, targets, kIgnoreId);
}

Tensor prompt_class_logits(const ModelParameters& params, const EncodingBatch& batch,
                           const Verbalizer& verbalizer, bool training, Rng* dropout_rng) {
  if (static_cast<int>(batch.mask_positions.size()) != batch.batch)
    throw ContractError("prompt_class_logits: every row needs a mask position (" +
                        std::to_string(batch.mask_positions.size()) + " of " +
                        std::to_string(batch.batch) + " present)");
  Tensor hidden = encode_forward(params, batch, training, dropout_rng);
  Tensor vocab_logits = mlm_logits(params, hidden, batch, batch.mask_positions);
  return col_select(vocab_logits, verbalizer.label_token_ids);
}

namespace {

void check_labels(const std::vector<int>& labels, int rows, int num_labels, const char* op) {
  if (static_cast<int>(labels.size()) != rows)
    throw ContractError(std::string(op) + ": " + std::to_string(labels.size()) +
                        " labels for " + std::to_string(rows) + " rows");
  for (const int label : labels)
    if (label < 0 || label >= num_labels)
      throw ContractError(std::string(op) + ": example without a valid label (got " +
                          std::to_string(label) + ")");
}

}  // namespace

Tensor prompt_ft_loss(const ModelParameters& params, const EncodingBatch& batch,
                      const Verbalizer& verbalizer, const std::vector<int>& labels,
                      bool training, Rng* dropout_rng) {
  check_labels(labels, batch.batch, verbalizer.num_labels(), "prompt_ft_loss");
  Tensor logits = prompt_class_logits(params, batch, verbalizer, training, dropout_rng);
  return cross_entropy(logits, labels, kIgnoreId);
}

Tensor cls_ft_loss(const ModelParameters& params, const EncodingBatch& batch,
                   const std::vector<int>& labels, bool training, Rng* dropout_rng) {
  check_labels(labels, batch.batch, params.config.num_labels, "cls_ft_loss");
  Tensor hidden = encode_forward(params, batch, training, dropout_rng);
  Tensor logits = cls_logits(params, hidden, batch);
  return cross_entropy(logits, labels, kIgnoreId);
}

}  // namespace pcp
