#pragma once

#include <vector>

#include "pcp/model.hpp"
#include "pcp/rng.hpp"
#include "pcp/templates.hpp"
#include "pcp/vocab.hpp"

namespace pcp {

// Sentinel for positions the MLM loss must not predict.
constexpr int kIgnoreId = -1;

// Corrupted batch for masked language modelling. mlm_labels holds the
// original token id exactly at selected positions and kIgnoreId elsewhere;
// special, soft and padding positions are never selected.
struct MaskedBatch {
  EncodingBatch batch;          // ids are the corrupted ids
  std::vector<int> mlm_labels;  // batch.batch * batch.seq entries
};

// Dynamic masking: each eligible token is independently selected with
// probability p; of the selected, 80% become [MASK], 10% a uniform random
// regular token, 10% stay unchanged.
MaskedBatch apply_mlm_masking(const EncodingBatch& batch, const Vocabulary& vocab, float p,
                              Rng& rng);

// Mean cross-entropy of MLM predictions at the selected positions; scalar 0
// when nothing was selected.
Tensor mlm_loss(const ModelParameters& params, const MaskedBatch& masked, bool training = false,
                Rng* dropout_rng = nullptr);

// Class logits restricted to the verbalizer's label words, one row per batch
// row, read at each row's mask position. The class distribution is the
// softmax over these restricted logits.
Tensor prompt_class_logits(const ModelParameters& params, const EncodingBatch& batch,
                           const Verbalizer& verbalizer, bool training = false,
                           Rng* dropout_rng = nullptr);

// Mean cross-entropy of prompt_class_logits against gold labels.
Tensor prompt_ft_loss(const ModelParameters& params, const EncodingBatch& batch,
                      const Verbalizer& verbalizer, const std::vector<int>& labels,
                      bool training = false, Rng* dropout_rng = nullptr);

// Mean cross-entropy of the CLS head against gold labels.
Tensor cls_ft_loss(const ModelParameters& params, const EncodingBatch& batch,
                   const std::vector<int>& labels, bool training = false,
                   Rng* dropout_rng = nullptr);

}  // namespace pcp
