#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pcp/objectives.hpp"
#include "testutil.hpp"

using namespace pcp;

namespace {

Vocabulary wide_vocab(int regular_words) {
  std::vector<Example> corpus;
  std::string text;
  for (int i = 0; i < regular_words; ++i) text += "w" + std::to_string(i) + " ";
  corpus.push_back({text, {}, {}, LabelOrigin::kNone});
  return build_vocab(corpus, 1, 4);
}

EncodingBatch regular_batch(const Vocabulary& v, int rows, int cols, Rng& rng) {
  std::vector<Encoding> encs;
  for (int r = 0; r < rows; ++r) {
    Encoding e;
    e.ids.push_back(v.cls_id());
    for (int c = 0; c < cols; ++c)
      e.ids.push_back(v.first_regular_id() +
                      rng.uniform_int(v.size() - v.first_regular_id()));
    e.ids.push_back(v.sep_id());
    e.attention_mask.assign(e.ids.size(), 1.0f);
    encs.push_back(std::move(e));
  }
  return make_batch(encs, v.pad_id());
}

ModelConfig tiny_config(const Vocabulary& v, int num_labels = 2) {
  ModelConfig cfg;
  cfg.vocab_size = v.size();
  cfg.hidden_dim = 16;
  cfg.num_layers = 1;
  cfg.num_heads = 2;
  cfg.feedforward_dim = 32;
  cfg.max_sequence_length = 24;
  cfg.dropout_p = 0.0f;
  cfg.num_labels = num_labels;
  cfg.seed = 17;
  return cfg;
}

}  // namespace

TEST_CASE("masking at p=0 does nothing") {
  const Vocabulary v = wide_vocab(50);
  Rng rng(1);
  const EncodingBatch batch = regular_batch(v, 4, 10, rng);
  const MaskedBatch masked = apply_mlm_masking(batch, v, 0.0f, rng);
  CHECK(masked.batch.ids == batch.ids);
  for (const int label : masked.mlm_labels) CHECK(label == kIgnoreId);
}

TEST_CASE("masking at p=1 follows the 80/10/10 split") {
  const Vocabulary v = wide_vocab(200);
  Rng rng(2);
  int64_t masked_count = 0, random_count = 0, kept_count = 0, total = 0;
  while (total < 100000) {
    const EncodingBatch batch = regular_batch(v, 8, 24, rng);
    const MaskedBatch masked = apply_mlm_masking(batch, v, 1.0f, rng);
    for (size_t i = 0; i < batch.ids.size(); ++i) {
      if (v.is_special(batch.ids[i])) continue;
      ++total;
      CHECK(masked.mlm_labels[i] == batch.ids[i]);  // p=1 selects everything eligible
      if (masked.batch.ids[i] == v.mask_id())
        ++masked_count;
      else if (masked.batch.ids[i] == batch.ids[i])
        ++kept_count;
      else
        ++random_count;
    }
  }
  CHECK(std::fabs(masked_count / double(total) - 0.80) < 0.02);
  CHECK(std::fabs(random_count / double(total) - 0.10) < 0.02);
  CHECK(std::fabs(kept_count / double(total) - 0.10) < 0.02);
}

TEST_CASE("masking at p=0.15 selects the right fraction") {
  const Vocabulary v = wide_vocab(200);
  Rng rng(3);
  int64_t selected = 0, total = 0;
  while (total < 100000) {
    const EncodingBatch batch = regular_batch(v, 8, 24, rng);
    const MaskedBatch masked = apply_mlm_masking(batch, v, 0.15f, rng);
    for (size_t i = 0; i < batch.ids.size(); ++i) {
      if (v.is_special(batch.ids[i])) continue;
      ++total;
      selected += masked.mlm_labels[i] != kIgnoreId;
    }
  }
  CHECK(std::fabs(selected / double(total) - 0.15) < 0.01);
}

TEST_CASE("masking never touches special, soft, or padding positions") {
  const Vocabulary v = wide_vocab(30);
  Rng rng(4);
  int64_t draws = 0;
  while (draws < 1000000) {
    std::vector<Encoding> encs;
    for (int r = 0; r < 8; ++r) {
      Encoding e;
      e.ids = {v.cls_id(), v.soft_id(0), v.first_regular_id(), v.unk_id(),
               v.soft_id(3), v.first_regular_id() + 1, v.sep_id()};
      e.attention_mask.assign(e.ids.size(), 1.0f);
      if (r % 2 == 0) {  // add explicit padding
        e.ids.push_back(v.pad_id());
        e.attention_mask.push_back(0.0f);
      }
      encs.push_back(std::move(e));
    }
    const EncodingBatch batch = make_batch(encs, v.pad_id());
    const MaskedBatch masked = apply_mlm_masking(batch, v, 1.0f, rng);
    draws += static_cast<int64_t>(batch.ids.size());
    for (size_t i = 0; i < batch.ids.size(); ++i) {
      const int orig = batch.ids[i];
      const bool eligible = batch.attention_mask[i] > 0 && !v.is_special(orig) && !v.is_soft(orig);
      if (!eligible) {
        REQUIRE(masked.mlm_labels[i] == kIgnoreId);
        REQUIRE(masked.batch.ids[i] == orig);
      }
    }
  }
}

TEST_CASE("random replacement draws only regular tokens") {
  const Vocabulary v = wide_vocab(100);
  Rng rng(5);
  const EncodingBatch batch = regular_batch(v, 16, 20, rng);
  for (int round = 0; round < 50; ++round) {
    const MaskedBatch masked = apply_mlm_masking(batch, v, 1.0f, rng);
    for (const int id : masked.batch.ids)
      if (!v.is_special(id)) CHECK(id >= v.first_regular_id());
  }
}

TEST_CASE("untrained mlm loss is near ln(vocab)") {
  const Vocabulary v = wide_vocab(95);  // 95 + specials + soft = ~104
  REQUIRE(v.size() >= 100);
  Rng rng(6);
  const ModelParameters p = init_model(tiny_config(v));
  const EncodingBatch batch = regular_batch(v, 8, 16, rng);
  const MaskedBatch masked = apply_mlm_masking(batch, v, 0.15f, rng);
  const float loss = mlm_loss(p, masked).item();
  CHECK(std::fabs(loss - std::log(static_cast<double>(v.size()))) < 0.5);
}

TEST_CASE("mlm loss with zero selected positions is zero") {
  const Vocabulary v = wide_vocab(50);
  Rng rng(7);
  const ModelParameters p = init_model(tiny_config(v));
  const EncodingBatch batch = regular_batch(v, 2, 6, rng);
  MaskedBatch masked;
  masked.batch = batch;
  masked.mlm_labels.assign(batch.ids.size(), kIgnoreId);
  CHECK(mlm_loss(p, masked).item() == 0.0f);
}

TEST_CASE("mlm loss decreases over a short training run") {
  const Vocabulary v = wide_vocab(50);
  Rng rng(8);
  ModelParameters p = init_model(tiny_config(v));
  const EncodingBatch batch = regular_batch(v, 16, 10, rng);

  AdamWConfig acfg;
  acfg.peak_lr = 3e-3f;
  acfg.warmup_proportion = 0.06f;
  acfg.total_steps = 200;
  auto params = p.named(ParamGroup::kEncoderMlm);
  AdamW opt(params, acfg);
  Rng mask_rng(9);
  float first = -1.0f, last = -1.0f;
  for (int step = 0; step < 200; ++step) {
    const MaskedBatch masked = apply_mlm_masking(batch, v, 0.15f, mask_rng);
    Tape tape;
    const Tensor loss = mlm_loss(p, masked, true, nullptr);
    backward(loss);
    if (first < 0) first = loss.item();
    last = loss.item();
    for (auto& np : params) np.tensor.grad();
    opt.step();
  }
  CHECK(last < first);
}

TEST_CASE("prompt class logits read the verbalizer columns at the mask") {
  const Vocabulary v = wide_vocab(40);
  Rng rng(10);
  const ModelParameters p = init_model(tiny_config(v));

  Encoding e;
  e.ids = {v.cls_id(), v.first_regular_id(), v.mask_id(), v.sep_id()};
  e.attention_mask.assign(4, 1.0f);
  e.mask_position = 2;
  const EncodingBatch batch = make_batch({e}, v.pad_id());

  Verbalizer verb;
  verb.label_token_ids = {v.first_regular_id() + 1, v.first_regular_id() + 2};

  const Tensor class_logits = prompt_class_logits(p, batch, verb);
  CHECK(class_logits.dims() == std::vector<int>{1, 2});
  const Tensor hidden = encode_forward(p, batch);
  const Tensor full = mlm_logits(p, hidden, batch, {{0, 2}});
  CHECK(class_logits.values()[0] == full.values()[verb.label_token_ids[0]]);
  CHECK(class_logits.values()[1] == full.values()[verb.label_token_ids[1]]);

  // Missing mask position is a contract error.
  Encoding no_mask = e;
  no_mask.mask_position.reset();
  const EncodingBatch bad = make_batch({no_mask}, v.pad_id());
  CHECK_THROWS_AS(prompt_class_logits(p, bad, verb), ContractError);
}

TEST_CASE("restricted softmax equals the analytic two-class values") {
  // Crafted logits M(0)=2, M(1)=0 give softmax([2,0]) = [0.881, 0.119].
  const Tensor logits = Tensor::from_values({1, 2}, {2.0f, 0.0f});
  const Tensor probs = softmax_lastdim(logits);
  CHECK(probs.values()[0] == doctest::Approx(0.8808).epsilon(1e-3));
  CHECK(probs.values()[1] == doctest::Approx(0.1192).epsilon(1e-3));
}

TEST_CASE("restricted argmax equals full-vocab argmax over label words") {
  Rng rng(11);
  const int vocab_size = 120;
  const std::vector<int> label_ids = {17, 52, 99};
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<float> logits(vocab_size);
    for (auto& x : logits) x = rng.normal(0.0f, 3.0f);

    // Restricted path: argmax over the label-word logits.
    int restricted = 0;
    for (int l = 1; l < 3; ++l)
      if (logits[static_cast<size_t>(label_ids[l])] >
          logits[static_cast<size_t>(label_ids[restricted])])
        restricted = l;

    // Full path: softmax over the whole vocabulary, then argmax of the
    // label-word probabilities.
    double denom = 0.0;
    for (const float x : logits) denom += std::exp(static_cast<double>(x));
    int full = 0;
    for (int l = 1; l < 3; ++l)
      if (std::exp(logits[static_cast<size_t>(label_ids[l])]) / denom >
          std::exp(logits[static_cast<size_t>(label_ids[full])]) / denom)
        full = l;
    REQUIRE(restricted == full);
  }
}

TEST_CASE("prompt loss analytic cases and gradient") {
  const Vocabulary v = wide_vocab(40);
  Rng rng(12);
  const ModelParameters p = init_model(tiny_config(v));

  // Uniform logits over 3 classes: loss = ln 3.
  const Tensor uniform = Tensor::zeros({4, 3});
  CHECK(cross_entropy(uniform, std::vector<int>{0, 1, 2, 0}).item() ==
        doctest::Approx(std::log(3.0)).epsilon(1e-6));

  // Crafted logits favouring gold by +10: loss < 1e-4.
  const Tensor confident = Tensor::from_values({1, 2}, {10.0f, 0.0f});
  CHECK(cross_entropy(confident, std::vector<int>{0}).item() < 1e-4f);

  Encoding e;
  e.ids = {v.cls_id(), v.first_regular_id() + 3, v.mask_id(), v.sep_id()};
  e.attention_mask.assign(4, 1.0f);
  e.mask_position = 2;
  const EncodingBatch batch = make_batch({e}, v.pad_id());
  Verbalizer verb;
  verb.label_token_ids = {v.first_regular_id(), v.first_regular_id() + 1};
  const std::vector<int> labels = {1};

  auto loss = [&]() { return prompt_ft_loss(p, batch, verb, labels); };
  CHECK(testutil::check_gradients(loss, {p.tok_emb, p.mlm_transform, p.layers[0].wq}, rng) <
        1e-3);

  CHECK_THROWS_AS(prompt_ft_loss(p, batch, verb, std::vector<int>{-1}), ContractError);
}

TEST_CASE("cls loss analytic cases and gradient") {
  const Vocabulary v = wide_vocab(40);
  Rng rng(13);
  ModelParameters p = init_model(tiny_config(v));
  for (auto& x : p.cls_w1.values()) x = rng.normal(0.0f, 0.3f);
  for (auto& x : p.cls_w2.values()) x = rng.normal(0.0f, 0.3f);

  const EncodingBatch batch = regular_batch(v, 3, 5, rng);
  const std::vector<int> labels = {0, 1, 0};
  auto loss = [&]() { return cls_ft_loss(p, batch, labels); };
  CHECK(testutil::check_gradients(loss, {p.cls_w1, p.cls_w2, p.layers[0].ff_w1}, rng) < 1e-3);

  CHECK_THROWS_AS(cls_ft_loss(p, batch, std::vector<int>{0, 1}), ContractError);
}
