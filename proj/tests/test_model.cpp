#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "pcp/model.hpp"
#include "pcp/vocab.hpp"
#include "testutil.hpp"

using namespace pcp;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.vocab_size = 30;
  cfg.hidden_dim = 16;
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.feedforward_dim = 32;
  cfg.max_sequence_length = 12;
  cfg.dropout_p = 0.0f;
  cfg.num_labels = 3;
  cfg.seed = 11;
  return cfg;
}

EncodingBatch batch_of(const std::vector<std::vector<int>>& rows, int pad_id = 0) {
  std::vector<Encoding> encs;
  for (const auto& ids : rows) {
    Encoding e;
    e.ids = ids;
    e.attention_mask.assign(ids.size(), 1.0f);
    encs.push_back(std::move(e));
  }
  return make_batch(encs, pad_id);
}

bool bitwise_equal(const ModelParameters& a, const ModelParameters& b) {
  const auto na = a.named(), nb = b.named();
  if (na.size() != nb.size()) return false;
  for (size_t i = 0; i < na.size(); ++i) {
    const auto va = na[i].tensor.values(), vb = nb[i].tensor.values();
    if (!std::equal(va.begin(), va.end(), vb.begin(), vb.end())) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig cfg = tiny_config();
  cfg.hidden_dim = 15;  // not divisible by heads
  CHECK_THROWS_AS(init_model(cfg), ConfigError);
  cfg = tiny_config();
  cfg.vocab_size = 0;
  CHECK_THROWS_AS(init_model(cfg), ConfigError);
}

TEST_CASE("same seed gives bitwise-identical inits, different seeds differ") {
  const ModelParameters a = init_model(tiny_config());
  const ModelParameters b = init_model(tiny_config());
  CHECK(bitwise_equal(a, b));

  ModelConfig other = tiny_config();
  other.seed = 12;
  CHECK(!bitwise_equal(a, init_model(other)));
}

TEST_CASE("initializer statistics over 1e5 embedding entries") {
  ModelConfig cfg = tiny_config();
  cfg.vocab_size = 7000;  // 7000 x 16 > 1e5 entries
  const ModelParameters p = init_model(cfg);
  double mean = 0.0;
  const auto vals = p.tok_emb.values();
  for (const float v : vals) mean += v;
  mean /= static_cast<double>(vals.size());
  double var = 0.0;
  for (const float v : vals) var += (v - mean) * (v - mean);
  var /= static_cast<double>(vals.size());
  CHECK(std::fabs(mean) < 0.005);
  CHECK(std::fabs(std::sqrt(var) - 0.02) < 0.002);
}

TEST_CASE("gains start at one, biases at zero") {
  const ModelParameters p = init_model(tiny_config());
  for (const float v : p.layers[0].ln1_gain.values()) CHECK(v == 1.0f);
  for (const float v : p.layers[0].bq.values()) CHECK(v == 0.0f);
  for (const float v : p.mlm_output_bias.values()) CHECK(v == 0.0f);
}

TEST_CASE("forward output shape is batch x seq x d") {
  const ModelParameters p = init_model(tiny_config());
  const EncodingBatch batch = batch_of({{2, 7, 9, 3}, {2, 5, 3}});
  const Tensor hidden = encode_forward(p, batch);
  CHECK(hidden.dims() == std::vector<int>{2 * 4, 16});
}

TEST_CASE("forward rejects oversize sequences and bad ids") {
  const ModelParameters p = init_model(tiny_config());
  std::vector<int> too_long(13, 6);
  CHECK_THROWS_AS(encode_forward(p, batch_of({too_long})), ShapeError);
  CHECK_THROWS_AS(encode_forward(p, batch_of({{2, 99, 3}})), IndexError);
}

TEST_CASE("appending padding leaves non-pad hidden states unchanged") {
  const ModelParameters p = init_model(tiny_config());
  const EncodingBatch plain = batch_of({{2, 7, 9, 11, 3}});

  Encoding padded;
  padded.ids = {2, 7, 9, 11, 3, 0, 0, 0};
  padded.attention_mask = {1, 1, 1, 1, 1, 0, 0, 0};
  const EncodingBatch wide = make_batch({padded}, 0);

  const Tensor h1 = encode_forward(p, plain);
  const Tensor h2 = encode_forward(p, wide);
  for (int pos = 0; pos < 5; ++pos)
    for (int c = 0; c < 16; ++c)
      CHECK(std::fabs(h1.values()[pos * 16 + c] - h2.values()[pos * 16 + c]) < 1e-5f);
}

TEST_CASE("permuting the batch permutes the outputs identically") {
  const ModelParameters p = init_model(tiny_config());
  const std::vector<std::vector<int>> rows = {{2, 7, 9, 3}, {2, 5, 6, 3}, {2, 8, 8, 3}};
  const Tensor fwd = encode_forward(p, batch_of(rows));
  const Tensor rev = encode_forward(p, batch_of({rows[2], rows[0], rows[1]}));
  const int stride = 4 * 16;
  for (int c = 0; c < stride; ++c) {
    CHECK(rev.values()[0 * stride + c] == fwd.values()[2 * stride + c]);
    CHECK(rev.values()[1 * stride + c] == fwd.values()[0 * stride + c]);
    CHECK(rev.values()[2 * stride + c] == fwd.values()[1 * stride + c]);
  }
}

TEST_CASE("eval-mode forward is a pure function") {
  const ModelParameters p = init_model(tiny_config());
  const EncodingBatch batch = batch_of({{2, 7, 9, 3}, {2, 5, 3}});
  const Tensor h1 = encode_forward(p, batch);
  const Tensor h2 = encode_forward(p, batch);
  const auto v1 = h1.values(), v2 = h2.values();
  CHECK(std::equal(v1.begin(), v1.end(), v2.begin(), v2.end()));
}

TEST_CASE("mlm logits shapes and sensitivity") {
  const ModelParameters p = init_model(tiny_config());
  const EncodingBatch batch = batch_of({{2, 7, 4, 9, 3}, {2, 8, 4, 9, 3}});
  const Tensor hidden = encode_forward(p, batch);

  const Tensor empty = mlm_logits(p, hidden, batch, {});
  CHECK(empty.dims() == std::vector<int>{0, 30});

  // Same mask offset, different context: logits must differ.
  const Tensor logits = mlm_logits(p, hidden, batch, {{0, 2}, {1, 2}});
  CHECK(logits.dims() == std::vector<int>{2, 30});
  bool any_diff = false;
  for (int j = 0; j < 30; ++j) any_diff |= logits.values()[j] != logits.values()[30 + j];
  CHECK(any_diff);

  CHECK_THROWS_AS(mlm_logits(p, hidden, batch, {{0, 9}}), IndexError);
}

TEST_CASE("mlm cross-entropy gradient wrt embeddings matches finite differences") {
  Rng rng(3);
  ModelConfig cfg = tiny_config();
  cfg.num_layers = 1;
  const ModelParameters p = init_model(cfg);
  const EncodingBatch batch = batch_of({{2, 7, 4, 9, 3}});
  const std::vector<std::pair<int, int>> positions = {{0, 2}};
  const std::vector<int> targets = {7};

  auto loss = [&]() {
    const Tensor hidden = encode_forward(p, batch);
    return cross_entropy(mlm_logits(p, hidden, batch, positions), targets);
  };
  CHECK(testutil::check_gradients(loss, {p.tok_emb}, rng) < 1e-3);
}

TEST_CASE("cls head shape, zero-hidden bias case, and gradients") {
  Rng rng(5);
  const ModelParameters p = init_model(tiny_config());
  const EncodingBatch batch = batch_of({{2, 7, 3}, {2, 9, 3}});
  const Tensor hidden = encode_forward(p, batch);
  const Tensor logits = cls_logits(p, hidden, batch);
  CHECK(logits.dims() == std::vector<int>{2, 3});

  // Zero hidden state: the head output equals its output bias.
  const Tensor zero_hidden = Tensor::zeros({2 * 3, 16});
  const Tensor bias_logits = cls_logits(p, zero_hidden, batch);
  for (int r = 0; r < 2; ++r)
    for (int j = 0; j < 3; ++j)
      CHECK(bias_logits.values()[r * 3 + j] == doctest::Approx(p.cls_b2.values()[j]));

  // Move the head off the tiny-variance init point so gradient magnitudes
  // dominate the float32 finite-difference noise.
  ModelParameters q = p.clone();
  for (auto& v : q.cls_w1.values()) v = rng.normal(0.0f, 0.3f);
  for (auto& v : q.cls_w2.values()) v = rng.normal(0.0f, 0.3f);
  const std::vector<int> labels = {1, 0};
  auto loss = [&]() {
    const Tensor h = encode_forward(q, batch);
    return cross_entropy(cls_logits(q, h, batch), labels);
  };
  CHECK(testutil::check_gradients(loss, {q.cls_w1, q.cls_b1, q.cls_w2, q.cls_b2}, rng) < 1e-3);
}

TEST_CASE("MLM projection is the embedding table itself") {
  ModelParameters p = init_model(tiny_config());
  const ModelParameters copy = p.clone();
  CHECK(!copy.tok_emb.same_storage(p.tok_emb));  // clone detaches

  // Perturbing one embedding row changes the corresponding MLM logit column.
  const EncodingBatch batch = batch_of({{2, 7, 4, 3}});
  const Tensor h1 = encode_forward(p, batch);
  const float before = mlm_logits(p, h1, batch, {{0, 2}}).values()[13];
  p.tok_emb.values()[13 * 16 + 0] += 0.5f;
  const Tensor h2 = encode_forward(p, batch);
  const float after = mlm_logits(p, h2, batch, {{0, 2}}).values()[13];
  CHECK(before != after);
}

TEST_CASE("parameter names are unique and stable") {
  const ModelParameters p = init_model(tiny_config());
  const auto named = p.named();
  std::set<std::string> names;
  for (const auto& [name, tensor] : named) CHECK(names.insert(name).second);
  CHECK(named.front().name == "tok_emb");
  const auto mlm_group = p.named(ParamGroup::kEncoderMlm);
  const auto cls_group = p.named(ParamGroup::kEncoderCls);
  CHECK(mlm_group.size() == named.size() - 4);
  CHECK(cls_group.size() == named.size() - 5);
}
