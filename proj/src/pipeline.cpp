#include "pcp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

#include "pcp/checkpoint.hpp"

namespace pcp {

using nlohmann::json;

Method method_from_name(const std::string& name) {
  if (name == "cls") return Method::kCls;
  if (name == "prompt_hard" || name == "prompt-hard") return Method::kPromptHard;
  if (name == "prompt_soft" || name == "prompt-soft") return Method::kPromptSoft;
  throw ConfigError("unknown method '" + name + "'");
}

const char* method_name(Method method) {
  switch (method) {
    case Method::kCls: return "cls";
    case Method::kPromptHard: return "prompt_hard";
    case Method::kPromptSoft: return "prompt_soft";
  }
  return "cls";
}

namespace {

struct ModeName {
  CorpusMode mode;
  const char* name;
};

constexpr ModeName kModeNames[] = {
    {CorpusMode::kTaptPlain, "tapt"},
    {CorpusMode::kTaptTokenizerSep, "tapt_tokenizer_sep"},
    {CorpusMode::kTaptPcpSep, "tapt_pcp_sep"},
    {CorpusMode::kTaptRandomPair, "tapt_random_pair"},
    {CorpusMode::kTaptFirstSent, "tapt_first_sent"},
    {CorpusMode::kPcp, "pcp"},
    {CorpusMode::kPcpRandomLabels, "pcp_random_labels"},
    {CorpusMode::kPcpWrongLabels, "pcp_wrong_labels"},
    {CorpusMode::kPcpLabelsOnly, "pcp_labels_only"},
    {CorpusMode::kPcpTemplateOnly, "pcp_template_only"},
};

}  // namespace

CorpusMode corpus_mode_from_name(const std::string& name) {
  for (const auto& m : kModeNames)
    if (name == m.name) return m.mode;
  if (name == "tapt_plain") return CorpusMode::kTaptPlain;
  throw ConfigError("unknown corpus mode '" + name + "'");
}

const char* corpus_mode_name(CorpusMode mode) {
  for (const auto& m : kModeNames)
    if (m.mode == mode) return m.name;
  return "tapt";
}

bool is_pcp_mode(CorpusMode mode) {
  switch (mode) {
    case CorpusMode::kPcp:
    case CorpusMode::kPcpRandomLabels:
    case CorpusMode::kPcpWrongLabels:
    case CorpusMode::kPcpLabelsOnly:
    case CorpusMode::kPcpTemplateOnly:
      return true;
    default:
      return false;
  }
}

bool mode_uses_labels(CorpusMode mode) {
  switch (mode) {
    case CorpusMode::kPcp:
    case CorpusMode::kPcpRandomLabels:  // replaced, but agreement is reported
    case CorpusMode::kPcpWrongLabels:
    case CorpusMode::kPcpLabelsOnly:
      return true;
    default:
      return false;
  }
}

AdamWConfig FinetuneConfig::adamw(float peak_lr, int64_t total_steps) const {
  return {peak_lr, beta1, beta2, epsilon, weight_decay, warmup_proportion, total_steps};
}

AdamWConfig PretrainConfig::adamw(int64_t total_steps) const {
  return {lr, beta1, beta2, epsilon, weight_decay, warmup_proportion, total_steps};
}

namespace {

constexpr double kNegInfMetric = -std::numeric_limits<double>::infinity();
constexpr int kEvalChunk = 64;

int argmax_lowest_tie(std::span<const float> row) {
  int best = 0;
  for (int j = 1; j < static_cast<int>(row.size()); ++j)
    if (row[j] > row[static_cast<size_t>(best)]) best = j;
  return best;
}

std::vector<int> gold_label_ids(const std::vector<Example>& examples, const TaskSpec& task,
                                const char* op) {
  std::vector<int> out;
  out.reserve(examples.size());
  for (size_t i = 0; i < examples.size(); ++i) {
    if (!examples[i].label)
      throw ContractError(std::string(op) + ": example " + std::to_string(i) + " has no label");
    out.push_back(task.label_id(*examples[i].label));
  }
  return out;
}

Encoding render_for_method(Method method, const Example& ex, const TaskSpec& task,
                           const Vocabulary& vocab, int max_len) {
  switch (method) {
    case Method::kCls: return render_cls_input(ex, vocab, max_len);
    case Method::kPromptHard: return render(task.tmpl, ex, vocab, max_len);
    case Method::kPromptSoft: return render(task.soft_tmpl, ex, vocab, max_len);
  }
  throw ContractError("render_for_method: bad method");
}

std::vector<int> predict(const ModelParameters& params, Method method,
                         const std::vector<Example>& examples, const TaskSpec& task,
                         const Vocabulary& vocab, const Verbalizer& verbalizer) {
  std::vector<int> preds;
  preds.reserve(examples.size());
  const int max_len = params.config.max_sequence_length;
  for (size_t begin = 0; begin < examples.size(); begin += kEvalChunk) {
    const size_t end = std::min(examples.size(), begin + kEvalChunk);
    std::vector<Encoding> encs;
    encs.reserve(end - begin);
    for (size_t i = begin; i < end; ++i)
      encs.push_back(render_for_method(method, examples[i], task, vocab, max_len));
    const EncodingBatch batch = make_batch(encs, vocab.pad_id());
    Tensor logits;
    if (method == Method::kCls) {
      Tensor hidden = encode_forward(params, batch);
      logits = cls_logits(params, hidden, batch);
    } else {
      logits = prompt_class_logits(params, batch, verbalizer);
    }
    const int cols = logits.dim(1);
    for (int r = 0; r < batch.batch; ++r)
      preds.push_back(argmax_lowest_tie(logits.values().subspan(
          static_cast<size_t>(r) * cols, static_cast<size_t>(cols))));
  }
  return preds;
}

}  // namespace

EvalResult evaluate_model(const ModelParameters& params, Method method,
                          const std::vector<Example>& examples, const TaskSpec& task,
                          const Vocabulary& vocab) {
  if (examples.empty()) throw ContractError("evaluate_model: empty example list");
  const Verbalizer verbalizer = bind_verbalizer(task, vocab);
  EvalResult result;
  result.predictions = predict(params, method, examples, task, vocab, verbalizer);
  const auto golds = gold_label_ids(examples, task, "evaluate_model");
  result.metric = compute_metric(task.metric, result.predictions, golds, task.num_labels());
  return result;
}

FinetuneResult train_finetune(Method method, const ModelParameters& init,
                              const DataSplits& splits, const TaskSpec& task,
                              const Vocabulary& vocab, const FinetuneConfig& cfg) {
  if (splits.labelled.empty()) throw DataError("train_finetune: empty labelled set");
  if (cfg.batch_size < 1) throw ConfigError("train_finetune: batch_size must be >= 1");
  FinetuneResult result;
  if (cfg.steps == 0) {
    result.best = init.clone();
    return result;
  }
  if (splits.dev.empty()) throw DataError("train_finetune: empty dev set");

  Rng root(cfg.seed);
  Rng batch_rng = root.fork("ft_batches");
  Rng dropout_rng = root.fork("ft_dropout");
  Rng soft_rng = root.fork("ft_soft_init");

  ModelParameters model = init.clone();
  if (method == Method::kPromptSoft)
    result.soft_init = soft_prompt_init(task.soft_tmpl, task.tmpl, model, vocab, soft_rng);

  const Verbalizer verbalizer = bind_verbalizer(task, vocab);
  const int max_len = model.config.max_sequence_length;
  std::vector<Encoding> encodings;
  encodings.reserve(splits.labelled.size());
  for (const auto& ex : splits.labelled)
    encodings.push_back(render_for_method(method, ex, task, vocab, max_len));
  const std::vector<int> labels = gold_label_ids(splits.labelled, task, "train_finetune");

  const ParamGroup group =
      method == Method::kCls ? ParamGroup::kEncoderCls : ParamGroup::kEncoderMlm;
  auto trainable = model.named(group);
  AdamW optimizer(trainable, cfg.adamw(cfg.lr, cfg.steps));

  std::vector<int> order(splits.labelled.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  size_t cursor = order.size();  // forces a shuffle on first use

  result.best_metric = kNegInfMetric;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<Encoding> batch_encs;
    std::vector<int> batch_labels;
    for (int i = 0; i < cfg.batch_size; ++i) {
      if (cursor == order.size()) {
        batch_rng.shuffle(order);
        cursor = 0;
      }
      const int idx = order[cursor++];
      batch_encs.push_back(encodings[static_cast<size_t>(idx)]);
      batch_labels.push_back(labels[static_cast<size_t>(idx)]);
    }
    const EncodingBatch batch = make_batch(batch_encs, vocab.pad_id());
    {
      Tape tape;
      Tensor loss;
      if (method == Method::kCls)
        loss = cls_ft_loss(model, batch, batch_labels, true, &dropout_rng);
      else
        loss = prompt_ft_loss(model, batch, verbalizer, batch_labels, true, &dropout_rng);
      backward(loss);
      result.losses.push_back(loss.item());
      if (!std::isfinite(loss.item())) result.diverged = true;
    }
    // A poisoned run can zero out whole branches of the backward pass; the
    // step still runs with zero gradients there.
    for (auto& np : trainable) np.tensor.grad();
    optimizer.step();

    if ((step + 1) % cfg.eval_interval == 0) {
      const EvalResult dev = evaluate_model(model, method, splits.dev, task, vocab);
      result.trace.push_back({step + 1, dev.metric});
      if (std::isfinite(dev.metric) && dev.metric > result.best_metric) {
        result.best_metric = dev.metric;
        result.best = model.clone();
      }
    }
  }
  if (!result.best.tok_emb.defined()) result.best = model.clone();
  return result;
}

std::vector<Example> pseudo_label(const ModelParameters& trained,
                                  const std::vector<Example>& unlabelled, const TaskSpec& task,
                                  const Vocabulary& vocab, Method method) {
  if (method == Method::kCls)
    throw ContractError("pseudo_label: expects a prompt fine-tuned model");
  const Verbalizer verbalizer = bind_verbalizer(task, vocab);
  const auto preds = predict(trained, method, unlabelled, task, vocab, verbalizer);
  std::vector<Example> out = unlabelled;
  for (size_t i = 0; i < out.size(); ++i) {
    out[i].label = task.label_names[static_cast<size_t>(preds[i])];
    out[i].origin = LabelOrigin::kPseudo;
  }
  return out;
}

namespace {

std::vector<int> frame_tokens(std::vector<int> body, const Vocabulary& vocab, int max_len) {
  if (static_cast<int>(body.size()) > max_len - 2) body.resize(static_cast<size_t>(max_len - 2));
  std::vector<int> seq;
  seq.reserve(body.size() + 2);
  seq.push_back(vocab.cls_id());
  seq.insert(seq.end(), body.begin(), body.end());
  seq.push_back(vocab.sep_id());
  return seq;
}

Template without_mask(const Template& tmpl) {
  Template out;
  for (const auto& s : tmpl.segments)
    if (s.kind != TemplateSegment::kMask) out.segments.push_back(s);
  return out;
}

}  // namespace

Corpus build_corpus(const std::vector<Example>& labelled,
                    const std::vector<Example>& unlabelled, const TaskSpec& task,
                    const Vocabulary& vocab, CorpusMode mode, Rng& rng, int max_len) {
  if (mode == CorpusMode::kTaptRandomPair && !task.is_pair)
    throw ContractError("build_corpus: tapt_random_pair requires a sentence-pair task");

  std::vector<Example> all = labelled;
  all.insert(all.end(), unlabelled.begin(), unlabelled.end());
  Verbalizer verbalizer;
  if (mode_uses_labels(mode)) verbalizer = bind_verbalizer(task, vocab);
  const int num_labels = task.num_labels();
  const Template masked_out = without_mask(task.tmpl);

  Corpus corpus;
  corpus.mode = mode;
  for (size_t i = 0; i < all.size(); ++i) {
    const Example& ex = all[static_cast<size_t>(i)];
    Provenance prov;
    prov.source = static_cast<int>(i);

    int source_label = -1;
    if (mode_uses_labels(mode)) {
      if (!ex.label)
        throw DataError("build_corpus: mode " + std::string(corpus_mode_name(mode)) +
                        " requires labels but example " + std::to_string(i) + " has none");
      source_label = task.label_id(*ex.label);
    }

    std::vector<int> seq;
    switch (mode) {
      case CorpusMode::kPcp:
        prov.label_id = source_label;
        prov.origin = ex.origin == LabelOrigin::kPseudo ? LabelOrigin::kPseudo : LabelOrigin::kGold;
        seq = render_pcp(task.tmpl, ex, prov.label_id, verbalizer, vocab, max_len);
        break;
      case CorpusMode::kPcpRandomLabels:
        prov.label_id = rng.uniform_int(num_labels);
        prov.origin = LabelOrigin::kRandom;
        seq = render_pcp(task.tmpl, ex, prov.label_id, verbalizer, vocab, max_len);
        break;
      case CorpusMode::kPcpWrongLabels:
        prov.label_id = (source_label + 1) % num_labels;
        prov.origin = LabelOrigin::kWrong;
        seq = render_pcp(task.tmpl, ex, prov.label_id, verbalizer, vocab, max_len);
        break;
      case CorpusMode::kPcpLabelsOnly: {
        prov.label_id = source_label;
        prov.origin = ex.origin == LabelOrigin::kPseudo ? LabelOrigin::kPseudo : LabelOrigin::kGold;
        std::vector<int> body = vocab.encode(ex.text_a);
        if (ex.text_b) {
          const auto b = vocab.encode(*ex.text_b);
          body.insert(body.end(), b.begin(), b.end());
        }
        if (static_cast<int>(body.size()) > max_len - 3)
          body.resize(static_cast<size_t>(max_len - 3));
        body.push_back(verbalizer.label_token_ids[static_cast<size_t>(prov.label_id)]);
        seq = frame_tokens(std::move(body), vocab, max_len);
        break;
      }
      case CorpusMode::kPcpTemplateOnly:
        seq = render(masked_out, ex, vocab, max_len).ids;
        break;
      case CorpusMode::kTaptPlain: {
        std::string text = ex.text_a;
        if (ex.text_b) text += " " + *ex.text_b;
        seq = frame_tokens(vocab.encode(text), vocab, max_len);
        break;
      }
      case CorpusMode::kTaptTokenizerSep:
        seq = render_cls_input(ex, vocab, max_len).ids;
        break;
      case CorpusMode::kTaptPcpSep:
        seq = render(masked_out, ex, vocab, max_len).ids;
        break;
      case CorpusMode::kTaptRandomPair: {
        Example repaired = ex;
        const auto& other = all[static_cast<size_t>(rng.uniform_int(static_cast<int>(all.size())))];
        repaired.text_b = other.text_b ? *other.text_b : other.text_a;
        std::string text = repaired.text_a + " " + *repaired.text_b;
        seq = frame_tokens(vocab.encode(text), vocab, max_len);
        break;
      }
      case CorpusMode::kTaptFirstSent:
        seq = frame_tokens(vocab.encode(ex.text_a), vocab, max_len);
        break;
    }
    corpus.sequences.push_back(std::move(seq));
    corpus.provenance.push_back(prov);
  }
  return corpus;
}

PretrainResult continued_pretrain(const ModelParameters& init, const Corpus& corpus,
                                  const Vocabulary& vocab, const PretrainConfig& cfg) {
  if (corpus.sequences.empty()) throw DataError("continued_pretrain: empty corpus");
  if (cfg.batch_size < 1) throw ConfigError("continued_pretrain: batch_size must be >= 1");

  PretrainResult result;
  ModelParameters model = init.clone();
  const int n = static_cast<int>(corpus.sequences.size());
  const int steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  result.total_steps = cfg.epochs * steps_per_epoch;
  if (result.total_steps == 0) {
    result.params = std::move(model);
    return result;
  }

  Rng root(cfg.seed);
  Rng mask_rng = root.fork("pretrain_masking");
  Rng dropout_rng = root.fork("pretrain_dropout");
  auto trainable = model.named(ParamGroup::kEncoderMlm);
  AdamW optimizer(trainable, cfg.adamw(result.total_steps));

  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng epoch_rng = root.fork("pretrain_epoch_" + std::to_string(epoch));
    epoch_rng.shuffle(order);
    double epoch_loss = 0.0;
    int batches = 0;
    for (int begin = 0; begin < n; begin += cfg.batch_size) {
      const int end = std::min(n, begin + cfg.batch_size);
      std::vector<Encoding> encs;
      encs.reserve(static_cast<size_t>(end - begin));
      for (int i = begin; i < end; ++i) {
        Encoding e;
        e.ids = corpus.sequences[static_cast<size_t>(order[static_cast<size_t>(i)])];
        e.attention_mask.assign(e.ids.size(), 1.0f);
        encs.push_back(std::move(e));
      }
      const EncodingBatch batch = make_batch(encs, vocab.pad_id());
      const MaskedBatch masked =
          apply_mlm_masking(batch, vocab, cfg.masking_probability, mask_rng);
      {
        Tape tape;
        Tensor loss = mlm_loss(model, masked, true, &dropout_rng);
        backward(loss);
        epoch_loss += loss.item();
        ++batches;
      }
      // A batch can select zero positions; the step still runs (zero grads).
      for (auto& np : trainable) np.tensor.grad();
      optimizer.step();
    }
    result.epoch_losses.push_back(batches > 0 ? epoch_loss / batches : 0.0);
  }
  result.params = std::move(model);
  return result;
}

PcpCheckpointResult build_pcp_checkpoint(const DataSplits& splits, const TaskSpec& task,
                                         const Vocabulary& vocab,
                                         const ModelParameters& base_init,
                                         const PcpRunConfig& cfg) {
  PcpCheckpointResult result;
  json& report = result.report;
  report["task"] = task.name;
  report["mode"] = corpus_mode_name(cfg.mode);
  report["seed"] = cfg.seed;

  Rng root(cfg.seed);
  Rng corpus_rng = root.fork("corpus");

  // Subsample the unlabelled pool, mirroring the up-to-10k cap.
  std::vector<Example> pool = splits.unlabelled;
  if (cfg.max_unlabeled >= 0 && static_cast<int>(pool.size()) > cfg.max_unlabeled) {
    Rng sub_rng = root.fork("subsample");
    sub_rng.shuffle(pool);
    pool.resize(static_cast<size_t>(cfg.max_unlabeled));
  }
  report["unlabelled_used"] = pool.size();

  std::vector<Example> step2_unlabelled = pool;
  const bool needs_step1 = mode_uses_labels(cfg.mode) && !pool.empty();
  if (needs_step1) {
    FinetuneResult step1 =
        train_finetune(cfg.step1_method, base_init, splits, task, vocab, cfg.finetune);
    report["step1"] = {{"method", method_name(cfg.step1_method)},
                       {"best_dev", step1.best_metric},
                       {"evals", step1.trace.size()},
                       {"diverged", step1.diverged}};
    step2_unlabelled = pseudo_label(step1.best, pool, task, vocab, cfg.step1_method);
    json counts = json::object();
    for (int l = 0; l < task.num_labels(); ++l) {
      int c = 0;
      for (const auto& ex : step2_unlabelled)
        c += ex.label && *ex.label == task.label_names[static_cast<size_t>(l)];
      counts[task.label_names[static_cast<size_t>(l)]] = c;
    }
    report["pseudo_label_counts"] = counts;
  }

  const Corpus corpus =
      build_corpus(splits.labelled, step2_unlabelled, task, vocab, cfg.mode,
                   corpus_rng, base_init.config.max_sequence_length);
  report["corpus_size"] = corpus.sequences.size();

  // Agreement of the labels rendered into the corpus with the source labels.
  if (mode_uses_labels(cfg.mode)) {
    int agree = 0, total = 0;
    std::vector<Example> all = splits.labelled;
    all.insert(all.end(), step2_unlabelled.begin(), step2_unlabelled.end());
    for (size_t i = 0; i < corpus.provenance.size(); ++i) {
      const auto& prov = corpus.provenance[i];
      if (prov.label_id < 0 || !all[static_cast<size_t>(prov.source)].label) continue;
      ++total;
      agree += prov.label_id ==
               task.label_id(*all[static_cast<size_t>(prov.source)].label);
    }
    report["label_agreement"] = total > 0 ? static_cast<double>(agree) / total : 1.0;
  }

  // Step 2 always restarts from the base initialization, never from the
  // step-1 fine-tuned weights.
  PretrainResult pre = continued_pretrain(base_init, corpus, vocab, cfg.pretrain);
  report["pretrain"] = {{"epochs", cfg.pretrain.epochs},
                        {"steps", pre.total_steps},
                        {"epoch_losses", pre.epoch_losses}};
  if (!cfg.save_dir.empty()) {
    std::filesystem::create_directories(cfg.save_dir);
    const std::string path =
        (std::filesystem::path(cfg.save_dir) / "pcp_pretrained.ckpt").string();
    save_checkpoint(pre.params, vocab, path);
    report["checkpoint_paths"]["pretrained"] = path;
  }
  result.checkpoint = std::move(pre.params);
  return result;
}

PcpResult run_pcp(const DataSplits& splits, const TaskSpec& task, const Vocabulary& vocab,
                  const ModelParameters& base_init, const PcpRunConfig& cfg) {
  PcpCheckpointResult stage = build_pcp_checkpoint(splits, task, vocab, base_init, cfg);
  FinetuneResult final_ft =
      train_finetune(cfg.method, stage.checkpoint, splits, task, vocab, cfg.finetune);
  PcpResult result;
  result.report = std::move(stage.report);
  result.report["final"] = {{"method", method_name(cfg.method)},
                            {"best_dev", final_ft.best_metric},
                            {"evals", final_ft.trace.size()},
                            {"diverged", final_ft.diverged}};
  if (!splits.test.empty()) {
    const EvalResult test = evaluate_model(final_ft.best, cfg.method, splits.test, task, vocab);
    result.report["final"]["test"] = test.metric;
  }
  if (!cfg.save_dir.empty()) {
    const std::string path =
        (std::filesystem::path(cfg.save_dir) / "pcp_final.ckpt").string();
    save_checkpoint(final_ft.best, vocab, path);
    result.report["checkpoint_paths"]["final"] = path;
  }
  result.final_model = std::move(final_ft.best);
  return result;
}

}  // namespace pcp
