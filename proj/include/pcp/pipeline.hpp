#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcp/metrics.hpp"
#include "pcp/objectives.hpp"

namespace pcp {

enum class Method { kCls, kPromptHard, kPromptSoft };

Method method_from_name(const std::string& name);
const char* method_name(Method method);

// Continued pre-training corpus construction modes. The TAPT family uses raw
// task text; the PCP family renders the template with the mask slot infilled
// (or ablated) per example.
enum class CorpusMode {
  kTaptPlain,
  kTaptTokenizerSep,
  kTaptPcpSep,
  kTaptRandomPair,
  kTaptFirstSent,
  kPcp,
  kPcpRandomLabels,
  kPcpWrongLabels,
  kPcpLabelsOnly,
  kPcpTemplateOnly,
};

CorpusMode corpus_mode_from_name(const std::string& name);
const char* corpus_mode_name(CorpusMode mode);
bool is_pcp_mode(CorpusMode mode);
// True when corpus construction consumes per-example labels.
bool mode_uses_labels(CorpusMode mode);

struct Provenance {
  int source = -1;  // index into the concatenated (labelled, unlabelled) input
  LabelOrigin origin = LabelOrigin::kNone;
  int label_id = -1;  // label rendered into the sequence, -1 if none
};

struct Corpus {
  std::vector<std::vector<int>> sequences;
  CorpusMode mode = CorpusMode::kTaptPlain;
  std::vector<Provenance> provenance;
};

struct DataSplits {
  std::vector<Example> labelled;
  std::vector<Example> unlabelled;
  std::vector<Example> dev;
  std::vector<Example> test;
};

// Fine-tuning defaults follow the hard/soft prompt fine-tuning protocol:
// 1000 steps evaluated every 100, batch 8, lr grid {1e-5, 2e-5, 5e-5},
// AdamW(0.9, 0.98, 1e-6), weight decay 0.01, warmup proportion 0.06.
struct FinetuneConfig {
  int steps = 1000;
  int eval_interval = 100;
  int batch_size = 8;
  float lr = 2e-5f;
  std::vector<float> lr_grid = {1e-5f, 2e-5f, 5e-5f};
  float beta1 = 0.9f;
  float beta2 = 0.98f;
  float epsilon = 1e-6f;
  float weight_decay = 0.01f;
  float warmup_proportion = 0.06f;
  uint64_t seed = 42;

  AdamWConfig adamw(float peak_lr, int64_t total_steps) const;
};

// Continued pre-training defaults: 100 epochs at batch 256, masking
// probability 0.15, same AdamW settings as fine-tuning.
struct PretrainConfig {
  int epochs = 100;
  int batch_size = 256;
  float lr = 1e-4f;
  float masking_probability = 0.15f;
  float beta1 = 0.9f;
  float beta2 = 0.98f;
  float epsilon = 1e-6f;
  float weight_decay = 0.01f;
  float warmup_proportion = 0.06f;
  uint64_t seed = 42;

  AdamWConfig adamw(int64_t total_steps) const;
};

struct EvalResult {
  double metric = 0.0;
  std::vector<int> predictions;
};

// Predictions and task metric on labelled examples, eval mode. Prompt methods
// read restricted label-word logits; kCls reads the CLS head.
EvalResult evaluate_model(const ModelParameters& params, Method method,
                          const std::vector<Example>& examples, const TaskSpec& task,
                          const Vocabulary& vocab);

struct EvalPoint {
  int step = 0;
  double metric = 0.0;
};

struct FinetuneResult {
  ModelParameters best;
  std::vector<EvalPoint> trace;   // one entry per eval_interval
  std::vector<float> losses;      // one entry per optimizer step
  double best_metric = 0.0;
  bool diverged = false;          // a non-finite loss was observed
  SoftInitReport soft_init;
};

// Fine-tunes a copy of `init` on splits.labelled for cfg.steps steps,
// evaluating on splits.dev every cfg.eval_interval, and returns the best dev
// checkpoint. kPromptSoft first applies soft_prompt_init.
FinetuneResult train_finetune(Method method, const ModelParameters& init,
                              const DataSplits& splits, const TaskSpec& task,
                              const Vocabulary& vocab, const FinetuneConfig& cfg);

// Argmax label of the restricted class distribution for every unlabelled
// example; ties break toward the lowest label id. Output examples carry the
// predicted label name with pseudo origin.
std::vector<Example> pseudo_label(const ModelParameters& trained,
                                  const std::vector<Example>& unlabelled, const TaskSpec& task,
                                  const Vocabulary& vocab, Method method = Method::kPromptHard);

// Builds a continued pre-training corpus over labelled + unlabelled examples.
// PCP-family modes require a label on every example (gold or pseudo); TAPT
// modes ignore labels.
Corpus build_corpus(const std::vector<Example>& labelled,
                    const std::vector<Example>& unlabelled, const TaskSpec& task,
                    const Vocabulary& vocab, CorpusMode mode, Rng& rng, int max_len);

struct PretrainResult {
  ModelParameters params;  // the continued pre-training checkpoint
  std::vector<double> epoch_losses;
  int total_steps = 0;
};

// Dynamic-masked MLM over the corpus with AdamW and the warmup-linear
// schedule; the masking pattern is redrawn every epoch.
PretrainResult continued_pretrain(const ModelParameters& init, const Corpus& corpus,
                                  const Vocabulary& vocab, const PretrainConfig& cfg);

struct PcpRunConfig {
  Method method = Method::kPromptHard;
  Method step1_method = Method::kPromptHard;  // pseudo-labelling model
  CorpusMode mode = CorpusMode::kPcp;
  FinetuneConfig finetune;
  PretrainConfig pretrain;
  int max_unlabeled = 10000;  // uniform subsample cap; <0 disables
  uint64_t seed = 42;
  std::string save_dir;  // when set, stage checkpoints are written here and
                         // their paths recorded in the report
};

struct PcpResult {
  ModelParameters final_model;
  nlohmann::json report;
};

// The full two-step procedure: prompt fine-tune on L, pseudo-label U, build
// the corpus, continued pre-train a fresh copy of base_init, then fine-tune
// from that checkpoint. The report carries per-stage metrics and
// label-agreement statistics.
PcpResult run_pcp(const DataSplits& splits, const TaskSpec& task, const Vocabulary& vocab,
                  const ModelParameters& base_init, const PcpRunConfig& cfg);

// Stage composition shared by run_pcp and the experiment harness: everything
// up to and including the continued pre-training checkpoint.
struct PcpCheckpointResult {
  ModelParameters checkpoint;
  nlohmann::json report;
};
PcpCheckpointResult build_pcp_checkpoint(const DataSplits& splits, const TaskSpec& task,
                                         const Vocabulary& vocab,
                                         const ModelParameters& base_init,
                                         const PcpRunConfig& cfg);

}  // namespace pcp
