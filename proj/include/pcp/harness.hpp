#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pcp/pipeline.hpp"

namespace pcp {

// Samples k examples per class uniformly without replacement (deterministic
// per seed); the remainder becomes the unlabelled pool with labels stripped.
struct KPerClassSplit {
  std::vector<Example> labelled;
  std::vector<Example> unlabelled;
  std::vector<int> labelled_indices;  // positions of L within the input dataset
};
KPerClassSplit sample_k_per_class(const std::vector<Example>& dataset, const TaskSpec& task,
                                  int k, uint64_t seed);

struct GridSearchResult {
  float best_lr = 0.0f;
  FinetuneResult run;                 // the winning run
  std::vector<double> dev_scores;     // per grid entry, -inf for diverged runs
};

// One fine-tuning run per grid entry, scored by best dev metric; ties break
// toward the smaller learning rate and NaN runs score -inf.
GridSearchResult grid_search(Method method, const ModelParameters& init,
                             const DataSplits& splits, const TaskSpec& task,
                             const Vocabulary& vocab, const FinetuneConfig& cfg);

// Experiment description: methods x checkpoint modes over seeds, mirroring
// the main results table structure.
struct ExperimentSpec {
  std::string task_file;
  std::string train_file;
  std::string test_file;
  std::vector<std::string> methods = {"prompt_hard"};  // cls|prompt_hard|prompt_soft|majority
  std::vector<std::string> modes = {"none", "tapt", "pcp"};
  int k_per_class = 16;        // -1 means fully supervised
  int dev_per_class = 16;
  std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
  int max_unlabeled = 10000;
  int min_freq = 1;
  int soft_tokens = 8;
  ModelConfig model;           // vocab_size filled in from the built vocabulary
  FinetuneConfig finetune;
  PretrainConfig pretrain;
};

ExperimentSpec load_experiment_spec(const std::string& path);
ExperimentSpec parse_experiment_spec(const std::string& json_text, const std::string& source_name);

// Apply the recognized keys of a JSON object onto a config (unknown keys are
// ignored); shared by experiment specs and the CLI run-config files.
void apply_model_json(const nlohmann::json& j, ModelConfig& cfg);
void apply_finetune_json(const nlohmann::json& j, FinetuneConfig& cfg);
void apply_pretrain_json(const nlohmann::json& j, PretrainConfig& cfg);

struct ReportCell {
  std::string task;
  std::string method;
  std::string mode;
  std::vector<double> seed_scores;  // dev-selected test metric per seed
  bool failed = false;
  std::string error;

  double mean() const;
  std::optional<double> stddev() const;  // sample std dev, needs >= 2 seeds
};

struct MetricsReport {
  std::string metric;
  std::vector<ReportCell> cells;  // stable (method, mode) order from the ExperimentSpec
};

MetricsReport run_experiment(const ExperimentSpec& spec);

enum class ReportFormat { kCsv, kMarkdown };

// One emitted line of the aggregated report.
struct ReportRow {
  std::string task;
  std::string method;
  std::string mode;
  std::optional<double> mean;
  std::optional<double> stddev;  // absent with a single seed
  std::optional<double> delta;   // vs the method's mode=none baseline
};

std::vector<ReportRow> report_rows(const MetricsReport& report);

// Columns: task, method, mode, mean, std, delta. CSV is RFC-4180 quoted
// UTF-8; absent values render as empty fields.
std::string format_rows(const std::vector<ReportRow>& rows, ReportFormat format);
std::string format_report(const MetricsReport& report, ReportFormat format);
std::vector<ReportRow> parse_report_csv(const std::string& csv_text);

// ---- shipped synthetic benchmark ------------------------------------------

// Two-polarity keyword task: ~200-word vocabulary, the label is decided by
// planted sentiment words, with 10% label noise.
std::vector<Example> make_synth_sentiment(int count, uint64_t seed);
TaskSpec synth_sentiment_task();

// Pair-entailment toy: the label says whether text_b repeats a keyword of
// text_a.
std::vector<Example> make_synth_pair(int count, uint64_t seed);
TaskSpec synth_pair_task();

}  // namespace pcp
