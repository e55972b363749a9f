#include "pcp/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pcp/checkpoint.hpp"
#include "pcp/harness.hpp"

namespace pcp {

using nlohmann::json;

namespace {

// Flat run-config file mirroring the hyperparameter tables, plus an optional
// "model" section (with vocab_file) used when --init random.
struct RunConfigFile {
  FinetuneConfig finetune;
  PretrainConfig pretrain;
  ModelConfig model;
  std::string vocab_file;
  bool has_model = false;
};

RunConfigFile load_run_config(const std::string& path) {
  RunConfigFile cfg;
  if (path.empty()) return cfg;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::exception& e) {
    throw ParseError(path + ": malformed config: " + e.what());
  }
  apply_finetune_json(j, cfg.finetune);
  apply_pretrain_json(j, cfg.pretrain);
  if (j.contains("model")) {
    cfg.has_model = true;
    apply_model_json(j.at("model"), cfg.model);
    if (j.at("model").contains("vocab_file"))
      cfg.vocab_file = j.at("model").at("vocab_file").get<std::string>();
  }
  if (j.contains("max_sequence_length"))
    cfg.model.max_sequence_length = j.at("max_sequence_length").get<int>();
  return cfg;
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw IoError("failed writing '" + path + "'");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Method cli_method(const std::string& name) {
  if (name == "cls") return Method::kCls;
  if (name == "prompt-hard" || name == "prompt_hard") return Method::kPromptHard;
  if (name == "prompt-soft" || name == "prompt_soft") return Method::kPromptSoft;
  throw ConfigError("unknown method '" + name + "' (expected cls|prompt-hard|prompt-soft)");
}

// Loads a checkpoint, or builds a random init from the config's model section
// when `init` is the literal string "random".
Checkpoint load_init(const std::string& init, const RunConfigFile& cfg,
                     const TaskSpec* task) {
  if (init != "random") return load_checkpoint(init);
  if (!cfg.has_model || cfg.vocab_file.empty())
    throw ConfigError("--init random requires a config with a model section and vocab_file");
  Checkpoint ck;
  ck.vocab = Vocabulary::load(cfg.vocab_file);
  ModelConfig mc = cfg.model;
  mc.vocab_size = ck.vocab.size();
  if (task) mc.num_labels = task->num_labels();
  ck.params = init_model(mc);
  return ck;
}

// A corpus file line is {"tokens": [...]}; anything else is raw examples.
bool is_built_corpus(const std::string& content) {
  std::istringstream in(content);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      return j.is_object() && j.contains("tokens");
    } catch (const json::exception&) {
      return false;
    }
  }
  return false;
}

std::string corpus_to_jsonl(const Corpus& corpus, const Vocabulary& vocab,
                            const TaskSpec* task) {
  std::string out;
  for (size_t i = 0; i < corpus.sequences.size(); ++i) {
    json j;
    json toks = json::array();
    for (const int id : corpus.sequences[i]) toks.push_back(vocab.token(id));
    j["tokens"] = toks;
    const auto& prov = corpus.provenance[i];
    j["source"] = prov.source;
    j["origin"] = label_origin_name(prov.origin);
    if (task && prov.label_id >= 0)
      j["label"] = task->label_names[static_cast<size_t>(prov.label_id)];
    out += j.dump();
    out += "\n";
  }
  return out;
}

Corpus corpus_from_jsonl(const std::string& content, const Vocabulary& vocab,
                         CorpusMode mode, const std::string& source_name) {
  Corpus corpus;
  corpus.mode = mode;
  std::istringstream in(content);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(source_name + ":" + std::to_string(line_no) + ": malformed corpus line: " +
                      e.what());
    }
    if (!j.contains("tokens") || !j.at("tokens").is_array())
      throw DataError(source_name + ":" + std::to_string(line_no) + ": missing tokens array");
    corpus.sequences.push_back(
        vocab.encode_tokens(j.at("tokens").get<std::vector<std::string>>()));
    Provenance prov;
    if (j.contains("source")) prov.source = j.at("source").get<int>();
    if (j.contains("origin"))
      prov.origin = label_origin_from_name(j.at("origin").get<std::string>());
    corpus.provenance.push_back(prov);
  }
  return corpus;
}

bool mode_needs_task(CorpusMode mode) {
  return is_pcp_mode(mode) || mode == CorpusMode::kTaptPcpSep ||
         mode == CorpusMode::kTaptRandomPair;
}

TaskSpec stub_task() {
  TaskSpec t;
  t.name = "adhoc";
  t.label_names = {"0"};
  t.verbalizer_words = {"0"};
  return t;
}

// ---- subcommand bodies -----------------------------------------------------

int cmd_build_vocab(const std::string& input, int min_freq, int soft_tokens,
                    const std::string& task_file, const std::string& out) {
  const auto corpus = load_dataset(input);
  std::vector<std::string> required;
  if (!task_file.empty()) required = task_required_tokens(load_task(task_file));
  const Vocabulary vocab = build_vocab(corpus, min_freq, soft_tokens, required);
  vocab.save(out);
  std::cout << "vocabulary: " << vocab.size() << " tokens -> " << out << "\n";
  return 0;
}

int cmd_pretrain(const std::string& mode_name, const std::string& corpus_file,
                 const std::string& init, const std::string& config_file,
                 const std::string& task_file, uint64_t seed_override, bool seed_given,
                 const std::string& out) {
  RunConfigFile cfg = load_run_config(config_file);
  if (seed_given) cfg.pretrain.seed = seed_override;
  const CorpusMode mode = corpus_mode_from_name(mode_name);

  std::optional<TaskSpec> task;
  if (!task_file.empty()) task = load_task(task_file);

  Checkpoint ck = load_init(init, cfg, task ? &*task : nullptr);
  const std::string content = read_text(corpus_file);

  Corpus corpus;
  if (is_built_corpus(content)) {
    corpus = corpus_from_jsonl(content, ck.vocab, mode, corpus_file);
  } else {
    if (!task && mode_needs_task(mode))
      throw ConfigError("pretrain: mode " + mode_name + " needs --task to build the corpus");
    const auto examples = parse_dataset(content, corpus_file);
    std::vector<Example> labelled, unlabelled;
    for (const auto& ex : examples)
      (ex.label ? labelled : unlabelled).push_back(ex);
    Rng corpus_rng = Rng(cfg.pretrain.seed).fork("corpus");
    const TaskSpec effective = task ? *task : stub_task();
    corpus = build_corpus(labelled, unlabelled, effective, ck.vocab, mode, corpus_rng,
                          ck.params.config.max_sequence_length);
  }

  std::cout << "seed: " << cfg.pretrain.seed << "\n";
  std::cout << "corpus: " << corpus.sequences.size() << " sequences, mode "
            << corpus_mode_name(mode) << "\n";
  const PretrainResult result = continued_pretrain(ck.params, corpus, ck.vocab, cfg.pretrain);
  for (size_t e = 0; e < result.epoch_losses.size(); ++e)
    std::cout << "epoch " << e << " mlm_loss " << result.epoch_losses[e] << "\n";
  save_checkpoint(result.params, ck.vocab, out);
  std::cout << "checkpoint -> " << out << "\n";
  return 0;
}

int cmd_finetune(const std::string& method_name, const std::string& task_file,
                 const std::string& train_file, const std::string& dev_file,
                 const std::string& init, const std::string& config_file,
                 uint64_t seed_override, bool seed_given, const std::string& out) {
  RunConfigFile cfg = load_run_config(config_file);
  if (seed_given) cfg.finetune.seed = seed_override;
  const TaskSpec task = load_task(task_file);
  const Method method = cli_method(method_name);
  Checkpoint ck = load_init(init, cfg, &task);

  DataSplits splits;
  splits.labelled = load_dataset(train_file);
  splits.dev = load_dataset(dev_file);

  std::cout << "seed: " << cfg.finetune.seed << "\n";
  const FinetuneResult result =
      train_finetune(method, ck.params, splits, task, ck.vocab, cfg.finetune);
  for (const auto& point : result.trace)
    std::cout << "step " << point.step << " dev_" << metric_name(task.metric) << " "
              << point.metric << "\n";
  if (result.diverged) std::cout << "warning: non-finite loss observed\n";
  std::cout << "best_dev " << result.best_metric << "\n";
  save_checkpoint(result.best, ck.vocab, out);
  std::cout << "checkpoint -> " << out << "\n";
  return 0;
}

int cmd_pseudo_label(const std::string& ckpt_file, const std::string& task_file,
                     const std::string& input, const std::string& method_name,
                     const std::string& out) {
  const Checkpoint ck = load_checkpoint(ckpt_file);
  const TaskSpec task = load_task(task_file);
  const auto examples = load_dataset(input);
  const auto labelled = pseudo_label(ck.params, examples, task, ck.vocab,
                                     cli_method(method_name));
  save_dataset(labelled, out);
  std::cout << "pseudo-labelled " << labelled.size() << " examples -> " << out << "\n";
  return 0;
}

int cmd_build_corpus(const std::string& mode_name, const std::string& task_file,
                     const std::string& labeled_file, const std::string& unlabeled_file,
                     uint64_t seed_override, bool seed_given, const std::string& out) {
  const CorpusMode mode = corpus_mode_from_name(mode_name);
  const TaskSpec task = load_task(task_file);
  const auto labelled = load_dataset(labeled_file);
  std::vector<Example> unlabelled;
  if (!unlabeled_file.empty()) unlabelled = load_dataset(unlabeled_file);

  std::vector<Example> all = labelled;
  all.insert(all.end(), unlabelled.begin(), unlabelled.end());
  const uint64_t seed = seed_given ? seed_override : 42;
  std::cout << "seed: " << seed << "\n";

  // Corpus files carry token strings, so any vocabulary covering the data
  // works; built fresh here from the inputs plus the task's tokens.
  const Vocabulary vocab = build_vocab(all, 1, 8, task_required_tokens(task));
  Rng rng = Rng(seed).fork("corpus");
  const Corpus corpus = build_corpus(labelled, unlabelled, task, vocab, mode, rng, 256);
  write_text(out, corpus_to_jsonl(corpus, vocab, &task));
  std::cout << "corpus: " << corpus.sequences.size() << " sequences -> " << out << "\n";
  return 0;
}

int cmd_evaluate(const std::string& ckpt_file, const std::string& task_file,
                 const std::string& test_file, const std::string& method_name) {
  const Checkpoint ck = load_checkpoint(ckpt_file);
  const TaskSpec task = load_task(task_file);
  const auto test = load_dataset(test_file);
  const EvalResult result =
      evaluate_model(ck.params, cli_method(method_name), test, task, ck.vocab);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", result.metric);
  std::cout << metric_name(task.metric) << " " << buf << "\n";
  return 0;
}

int cmd_experiment(const std::string& spec_file, const std::string& out) {
  const ExperimentSpec spec = load_experiment_spec(spec_file);
  std::cout << "seeds:";
  for (const auto s : spec.seeds) std::cout << " " << s;
  std::cout << "\n";
  const MetricsReport report = run_experiment(spec);
  write_text(out, format_report(report, ReportFormat::kCsv));
  for (const auto& cell : report.cells) {
    std::cout << cell.task << " " << cell.method << " " << cell.mode;
    if (cell.failed)
      std::cout << " FAILED: " << cell.error;
    else
      std::cout << " mean " << cell.mean();
    std::cout << "\n";
  }
  std::cout << "report -> " << out << "\n";
  return 0;
}

int cmd_report(const std::string& in_file, const std::string& format_name,
               const std::string& out) {
  const auto rows = parse_report_csv(read_text(in_file));
  ReportFormat format;
  if (format_name == "csv")
    format = ReportFormat::kCsv;
  else if (format_name == "markdown")
    format = ReportFormat::kMarkdown;
  else
    throw ConfigError("report: unknown format '" + format_name + "'");
  write_text(out, format_rows(rows, format));
  std::cout << "report -> " << out << "\n";
  return 0;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args) {
  CLI::App app{"pcplab: prompt-based continued pre-training laboratory"};
  app.require_subcommand(1);

  // build-vocab
  auto* sc_vocab = app.add_subcommand("build-vocab", "build a word-level vocabulary");
  std::string bv_input, bv_task, bv_out;
  int bv_min_freq = 1, bv_soft = 8;
  sc_vocab->add_option("--input", bv_input, "corpus JSONL")->required();
  sc_vocab->add_option("--min-freq", bv_min_freq, "minimum token frequency");
  sc_vocab->add_option("--soft-tokens", bv_soft, "reserved soft-prompt tokens");
  sc_vocab->add_option("--task", bv_task, "task file whose tokens must be kept");
  sc_vocab->add_option("--out", bv_out, "output vocabulary file")->required();

  // pretrain
  auto* sc_pre = app.add_subcommand("pretrain", "continued pre-training (TAPT/PCP)");
  std::string pre_mode = "tapt", pre_corpus, pre_init, pre_config, pre_task, pre_out;
  uint64_t pre_seed = 42;
  sc_pre->add_option("--mode", pre_mode, "corpus mode (tapt|pcp|...)");
  sc_pre->add_option("--corpus", pre_corpus, "raw examples or built corpus JSONL")->required();
  sc_pre->add_option("--init", pre_init, "checkpoint path or 'random'")->required();
  sc_pre->add_option("--config", pre_config, "run config JSON");
  sc_pre->add_option("--task", pre_task, "task file (needed for template modes)");
  auto* pre_seed_opt = sc_pre->add_option("--seed", pre_seed, "override config seed");
  sc_pre->add_option("--out", pre_out, "output checkpoint")->required();

  // finetune
  auto* sc_ft = app.add_subcommand("finetune", "fine-tune from a checkpoint");
  std::string ft_method, ft_task, ft_train, ft_dev, ft_init, ft_config, ft_out;
  uint64_t ft_seed = 42;
  sc_ft->add_option("--method", ft_method, "cls|prompt-hard|prompt-soft")->required();
  sc_ft->add_option("--task", ft_task, "task file")->required();
  sc_ft->add_option("--train", ft_train, "training JSONL")->required();
  sc_ft->add_option("--dev", ft_dev, "dev JSONL")->required();
  sc_ft->add_option("--init", ft_init, "checkpoint path or 'random'")->required();
  sc_ft->add_option("--config", ft_config, "run config JSON");
  auto* ft_seed_opt = sc_ft->add_option("--seed", ft_seed, "override config seed");
  sc_ft->add_option("--out", ft_out, "output checkpoint")->required();

  // pseudo-label
  auto* sc_pl = app.add_subcommand("pseudo-label", "label unlabelled data with a model");
  std::string pl_ckpt, pl_task, pl_input, pl_method = "prompt-hard", pl_out;
  sc_pl->add_option("--ckpt", pl_ckpt, "trained checkpoint")->required();
  sc_pl->add_option("--task", pl_task, "task file")->required();
  sc_pl->add_option("--input", pl_input, "unlabelled JSONL")->required();
  sc_pl->add_option("--method", pl_method, "prompt-hard|prompt-soft");
  sc_pl->add_option("--out", pl_out, "output JSONL")->required();

  // build-corpus
  auto* sc_bc = app.add_subcommand("build-corpus", "build a continued pre-training corpus");
  std::string bc_mode, bc_task, bc_labeled, bc_unlabeled, bc_out;
  uint64_t bc_seed = 42;
  sc_bc->add_option("--mode", bc_mode, "corpus mode")->required();
  sc_bc->add_option("--task", bc_task, "task file")->required();
  sc_bc->add_option("--labeled", bc_labeled, "labelled JSONL")->required();
  sc_bc->add_option("--unlabeled", bc_unlabeled, "unlabelled (or pseudo-labelled) JSONL");
  auto* bc_seed_opt = sc_bc->add_option("--seed", bc_seed, "sampling seed");
  sc_bc->add_option("--out", bc_out, "output corpus JSONL")->required();

  // evaluate
  auto* sc_eval = app.add_subcommand("evaluate", "evaluate a checkpoint on a test set");
  std::string ev_ckpt, ev_task, ev_test, ev_method = "prompt-hard";
  sc_eval->add_option("--ckpt", ev_ckpt, "checkpoint")->required();
  sc_eval->add_option("--task", ev_task, "task file")->required();
  sc_eval->add_option("--test", ev_test, "test JSONL")->required();
  sc_eval->add_option("--method", ev_method, "cls|prompt-hard|prompt-soft");

  // experiment
  auto* sc_exp = app.add_subcommand("experiment", "run a methods x modes experiment");
  std::string exp_spec, exp_out;
  sc_exp->add_option("--spec", exp_spec, "experiment spec JSON")->required();
  sc_exp->add_option("--out", exp_out, "output CSV report")->required();

  // report
  auto* sc_rep = app.add_subcommand("report", "re-format a CSV report");
  std::string rep_in, rep_format = "markdown", rep_out;
  sc_rep->add_option("--in", rep_in, "input CSV")->required();
  sc_rep->add_option("--format", rep_format, "csv|markdown");
  sc_rep->add_option("--out", rep_out, "output file")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    if (sc_vocab->parsed())
      return cmd_build_vocab(bv_input, bv_min_freq, bv_soft, bv_task, bv_out);
    if (sc_pre->parsed())
      return cmd_pretrain(pre_mode, pre_corpus, pre_init, pre_config, pre_task, pre_seed,
                          pre_seed_opt->count() > 0, pre_out);
    if (sc_ft->parsed())
      return cmd_finetune(ft_method, ft_task, ft_train, ft_dev, ft_init, ft_config, ft_seed,
                          ft_seed_opt->count() > 0, ft_out);
    if (sc_pl->parsed()) return cmd_pseudo_label(pl_ckpt, pl_task, pl_input, pl_method, pl_out);
    if (sc_bc->parsed())
      return cmd_build_corpus(bc_mode, bc_task, bc_labeled, bc_unlabeled, bc_seed,
                              bc_seed_opt->count() > 0, bc_out);
    if (sc_eval->parsed()) return cmd_evaluate(ev_ckpt, ev_task, ev_test, ev_method);
    if (sc_exp->parsed()) return cmd_experiment(exp_spec, exp_out);
    if (sc_rep->parsed()) return cmd_report(rep_in, rep_format, rep_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  std::cerr << app.help();
  return 1;
}

}  // namespace pcp
