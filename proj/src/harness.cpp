#include "pcp/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace pcp {

using nlohmann::json;

KPerClassSplit sample_k_per_class(const std::vector<Example>& dataset, const TaskSpec& task,
                                  int k, uint64_t seed) {
  if (k < 1) throw ContractError("sample_k_per_class: k must be >= 1");
  std::map<int, std::vector<int>> by_class;
  for (size_t i = 0; i < dataset.size(); ++i) {
    if (!dataset[i].label)
      throw DataError("sample_k_per_class: example " + std::to_string(i) + " has no label");
    by_class[task.label_id(*dataset[i].label)].push_back(static_cast<int>(i));
  }
  std::set<int> chosen;
  Rng rng(seed);
  for (int label = 0; label < task.num_labels(); ++label) {
    auto it = by_class.find(label);
    const int have = it == by_class.end() ? 0 : static_cast<int>(it->second.size());
    if (have < k)
      throw DataError("sample_k_per_class: class '" + task.label_names[static_cast<size_t>(label)] +
                      "' has " + std::to_string(have) + " examples, need " + std::to_string(k));
    Rng class_rng = rng.fork("class_" + std::to_string(label));
    std::vector<int>& idx = it->second;
    class_rng.shuffle(idx);
    for (int i = 0; i < k; ++i) chosen.insert(idx[static_cast<size_t>(i)]);
  }
  KPerClassSplit split;
  for (size_t i = 0; i < dataset.size(); ++i) {
    if (chosen.count(static_cast<int>(i))) {
      split.labelled.push_back(dataset[i]);
      split.labelled.back().origin = LabelOrigin::kGold;
      split.labelled_indices.push_back(static_cast<int>(i));
    } else {
      Example ex = dataset[i];
      ex.label.reset();
      ex.origin = LabelOrigin::kNone;
      split.unlabelled.push_back(std::move(ex));
    }
  }
  return split;
}

GridSearchResult grid_search(Method method, const ModelParameters& init,
                             const DataSplits& splits, const TaskSpec& task,
                             const Vocabulary& vocab, const FinetuneConfig& cfg) {
  if (cfg.lr_grid.empty()) throw ConfigError("grid_search: empty learning-rate grid");
  GridSearchResult result;
  double best_score = -std::numeric_limits<double>::infinity();
  bool have_best = false;
  for (const float lr : cfg.lr_grid) {
    FinetuneConfig run_cfg = cfg;
    run_cfg.lr = lr;
    FinetuneResult run = train_finetune(method, init, splits, task, vocab, run_cfg);
    const double score = run.diverged || !std::isfinite(run.best_metric)
                             ? -std::numeric_limits<double>::infinity()
                             : run.best_metric;
    result.dev_scores.push_back(score);
    const bool wins = !have_best || score > best_score ||
                      (score == best_score && lr < result.best_lr);
    if (wins) {
      best_score = score;
      result.best_lr = lr;
      result.run = std::move(run);
      have_best = true;
    }
  }
  return result;
}

// ---- experiment spec --------------------------------------------------------

void apply_model_json(const json& j, ModelConfig& m) {
  if (j.contains("hidden_dim")) m.hidden_dim = j.at("hidden_dim").get<int>();
  if (j.contains("num_layers")) m.num_layers = j.at("num_layers").get<int>();
  if (j.contains("num_heads")) m.num_heads = j.at("num_heads").get<int>();
  if (j.contains("feedforward_dim")) m.feedforward_dim = j.at("feedforward_dim").get<int>();
  if (j.contains("max_sequence_length"))
    m.max_sequence_length = j.at("max_sequence_length").get<int>();
  if (j.contains("dropout_p")) m.dropout_p = j.at("dropout_p").get<float>();
  if (j.contains("seed")) m.seed = j.at("seed").get<uint64_t>();
}

void apply_finetune_json(const json& j, FinetuneConfig& f) {
  if (j.contains("steps")) f.steps = j.at("steps").get<int>();
  if (j.contains("eval_interval")) f.eval_interval = j.at("eval_interval").get<int>();
  if (j.contains("batch_size")) f.batch_size = j.at("batch_size").get<int>();
  if (j.contains("lr")) f.lr = j.at("lr").get<float>();
  if (j.contains("lr_grid")) f.lr_grid = j.at("lr_grid").get<std::vector<float>>();
  if (j.contains("weight_decay")) f.weight_decay = j.at("weight_decay").get<float>();
  if (j.contains("warmup_proportion")) f.warmup_proportion = j.at("warmup_proportion").get<float>();
  if (j.contains("adam_beta1")) f.beta1 = j.at("adam_beta1").get<float>();
  if (j.contains("adam_beta2")) f.beta2 = j.at("adam_beta2").get<float>();
  if (j.contains("adam_epsilon")) f.epsilon = j.at("adam_epsilon").get<float>();
  if (j.contains("seed")) f.seed = j.at("seed").get<uint64_t>();
}

void apply_pretrain_json(const json& j, PretrainConfig& p) {
  if (j.contains("epochs")) p.epochs = j.at("epochs").get<int>();
  if (j.contains("batch_size")) p.batch_size = j.at("batch_size").get<int>();
  if (j.contains("lr")) p.lr = j.at("lr").get<float>();
  if (j.contains("masking_probability"))
    p.masking_probability = j.at("masking_probability").get<float>();
  if (j.contains("weight_decay")) p.weight_decay = j.at("weight_decay").get<float>();
  if (j.contains("warmup_proportion")) p.warmup_proportion = j.at("warmup_proportion").get<float>();
  if (j.contains("adam_beta1")) p.beta1 = j.at("adam_beta1").get<float>();
  if (j.contains("adam_beta2")) p.beta2 = j.at("adam_beta2").get<float>();
  if (j.contains("adam_epsilon")) p.epsilon = j.at("adam_epsilon").get<float>();
  if (j.contains("seed")) p.seed = j.at("seed").get<uint64_t>();
}

ExperimentSpec parse_experiment_spec(const std::string& json_text,
                                     const std::string& source_name) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ParseError(source_name + ": malformed experiment spec: " + e.what());
  }
  ExperimentSpec spec;
  try {
    spec.task_file = j.at("task").get<std::string>();
    spec.train_file = j.at("train").get<std::string>();
    spec.test_file = j.at("test").get<std::string>();
    if (j.contains("methods")) spec.methods = j.at("methods").get<std::vector<std::string>>();
    if (j.contains("modes")) spec.modes = j.at("modes").get<std::vector<std::string>>();
    if (j.contains("k_per_class")) {
      if (j.at("k_per_class").is_string()) {
        if (j.at("k_per_class").get<std::string>() != "full")
          throw ConfigError(source_name + ": k_per_class must be a count or \"full\"");
        spec.k_per_class = -1;
      } else {
        spec.k_per_class = j.at("k_per_class").get<int>();
      }
    }
    if (j.contains("dev_per_class")) spec.dev_per_class = j.at("dev_per_class").get<int>();
    if (j.contains("seeds")) spec.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    if (j.contains("max_unlabeled")) spec.max_unlabeled = j.at("max_unlabeled").get<int>();
    if (j.contains("tokenizer")) {
      const auto& t = j.at("tokenizer");
      if (t.contains("min_freq")) spec.min_freq = t.at("min_freq").get<int>();
      if (t.contains("soft_tokens")) spec.soft_tokens = t.at("soft_tokens").get<int>();
    }
    if (j.contains("model")) apply_model_json(j.at("model"), spec.model);
    if (j.contains("finetune")) apply_finetune_json(j.at("finetune"), spec.finetune);
    if (j.contains("pretrain")) apply_pretrain_json(j.at("pretrain"), spec.pretrain);
  } catch (const json::exception& e) {
    throw ParseError(source_name + ": bad experiment spec: " + e.what());
  }
  if (spec.seeds.empty()) throw ConfigError(source_name + ": seeds must be non-empty");
  if (spec.k_per_class == 0 || spec.k_per_class < -1)
    throw ConfigError(source_name + ": k_per_class must be >= 1 or \"full\"");
  for (const float lr : spec.finetune.lr_grid)
    if (lr <= 0.0f) throw ConfigError(source_name + ": learning rates must be positive");
  return spec;
}

ExperimentSpec load_experiment_spec(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open experiment spec '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_experiment_spec(ss.str(), path);
}

// ---- experiment runner ------------------------------------------------------

double ReportCell::mean() const {
  double total = 0.0;
  for (const double s : seed_scores) total += s;
  return seed_scores.empty() ? 0.0 : total / static_cast<double>(seed_scores.size());
}

std::optional<double> ReportCell::stddev() const {
  if (seed_scores.size() < 2) return std::nullopt;
  const double m = mean();
  double acc = 0.0;
  for (const double s : seed_scores) acc += (s - m) * (s - m);
  return std::sqrt(acc / static_cast<double>(seed_scores.size() - 1));
}

namespace {

DataSplits make_seed_splits(const std::vector<Example>& train, const std::vector<Example>& test,
                            const TaskSpec& task, const ExperimentSpec& spec, uint64_t seed) {
  DataSplits out;
  out.test = test;
  Rng rng(seed);
  if (spec.k_per_class < 0) {
    // Fully supervised: a fixed 10% dev split by seed, no unlabelled pool.
    std::vector<int> order(static_cast<int>(train.size()));
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng split_rng = rng.fork("full_split");
    split_rng.shuffle(order);
    const size_t dev_count = std::max<size_t>(1, train.size() / 10);
    for (size_t i = 0; i < order.size(); ++i) {
      const Example& ex = train[static_cast<size_t>(order[i])];
      if (!ex.label) throw DataError("experiment: fully supervised training needs labels");
      if (i < dev_count)
        out.dev.push_back(ex);
      else
        out.labelled.push_back(ex);
    }
    return out;
  }

  KPerClassSplit l = sample_k_per_class(train, task, spec.k_per_class,
                                        rng.fork("labelled").seed());
  out.labelled = std::move(l.labelled);
  out.unlabelled = std::move(l.unlabelled);

  // Dev is sampled the same way from the remainder, disjoint from L. The
  // unlabelled pool stays the full remainder (the protocol reuses the
  // training set as unlabelled data).
  std::map<int, std::vector<int>> remainder_by_class;
  for (size_t i = 0; i < train.size(); ++i) {
    if (std::find(l.labelled_indices.begin(), l.labelled_indices.end(), static_cast<int>(i)) !=
        l.labelled_indices.end())
      continue;
    remainder_by_class[task.label_id(*train[i].label)].push_back(static_cast<int>(i));
  }
  for (int label = 0; label < task.num_labels(); ++label) {
    auto& idx = remainder_by_class[label];
    if (static_cast<int>(idx.size()) < spec.dev_per_class)
      throw DataError("experiment: class '" + task.label_names[static_cast<size_t>(label)] +
                      "' has too few examples left for the dev split");
    Rng dev_rng = rng.fork("dev_" + std::to_string(label));
    dev_rng.shuffle(idx);
    for (int i = 0; i < spec.dev_per_class; ++i)
      out.dev.push_back(train[static_cast<size_t>(idx[static_cast<size_t>(i)])]);
  }
  return out;
}

int majority_label(const std::vector<Example>& labelled, const TaskSpec& task) {
  std::vector<int> counts(static_cast<size_t>(task.num_labels()), 0);
  for (const auto& ex : labelled) ++counts[static_cast<size_t>(task.label_id(*ex.label))];
  int best = 0;
  for (int l = 1; l < task.num_labels(); ++l)
    if (counts[static_cast<size_t>(l)] > counts[static_cast<size_t>(best)]) best = l;
  return best;
}

uint64_t mix_seed(uint64_t base, uint64_t seed) { return splitmix64(base ^ splitmix64(seed)); }

}  // namespace

MetricsReport run_experiment(const ExperimentSpec& spec) {
  const TaskSpec task = load_task(spec.task_file);
  const auto train = load_dataset(spec.train_file);
  const auto test = load_dataset(spec.test_file);
  Vocabulary vocab =
      build_vocab(train, spec.min_freq, spec.soft_tokens, task_required_tokens(task));
  bind_verbalizer(task, vocab);  // fail fast if verbalizer words are unusable

  ModelConfig mcfg = spec.model;
  mcfg.vocab_size = vocab.size();
  mcfg.num_labels = task.num_labels();
  validate_config(mcfg);

  MetricsReport report;
  report.metric = metric_name(task.metric);
  for (const auto& method : spec.methods)
    for (const auto& mode : spec.modes) {
      ReportCell cell;
      cell.task = task.name;
      cell.method = method;
      cell.mode = mode;
      report.cells.push_back(std::move(cell));
    }

  for (const uint64_t seed : spec.seeds) {
    const DataSplits splits = make_seed_splits(train, test, task, spec, seed);
    ModelConfig seed_cfg = mcfg;
    seed_cfg.seed = mix_seed(mcfg.seed, seed);
    const ModelParameters base_init = init_model(seed_cfg);

    FinetuneConfig ft_cfg = spec.finetune;
    ft_cfg.seed = mix_seed(spec.finetune.seed, seed);
    PretrainConfig pre_cfg = spec.pretrain;
    pre_cfg.seed = mix_seed(spec.pretrain.seed, seed);

    std::map<std::string, ModelParameters> tapt_cache;  // method-independent
    for (auto& cell : report.cells) {
      if (cell.failed) continue;
      try {
        if (cell.method == "majority") {
          const int label = majority_label(splits.labelled, task);
          std::vector<int> preds(splits.test.size(), label);
          std::vector<int> golds;
          for (const auto& ex : splits.test) golds.push_back(task.label_id(*ex.label));
          cell.seed_scores.push_back(
              compute_metric(task.metric, preds, golds, task.num_labels()));
          continue;
        }
        const Method method = method_from_name(cell.method);
        ModelParameters checkpoint;
        if (cell.mode == "none") {
          checkpoint = base_init.clone();
        } else {
          const CorpusMode mode = corpus_mode_from_name(cell.mode);
          if (is_pcp_mode(mode)) {
            PcpRunConfig pcfg;
            pcfg.method = method;
            pcfg.step1_method = method == Method::kCls ? Method::kPromptHard : method;
            pcfg.mode = mode;
            pcfg.finetune = ft_cfg;
            pcfg.pretrain = pre_cfg;
            pcfg.max_unlabeled = spec.max_unlabeled;
            pcfg.seed = mix_seed(42, seed);
            checkpoint = build_pcp_checkpoint(splits, task, vocab, base_init, pcfg)
                             .checkpoint.clone();
          } else {
            auto it = tapt_cache.find(cell.mode);
            if (it == tapt_cache.end()) {
              std::vector<Example> pool = splits.unlabelled;
              if (spec.max_unlabeled >= 0 &&
                  static_cast<int>(pool.size()) > spec.max_unlabeled) {
                Rng sub_rng = Rng(mix_seed(42, seed)).fork("subsample");
                sub_rng.shuffle(pool);
                pool.resize(static_cast<size_t>(spec.max_unlabeled));
              }
              Rng corpus_rng = Rng(mix_seed(42, seed)).fork("corpus");
              const Corpus corpus = build_corpus(splits.labelled, pool, task, vocab, mode,
                                                 corpus_rng, mcfg.max_sequence_length);
              PretrainResult pre = continued_pretrain(base_init, corpus, vocab, pre_cfg);
              it = tapt_cache.emplace(cell.mode, std::move(pre.params)).first;
            }
            checkpoint = it->second.clone();
          }
        }
        const GridSearchResult grid =
            grid_search(method, checkpoint, splits, task, vocab, ft_cfg);
        const EvalResult result =
            evaluate_model(grid.run.best, method, splits.test, task, vocab);
        cell.seed_scores.push_back(result.metric);
      } catch (const Error& e) {
        cell.failed = true;
        cell.error = e.what();
      }
    }
  }
  return report;
}

// ---- report formatting ------------------------------------------------------

namespace {

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += "\"\"";
    out += c;
  }
  out += "\"";
  return out;
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::vector<ReportRow> report_rows(const MetricsReport& report) {
  std::vector<ReportRow> rows;
  std::map<std::pair<std::string, std::string>, double> baselines;
  for (const auto& cell : report.cells)
    if (cell.mode == "none" && !cell.failed)
      baselines[{cell.task, cell.method}] = cell.mean();
  for (const auto& cell : report.cells) {
    ReportRow row;
    row.task = cell.task;
    row.method = cell.method;
    row.mode = cell.mode;
    if (!cell.failed) {
      row.mean = cell.mean();
      row.stddev = cell.stddev();
      const auto it = baselines.find({cell.task, cell.method});
      if (it != baselines.end()) row.delta = cell.mean() - it->second;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_rows(const std::vector<ReportRow>& rows, ReportFormat format) {
  std::string out;
  auto field = [](const std::optional<double>& v) { return v ? num(*v) : std::string(); };
  if (format == ReportFormat::kCsv) {
    out += "task,method,mode,mean,std,delta\n";
    for (const auto& r : rows) {
      out += csv_quote(r.task) + "," + csv_quote(r.method) + "," + csv_quote(r.mode) + ",";
      out += field(r.mean) + "," + field(r.stddev) + "," + field(r.delta) + "\n";
    }
  } else {
    out += "| task | method | mode | mean | std | delta |\n";
    out += "| --- | --- | --- | --- | --- | --- |\n";
    for (const auto& r : rows) {
      out += "| " + r.task + " | " + r.method + " | " + r.mode + " | " + field(r.mean) +
             " | " + field(r.stddev) + " | " + field(r.delta) + " |\n";
    }
  }
  return out;
}

std::string format_report(const MetricsReport& report, ReportFormat format) {
  return format_rows(report_rows(report), format);
}

namespace {

std::vector<std::string> parse_csv_line(const std::string& line, int line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw ParseError("csv line " + std::to_string(line_no) + ": unterminated quote");
  fields.push_back(cur);
  return fields;
}

}  // namespace

std::vector<ReportRow> parse_report_csv(const std::string& csv_text) {
  std::istringstream in(csv_text);
  std::string line;
  std::vector<ReportRow> rows;
  int line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = parse_csv_line(line, line_no);
    if (!header_seen) {
      if (fields.size() != 6 || fields[0] != "task")
        throw ParseError("csv line 1: expected header task,method,mode,mean,std,delta");
      header_seen = true;
      continue;
    }
    if (fields.size() != 6)
      throw ParseError("csv line " + std::to_string(line_no) + ": expected 6 fields, got " +
                       std::to_string(fields.size()));
    ReportRow row;
    row.task = fields[0];
    row.method = fields[1];
    row.mode = fields[2];
    auto opt_num = [&](const std::string& s) -> std::optional<double> {
      if (s.empty()) return std::nullopt;
      try {
        return std::stod(s);
      } catch (...) {
        throw ParseError("csv line " + std::to_string(line_no) + ": bad number '" + s + "'");
      }
    };
    row.mean = opt_num(fields[3]);
    row.stddev = opt_num(fields[4]);
    row.delta = opt_num(fields[5]);
    rows.push_back(std::move(row));
  }
  if (!header_seen) throw ParseError("csv: missing header");
  return rows;
}

}  // namespace pcp
