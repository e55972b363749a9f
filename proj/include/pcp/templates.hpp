#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pcp/data.hpp"
#include "pcp/model.hpp"
#include "pcp/vocab.hpp"

namespace pcp {

// Template DSL: "{text_a} it was {mask} ." with placeholders {text_a},
// {text_b}, {mask} and {soft:i}; literal runs go through the word tokenizer.
struct TemplateSegment {
  enum Kind { kLiteral, kTextA, kTextB, kMask, kSoft };
  Kind kind = kLiteral;
  std::string literal;  // normalized token, kLiteral only
  int soft_index = -1;  // kSoft only
  bool operator==(const TemplateSegment&) const = default;
};

struct Template {
  std::vector<TemplateSegment> segments;

  bool uses_text_b() const;
  int soft_slot_count() const;  // number of {soft:i} slots
  std::vector<std::string> literal_tokens() const;
  bool operator==(const Template&) const = default;
};

Template parse_template(const std::string& spec);
std::string serialize_template(const Template& tmpl);

enum class Metric { kAccuracy, kMacroF1, kBinaryF1, kMatthews };

Metric metric_from_name(const std::string& name);
const char* metric_name(Metric metric);

struct TaskSpec {
  std::string name;
  std::vector<std::string> label_names;
  Template tmpl;        // hard template
  Template soft_tmpl;   // soft variant, same mask arity
  std::vector<std::string> verbalizer_words;  // aligned with label_names
  Metric metric = Metric::kAccuracy;
  bool is_pair = false;

  int num_labels() const { return static_cast<int>(label_names.size()); }
  int label_id(const std::string& name) const;  // DataError when unknown
};

TaskSpec load_task(const std::string& path);
TaskSpec parse_task(const std::string& json_text, const std::string& source_name);
std::string task_to_json(const TaskSpec& task);

// Injective label -> single-token map, resolved against a vocabulary. Binding
// fails if any verbalizer word is not exactly one non-UNK regular token.
struct Verbalizer {
  std::vector<int> label_token_ids;  // index = label id
  int num_labels() const { return static_cast<int>(label_token_ids.size()); }
};

Verbalizer bind_verbalizer(const TaskSpec& task, const Vocabulary& vocab);

// All tokens a task needs in-vocabulary: template literals (hard and soft
// variants) plus verbalizer words.
std::vector<std::string> task_required_tokens(const TaskSpec& task);

// Renders [CLS] + expanded segments + [SEP], truncating text (never template
// scaffold) to fit max_len; sets mask_position.
Encoding render(const Template& tmpl, const Example& example, const Vocabulary& vocab,
                int max_len);

// As render, but the mask slot holds the verbalized label token and no
// mask_position is set.
std::vector<int> render_pcp(const Template& tmpl, const Example& example, int label_id,
                            const Verbalizer& verbalizer, const Vocabulary& vocab,
                            int max_len);

// Plain CLS-style input: [CLS] a [SEP] (+ b [SEP] for pairs).
Encoding render_cls_input(const Example& example, const Vocabulary& vocab, int max_len);

struct SoftInitReport {
  int paired = 0;      // soft slots seeded from hard-template literals
  int randomized = 0;  // excess slots that fell back to Normal(0, 0.02)
};

// Overwrites the embedding rows of [SOFT_i] with the embedding of the i-th
// literal token of the hard template; excess slots are re-randomized.
SoftInitReport soft_prompt_init(const Template& soft_tmpl, const Template& hard_tmpl,
                                ModelParameters& params, const Vocabulary& vocab, Rng& rng);

}  // namespace pcp
