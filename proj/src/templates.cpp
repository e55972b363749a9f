#include "pcp/templates.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace pcp {

using nlohmann::json;

bool Template::uses_text_b() const {
  return std::any_of(segments.begin(), segments.end(),
                     [](const auto& s) { return s.kind == TemplateSegment::kTextB; });
}

int Template::soft_slot_count() const {
  int n = 0;
  for (const auto& s : segments) n += s.kind == TemplateSegment::kSoft;
  return n;
}

std::vector<std::string> Template::literal_tokens() const {
  std::vector<std::string> out;
  for (const auto& s : segments)
    if (s.kind == TemplateSegment::kLiteral) out.push_back(s.literal);
  return out;
}

Template parse_template(const std::string& spec) {
  Template tmpl;
  int mask_count = 0;
  size_t pos = 0;
  std::string literal_run;
  auto flush_literals = [&]() {
    for (const auto& w : normalize_words(literal_run))
      tmpl.segments.push_back({TemplateSegment::kLiteral, w, -1});
    literal_run.clear();
  };
  while (pos < spec.size()) {
    if (spec[pos] != '{') {
      literal_run += spec[pos++];
      continue;
    }
    const size_t close = spec.find('}', pos);
    if (close == std::string::npos)
      throw ParseError("template: unterminated placeholder at offset " + std::to_string(pos));
    const std::string name = spec.substr(pos + 1, close - pos - 1);
    flush_literals();
    if (name == "text_a") {
      tmpl.segments.push_back({TemplateSegment::kTextA, "", -1});
    } else if (name == "text_b") {
      tmpl.segments.push_back({TemplateSegment::kTextB, "", -1});
    } else if (name == "mask") {
      tmpl.segments.push_back({TemplateSegment::kMask, "", -1});
      ++mask_count;
    } else if (name.rfind("soft:", 0) == 0) {
      int idx = -1;
      try {
        size_t used = 0;
        idx = std::stoi(name.substr(5), &used);
        if (used != name.size() - 5) idx = -1;
      } catch (...) {
        idx = -1;
      }
      if (idx < 0)
        throw ParseError("template: bad soft index in '{" + name + "}' at offset " +
                         std::to_string(pos));
      tmpl.segments.push_back({TemplateSegment::kSoft, "", idx});
    } else {
      throw ParseError("template: unknown placeholder '{" + name + "}' at offset " +
                       std::to_string(pos));
    }
    pos = close + 1;
  }
  flush_literals();
  if (mask_count != 1)
    throw TemplateError("template: expected exactly one {mask}, found " +
                        std::to_string(mask_count) + " in \"" + spec + "\"");
  return tmpl;
}

std::string serialize_template(const Template& tmpl) {
  std::string out;
  for (const auto& s : tmpl.segments) {
    if (!out.empty()) out += ' ';
    switch (s.kind) {
      case TemplateSegment::kLiteral: out += s.literal; break;
      case TemplateSegment::kTextA: out += "{text_a}"; break;
      case TemplateSegment::kTextB: out += "{text_b}"; break;
      case TemplateSegment::kMask: out += "{mask}"; break;
      case TemplateSegment::kSoft: out += "{soft:" + std::to_string(s.soft_index) + "}"; break;
    }
  }
  return out;
}

Metric metric_from_name(const std::string& name) {
  if (name == "accuracy") return Metric::kAccuracy;
  if (name == "macro_f1") return Metric::kMacroF1;
  if (name == "binary_f1") return Metric::kBinaryF1;
  if (name == "matthews") return Metric::kMatthews;
  throw ConfigError("unknown metric '" + name + "'");
}

const char* metric_name(Metric metric) {
  switch (metric) {
    case Metric::kAccuracy: return "accuracy";
    case Metric::kMacroF1: return "macro_f1";
    case Metric::kBinaryF1: return "binary_f1";
    case Metric::kMatthews: return "matthews";
  }
  return "accuracy";
}

int TaskSpec::label_id(const std::string& name) const {
  for (size_t i = 0; i < label_names.size(); ++i)
    if (label_names[i] == name) return static_cast<int>(i);
  throw DataError("task " + this->name + ": unknown label '" + name + "'");
}

TaskSpec parse_task(const std::string& json_text, const std::string& source_name) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ParseError(source_name + ": malformed task JSON: " + e.what());
  }
  TaskSpec t;
  try {
    t.name = j.at("name").get<std::string>();
    t.label_names = j.at("labels").get<std::vector<std::string>>();
    t.tmpl = parse_template(j.at("template").get<std::string>());
    t.soft_tmpl = j.contains("soft_template")
                      ? parse_template(j.at("soft_template").get<std::string>())
                      : t.tmpl;
    t.metric = metric_from_name(j.at("metric").get<std::string>());
    t.is_pair = j.at("is_pair").get<bool>();
    const auto& verb = j.at("verbalizer");
    for (const auto& label : t.label_names) {
      if (!verb.contains(label))
        throw ConfigError(source_name + ": verbalizer missing label '" + label + "'");
      t.verbalizer_words.push_back(verb.at(label).get<std::string>());
    }
  } catch (const json::exception& e) {
    throw ParseError(source_name + ": bad task file: " + e.what());
  }
  if (t.label_names.empty()) throw ConfigError(source_name + ": task needs at least one label");
  if (t.tmpl.uses_text_b() != t.is_pair || t.soft_tmpl.uses_text_b() != t.is_pair)
    throw ConfigError(source_name + ": {text_b} must appear iff is_pair");
  return t;
}

TaskSpec load_task(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open task file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_task(ss.str(), path);
}

std::string task_to_json(const TaskSpec& task) {
  json j;
  j["name"] = task.name;
  j["labels"] = task.label_names;
  j["template"] = serialize_template(task.tmpl);
  j["soft_template"] = serialize_template(task.soft_tmpl);
  json verb;
  for (size_t i = 0; i < task.label_names.size(); ++i)
    verb[task.label_names[i]] = task.verbalizer_words[i];
  j["verbalizer"] = verb;
  j["metric"] = metric_name(task.metric);
  j["is_pair"] = task.is_pair;
  return j.dump(2);
}

Verbalizer bind_verbalizer(const TaskSpec& task, const Vocabulary& vocab) {
  Verbalizer v;
  std::set<int> seen;
  for (size_t i = 0; i < task.label_names.size(); ++i) {
    const auto& word = task.verbalizer_words[i];
    const auto toks = normalize_words(word);
    if (toks.size() != 1)
      throw ConfigError("task " + task.name + ": verbalizer word '" + word +
                        "' is not a single token");
    const int id = vocab.encode_token(toks[0]);
    if (id == vocab.unk_id())
      throw ConfigError("task " + task.name + ": verbalizer word '" + word +
                        "' is not in the vocabulary");
    if (!seen.insert(id).second)
      throw ConfigError("task " + task.name + ": verbalizer is not injective at '" + word + "'");
    v.label_token_ids.push_back(id);
  }
  return v;
}

std::vector<std::string> task_required_tokens(const TaskSpec& task) {
  std::vector<std::string> out;
  for (const auto& t : task.tmpl.literal_tokens()) out.push_back(t);
  for (const auto& t : task.soft_tmpl.literal_tokens()) out.push_back(t);
  for (const auto& w : task.verbalizer_words) out.push_back(w);
  return out;
}

namespace {

// Shared renderer. mask_replacement < 0 keeps the MASK token.
Encoding render_impl(const Template& tmpl, const Example& example, const Vocabulary& vocab,
                     int max_len, int mask_replacement) {
  if (tmpl.uses_text_b() != example.text_b.has_value())
    throw ContractError("render: example " + std::string(example.text_b ? "has" : "lacks") +
                        " text_b but the template " +
                        (tmpl.uses_text_b() ? "expects" : "does not expect") + " it");

  std::vector<int> a_ids = vocab.encode(example.text_a);
  std::vector<int> b_ids = example.text_b ? vocab.encode(*example.text_b) : std::vector<int>{};

  int fixed = 2;  // [CLS] and [SEP]
  for (const auto& s : tmpl.segments)
    if (s.kind != TemplateSegment::kTextA && s.kind != TemplateSegment::kTextB) ++fixed;
  if (fixed > max_len)
    throw TemplateError("render: template scaffold needs " + std::to_string(fixed) +
                        " tokens but max_len is " + std::to_string(max_len));

  // Drop text tokens from the tail, longest field first, until things fit.
  int avail = max_len - fixed;
  while (static_cast<int>(a_ids.size() + b_ids.size()) > avail) {
    if (a_ids.size() >= b_ids.size() && !a_ids.empty())
      a_ids.pop_back();
    else
      b_ids.pop_back();
  }

  Encoding enc;
  enc.ids.push_back(vocab.cls_id());
  for (const auto& s : tmpl.segments) {
    switch (s.kind) {
      case TemplateSegment::kLiteral: {
        const int id = vocab.lookup(s.literal);
        enc.ids.push_back(id >= vocab.first_regular_id() ? id : vocab.unk_id());
        break;
      }
      case TemplateSegment::kTextA:
        enc.ids.insert(enc.ids.end(), a_ids.begin(), a_ids.end());
        break;
      case TemplateSegment::kTextB:
        enc.ids.insert(enc.ids.end(), b_ids.begin(), b_ids.end());
        break;
      case TemplateSegment::kMask:
        if (mask_replacement < 0) {
          enc.mask_position = static_cast<int>(enc.ids.size());
          enc.ids.push_back(vocab.mask_id());
        } else {
          enc.ids.push_back(mask_replacement);
        }
        break;
      case TemplateSegment::kSoft:
        enc.ids.push_back(vocab.soft_id(s.soft_index));
        break;
    }
  }
  enc.ids.push_back(vocab.sep_id());
  enc.attention_mask.assign(enc.ids.size(), 1.0f);
  return enc;
}

}  // namespace

Encoding render(const Template& tmpl, const Example& example, const Vocabulary& vocab,
                int max_len) {
  return render_impl(tmpl, example, vocab, max_len, -1);
}

std::vector<int> render_pcp(const Template& tmpl, const Example& example, int label_id,
                            const Verbalizer& verbalizer, const Vocabulary& vocab,
                            int max_len) {
  if (label_id < 0 || label_id >= verbalizer.num_labels())
    throw DataError("render_pcp: label id " + std::to_string(label_id) +
                    " out of range for verbalizer of size " +
                    std::to_string(verbalizer.num_labels()));
  return render_impl(tmpl, example, vocab, max_len,
                     verbalizer.label_token_ids[static_cast<size_t>(label_id)])
      .ids;
}

Encoding render_cls_input(const Example& example, const Vocabulary& vocab, int max_len) {
  std::vector<int> a_ids = vocab.encode(example.text_a);
  std::vector<int> b_ids = example.text_b ? vocab.encode(*example.text_b) : std::vector<int>{};
  const int fixed = example.text_b ? 3 : 2;  // [CLS] plus one [SEP] per sentence
  if (fixed > max_len) throw TemplateError("render_cls_input: max_len too small");
  const int avail = max_len - fixed;
  while (static_cast<int>(a_ids.size() + b_ids.size()) > avail) {
    if (a_ids.size() >= b_ids.size() && !a_ids.empty())
      a_ids.pop_back();
    else
      b_ids.pop_back();
  }
  Encoding enc;
  enc.ids.push_back(vocab.cls_id());
  enc.ids.insert(enc.ids.end(), a_ids.begin(), a_ids.end());
  enc.ids.push_back(vocab.sep_id());
  if (example.text_b) {
    enc.ids.insert(enc.ids.end(), b_ids.begin(), b_ids.end());
    enc.ids.push_back(vocab.sep_id());
  }
  enc.attention_mask.assign(enc.ids.size(), 1.0f);
  return enc;
}

SoftInitReport soft_prompt_init(const Template& soft_tmpl, const Template& hard_tmpl,
                                ModelParameters& params, const Vocabulary& vocab, Rng& rng) {
  const auto literals = hard_tmpl.literal_tokens();
  std::vector<int> soft_indices;
  for (const auto& s : soft_tmpl.segments)
    if (s.kind == TemplateSegment::kSoft) soft_indices.push_back(s.soft_index);
  if (static_cast<int>(soft_indices.size()) > vocab.soft_count())
    throw ContractError("soft_prompt_init: template uses " +
                        std::to_string(soft_indices.size()) + " soft slots but only " +
                        std::to_string(vocab.soft_count()) + " are reserved");

  SoftInitReport report;
  const int d = params.config.hidden_dim;
  auto emb = params.tok_emb.values();
  for (size_t i = 0; i < soft_indices.size(); ++i) {
    const int soft_row = vocab.soft_id(soft_indices[i]);
    float* dst = emb.data() + static_cast<int64_t>(soft_row) * d;
    if (i < literals.size()) {
      const int src_id = vocab.lookup(literals[i]);
      if (src_id >= vocab.first_regular_id()) {
        const float* src = emb.data() + static_cast<int64_t>(src_id) * d;
        std::copy_n(src, d, dst);
        ++report.paired;
        continue;
      }
    }
    for (int c = 0; c < d; ++c) dst[c] = rng.normal(0.0f, 0.02f);
    ++report.randomized;
  }
  return report;
}

}  // namespace pcp
