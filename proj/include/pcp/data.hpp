#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pcp/error.hpp"

namespace pcp {

enum class LabelOrigin { kNone, kGold, kPseudo, kRandom, kWrong };

const char* label_origin_name(LabelOrigin origin);
LabelOrigin label_origin_from_name(const std::string& name);

// One dataset row: text_a, optional text_b for sentence-pair tasks, optional
// label name (validated against the task spec at use time).
struct Example {
  std::string text_a;
  std::optional<std::string> text_b;
  std::optional<std::string> label;
  LabelOrigin origin = LabelOrigin::kNone;
};

// JSONL with one object per line: {"text_a": ..., "text_b"?: ..., "label"?: ...}.
std::vector<Example> load_dataset(const std::string& path);
std::vector<Example> parse_dataset(const std::string& content, const std::string& source_name);
void save_dataset(const std::vector<Example>& examples, const std::string& path);
std::string dataset_to_jsonl(const std::vector<Example>& examples);

}  // namespace pcp
