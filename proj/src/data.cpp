#include "pcp/data.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace pcp {

using nlohmann::json;

const char* label_origin_name(LabelOrigin origin) {
  switch (origin) {
    case LabelOrigin::kNone: return "none";
    case LabelOrigin::kGold: return "gold";
    case LabelOrigin::kPseudo: return "pseudo";
    case LabelOrigin::kRandom: return "random";
    case LabelOrigin::kWrong: return "wrong";
  }
  return "none";
}

LabelOrigin label_origin_from_name(const std::string& name) {
  if (name == "none") return LabelOrigin::kNone;
  if (name == "gold") return LabelOrigin::kGold;
  if (name == "pseudo") return LabelOrigin::kPseudo;
  if (name == "random") return LabelOrigin::kRandom;
  if (name == "wrong") return LabelOrigin::kWrong;
  throw DataError("unknown label origin '" + name + "'");
}

std::vector<Example> parse_dataset(const std::string& content, const std::string& source_name) {
  std::vector<Example> out;
  std::istringstream in(content);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(source_name + ":" + std::to_string(line_no) + ": malformed JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("text_a") || !j["text_a"].is_string())
      throw DataError(source_name + ":" + std::to_string(line_no) + ": expected object with string text_a");
    Example ex;
    ex.text_a = j["text_a"].get<std::string>();
    if (j.contains("text_b") && !j["text_b"].is_null()) {
      if (!j["text_b"].is_string())
        throw DataError(source_name + ":" + std::to_string(line_no) + ": text_b must be a string");
      ex.text_b = j["text_b"].get<std::string>();
    }
    if (j.contains("label") && !j["label"].is_null()) {
      if (!j["label"].is_string())
        throw DataError(source_name + ":" + std::to_string(line_no) + ": label must be a string");
      ex.label = j["label"].get<std::string>();
    }
    if (j.contains("origin") && !j["origin"].is_null())
      ex.origin = label_origin_from_name(j["origin"].get<std::string>());
    else if (ex.label)
      ex.origin = LabelOrigin::kGold;
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<Example> load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_dataset(ss.str(), path);
}

std::string dataset_to_jsonl(const std::vector<Example>& examples) {
  std::string out;
  for (const auto& ex : examples) {
    json j;
    j["text_a"] = ex.text_a;
    if (ex.text_b) j["text_b"] = *ex.text_b;
    if (ex.label) j["label"] = *ex.label;
    if (ex.origin != LabelOrigin::kNone && ex.origin != LabelOrigin::kGold)
      j["origin"] = label_origin_name(ex.origin);
    out += j.dump();
    out += "\n";
  }
  return out;
}

void save_dataset(const std::vector<Example>& examples, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << dataset_to_jsonl(examples);
  if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace pcp
