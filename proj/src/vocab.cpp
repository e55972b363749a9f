#include "pcp/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace pcp {

namespace {

bool is_detached_punct(char c) {
  return c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':';
}

}  // namespace

std::vector<std::string> normalize_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&]() {
    if (!cur.empty()) {
      words.push_back(cur);
      cur.clear();
    }
  };
  for (const char raw : text) {
    const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (is_detached_punct(c)) {
      flush();
      words.emplace_back(1, c);
    } else {
      cur += c;
    }
  }
  flush();
  return words;
}

int Vocabulary::soft_id(int i) const {
  if (i < 0 || i >= soft_count_)
    throw IndexError("soft_id: index " + std::to_string(i) + " out of range [0, " +
                     std::to_string(soft_count_) + ")");
  return 5 + i;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size())
    throw IndexError("vocab: id " + std::to_string(id) + " out of range [0, " +
                     std::to_string(size()) + ")");
  return id_to_token_[static_cast<size_t>(id)];
}

int Vocabulary::lookup(const std::string& token) const {
  const auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? -1 : it->second;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : normalize_words(text)) {
    const int id = lookup(w);
    ids.push_back(id >= 0 && id >= first_regular_id() ? id : unk_id());
  }
  return ids;
}

int Vocabulary::encode_token(const std::string& word) const {
  const auto words = normalize_words(word);
  if (words.size() != 1) return unk_id();
  const int id = lookup(words[0]);
  return id >= 0 && id >= first_regular_id() ? id : unk_id();
}

std::vector<int> Vocabulary::encode_tokens(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) {
    const int id = lookup(t);
    ids.push_back(id >= 0 ? id : unk_id());
  }
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  for (const auto& t : id_to_token_) out << t << "\n";
  if (!out) throw IoError("failed writing '" + path + "'");
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open vocabulary file '" + path + "'");
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) tokens.push_back(line);
  }
  return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> id_to_token) {
  Vocabulary v;
  v.id_to_token_ = std::move(id_to_token);
  const std::vector<std::string> specials = {kPad, kUnk, kCls, kSep, kMask};
  if (v.id_to_token_.size() < specials.size())
    throw DataError("vocabulary: missing special tokens");
  for (size_t i = 0; i < specials.size(); ++i)
    if (v.id_to_token_[i] != specials[i])
      throw DataError("vocabulary: token " + std::to_string(i) + " must be " + specials[i] +
                      ", got '" + v.id_to_token_[i] + "'");
  int soft = 0;
  while (5 + soft < static_cast<int>(v.id_to_token_.size()) &&
         v.id_to_token_[static_cast<size_t>(5 + soft)] == "[SOFT_" + std::to_string(soft) + "]")
    ++soft;
  v.soft_count_ = soft;
  for (size_t i = 0; i < v.id_to_token_.size(); ++i) {
    const auto [it, inserted] = v.token_to_id_.emplace(v.id_to_token_[i], static_cast<int>(i));
    if (!inserted)
      throw DataError("vocabulary: duplicate token '" + v.id_to_token_[i] + "'");
  }
  return v;
}

Vocabulary build_vocab(const std::vector<Example>& corpus, int min_freq, int soft_token_count,
                       const std::vector<std::string>& required_tokens) {
  if (min_freq < 1) throw ContractError("build_vocab: min_freq must be >= 1");
  if (soft_token_count < 0) throw ContractError("build_vocab: soft_token_count must be >= 0");
  if (corpus.empty()) throw DataError("build_vocab: empty corpus");

  std::map<std::string, int64_t> freq;
  for (const auto& ex : corpus) {
    for (const auto& w : normalize_words(ex.text_a)) ++freq[w];
    if (ex.text_b)
      for (const auto& w : normalize_words(*ex.text_b)) ++freq[w];
  }
  std::set<std::string> required;
  for (const auto& r : required_tokens)
    for (const auto& w : normalize_words(r)) {
      ++freq[w];
      required.insert(w);
    }

  std::vector<std::pair<std::string, int64_t>> kept;
  for (const auto& [tok, n] : freq)
    if (n >= min_freq || required.count(tok)) kept.emplace_back(tok, n);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  std::vector<std::string> tokens = {Vocabulary::kPad, Vocabulary::kUnk, Vocabulary::kCls,
                                     Vocabulary::kSep, Vocabulary::kMask};
  for (int i = 0; i < soft_token_count; ++i) tokens.push_back("[SOFT_" + std::to_string(i) + "]");
  for (const auto& [tok, n] : kept) tokens.push_back(tok);
  return Vocabulary::from_tokens(std::move(tokens));
}

}  // namespace pcp
