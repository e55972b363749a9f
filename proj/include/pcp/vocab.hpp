#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pcp/data.hpp"
#include "pcp/error.hpp"

namespace pcp {

// Word-level vocabulary. Ids are dense in [0, size): the five special tokens
// first, then the reserved soft-prompt tokens, then corpus words ordered by
// (frequency desc, token asc).
class Vocabulary {
 public:
  static constexpr const char* kPad = "[PAD]";
  static constexpr const char* kUnk = "[UNK]";
  static constexpr const char* kCls = "[CLS]";
  static constexpr const char* kSep = "[SEP]";
  static constexpr const char* kMask = "[MASK]";

  Vocabulary() = default;

  int size() const { return static_cast<int>(id_to_token_.size()); }
  int pad_id() const { return 0; }
  int unk_id() const { return 1; }
  int cls_id() const { return 2; }
  int sep_id() const { return 3; }
  int mask_id() const { return 4; }
  int soft_count() const { return soft_count_; }
  int soft_id(int i) const;
  int first_regular_id() const { return 5 + soft_count_; }

  bool is_special(int id) const { return id >= 0 && id < 5; }
  bool is_soft(int id) const { return id >= 5 && id < 5 + soft_count_; }

  const std::string& token(int id) const;
  int lookup(const std::string& token) const;  // -1 when absent

  // Word-level encoding: lowercase, split on whitespace, detach . , ! ? ; :
  // Unknown words map to UNK; no special tokens are inserted.
  std::vector<int> encode(std::string_view text) const;

  // Exact token lookup after normalization; UNK when absent.
  int encode_token(const std::string& word) const;

  // Maps already-tokenized strings (including bracketed special and soft
  // names) back to ids; the inverse of decode for in-vocabulary tokens.
  std::vector<int> encode_tokens(const std::vector<std::string>& tokens) const;

  std::string decode(const std::vector<int>& ids) const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);
  static Vocabulary from_tokens(std::vector<std::string> id_to_token);

  friend Vocabulary build_vocab(const std::vector<Example>& corpus, int min_freq,
                                int soft_token_count,
                                const std::vector<std::string>& required_tokens);

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
  int soft_count_ = 0;
};

// Tokenizer normalization used everywhere: lowercase, whitespace split, and
// . , ! ? ; : detached as their own tokens.
std::vector<std::string> normalize_words(std::string_view text);

// Builds a vocabulary from the corpus (text_a and text_b of every example).
// Words with frequency >= min_freq are kept. required_tokens are counted one
// extra time and always kept, so task template literals and verbalizer words
// can be guaranteed in-vocabulary.
Vocabulary build_vocab(const std::vector<Example>& corpus, int min_freq,
                       int soft_token_count,
                       const std::vector<std::string>& required_tokens = {});

}  // namespace pcp
