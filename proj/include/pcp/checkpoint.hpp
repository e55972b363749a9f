#pragma once

#include <string>

#include "pcp/model.hpp"
#include "pcp/vocab.hpp"

namespace pcp {

// Binary checkpoint: magic "PCPC", format version u32, length-prefixed UTF-8
// JSON (model config + vocabulary), tensor count u32, then per tensor the
// length-prefixed name, rank u32, dims as u64 and raw little-endian float32
// values. No padding anywhere; load(save(x)) is bitwise.
constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParameters params;
  Vocabulary vocab;
};

void save_checkpoint(const ModelParameters& params, const Vocabulary& vocab,
                     const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

std::string checkpoint_bytes(const ModelParameters& params, const Vocabulary& vocab);
Checkpoint parse_checkpoint(const std::string& bytes, const std::string& source_name);

}  // namespace pcp
