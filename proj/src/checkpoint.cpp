#include "pcp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace pcp {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

namespace {

void put_u32(std::string& out, uint32_t v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(v));
}

void put_u64(std::string& out, uint64_t v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(v));
}

struct Reader {
  const std::string& bytes;
  const std::string& name;
  size_t pos = 0;

  void need(size_t n, const char* what) {
    if (pos + n > bytes.size())
      throw FormatError(name + ": truncated checkpoint, needed " + std::to_string(n) +
                        " bytes for " + what + " at offset " + std::to_string(pos));
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v;
    std::memcpy(&v, bytes.data() + pos, 4);
    pos += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v;
    std::memcpy(&v, bytes.data() + pos, 8);
    pos += 8;
    return v;
  }
  std::string str(size_t n, const char* what) {
    need(n, what);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
};

json config_to_json(const ModelConfig& c, const Vocabulary& vocab) {
  json j;
  j["vocab_size"] = c.vocab_size;
  j["hidden_dim"] = c.hidden_dim;
  j["num_layers"] = c.num_layers;
  j["num_heads"] = c.num_heads;
  j["feedforward_dim"] = c.feedforward_dim;
  j["max_sequence_length"] = c.max_sequence_length;
  j["dropout_p"] = c.dropout_p;
  j["num_labels"] = c.num_labels;
  j["seed"] = c.seed;
  json toks = json::array();
  for (int i = 0; i < vocab.size(); ++i) toks.push_back(vocab.token(i));
  j["vocab"] = toks;
  return j;
}

}  // namespace

std::string checkpoint_bytes(const ModelParameters& params, const Vocabulary& vocab) {
  std::string out = "PCPC";
  put_u32(out, kCheckpointVersion);
  const std::string cfg = config_to_json(params.config, vocab).dump();
  put_u32(out, static_cast<uint32_t>(cfg.size()));
  out += cfg;
  const auto named = params.named(ParamGroup::kAll);
  put_u32(out, static_cast<uint32_t>(named.size()));
  for (const auto& [name, tensor] : named) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<uint32_t>(tensor.dims().size()));
    for (const int d : tensor.dims()) put_u64(out, static_cast<uint64_t>(d));
    const auto vals = tensor.values();
    out.append(reinterpret_cast<const char*>(vals.data()), vals.size() * sizeof(float));
  }
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes, const std::string& source_name) {
  Reader r{bytes, source_name};
  const std::string magic = r.str(4, "magic");
  if (magic != "PCPC")
    throw FormatError(source_name + ": bad magic at offset 0, not a checkpoint");
  const uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw FormatError(source_name + ": unsupported checkpoint version " +
                      std::to_string(version) + " at offset 4");
  const uint32_t cfg_len = r.u32("config length");
  const std::string cfg_text = r.str(cfg_len, "config json");

  Checkpoint ck;
  ModelConfig cfg;
  std::vector<std::string> vocab_tokens;
  try {
    const json j = json::parse(cfg_text);
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.hidden_dim = j.at("hidden_dim").get<int>();
    cfg.num_layers = j.at("num_layers").get<int>();
    cfg.num_heads = j.at("num_heads").get<int>();
    cfg.feedforward_dim = j.at("feedforward_dim").get<int>();
    cfg.max_sequence_length = j.at("max_sequence_length").get<int>();
    cfg.dropout_p = j.at("dropout_p").get<float>();
    cfg.num_labels = j.at("num_labels").get<int>();
    cfg.seed = j.at("seed").get<uint64_t>();
    vocab_tokens = j.at("vocab").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError(source_name + ": bad embedded config: " + e.what());
  }
  ck.vocab = Vocabulary::from_tokens(std::move(vocab_tokens));
  if (ck.vocab.size() != cfg.vocab_size)
    throw FormatError(source_name + ": embedded vocab size " + std::to_string(ck.vocab.size()) +
                      " does not match config " + std::to_string(cfg.vocab_size));

  // Build a parameter skeleton, then fill tensors by name.
  ck.params = init_model(cfg);
  auto named = ck.params.named(ParamGroup::kAll);
  const uint32_t count = r.u32("tensor count");
  if (count != named.size())
    throw FormatError(source_name + ": expected " + std::to_string(named.size()) +
                      " tensors, found " + std::to_string(count));
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = r.u32("tensor name length");
    const std::string name = r.str(name_len, "tensor name");
    if (name != named[i].name)
      throw FormatError(source_name + ": tensor " + std::to_string(i) + " is '" + name +
                        "', expected '" + named[i].name + "' at offset " + std::to_string(r.pos));
    const uint32_t rank = r.u32("tensor rank");
    if (rank != named[i].tensor.dims().size())
      throw FormatError(source_name + ": tensor '" + name + "' has rank " +
                        std::to_string(rank));
    int64_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      const uint64_t dim = r.u64("tensor dim");
      if (static_cast<int64_t>(dim) != named[i].tensor.dim(static_cast<int>(d)))
        throw FormatError(source_name + ": tensor '" + name + "' dim " + std::to_string(d) +
                          " is " + std::to_string(dim) + ", expected " +
                          std::to_string(named[i].tensor.dim(static_cast<int>(d))));
      numel *= static_cast<int64_t>(dim);
    }
    r.need(static_cast<size_t>(numel) * sizeof(float), "tensor values");
    std::memcpy(named[i].tensor.values().data(), bytes.data() + r.pos,
                static_cast<size_t>(numel) * sizeof(float));
    r.pos += static_cast<size_t>(numel) * sizeof(float);
  }
  if (r.pos != bytes.size())
    throw FormatError(source_name + ": " + std::to_string(bytes.size() - r.pos) +
                      " trailing bytes at offset " + std::to_string(r.pos));
  return ck;
}

void save_checkpoint(const ModelParameters& params, const Vocabulary& vocab,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  const std::string bytes = checkpoint_bytes(params, vocab);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str(), path);
}

}  // namespace pcp
