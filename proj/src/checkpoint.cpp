#include "dietnlu/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace dietnlu {

namespace {

const char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

}  // namespace

std::string base64_encode(const std::string& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  size_t i = 0;
  while (i + 3 <= bytes.size()) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                       static_cast<unsigned char>(bytes[i + 2]);
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back(kB64Alphabet[(v >> 6) & 63]);
    out.push_back(kB64Alphabet[v & 63]);
    i += 3;
  }
  const size_t rest = bytes.size() - i;
  if (rest == 1) {
    const unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back('=');
    out.push_back('=');
  } else if (rest == 2) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8);
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back(kB64Alphabet[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

std::string base64_decode(const std::string& text) {
  int lut[256];
  for (int i = 0; i < 256; i++) lut[i] = -1;
  for (int i = 0; i < 64; i++) {
    lut[static_cast<unsigned char>(kB64Alphabet[i])] = i;
  }
  std::string out;
  out.reserve(text.size() / 4 * 3);
  unsigned acc = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=' || c == '\n' || c == '\r') continue;
    const int v = lut[static_cast<unsigned char>(c)];
    if (v < 0) {
      throw std::runtime_error("base64_decode: invalid character");
    }
    acc = (acc << 6) | static_cast<unsigned>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((acc >> bits) & 0xFF));
    }
  }
  return out;
}

namespace {

std::string pack_doubles(const std::vector<double>& values) {
  // little-endian float64; this code targets little-endian hosts
  std::string bytes(values.size() * sizeof(double), '\0');
  if (!values.empty()) {
    std::memcpy(bytes.data(), values.data(), bytes.size());
  }
  return base64_encode(bytes);
}

std::vector<double> unpack_doubles(const std::string& b64, size_t expected) {
  const std::string bytes = base64_decode(b64);
  if (bytes.size() != expected * sizeof(double)) {
    throw std::runtime_error("checkpoint: parameter payload holds " +
                             std::to_string(bytes.size() / sizeof(double)) +
                             " values, expected " + std::to_string(expected));
  }
  std::vector<double> values(expected);
  if (expected > 0) {
    std::memcpy(values.data(), bytes.data(), bytes.size());
  }
  return values;
}

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"transformer_dim", c.transformer_dim},
          {"num_layers", c.num_layers},
          {"num_heads", c.num_heads},
          {"rel_clip", c.rel_clip},
          {"embed_dim", c.embed_dim},
          {"ffn_dim", c.ffn_dim},
          {"sparse_proj_dim", c.sparse_proj_dim},
          {"use_sparse", c.use_sparse},
          {"dense_dim", c.dense_dim},
          {"use_intent_loss", c.use_intent_loss},
          {"use_entity_loss", c.use_entity_loss},
          {"use_mask_loss", c.use_mask_loss},
          {"transformer_dropout", c.transformer_dropout},
          {"sparse_dropout", c.sparse_dropout},
          {"mask_select_rate", c.mask_select_rate},
          {"mask_action_mask", c.mask_action_mask},
          {"mask_action_random", c.mask_action_random},
          {"n_neg", c.n_neg}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.transformer_dim = j.at("transformer_dim").get<int>();
  c.num_layers = j.at("num_layers").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.rel_clip = j.at("rel_clip").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.sparse_proj_dim = j.at("sparse_proj_dim").get<int>();
  c.use_sparse = j.at("use_sparse").get<bool>();
  c.dense_dim = j.at("dense_dim").get<int>();
  c.use_intent_loss = j.at("use_intent_loss").get<bool>();
  c.use_entity_loss = j.at("use_entity_loss").get<bool>();
  c.use_mask_loss = j.at("use_mask_loss").get<bool>();
  c.transformer_dropout = j.at("transformer_dropout").get<double>();
  c.sparse_dropout = j.at("sparse_dropout").get<double>();
  c.mask_select_rate = j.at("mask_select_rate").get<double>();
  c.mask_action_mask = j.at("mask_action_mask").get<double>();
  c.mask_action_random = j.at("mask_action_random").get<double>();
  c.n_neg = j.at("n_neg").get<int>();
  return c;
}

}  // namespace

std::string checkpoint_to_json(const ModelBundle& bundle) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["config"] = config_to_json(bundle.model.config);
  j["intents"] = bundle.model.intents;
  j["entity_labels"] = bundle.model.entity_labels;
  j["sparse_dim"] = bundle.model.sparse_dim;
  if (bundle.model.config.use_sparse) {
    j["vocab"] = {{"n_max", bundle.vocab.n_max},
                  {"tokens", bundle.vocab.token_index},
                  {"ngrams", bundle.vocab.ngram_index}};
  }
  switch (bundle.dense.kind) {
    case DenseKind::kNone:
      j["dense"] = {{"kind", "none"}};
      break;
    case DenseKind::kTable:
      j["dense"] = {{"kind", "table"}, {"path", bundle.dense.path}};
      break;
    case DenseKind::kSidecar:
      j["dense"] = {{"kind", "sidecar"}, {"path", bundle.dense.path}};
      break;
  }
  nlohmann::json params = nlohmann::json::array();
  for (const auto& [name, t] : bundle.model.params) {
    params.push_back({{"name", name},
                      {"shape", t.shape()},
                      {"data", pack_doubles(t.values())}});
  }
  j["params"] = std::move(params);
  return j.dump(2);
}

void save_checkpoint(const ModelBundle& bundle, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("save_checkpoint: cannot write " + path);
  }
  out << checkpoint_to_json(bundle) << '\n';
}

ModelBundle checkpoint_from_json(const std::string& text, bool reload_dense) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (!j.contains("format") || j["format"] != kCheckpointFormat) {
    throw std::runtime_error("checkpoint: missing or foreign format tag");
  }
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " +
                             j.at("version").dump());
  }
  ModelBundle bundle;
  const ModelConfig config = config_from_json(j.at("config"));
  const auto intents = j.at("intents").get<std::vector<std::string>>();
  const auto labels = j.at("entity_labels").get<std::vector<std::string>>();
  const int sparse_dim = j.at("sparse_dim").get<int>();

  if (config.use_sparse) {
    const auto& v = j.at("vocab");
    bundle.vocab.n_max = v.at("n_max").get<int>();
    bundle.vocab.token_index = v.at("tokens").get<std::map<std::string, int>>();
    bundle.vocab.ngram_index = v.at("ngrams").get<std::map<std::string, int>>();
    if (bundle.vocab.size() != sparse_dim) {
      throw std::runtime_error("checkpoint: vocab size " +
                               std::to_string(bundle.vocab.size()) +
                               " disagrees with sparse_dim " +
                               std::to_string(sparse_dim));
    }
  }

  const std::string dense_kind = j.at("dense").at("kind").get<std::string>();
  if (dense_kind == "table") {
    bundle.dense.kind = DenseKind::kTable;
    bundle.dense.path = j.at("dense").at("path").get<std::string>();
    if (reload_dense) {
      bundle.dense.table = load_dense_table(bundle.dense.path);
      if (bundle.dense.table.dim != config.dense_dim) {
        throw std::runtime_error("checkpoint: dense table at " +
                                 bundle.dense.path + " now has dimension " +
                                 std::to_string(bundle.dense.table.dim) +
                                 ", model expects " +
                                 std::to_string(config.dense_dim));
      }
    }
  } else if (dense_kind == "sidecar") {
    bundle.dense.kind = DenseKind::kSidecar;
    bundle.dense.path = j.at("dense").at("path").get<std::string>();
    if (reload_dense) {
      bundle.dense.sidecar = load_sidecar(bundle.dense.path);
      if (bundle.dense.sidecar.dim != config.dense_dim) {
        throw std::runtime_error("checkpoint: sidecar at " + bundle.dense.path +
                                 " now has dimension " +
                                 std::to_string(bundle.dense.sidecar.dim) +
                                 ", model expects " +
                                 std::to_string(config.dense_dim));
      }
    }
  } else if (dense_kind != "none") {
    throw std::runtime_error("checkpoint: unknown dense kind " + dense_kind);
  }

  // rebuild through init so the layout always matches the running code
  Rng dummy(0);
  bundle.model = init_model(config, intents, labels, sparse_dim, dummy);
  const auto& params = j.at("params");
  if (params.size() != bundle.model.params.size()) {
    throw std::runtime_error("checkpoint: holds " +
                             std::to_string(params.size()) +
                             " parameters, model defines " +
                             std::to_string(bundle.model.params.size()));
  }
  for (size_t i = 0; i < params.size(); i++) {
    const auto& p = params[i];
    auto& [name, tensor] = bundle.model.params[i];
    if (p.at("name").get<std::string>() != name) {
      throw std::runtime_error("checkpoint: parameter " + std::to_string(i) +
                               " is " + p.at("name").get<std::string>() +
                               ", expected " + name);
    }
    const auto shape = p.at("shape").get<Shape>();
    if (shape != tensor.shape()) {
      throw std::runtime_error("checkpoint: parameter " + name +
                               " has shape " + shape_str(shape) +
                               ", expected " + shape_str(tensor.shape()));
    }
    tensor.mutable_values() =
        unpack_doubles(p.at("data").get<std::string>(),
                       static_cast<size_t>(shape_size(shape)));
  }
  return bundle;
}

ModelBundle load_checkpoint(const std::string& path, bool reload_dense) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("load_checkpoint: cannot open " + path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str(), reload_dense);
}

}  // namespace dietnlu
