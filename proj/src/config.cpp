#include "dietnlu/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace dietnlu {

namespace {

void warn_unknown(const nlohmann::json& obj, const std::string& where,
                  const std::set<std::string>& known,
                  std::vector<std::string>* warnings) {
  if (!warnings) return;
  for (const auto& [key, value] : obj.items()) {
    if (!known.count(key)) {
      warnings->push_back("config: unknown field \"" + where + key + "\" ignored");
    }
  }
}

template <typename T>
void read_into(const nlohmann::json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace

PipelineConfig PipelineConfig::from_json_text(
    const std::string& text, std::vector<std::string>* warnings) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(std::string("config: ") + e.what());
  }
  PipelineConfig c;
  warn_unknown(j, "",
               {"data", "output_dir", "seed", "features", "model", "losses",
                "training"},
               warnings);
  read_into(j, "data", c.data_path);
  read_into(j, "output_dir", c.output_dir);
  read_into(j, "seed", c.train.seed);

  if (j.contains("features")) {
    const auto& f = j.at("features");
    warn_unknown(f, "features.", {"sparse", "dense_table", "dense_sidecar"},
                 warnings);
    read_into(f, "sparse", c.model.use_sparse);
    read_into(f, "dense_table", c.dense_table_path);
    read_into(f, "dense_sidecar", c.dense_sidecar_path);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    warn_unknown(m, "model.",
                 {"transformer_dim", "num_layers", "num_heads", "rel_clip",
                  "embed_dim", "ffn_dim", "sparse_proj_dim",
                  "transformer_dropout", "sparse_dropout", "mask_select_rate",
                  "mask_action_mask", "mask_action_random", "n_neg"},
                 warnings);
    read_into(m, "transformer_dim", c.model.transformer_dim);
    read_into(m, "num_layers", c.model.num_layers);
    read_into(m, "num_heads", c.model.num_heads);
    read_into(m, "rel_clip", c.model.rel_clip);
    read_into(m, "embed_dim", c.model.embed_dim);
    read_into(m, "ffn_dim", c.model.ffn_dim);
    read_into(m, "sparse_proj_dim", c.model.sparse_proj_dim);
    read_into(m, "transformer_dropout", c.model.transformer_dropout);
    read_into(m, "sparse_dropout", c.model.sparse_dropout);
    read_into(m, "mask_select_rate", c.model.mask_select_rate);
    read_into(m, "mask_action_mask", c.model.mask_action_mask);
    read_into(m, "mask_action_random", c.model.mask_action_random);
    read_into(m, "n_neg", c.model.n_neg);
  }
  if (j.contains("losses")) {
    const auto& l = j.at("losses");
    warn_unknown(l, "losses.", {"intent", "entity", "mask", "weights"}, warnings);
    read_into(l, "intent", c.model.use_intent_loss);
    read_into(l, "entity", c.model.use_entity_loss);
    read_into(l, "mask", c.model.use_mask_loss);
    if (l.contains("weights")) {
      const auto& w = l.at("weights");
      warn_unknown(w, "losses.weights.", {"intent", "entity", "mask"}, warnings);
      read_into(w, "intent", c.train.weights.intent);
      read_into(w, "entity", c.train.weights.entity);
      read_into(w, "mask", c.train.weights.mask);
    }
  }
  if (j.contains("training")) {
    const auto& t = j.at("training");
    warn_unknown(t, "training.",
                 {"epochs", "batch_min", "batch_max", "learning_rate", "beta1",
                  "beta2", "epsilon", "dev_fraction", "checkpoint_every"},
                 warnings);
    read_into(t, "epochs", c.train.epochs);
    read_into(t, "batch_min", c.train.batch_min);
    read_into(t, "batch_max", c.train.batch_max);
    read_into(t, "learning_rate", c.train.adam.learning_rate);
    read_into(t, "beta1", c.train.adam.beta1);
    read_into(t, "beta2", c.train.adam.beta2);
    read_into(t, "epsilon", c.train.adam.epsilon);
    read_into(t, "dev_fraction", c.train.dev_fraction);
    read_into(t, "checkpoint_every", c.train.checkpoint_every);
  }
  return c;
}

PipelineConfig PipelineConfig::from_file(const std::string& path,
                                         std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("config: cannot open " + path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str(), warnings);
}

std::string PipelineConfig::to_json() const {
  nlohmann::json j;
  j["data"] = data_path;
  j["output_dir"] = output_dir;
  j["seed"] = train.seed;
  j["features"] = {{"sparse", model.use_sparse},
                   {"dense_table", dense_table_path},
                   {"dense_sidecar", dense_sidecar_path}};
  j["model"] = {{"transformer_dim", model.transformer_dim},
                {"num_layers", model.num_layers},
                {"num_heads", model.num_heads},
                {"rel_clip", model.rel_clip},
                {"embed_dim", model.embed_dim},
                {"ffn_dim", model.ffn_dim},
                {"sparse_proj_dim", model.sparse_proj_dim},
                {"transformer_dropout", model.transformer_dropout},
                {"sparse_dropout", model.sparse_dropout},
                {"mask_select_rate", model.mask_select_rate},
                {"mask_action_mask", model.mask_action_mask},
                {"mask_action_random", model.mask_action_random},
                {"n_neg", model.n_neg}};
  j["losses"] = {{"intent", model.use_intent_loss},
                 {"entity", model.use_entity_loss},
                 {"mask", model.use_mask_loss},
                 {"weights",
                  {{"intent", train.weights.intent},
                   {"entity", train.weights.entity},
                   {"mask", train.weights.mask}}}};
  j["training"] = {{"epochs", train.epochs},
                   {"batch_min", train.batch_min},
                   {"batch_max", train.batch_max},
                   {"learning_rate", train.adam.learning_rate},
                   {"beta1", train.adam.beta1},
                   {"beta2", train.adam.beta2},
                   {"epsilon", train.adam.epsilon},
                   {"dev_fraction", train.dev_fraction},
                   {"checkpoint_every", train.checkpoint_every}};
  return j.dump(2);
}

void PipelineConfig::validate(bool require_data) const {
  if (!dense_table_path.empty() && !dense_sidecar_path.empty()) {
    throw std::runtime_error(
        "config: features.dense_table and features.dense_sidecar are mutually "
        "exclusive");
  }
  const bool has_dense = !dense_table_path.empty() || !dense_sidecar_path.empty();
  if (!model.use_sparse && !has_dense) {
    throw std::runtime_error(
        "config: enable features.sparse or provide a dense source");
  }
  if (!model.use_intent_loss && !model.use_entity_loss && !model.use_mask_loss) {
    throw std::runtime_error("config: every loss is disabled");
  }
  train.validate();
  if (require_data) {
    if (data_path.empty()) {
      throw std::runtime_error("config: data path missing");
    }
    if (!std::filesystem::exists(data_path)) {
      throw std::runtime_error("config: data file not found: " + data_path);
    }
  }
  if (!dense_table_path.empty() && !std::filesystem::exists(dense_table_path)) {
    throw std::runtime_error("config: dense table not found: " +
                             dense_table_path);
  }
  if (!dense_sidecar_path.empty() &&
      !std::filesystem::exists(dense_sidecar_path)) {
    throw std::runtime_error("config: dense sidecar not found: " +
                             dense_sidecar_path);
  }
}

DenseSource PipelineConfig::load_dense(std::vector<std::string>* warnings) const {
  DenseSource src;
  if (!dense_table_path.empty()) {
    src.kind = DenseKind::kTable;
    src.path = dense_table_path;
    src.table = load_dense_table(dense_table_path, warnings);
  } else if (!dense_sidecar_path.empty()) {
    src.kind = DenseKind::kSidecar;
    src.path = dense_sidecar_path;
    src.sidecar = load_sidecar(dense_sidecar_path);
  }
  return src;
}

}  // namespace dietnlu
