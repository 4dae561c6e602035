#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dietnlu/checkpoint.hpp"
#include "dietnlu/config.hpp"
#include "dietnlu/data.hpp"
#include "dietnlu/evaluation.hpp"
#include "dietnlu/model.hpp"
#include "dietnlu/synthetic.hpp"
#include "dietnlu/training.hpp"

namespace {

namespace fs = std::filesystem;
using dietnlu::MatchMode;

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << content;
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";
}

MatchMode parse_mode(const std::string& mode) {
  if (mode == "overlap") return MatchMode::kOverlap;
  if (mode == "exact") return MatchMode::kExact;
  if (mode == "both") return MatchMode::kBoth;
  throw std::runtime_error("unknown mode \"" + mode +
                           "\"; expected overlap, exact or both");
}

int cmd_train(const std::string& config_path, const std::string& data_override,
              const std::string& out_override, long seed_override) {
  std::vector<std::string> warnings;
  dietnlu::PipelineConfig config =
      dietnlu::PipelineConfig::from_file(config_path, &warnings);
  if (!data_override.empty()) config.data_path = data_override;
  if (!out_override.empty()) config.output_dir = out_override;
  if (seed_override >= 0) {
    config.train.seed = static_cast<std::uint64_t>(seed_override);
  }
  config.validate(true);
  print_warnings(warnings);

  dietnlu::LoadReport load_report;
  dietnlu::Dataset data = dietnlu::load_dataset(config.data_path, &load_report);
  print_warnings(load_report.warnings);
  dietnlu::DenseSource dense = config.load_dense(&warnings);

  const fs::path out_dir(config.output_dir);
  fs::create_directories(out_dir);
  write_file(out_dir / "config.resolved.json", config.to_json() + "\n");

  const int every = config.train.checkpoint_every;
  dietnlu::EpochCallback on_epoch = [&](int epoch,
                                        const dietnlu::EpochRecord& rec,
                                        const dietnlu::DietModel& model,
                                        const dietnlu::SparseVocab& vocab) {
    std::cerr << "epoch " << epoch << " loss " << rec.loss_total;
    if (rec.dev_intent_accuracy > 0 || rec.dev_entity_f1 > 0) {
      std::cerr << " dev_acc " << rec.dev_intent_accuracy << " dev_f1 "
                << rec.dev_entity_f1;
    }
    std::cerr << "\n";
    if (every > 0 && (epoch + 1) % every == 0) {
      dietnlu::ModelBundle snapshot{model, vocab, dense};
      dietnlu::save_checkpoint(
          snapshot,
          (out_dir / ("checkpoint.epoch" + std::to_string(epoch) + ".json"))
              .string());
    }
  };

  dietnlu::TrainResult result =
      dietnlu::train(data, config.model, config.train, dense, on_epoch);

  dietnlu::ModelBundle bundle{std::move(result.model), std::move(result.vocab),
                              std::move(dense)};
  dietnlu::save_checkpoint(bundle, (out_dir / "checkpoint.json").string());
  write_file(out_dir / "history.csv", result.history.to_csv());
  write_file(out_dir / "history.json", result.history.to_json() + "\n");
  std::cout << "trained " << config.train.epochs << " epochs; artifacts in "
            << out_dir.string() << "\n";
  return 0;
}

int cmd_evaluate(const std::string& checkpoint_path, const std::string& data_path,
                 const std::string& mode, const std::string& out_path) {
  dietnlu::ModelBundle bundle = dietnlu::load_checkpoint(checkpoint_path);
  dietnlu::LoadReport load_report;
  dietnlu::Dataset data = dietnlu::load_dataset(data_path, &load_report);
  print_warnings(load_report.warnings);
  dietnlu::EvalReport report = dietnlu::evaluate_dataset(
      bundle.model, bundle.vocab, bundle.dense, data, parse_mode(mode));
  std::cout << report.to_table();
  std::cout << "latency_ms_per_utterance " << report.latency_ms_per_utterance
            << "\n";
  write_file(out_path, report.to_json() + "\n");
  return 0;
}

int cmd_predict(const std::string& checkpoint_path, const std::string& text) {
  dietnlu::ModelBundle bundle = dietnlu::load_checkpoint(checkpoint_path);
  dietnlu::Prediction pred = dietnlu::predict_utterance(bundle.model, bundle.vocab,
                                                        bundle.dense, text);
  nlohmann::json j;
  j["text"] = text;
  j["intent"] = pred.intent;
  nlohmann::json ranking = nlohmann::json::array();
  for (const auto& [name, score] : pred.ranking) {
    ranking.push_back({{"name", name}, {"score", score}});
  }
  j["intent_ranking"] = std::move(ranking);
  nlohmann::json entities = nlohmann::json::array();
  for (const dietnlu::EntitySpan& e : pred.entities) {
    entities.push_back({{"start", e.start},
                        {"end", e.end},
                        {"label", e.label},
                        {"value", e.value}});
  }
  j["entities"] = std::move(entities);
  j["tags"] = pred.tags;
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_generate(long seed, int intents, int entity_types, int train_count,
                 int test_count, double noise, const std::string& out_dir) {
  dietnlu::SyntheticSpec spec;
  spec.seed = static_cast<std::uint64_t>(seed);
  spec.num_intents = intents;
  spec.num_entity_types = entity_types;
  spec.train_count = train_count;
  spec.test_count = test_count;
  spec.noise = noise;
  auto [train_set, test_set] = dietnlu::generate_synthetic(spec);
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  dietnlu::save_dataset(train_set, (dir / "train.jsonl").string());
  dietnlu::save_dataset(test_set, (dir / "test.jsonl").string());
  std::cout << "wrote " << train_set.utterances.size() << " train and "
            << test_set.utterances.size() << " test utterances to "
            << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint intent classification and entity recognition"};
  app.require_subcommand(1);

  std::string config_path, data_path, out_path, checkpoint_path, mode = "both";
  std::string text;
  long seed = -1;
  int gen_intents = 5, gen_entity_types = 3, gen_train = 400, gen_test = 100;
  double gen_noise = 0.0;

  CLI::App* train = app.add_subcommand("train", "train a model from a config");
  train->add_option("--config", config_path, "pipeline config JSON")->required();
  train->add_option("--data", data_path, "override the config's dataset path");
  train->add_option("--out", out_path, "override the config's output directory");
  train->add_option("--seed", seed, "override the config's seed");

  CLI::App* evaluate =
      app.add_subcommand("evaluate", "score a checkpoint on a test set");
  evaluate->add_option("--checkpoint", checkpoint_path, "model checkpoint")
      ->required();
  evaluate->add_option("--data", data_path, "test dataset JSON-lines")->required();
  evaluate->add_option("--mode", mode, "overlap, exact or both");
  evaluate->add_option("--out", out_path, "report JSON path");

  CLI::App* predict = app.add_subcommand("predict", "run one utterance");
  predict->add_option("--checkpoint", checkpoint_path, "model checkpoint")
      ->required();
  predict->add_option("text", text, "utterance text");

  CLI::App* generate =
      app.add_subcommand("generate", "emit a synthetic toy dataset");
  generate->add_option("--seed", seed, "generator seed");
  generate->add_option("--intents", gen_intents, "number of intents (1-8)");
  generate->add_option("--entity-types", gen_entity_types,
                       "number of entity types (0-5)");
  generate->add_option("--train", gen_train, "train utterance count");
  generate->add_option("--test", gen_test, "test utterance count");
  generate->add_option("--noise", gen_noise, "character-noise probability");
  generate->add_option("--out", out_path, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      return cmd_train(config_path, data_path, out_path, seed);
    }
    if (evaluate->parsed()) {
      return cmd_evaluate(checkpoint_path, data_path, mode,
                          out_path.empty() ? "report.json" : out_path);
    }
    if (predict->parsed()) {
      return cmd_predict(checkpoint_path, text);
    }
    if (generate->parsed()) {
      return cmd_generate(seed < 0 ? 42 : seed, gen_intents, gen_entity_types,
                          gen_train, gen_test, gen_noise, out_path);
    }
  } catch (const std::exception& e) {
    nlohmann::json err;
    err["error"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
