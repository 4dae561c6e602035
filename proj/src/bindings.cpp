#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>

#include <json.hpp>

#include "dietnlu/checkpoint.hpp"
#include "dietnlu/config.hpp"
#include "dietnlu/data.hpp"
#include "dietnlu/evaluation.hpp"
#include "dietnlu/featurizer.hpp"
#include "dietnlu/model.hpp"
#include "dietnlu/synthetic.hpp"
#include "dietnlu/training.hpp"

namespace py = pybind11;
using namespace dietnlu;

namespace {

py::object json_to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json utterance_json(const Utterance& u) {
  nlohmann::json entities = nlohmann::json::array();
  for (const EntitySpan& e : u.entities) {
    entities.push_back({{"start", e.start},
                        {"end", e.end},
                        {"label", e.label},
                        {"value", e.value}});
  }
  return {{"text", u.text}, {"intent", u.intent}, {"entities", entities}};
}

std::vector<EntitySpan> spans_from_py(const py::object& seq) {
  std::vector<EntitySpan> out;
  for (py::handle item : seq) {
    py::dict d = py::cast<py::dict>(item);
    EntitySpan e;
    e.start = d["start"].cast<int>();
    e.end = d["end"].cast<int>();
    e.label = d["label"].cast<std::string>();
    if (d.contains("value")) e.value = d["value"].cast<std::string>();
    out.push_back(std::move(e));
  }
  return out;
}

MatchMode mode_from_string(const std::string& mode) {
  if (mode == "overlap") return MatchMode::kOverlap;
  if (mode == "exact") return MatchMode::kExact;
  if (mode == "both") return MatchMode::kBoth;
  throw std::invalid_argument("mode must be overlap, exact or both");
}

struct Predictor {
  ModelBundle bundle;

  static Predictor load(const std::string& path) {
    return Predictor{load_checkpoint(path)};
  }

  py::object predict(const std::string& text) const {
    Prediction p = predict_utterance(bundle.model, bundle.vocab, bundle.dense, text);
    nlohmann::json j;
    j["text"] = text;
    j["intent"] = p.intent;
    nlohmann::json ranking = nlohmann::json::array();
    for (const auto& [name, score] : p.ranking) {
      ranking.push_back({{"name", name}, {"score", score}});
    }
    j["intent_ranking"] = std::move(ranking);
    nlohmann::json entities = nlohmann::json::array();
    for (const EntitySpan& e : p.entities) {
      entities.push_back({{"start", e.start},
                          {"end", e.end},
                          {"label", e.label},
                          {"value", e.value}});
    }
    j["entities"] = std::move(entities);
    j["tags"] = p.tags;
    return json_to_py(j);
  }

  py::object evaluate(const std::string& data_path, const std::string& mode) const {
    Dataset data = load_dataset(data_path);
    EvalReport report = evaluate_dataset(bundle.model, bundle.vocab, bundle.dense,
                                         data, mode_from_string(mode));
    return json_to_py(nlohmann::json::parse(report.to_json()));
  }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "joint intent and entity model: tokenization, tagging, training, "
            "inference";
  m.attr("__version__") = "0.1.0";

  m.def(
      "tokenize",
      [](const std::string& text) {
        nlohmann::json arr = nlohmann::json::array();
        for (const Token& t : tokenize(text)) {
          arr.push_back({{"text", t.text}, {"start", t.start}, {"end", t.end}});
        }
        return json_to_py(arr);
      },
      py::arg("text"), "whitespace/punctuation tokenizer with offsets");

  m.def("char_ngrams", &char_ngrams, py::arg("token"), py::arg("n_max") = 5,
        "sorted unique character n-grams of the lowercased token");

  m.def(
      "spans_to_bilou",
      [](const std::string& text, const py::object& entities) {
        Utterance u = make_utterance(text, "", spans_from_py(entities));
        return spans_to_bilou(u);
      },
      py::arg("text"), py::arg("entities"));

  m.def(
      "bilou_to_spans",
      [](const std::string& text, const std::vector<std::string>& tags) {
        nlohmann::json arr = nlohmann::json::array();
        for (const EntitySpan& e : bilou_to_spans(text, tokenize(text), tags)) {
          arr.push_back({{"start", e.start},
                         {"end", e.end},
                         {"label", e.label},
                         {"value", e.value}});
        }
        return json_to_py(arr);
      },
      py::arg("text"), py::arg("tags"));

  m.def(
      "generate",
      [](std::uint64_t seed, int intents, int entity_types, int train_count,
         int test_count, double noise) {
        SyntheticSpec spec;
        spec.seed = seed;
        spec.num_intents = intents;
        spec.num_entity_types = entity_types;
        spec.train_count = train_count;
        spec.test_count = test_count;
        spec.noise = noise;
        auto [train_set, test_set] = generate_synthetic(spec);
        nlohmann::json tr = nlohmann::json::array();
        for (const Utterance& u : train_set.utterances) {
          tr.push_back(utterance_json(u));
        }
        nlohmann::json te = nlohmann::json::array();
        for (const Utterance& u : test_set.utterances) {
          te.push_back(utterance_json(u));
        }
        return py::make_tuple(json_to_py(tr), json_to_py(te));
      },
      py::arg("seed") = 42, py::arg("intents") = 5, py::arg("entity_types") = 3,
      py::arg("train_count") = 400, py::arg("test_count") = 100,
      py::arg("noise") = 0.0, "synthetic toy grammar; returns (train, test)");

  m.def(
      "train",
      [](const std::string& config_json) {
        std::vector<std::string> warnings;
        PipelineConfig config =
            PipelineConfig::from_json_text(config_json, &warnings);
        config.validate(true);
        Dataset data = load_dataset(config.data_path);
        DenseSource dense = config.load_dense();
        TrainResult result = train(data, config.model, config.train, dense);
        ModelBundle bundle{std::move(result.model), std::move(result.vocab),
                           std::move(dense)};
        std::filesystem::create_directories(config.output_dir);
        const std::string ckpt = config.output_dir + "/checkpoint.json";
        save_checkpoint(bundle, ckpt);
        nlohmann::json out;
        out["checkpoint"] = ckpt;
        out["history"] = nlohmann::json::parse(result.history.to_json());
        out["warnings"] = warnings;
        return json_to_py(out);
      },
      py::arg("config_json"),
      "train from a pipeline-config JSON string; writes the checkpoint and "
      "returns {checkpoint, history, warnings}");

  m.def(
      "intent_metrics",
      [](const std::vector<std::string>& predictions,
         const std::vector<std::string>& golds) {
        IntentMetrics im = intent_metrics(predictions, golds);
        nlohmann::json j = {{"accuracy", im.accuracy},
                            {"precision", im.micro.precision},
                            {"recall", im.micro.recall},
                            {"f1", im.micro.f1}};
        return json_to_py(j);
      },
      py::arg("predictions"), py::arg("golds"));

  m.def(
      "entity_metrics",
      [](const py::object& predictions, const py::object& golds,
         const std::string& mode) {
        std::vector<std::vector<EntitySpan>> pred, gold;
        for (py::handle u : predictions) {
          pred.push_back(spans_from_py(py::reinterpret_borrow<py::object>(u)));
        }
        for (py::handle u : golds) {
          gold.push_back(spans_from_py(py::reinterpret_borrow<py::object>(u)));
        }
        Metrics mt = entity_metrics(pred, gold, mode_from_string(mode));
        nlohmann::json j = {{"precision", mt.precision}, {"recall", mt.recall},
                            {"f1", mt.f1},               {"tp", mt.tp},
                            {"fp", mt.fp},               {"fn", mt.fn}};
        return json_to_py(j);
      },
      py::arg("predictions"), py::arg("golds"), py::arg("mode") = "overlap",
      "per-utterance span lists -> micro-averaged scores");

  py::class_<Predictor>(m, "Predictor")
      .def_static("load", &Predictor::load, py::arg("checkpoint_path"))
      .def("predict", &Predictor::predict, py::arg("text"))
      .def("evaluate", &Predictor::evaluate, py::arg("data_path"),
           py::arg("mode") = "both");
}
