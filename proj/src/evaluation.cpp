#include "dietnlu/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace dietnlu {

Metrics finalize_metrics(long tp, long fp, long fn) {
  Metrics m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  m.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  m.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

IntentMetrics intent_metrics(const std::vector<std::string>& predictions,
                             const std::vector<std::string>& golds) {
  if (predictions.size() != golds.size()) {
    throw std::invalid_argument("intent_metrics: " +
                                std::to_string(predictions.size()) +
                                " predictions vs " +
                                std::to_string(golds.size()) + " golds");
  }
  if (golds.empty()) {
    throw std::invalid_argument("intent_metrics: empty test set");
  }
  long correct = 0;
  for (size_t i = 0; i < golds.size(); i++) {
    if (predictions[i] == golds[i]) correct++;
  }
  const long n = static_cast<long>(golds.size());
  IntentMetrics im;
  // single-label: every wrong prediction is one FP and one FN
  im.micro = finalize_metrics(correct, n - correct, n - correct);
  im.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return im;
}

namespace {

int span_overlap(const EntitySpan& a, const EntitySpan& b) {
  return std::max(0, std::min(a.end, b.end) - std::max(a.start, b.start));
}

bool span_exact(const EntitySpan& a, const EntitySpan& b) {
  return a.start == b.start && a.end == b.end;
}

}  // namespace

Metrics entity_metrics(const std::vector<std::vector<EntitySpan>>& predictions,
                       const std::vector<std::vector<EntitySpan>>& golds,
                       MatchMode mode) {
  if (predictions.size() != golds.size()) {
    throw std::invalid_argument("entity_metrics: prediction/gold count mismatch");
  }
  if (mode == MatchMode::kBoth) {
    throw std::invalid_argument("entity_metrics: pick one mode per call");
  }
  long tp = 0, fp = 0, fn = 0;
  for (size_t u = 0; u < golds.size(); u++) {
    const auto& pred = predictions[u];
    const auto& gold = golds[u];
    struct Cand {
      int overlap;
      int pi;
      int gi;
    };
    std::vector<Cand> cands;
    for (size_t pi = 0; pi < pred.size(); pi++) {
      for (size_t gi = 0; gi < gold.size(); gi++) {
        if (pred[pi].label != gold[gi].label) continue;
        const int ov = span_overlap(pred[pi], gold[gi]);
        if (ov <= 0) continue;
        if (mode == MatchMode::kExact && !span_exact(pred[pi], gold[gi])) continue;
        cands.push_back({ov, static_cast<int>(pi), static_cast<int>(gi)});
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.overlap != b.overlap) return a.overlap > b.overlap;
      if (a.pi != b.pi) return a.pi < b.pi;
      return a.gi < b.gi;
    });
    std::vector<bool> pred_used(pred.size(), false);
    std::vector<bool> gold_used(gold.size(), false);
    long matched = 0;
    for (const Cand& c : cands) {
      if (pred_used[c.pi] || gold_used[c.gi]) continue;
      pred_used[c.pi] = true;
      gold_used[c.gi] = true;
      matched++;
    }
    tp += matched;
    fp += static_cast<long>(pred.size()) - matched;
    fn += static_cast<long>(gold.size()) - matched;
  }
  return finalize_metrics(tp, fp, fn);
}

std::vector<std::pair<std::string, double>> EvalReport::flatten() const {
  std::vector<std::pair<std::string, double>> out;
  out.emplace_back("intent.accuracy", intent.accuracy);
  out.emplace_back("intent.precision", intent.micro.precision);
  out.emplace_back("intent.recall", intent.micro.recall);
  out.emplace_back("intent.f1", intent.micro.f1);
  if (has_overlap) {
    out.emplace_back("entity.overlap.precision", entity_overlap.precision);
    out.emplace_back("entity.overlap.recall", entity_overlap.recall);
    out.emplace_back("entity.overlap.f1", entity_overlap.f1);
  }
  if (has_exact) {
    out.emplace_back("entity.exact.precision", entity_exact.precision);
    out.emplace_back("entity.exact.recall", entity_exact.recall);
    out.emplace_back("entity.exact.f1", entity_exact.f1);
  }
  return out;
}

namespace {

nlohmann::json metrics_json(const Metrics& m) {
  return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
          {"tp", m.tp},               {"fp", m.fp},         {"fn", m.fn}};
}

}  // namespace

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["dataset"] = dataset_name;
  j["num_utterances"] = num_utterances;
  j["intent"] = metrics_json(intent.micro);
  j["intent"]["accuracy"] = intent.accuracy;
  if (has_overlap) j["entity"]["overlap"] = metrics_json(entity_overlap);
  if (has_exact) j["entity"]["exact"] = metrics_json(entity_exact);
  j["latency_ms_per_utterance"] = latency_ms_per_utterance;
  return j.dump(2);
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << std::left << std::setw(28) << "metric" << std::right << std::setw(10)
     << "value" << "\n";
  for (const auto& [name, value] : flatten()) {
    os << std::left << std::setw(28) << name << std::right << std::setw(10)
       << value << "\n";
  }
  return os.str();
}

std::vector<AggregateRow> aggregate_runs(const std::vector<EvalReport>& runs) {
  if (runs.empty()) {
    throw std::invalid_argument("aggregate_runs: no reports");
  }
  const auto first = runs.front().flatten();
  std::vector<AggregateRow> rows;
  for (size_t k = 0; k < first.size(); k++) {
    AggregateRow row;
    row.name = first[k].first;
    std::vector<double> vals;
    for (const EvalReport& r : runs) {
      const auto flat = r.flatten();
      if (flat.size() != first.size() || flat[k].first != row.name) {
        throw std::invalid_argument(
            "aggregate_runs: reports carry different metric sets");
      }
      vals.push_back(flat[k].second);
    }
    double sum = 0.0;
    for (double v : vals) sum += v;
    row.mean = sum / static_cast<double>(vals.size());
    if (vals.size() > 1) {
      double ss = 0.0;
      for (double v : vals) ss += (v - row.mean) * (v - row.mean);
      row.stdev = std::sqrt(ss / static_cast<double>(vals.size() - 1));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string aggregate_table(const std::vector<AggregateRow>& rows) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << std::left << std::setw(28) << "metric" << std::right << std::setw(10)
     << "mean" << std::setw(12) << "stdev" << "\n";
  for (const AggregateRow& r : rows) {
    os << std::left << std::setw(28) << r.name << std::right << std::setw(10)
       << r.mean << std::setw(12) << r.stdev << "\n";
  }
  return os.str();
}

EvalReport evaluate_dataset(const DietModel& model, const SparseVocab& vocab,
                            const DenseSource& dense, const Dataset& data,
                            MatchMode mode) {
  if (data.utterances.empty()) {
    throw std::invalid_argument("evaluate_dataset: empty test set");
  }
  std::set<std::string> unknown;
  for (const Utterance& u : data.utterances) {
    if (model.intent_id(u.intent) < 0) unknown.insert("intent:" + u.intent);
    for (const EntitySpan& e : u.entities) {
      if (std::find(model.entity_labels.begin(), model.entity_labels.end(),
                    e.label) == model.entity_labels.end()) {
        unknown.insert("entity:" + e.label);
      }
    }
  }
  if (!unknown.empty()) {
    std::string msg = "evaluate_dataset: labels missing from the model:";
    for (const std::string& u : unknown) msg += " " + u;
    throw std::runtime_error(msg);
  }

  std::vector<std::string> pred_intents, gold_intents;
  std::vector<std::vector<EntitySpan>> pred_spans, gold_spans;
  const auto t0 = std::chrono::steady_clock::now();
  for (const Utterance& u : data.utterances) {
    Prediction p = predict_utterance(model, vocab, dense, u.text);
    pred_intents.push_back(p.intent);
    gold_intents.push_back(u.intent);
    pred_spans.push_back(p.entities);
    gold_spans.push_back(u.entities);
  }
  const auto t1 = std::chrono::steady_clock::now();

  EvalReport report;
  report.dataset_name = data.name;
  report.num_utterances = static_cast<int>(data.utterances.size());
  report.intent = intent_metrics(pred_intents, gold_intents);
  if (mode == MatchMode::kOverlap || mode == MatchMode::kBoth) {
    report.has_overlap = true;
    report.entity_overlap =
        entity_metrics(pred_spans, gold_spans, MatchMode::kOverlap);
  }
  if (mode == MatchMode::kExact || mode == MatchMode::kBoth) {
    report.has_exact = true;
    report.entity_exact = entity_metrics(pred_spans, gold_spans, MatchMode::kExact);
  }
  report.latency_ms_per_utterance =
      std::chrono::duration<double, std::milli>(t1 - t0).count() /
      static_cast<double>(data.utterances.size());
  return report;
}

}  // namespace dietnlu
