#pragma once

#include <string>
#include <vector>

#include "dietnlu/data.hpp"
#include "dietnlu/featurizer.hpp"
#include "dietnlu/model.hpp"

namespace dietnlu {

struct Metrics {
  long tp = 0;
  long fp = 0;
  long fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

Metrics finalize_metrics(long tp, long fp, long fn);

struct IntentMetrics {
  Metrics micro;
  double accuracy = 0.0;
};

// Micro-averaged scores for single-label intent classification; for a fixed
// test set these all collapse to accuracy.
IntentMetrics intent_metrics(const std::vector<std::string>& predictions,
                             const std::vector<std::string>& golds);

enum class MatchMode { kOverlap, kExact, kBoth };

// Greedy one-to-one span matching per utterance, by descending character
// overlap; a pair counts only with equal labels and, in exact mode, equal
// offsets. Unmatched predictions are FP, unmatched golds FN.
Metrics entity_metrics(const std::vector<std::vector<EntitySpan>>& predictions,
                       const std::vector<std::vector<EntitySpan>>& golds,
                       MatchMode mode);

struct EvalReport {
  std::string dataset_name;
  int num_utterances = 0;
  IntentMetrics intent;
  bool has_overlap = false;
  bool has_exact = false;
  Metrics entity_overlap;
  Metrics entity_exact;
  double latency_ms_per_utterance = 0.0;  // informational only

  // stable (name, value) view used for aggregation and rendering
  std::vector<std::pair<std::string, double>> flatten() const;
  std::string to_json() const;
  std::string to_table() const;
};

struct AggregateRow {
  std::string name;
  double mean = 0.0;
  double stdev = 0.0;  // sample standard deviation; 0 for a single run
};

std::vector<AggregateRow> aggregate_runs(const std::vector<EvalReport>& runs);
std::string aggregate_table(const std::vector<AggregateRow>& rows);

EvalReport evaluate_dataset(const DietModel& model, const SparseVocab& vocab,
                            const DenseSource& dense, const Dataset& data,
                            MatchMode mode);

}  // namespace dietnlu
