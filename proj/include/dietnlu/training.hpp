#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dietnlu/data.hpp"
#include "dietnlu/featurizer.hpp"
#include "dietnlu/losses.hpp"
#include "dietnlu/model.hpp"
#include "dietnlu/rng.hpp"
#include "dietnlu/tensor.hpp"

namespace dietnlu {

struct TrainConfig {
  int epochs = 200;
  int batch_min = 64;
  int batch_max = 128;
  AdamConfig adam;
  std::uint64_t seed = 42;
  // < 0: hold out 250 utterances, capped at half the data; 0: no dev split
  double dev_fraction = -1.0;
  int checkpoint_every = 0;  // epochs between mid-run checkpoints; 0 = final only
  LossWeights weights;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double loss_total = 0.0;
  double loss_intent = 0.0;
  double loss_entity = 0.0;
  double loss_mask = 0.0;
  double dev_intent_accuracy = 0.0;
  double dev_entity_f1 = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> records;
  std::string to_csv() const;
  std::string to_json() const;
};

// Linear growth from min to max across the run, rounded to nearest; the
// first epoch always gets min and the last always gets max.
int batch_size_schedule(int epoch, int total_epochs, int min_size, int max_size);

// Index batches grouped-by-intent with proportional striding: every example
// appears at least once per epoch, rare intents are up-sampled (wraparound
// over a reshuffled group) so each batch's mixture tracks the global one.
std::vector<std::vector<int>> balanced_batches(const Dataset& data,
                                               int batch_size, Rng& rng);

struct TrainResult {
  DietModel model;
  SparseVocab vocab;
  TrainHistory history;
  Dataset dev;  // held-out slice (empty when dev_fraction = 0)
};

using EpochCallback = std::function<void(
    int epoch, const EpochRecord&, const DietModel&, const SparseVocab&)>;

TrainResult train(const Dataset& data, const ModelConfig& model_config,
                  const TrainConfig& train_config, const DenseSource& dense,
                  const EpochCallback& on_epoch = nullptr);

}  // namespace dietnlu
