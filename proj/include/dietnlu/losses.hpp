#pragma once

#include <vector>

#include "dietnlu/data.hpp"
#include "dietnlu/featurizer.hpp"
#include "dietnlu/model.hpp"
#include "dietnlu/rng.hpp"
#include "dietnlu/tensor.hpp"

namespace dietnlu {

// Ranking loss log(e^{S+} + sum e^{S-}) - S+ where S are dot products of the
// anchor against the positive and each negative row. anchor and positive are
// [1, E]; negatives is [N, E] or undefined for none (then the loss is 0).
Tensor dot_product_loss(const Tensor& anchor, const Tensor& positive,
                        const Tensor& negatives);

struct MaskPlan {
  std::vector<int> positions;  // token positions, ascending; __CLS__ excluded
  std::vector<int> actions;    // 0 = __MASK__, 1 = random token, 2 = keep
  static constexpr int kMask = 0;
  static constexpr int kRandom = 1;
  static constexpr int kKeep = 2;
  bool empty() const { return positions.empty(); }
};

// Bernoulli(select_rate) per token position, with one forced pick when
// nothing was selected; action probabilities per the config split.
MaskPlan make_mask_plan(int num_tokens, const ModelConfig& cfg, Rng& rng);

// Uniform sample of wrong intent ids, never containing gold, capped at the
// number of available wrong labels.
std::vector<int> sample_negative_intents(int num_intents, int gold_intent,
                                         int n_neg, Rng& rng);

Tensor intent_loss(const DietModel& model, const Tensor& a_cls,
                   int gold_intent, Rng& rng);

// Unweighted-by-default sum of the enabled terms; disabled terms may be
// undefined tensors. All toggles off is a configuration error.
struct LossWeights {
  double intent = 1.0;
  double entity = 1.0;
  double mask = 1.0;
};

Tensor total_loss(const Tensor& l_intent, const Tensor& l_entity,
                  const Tensor& l_mask, bool use_intent, bool use_entity,
                  bool use_mask, const LossWeights& weights = {});

struct BatchLossResult {
  Tensor total;
  Tensor intent;  // undefined when the toggle is off
  Tensor entity;
  Tensor mask;
  std::vector<MaskPlan> plans;
  static double value_of(const Tensor& t) { return t.defined() ? t.item() : 0.0; }
};

// One training step's worth of loss: merge, mask-corrupt, transform, then all
// enabled loss terms averaged over the batch. Reproducible given the rng state.
BatchLossResult compute_batch_loss(const DietModel& model,
                                   const std::vector<const Utterance*>& batch,
                                   const std::vector<EncodedInput>& encoded,
                                   bool training, const LossWeights& weights,
                                   Rng& rng);

}  // namespace dietnlu
