#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dietnlu/data.hpp"
#include "dietnlu/featurizer.hpp"
#include "dietnlu/rng.hpp"
#include "dietnlu/tensor.hpp"

namespace dietnlu {

struct ModelConfig {
  int transformer_dim = 256;
  int num_layers = 2;
  int num_heads = 4;
  int rel_clip = 5;        // relative position clipping distance
  int embed_dim = 20;      // similarity space for intent / mask heads
  int ffn_dim = 0;         // 0 -> 2 * transformer_dim
  int sparse_proj_dim = 0; // 0 -> dense_dim when dense present, else transformer_dim

  bool use_sparse = true;
  int dense_dim = 0;       // 0 = no dense features

  bool use_intent_loss = true;
  bool use_entity_loss = true;
  bool use_mask_loss = true;

  double transformer_dropout = 0.1;
  double sparse_dropout = 0.5;
  double mask_select_rate = 0.15;
  double mask_action_mask = 0.70;
  double mask_action_random = 0.10;  // remainder keeps the original input
  int n_neg = 20;

  int resolved_ffn_dim() const { return ffn_dim > 0 ? ffn_dim : 2 * transformer_dim; }
  int resolved_sparse_proj_dim() const {
    if (sparse_proj_dim > 0) return sparse_proj_dim;
    return dense_dim > 0 ? dense_dim : transformer_dim;
  }
  int concat_dim() const {
    return (use_sparse ? resolved_sparse_proj_dim() : 0) + dense_dim;
  }
  void validate() const;  // throws std::invalid_argument
};

// All parameters live in one named, deterministically ordered list so the
// optimizer, checkpointing and gradient checks see the exact same layout.
struct DietModel {
  ModelConfig config;
  std::vector<std::string> intents;
  std::vector<std::string> entity_labels;
  std::vector<std::string> tags;  // O + BILOU expansion of entity_labels
  int sparse_dim = 0;             // sparse vocab size (when sparse enabled)

  std::vector<std::pair<std::string, Tensor>> params;

  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  int num_tags() const { return static_cast<int>(tags.size()); }
  int intent_id(const std::string& intent) const;  // -1 if unknown
};

DietModel init_model(const ModelConfig& config,
                     const std::vector<std::string>& intents,
                     const std::vector<std::string>& entity_labels,
                     int sparse_dim, Rng& rng);

// Sparse projection + concat with dense + merge projection: [T+1, D] with the
// __CLS__ position last. Sparse feature dropout fires only in training mode.
Tensor merge_features(const DietModel& model, const EncodedInput& input,
                      bool training, Rng& rng);

// Multi-head attention with learned clipped relative-position logits on the
// key path. Returns the concatenated heads (callers apply the output
// projection). rel has shape [2k+1, head_dim] and is shared across heads.
Tensor relative_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                          const Tensor& rel, int num_heads,
                          std::vector<Tensor>* attention_weights = nullptr);

struct ForwardOutput {
  Tensor seq;        // [T+1, D] transformer outputs, __CLS__ last
  Tensor cls;        // [1, D]
  Tensor emissions;  // [T, num_tags]; undefined when T = 0
};

// Two transformer layers over already-merged (and possibly mask-corrupted)
// features, plus the CRF emission projection.
ForwardOutput transform(const DietModel& model, const Tensor& merged,
                        bool training, Rng& rng);

// Forward-algorithm negative log-likelihood of the gold path, in log space,
// differentiable through emissions and transitions.
Tensor crf_nll(const Tensor& emissions, const Tensor& transitions,
               const std::vector<int>& gold_tags);

// Max-scoring tag path under the same scoring function; ties broken toward
// the lowest tag index.
std::pair<std::vector<int>, double> crf_viterbi(const Tensor& emissions,
                                                const Tensor& transitions);

// Dot products between the embedded __CLS__ output and every intent label
// embedding: [1, num_intents].
Tensor intent_similarities(const DietModel& model, const Tensor& a_cls);

struct Prediction {
  std::string intent;
  std::vector<std::pair<std::string, double>> ranking;  // all intents, score desc
  TagSequence tags;
  std::vector<EntitySpan> entities;
};

Prediction predict_utterance(const DietModel& model, const SparseVocab& vocab,
                             const DenseSource& dense, const std::string& text);

}  // namespace dietnlu
