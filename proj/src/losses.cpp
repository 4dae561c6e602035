#include "dietnlu/losses.hpp"

#include <map>
#include <stdexcept>
#include <string>

namespace dietnlu {

Tensor dot_product_loss(const Tensor& anchor, const Tensor& positive,
                        const Tensor& negatives) {
  if (anchor.ndim() != 2 || anchor.dim(0) != 1) {
    throw std::invalid_argument("dot_product_loss: anchor must be [1, E], got " +
                                shape_str(anchor.shape()));
  }
  if (positive.ndim() != 2 || positive.dim(0) != 1 ||
      positive.dim(1) != anchor.dim(1)) {
    throw std::invalid_argument("dot_product_loss: positive must be [1, " +
                                std::to_string(anchor.dim(1)) + "], got " +
                                shape_str(positive.shape()));
  }
  if (!negatives.defined() || negatives.dim(0) == 0) {
    return Tensor::scalar(0.0);  // log(e^{S+}) - S+ vanishes identically
  }
  if (negatives.ndim() != 2 || negatives.dim(1) != anchor.dim(1)) {
    throw std::invalid_argument("dot_product_loss: negatives must be [N, " +
                                std::to_string(anchor.dim(1)) + "], got " +
                                shape_str(negatives.shape()));
  }
  Tensor s_pos = matmul(anchor, transpose(positive));   // [1, 1]
  Tensor s_neg = matmul(anchor, transpose(negatives));  // [1, N]
  Tensor lse = reshape(logsumexp_rows(concat_cols({s_pos, s_neg})), {});
  return sub(lse, reshape(s_pos, {}));
}

MaskPlan make_mask_plan(int num_tokens, const ModelConfig& cfg, Rng& rng) {
  MaskPlan plan;
  if (num_tokens <= 0) return plan;
  for (int p = 0; p < num_tokens; p++) {
    if (rng.bernoulli(cfg.mask_select_rate)) plan.positions.push_back(p);
  }
  if (plan.positions.empty()) {
    plan.positions.push_back(static_cast<int>(rng.uniform_int(num_tokens)));
  }
  for (size_t i = 0; i < plan.positions.size(); i++) {
    const double u = rng.uniform();
    if (u < cfg.mask_action_mask) {
      plan.actions.push_back(MaskPlan::kMask);
    } else if (u < cfg.mask_action_mask + cfg.mask_action_random) {
      plan.actions.push_back(MaskPlan::kRandom);
    } else {
      plan.actions.push_back(MaskPlan::kKeep);
    }
  }
  return plan;
}

std::vector<int> sample_negative_intents(int num_intents, int gold_intent,
                                         int n_neg, Rng& rng) {
  if (gold_intent < 0 || gold_intent >= num_intents) {
    throw std::invalid_argument("sample_negative_intents: gold intent id " +
                                std::to_string(gold_intent) + " outside inventory");
  }
  const int pool = num_intents - 1;
  const int k = std::min(n_neg, pool);
  if (k <= 0) return {};
  // draw from [0, pool) and skip over the gold index
  std::vector<int> out = rng.sample_without_replacement(pool, k);
  for (int& idx : out) {
    if (idx >= gold_intent) idx++;
  }
  return out;
}

namespace {

Tensor embed_affine(const DietModel& model, const std::string& head,
                    const Tensor& x) {
  return add_rowvec(matmul(x, model.param("embed." + head + ".W")),
                    model.param("embed." + head + ".b"));
}

Tensor mean_of(std::vector<Tensor> terms) {
  if (terms.empty()) return Tensor::scalar(0.0);
  Tensor acc = terms[0];
  for (size_t i = 1; i < terms.size(); i++) acc = add(acc, terms[i]);
  return scale(acc, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace

Tensor intent_loss(const DietModel& model, const Tensor& a_cls,
                   int gold_intent, Rng& rng) {
  const int num_intents = static_cast<int>(model.intents.size());
  if (gold_intent < 0 || gold_intent >= num_intents) {
    throw std::invalid_argument("intent_loss: unknown intent id " +
                                std::to_string(gold_intent));
  }
  const Tensor& table = model.param("embed.intent.table");
  Tensor anchor = embed_affine(model, "cls", a_cls);
  Tensor positive = embedding_rows(table, {gold_intent});
  std::vector<int> neg_ids =
      sample_negative_intents(num_intents, gold_intent, model.config.n_neg, rng);
  Tensor negatives;
  if (!neg_ids.empty()) negatives = embedding_rows(table, neg_ids);
  return dot_product_loss(anchor, positive, negatives);
}

Tensor total_loss(const Tensor& l_intent, const Tensor& l_entity,
                  const Tensor& l_mask, bool use_intent, bool use_entity,
                  bool use_mask, const LossWeights& weights) {
  if (!use_intent && !use_entity && !use_mask) {
    throw std::invalid_argument("total_loss: every loss term is disabled");
  }
  Tensor total;
  auto accumulate = [&total](const Tensor& term, double w) {
    if (!term.defined()) {
      throw std::invalid_argument("total_loss: enabled term is undefined");
    }
    Tensor weighted = w == 1.0 ? term : scale(term, w);
    total = total.defined() ? add(total, weighted) : weighted;
  };
  if (use_intent) accumulate(l_intent, weights.intent);
  if (use_entity) accumulate(l_entity, weights.entity);
  if (use_mask) accumulate(l_mask, weights.mask);
  return total;
}

BatchLossResult compute_batch_loss(const DietModel& model,
                                   const std::vector<const Utterance*>& batch,
                                   const std::vector<EncodedInput>& encoded,
                                   bool training, const LossWeights& weights,
                                   Rng& rng) {
  if (batch.empty()) {
    throw std::invalid_argument("compute_batch_loss: empty batch");
  }
  if (batch.size() != encoded.size()) {
    throw std::invalid_argument("compute_batch_loss: batch/encoding size mismatch");
  }
  const ModelConfig& cfg = model.config;
  const size_t n = batch.size();

  std::map<std::string, int> tag_ids;
  for (size_t i = 0; i < model.tags.size(); i++) {
    tag_ids[model.tags[i]] = static_cast<int>(i);
  }

  std::vector<Tensor> merged(n);
  for (size_t b = 0; b < n; b++) {
    merged[b] = merge_features(model, encoded[b], training, rng);
  }

  BatchLossResult result;
  const bool masking = training && cfg.use_mask_loss;
  result.plans.resize(n);
  if (masking) {
    for (size_t b = 0; b < n; b++) {
      result.plans[b] =
          make_mask_plan(static_cast<int>(batch[b]->tokens.size()), cfg, rng);
    }
  }

  // every token position in the batch, for random substitution and negatives
  std::vector<std::pair<int, int>> token_positions;
  for (size_t b = 0; b < n; b++) {
    for (size_t p = 0; p < batch[b]->tokens.size(); p++) {
      token_positions.emplace_back(static_cast<int>(b), static_cast<int>(p));
    }
  }

  std::vector<Tensor> corrupted(n);
  for (size_t b = 0; b < n; b++) {
    const MaskPlan& plan = result.plans[b];
    if (plan.empty()) {
      corrupted[b] = merged[b];
      continue;
    }
    const int positions = merged[b].dim(0);
    std::vector<Tensor> rows;
    rows.reserve(positions);
    size_t sel = 0;
    for (int p = 0; p < positions; p++) {
      int action = -1;
      if (sel < plan.positions.size() && plan.positions[sel] == p) {
        action = plan.actions[sel];
        sel++;
      }
      if (action == MaskPlan::kMask) {
        rows.push_back(model.param("mask_vector"));
      } else if (action == MaskPlan::kRandom && token_positions.size() > 1) {
        // uniform over every other token position in the batch
        size_t r = static_cast<size_t>(
            rng.uniform_int(static_cast<int>(token_positions.size()) - 1));
        size_t self = 0;
        while (token_positions[self] !=
               std::make_pair(static_cast<int>(b), p)) {
          self++;
        }
        size_t pick_idx = r < self ? r : r + 1;
        auto [ob, op] = token_positions[pick_idx];
        rows.push_back(slice_rows(merged[ob], op, op + 1));
      } else {
        rows.push_back(slice_rows(merged[b], p, p + 1));
      }
    }
    corrupted[b] = concat_rows(rows);
  }

  std::vector<ForwardOutput> fwd(n);
  for (size_t b = 0; b < n; b++) {
    fwd[b] = transform(model, corrupted[b], training, rng);
  }

  if (cfg.use_intent_loss) {
    std::vector<Tensor> terms;
    terms.reserve(n);
    for (size_t b = 0; b < n; b++) {
      int gold = model.intent_id(batch[b]->intent);
      if (gold < 0) {
        throw std::runtime_error("compute_batch_loss: intent \"" +
                                 batch[b]->intent + "\" not in inventory");
      }
      terms.push_back(intent_loss(model, fwd[b].cls, gold, rng));
    }
    result.intent = mean_of(std::move(terms));
  }

  if (cfg.use_entity_loss) {
    const Tensor& transitions = model.param("crf.transitions");
    std::vector<Tensor> terms;
    for (size_t b = 0; b < n; b++) {
      if (batch[b]->tokens.empty()) continue;
      TagSequence tag_names = spans_to_bilou(*batch[b]);
      std::vector<int> gold;
      gold.reserve(tag_names.size());
      for (const std::string& t : tag_names) {
        auto it = tag_ids.find(t);
        if (it == tag_ids.end()) {
          throw std::runtime_error("compute_batch_loss: tag \"" + t +
                                   "\" not in model tag set");
        }
        gold.push_back(it->second);
      }
      terms.push_back(crf_nll(fwd[b].emissions, transitions, gold));
    }
    result.entity = mean_of(std::move(terms));
  }

  if (cfg.use_mask_loss) {
    std::vector<Tensor> terms;
    for (size_t b = 0; b < n; b++) {
      const MaskPlan& plan = result.plans[b];
      for (size_t i = 0; i < plan.positions.size(); i++) {
        const int p = plan.positions[i];
        const std::string& target_text = batch[b]->tokens[p].text;
        std::vector<std::pair<int, int>> eligible;
        for (const auto& [ob, op] : token_positions) {
          if (batch[ob]->tokens[op].text != target_text) {
            eligible.emplace_back(ob, op);
          }
        }
        Tensor negatives;
        if (!eligible.empty()) {
          const int k = std::min(cfg.n_neg, static_cast<int>(eligible.size()));
          std::vector<int> drawn = rng.sample_without_replacement(
              static_cast<int>(eligible.size()), k);
          std::vector<Tensor> neg_rows;
          neg_rows.reserve(drawn.size());
          for (int d : drawn) {
            auto [ob, op] = eligible[d];
            neg_rows.push_back(slice_rows(merged[ob], op, op + 1));
          }
          negatives = embed_affine(model, "token", concat_rows(neg_rows));
        }
        Tensor anchor =
            embed_affine(model, "maskout", slice_rows(fwd[b].seq, p, p + 1));
        Tensor positive =
            embed_affine(model, "token", slice_rows(merged[b], p, p + 1));
        terms.push_back(dot_product_loss(anchor, positive, negatives));
      }
    }
    result.mask = mean_of(std::move(terms));
  }

  result.total =
      total_loss(result.intent, result.entity, result.mask, cfg.use_intent_loss,
                 cfg.use_entity_loss, cfg.use_mask_loss, weights);
  return result;
}

}  // namespace dietnlu
