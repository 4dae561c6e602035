#include "dietnlu/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dietnlu {

void ModelConfig::validate() const {
  if (transformer_dim <= 0 || num_layers <= 0 || num_heads <= 0 ||
      embed_dim <= 0 || rel_clip < 0) {
    throw std::invalid_argument("model config: dimensions must be positive");
  }
  if (transformer_dim % num_heads != 0) {
    throw std::invalid_argument("model config: transformer_dim " +
                                std::to_string(transformer_dim) +
                                " not divisible by num_heads " +
                                std::to_string(num_heads));
  }
  if (!use_intent_loss && !use_entity_loss && !use_mask_loss) {
    throw std::invalid_argument("model config: all losses disabled");
  }
  if (!use_sparse && dense_dim <= 0) {
    throw std::invalid_argument("model config: no input features enabled");
  }
  auto rate_ok = [](double r) { return r >= 0.0 && r < 1.0; };
  if (!rate_ok(transformer_dropout) || !rate_ok(sparse_dropout) ||
      !rate_ok(mask_select_rate)) {
    throw std::invalid_argument("model config: rates must lie in [0, 1)");
  }
  if (mask_action_mask < 0 || mask_action_random < 0 ||
      mask_action_mask + mask_action_random > 1.0 + 1e-12) {
    throw std::invalid_argument("model config: mask action probabilities invalid");
  }
  if (n_neg < 0) {
    throw std::invalid_argument("model config: n_neg must be >= 0");
  }
}

Tensor& DietModel::param(const std::string& name) {
  for (auto& [n, t] : params) {
    if (n == name) return t;
  }
  throw std::runtime_error("model has no parameter named " + name);
}

const Tensor& DietModel::param(const std::string& name) const {
  for (const auto& [n, t] : params) {
    if (n == name) return t;
  }
  throw std::runtime_error("model has no parameter named " + name);
}

int DietModel::intent_id(const std::string& intent) const {
  auto it = std::find(intents.begin(), intents.end(), intent);
  return it == intents.end() ? -1 : static_cast<int>(it - intents.begin());
}

namespace {

Tensor glorot(int rows, int cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / (rows + cols));
  Tensor t = Tensor::zeros({rows, cols}, true);
  for (double& v : t.mutable_values()) v = rng.uniform(-limit, limit);
  return t;
}

Tensor table_init(int rows, int cols, Rng& rng) {
  const double limit = 1.0 / std::sqrt(static_cast<double>(cols));
  Tensor t = Tensor::zeros({rows, cols}, true);
  for (double& v : t.mutable_values()) v = rng.uniform(-limit, limit);
  return t;
}

Tensor zeros_param(const Shape& shape) { return Tensor::zeros(shape, true); }

Tensor ones_param(int n) {
  Tensor t = Tensor::zeros({n}, true);
  for (double& v : t.mutable_values()) v = 1.0;
  return t;
}

}  // namespace

DietModel init_model(const ModelConfig& config,
                     const std::vector<std::string>& intents,
                     const std::vector<std::string>& entity_labels,
                     int sparse_dim, Rng& rng) {
  config.validate();
  if (config.use_sparse && sparse_dim <= 0) {
    throw std::invalid_argument("init_model: sparse enabled but vocab empty");
  }
  DietModel m;
  m.config = config;
  m.intents = intents;
  m.entity_labels = entity_labels;
  m.tags = bilou_tag_set(entity_labels);
  m.sparse_dim = config.use_sparse ? sparse_dim : 0;

  const int d = config.transformer_dim;
  const int f = config.resolved_ffn_dim();
  const int hd = d / config.num_heads;
  auto add = [&m](const std::string& name, Tensor t) {
    m.params.emplace_back(name, std::move(t));
  };

  if (config.use_sparse) {
    const int p = config.resolved_sparse_proj_dim();
    add("sparse_proj.W", glorot(sparse_dim, p, rng));
    add("sparse_proj.b", zeros_param({p}));
  }
  add("merge.W", glorot(config.concat_dim(), d, rng));
  add("merge.b", zeros_param({d}));
  add("mask_vector", table_init(1, d, rng));
  for (int l = 0; l < config.num_layers; l++) {
    const std::string p = "layer" + std::to_string(l) + ".";
    add(p + "attn.Wq", glorot(d, d, rng));
    add(p + "attn.Wk", glorot(d, d, rng));
    add(p + "attn.Wv", glorot(d, d, rng));
    add(p + "attn.Wo", glorot(d, d, rng));
    add(p + "attn.rel", table_init(2 * config.rel_clip + 1, hd, rng));
    add(p + "ln1.gain", ones_param(d));
    add(p + "ln1.bias", zeros_param({d}));
    add(p + "ffn.W1", glorot(d, f, rng));
    add(p + "ffn.b1", zeros_param({f}));
    add(p + "ffn.W2", glorot(f, d, rng));
    add(p + "ffn.b2", zeros_param({d}));
    add(p + "ln2.gain", ones_param(d));
    add(p + "ln2.bias", zeros_param({d}));
  }
  add("emit.W", glorot(d, m.num_tags(), rng));
  add("emit.b", zeros_param({m.num_tags()}));
  // zero transitions make early training behave like per-token classification
  add("crf.transitions", zeros_param({m.num_tags(), m.num_tags()}));
  add("embed.cls.W", glorot(d, config.embed_dim, rng));
  add("embed.cls.b", zeros_param({config.embed_dim}));
  add("embed.intent.table",
      table_init(static_cast<int>(intents.size()), config.embed_dim, rng));
  add("embed.maskout.W", glorot(d, config.embed_dim, rng));
  add("embed.maskout.b", zeros_param({config.embed_dim}));
  add("embed.token.W", glorot(d, config.embed_dim, rng));
  add("embed.token.b", zeros_param({config.embed_dim}));
  return m;
}

Tensor merge_features(const DietModel& model, const EncodedInput& input,
                      bool training, Rng& rng) {
  const ModelConfig& cfg = model.config;
  Tensor x;
  if (cfg.use_sparse) {
    if (input.sparse.empty()) {
      throw std::runtime_error("merge_features: sparse features missing");
    }
    std::vector<SparseRow> rows = input.sparse;
    if (training && cfg.sparse_dropout > 0.0) {
      rows = sparse_feature_dropout(rows, cfg.sparse_dropout, rng);
    }
    x = relu(add_rowvec(sparse_matmul(rows, model.param("sparse_proj.W")),
                        model.param("sparse_proj.b")));
  }
  if (cfg.dense_dim > 0) {
    if (input.dense.empty()) {
      throw std::runtime_error("merge_features: dense features missing");
    }
    const int rows_n = static_cast<int>(input.dense.size());
    std::vector<double> flat;
    flat.reserve(rows_n * cfg.dense_dim);
    for (const auto& row : input.dense) {
      if (static_cast<int>(row.size()) != cfg.dense_dim) {
        throw std::invalid_argument(
            "merge_features: dense row size " + std::to_string(row.size()) +
            ", model expects " + std::to_string(cfg.dense_dim));
      }
      flat.insert(flat.end(), row.begin(), row.end());
    }
    Tensor dense = Tensor::from_values({rows_n, cfg.dense_dim}, flat, false);
    x = x.defined() ? concat_cols({x, dense}) : dense;
  }
  return add_rowvec(matmul(x, model.param("merge.W")), model.param("merge.b"));
}

Tensor relative_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                          const Tensor& rel, int num_heads,
                          std::vector<Tensor>* attention_weights) {
  if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2) {
    throw std::invalid_argument("relative_attention: q/k/v must be 2-d");
  }
  const int d = q.dim(1);
  if (num_heads <= 0 || d % num_heads != 0) {
    throw std::invalid_argument(
        "relative_attention: dim " + std::to_string(d) +
        " not divisible by " + std::to_string(num_heads) + " heads");
  }
  const int hd = d / num_heads;
  if (rel.ndim() != 2 || rel.dim(1) != hd) {
    throw std::invalid_argument(
        "relative_attention: rel must be [2k+1, " + std::to_string(hd) +
        "], got " + shape_str(rel.shape()));
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Tensor> heads;
  heads.reserve(num_heads);
  for (int h = 0; h < num_heads; h++) {
    Tensor qh = slice_cols(q, h * hd, (h + 1) * hd);
    Tensor kh = slice_cols(k, h * hd, (h + 1) * hd);
    Tensor vh = slice_cols(v, h * hd, (h + 1) * hd);
    Tensor logits = scale(
        add(matmul(qh, transpose(kh)), rel_position_logits(qh, rel)), inv_sqrt);
    Tensor weights = softmax_rows(logits);
    if (attention_weights) attention_weights->push_back(weights);
    heads.push_back(matmul(weights, vh));
  }
  return num_heads == 1 ? heads[0] : concat_cols(heads);
}

ForwardOutput transform(const DietModel& model, const Tensor& merged,
                        bool training, Rng& rng) {
  const ModelConfig& cfg = model.config;
  const int positions = merged.dim(0);
  const int num_tokens = positions - 1;
  Tensor x = merged;
  for (int l = 0; l < cfg.num_layers; l++) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Tensor q = matmul(x, model.param(p + "attn.Wq"));
    Tensor k = matmul(x, model.param(p + "attn.Wk"));
    Tensor v = matmul(x, model.param(p + "attn.Wv"));
    Tensor attn = relative_attention(q, k, v, model.param(p + "attn.rel"),
                                     cfg.num_heads);
    attn = matmul(attn, model.param(p + "attn.Wo"));
    attn = dropout(attn, cfg.transformer_dropout, rng, training);
    x = layer_norm_rows(add(x, attn), model.param(p + "ln1.gain"),
                        model.param(p + "ln1.bias"));
    Tensor ffn = add_rowvec(matmul(x, model.param(p + "ffn.W1")),
                            model.param(p + "ffn.b1"));
    ffn = add_rowvec(matmul(relu(ffn), model.param(p + "ffn.W2")),
                     model.param(p + "ffn.b2"));
    ffn = dropout(ffn, cfg.transformer_dropout, rng, training);
    x = layer_norm_rows(add(x, ffn), model.param(p + "ln2.gain"),
                        model.param(p + "ln2.bias"));
  }
  ForwardOutput out;
  out.seq = x;
  out.cls = slice_rows(x, num_tokens, positions);
  if (num_tokens > 0) {
    out.emissions = add_rowvec(
        matmul(slice_rows(x, 0, num_tokens), model.param("emit.W")),
        model.param("emit.b"));
  }
  return out;
}

Tensor crf_nll(const Tensor& emissions, const Tensor& transitions,
               const std::vector<int>& gold_tags) {
  if (emissions.ndim() != 2) {
    throw std::invalid_argument("crf_nll: emissions must be 2-d");
  }
  const int t_len = emissions.dim(0);
  const int k = emissions.dim(1);
  if (transitions.ndim() != 2 || transitions.dim(0) != k || transitions.dim(1) != k) {
    throw std::invalid_argument(
        "crf_nll: transitions must be [" + std::to_string(k) + ", " +
        std::to_string(k) + "]");
  }
  if (static_cast<int>(gold_tags.size()) != t_len) {
    throw std::invalid_argument("crf_nll: gold path length " +
                                std::to_string(gold_tags.size()) +
                                " does not match " + std::to_string(t_len) +
                                " emission rows");
  }
  for (int tag : gold_tags) {
    if (tag < 0 || tag >= k) {
      throw std::invalid_argument("crf_nll: tag id " + std::to_string(tag) +
                                  " outside tag set of size " + std::to_string(k));
    }
  }
  // log-space forward recursion: alpha[j] = emit[t][j] + LSE_i(alpha[i] + trans[i][j])
  Tensor alpha = reshape(slice_rows(emissions, 0, 1), {k});
  for (int t = 1; t < t_len; t++) {
    Tensor scores = add_colvec(transitions, alpha);
    alpha = add(reshape(logsumexp_rows(transpose(scores)), {k}),
                reshape(slice_rows(emissions, t, t + 1), {k}));
  }
  Tensor log_z = reshape(logsumexp_rows(reshape(alpha, {1, k})), {});

  std::vector<std::pair<int, int>> emit_picks;
  emit_picks.reserve(t_len);
  for (int t = 0; t < t_len; t++) emit_picks.emplace_back(t, gold_tags[t]);
  Tensor gold_score = sum(pick(emissions, emit_picks));
  if (t_len > 1) {
    std::vector<std::pair<int, int>> trans_picks;
    trans_picks.reserve(t_len - 1);
    for (int t = 1; t < t_len; t++) {
      trans_picks.emplace_back(gold_tags[t - 1], gold_tags[t]);
    }
    gold_score = add(gold_score, sum(pick(transitions, trans_picks)));
  }
  return sub(log_z, gold_score);
}

std::pair<std::vector<int>, double> crf_viterbi(const Tensor& emissions,
                                                const Tensor& transitions) {
  const int t_len = emissions.dim(0);
  const int k = emissions.dim(1);
  const std::vector<double>& em = emissions.values();
  const std::vector<double>& tr = transitions.values();
  std::vector<std::vector<double>> delta(t_len, std::vector<double>(k));
  std::vector<std::vector<int>> back(t_len, std::vector<int>(k, 0));
  for (int j = 0; j < k; j++) delta[0][j] = em[j];
  for (int t = 1; t < t_len; t++) {
    for (int j = 0; j < k; j++) {
      double best = delta[t - 1][0] + tr[j];
      int arg = 0;
      // strict > keeps the lowest index on ties
      for (int i = 1; i < k; i++) {
        const double s = delta[t - 1][i] + tr[i * k + j];
        if (s > best) {
          best = s;
          arg = i;
        }
      }
      delta[t][j] = best + em[t * k + j];
      back[t][j] = arg;
    }
  }
  int last = 0;
  for (int j = 1; j < k; j++) {
    if (delta[t_len - 1][j] > delta[t_len - 1][last]) last = j;
  }
  std::vector<int> path(t_len);
  path[t_len - 1] = last;
  for (int t = t_len - 1; t > 0; t--) path[t - 1] = back[t][path[t]];
  return {path, delta[t_len - 1][last]};
}

Tensor intent_similarities(const DietModel& model, const Tensor& a_cls) {
  if (model.intents.empty()) {
    throw std::runtime_error("intent_similarities: empty intent inventory");
  }
  Tensor h_cls = add_rowvec(matmul(a_cls, model.param("embed.cls.W")),
                            model.param("embed.cls.b"));
  return matmul(h_cls, transpose(model.param("embed.intent.table")));
}

Prediction predict_utterance(const DietModel& model, const SparseVocab& vocab,
                             const DenseSource& dense, const std::string& text) {
  NoGradGuard no_grad;
  Rng rng(0);  // eval mode draws nothing
  Utterance u = make_utterance(text, "", {});
  EncodedInput enc = encode_utterance(u, model.config.use_sparse, vocab, dense);
  Tensor merged = merge_features(model, enc, false, rng);
  ForwardOutput fwd = transform(model, merged, false, rng);

  Prediction pred;
  Tensor sims = intent_similarities(model, fwd.cls);
  const std::vector<double>& s = sims.values();
  std::vector<int> order(model.intents.size());
  for (size_t i = 0; i < order.size(); i++) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&s](int a, int b) { return s[a] > s[b]; });
  for (int idx : order) pred.ranking.emplace_back(model.intents[idx], s[idx]);
  pred.intent = pred.ranking.front().first;

  if (!u.tokens.empty()) {
    auto [path, score] = crf_viterbi(fwd.emissions, model.param("crf.transitions"));
    (void)score;
    for (int tag : path) pred.tags.push_back(model.tags[tag]);
    pred.entities = bilou_to_spans(text, u.tokens, pred.tags);
  }
  return pred;
}

}  // namespace dietnlu
