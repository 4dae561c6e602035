#include <doctest.h>

#include <cmath>
#include <utility>
#include <vector>

#include "dietnlu/data.hpp"
#include "dietnlu/featurizer.hpp"
#include "dietnlu/model.hpp"
#include "support/oracles.hpp"

using namespace dietnlu;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.transformer_dim = 16;
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.rel_clip = 3;
  cfg.embed_dim = 8;
  cfg.transformer_dropout = 0.0;
  cfg.sparse_dropout = 0.0;
  return cfg;
}

struct Fixture {
  Dataset data;
  SparseVocab vocab;
  DietModel model;
  DenseSource no_dense;

  explicit Fixture(ModelConfig cfg = small_config())
      : data(make_dataset(
            "toy", {make_utterance("play ping pong", "play_game",
                                   {{5, 14, "game_name", ""}}),
                    make_utterance("fly to paris", "book_flight",
                                   {{7, 12, "city", ""}}),
                    make_utterance("hello there", "greet", {})})),
        vocab(build_vocab(data)) {
    Rng rng(77);
    model = init_model(cfg, data.intents, data.entity_labels, vocab.size(), rng);
  }

  EncodedInput encode(const std::string& text) const {
    Utterance u = make_utterance(text, "", {});
    return encode_utterance(u, true, vocab, no_dense);
  }
};

Tensor trand(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
             bool rg = false) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(std::move(shape), std::move(v), rg);
}

oracles::CrfInstance to_instance(const Tensor& emissions,
                                 const Tensor& transitions) {
  oracles::CrfInstance inst;
  inst.num_steps = emissions.dim(0);
  inst.num_tags = emissions.dim(1);
  inst.emissions = emissions.values();
  inst.transitions = transitions.values();
  return inst;
}

}  // namespace

TEST_CASE("config validation rejects inconsistent settings") {
  ModelConfig cfg = small_config();
  cfg.num_heads = 3;  // 16 % 3 != 0
  CHECK_THROWS(cfg.validate());

  cfg = small_config();
  cfg.use_intent_loss = cfg.use_entity_loss = cfg.use_mask_loss = false;
  CHECK_THROWS(cfg.validate());

  cfg = small_config();
  cfg.use_sparse = false;
  cfg.dense_dim = 0;  // no input features at all
  CHECK_THROWS(cfg.validate());

  small_config().validate();  // baseline is fine
}

TEST_CASE("attention on a single position is the identity over values") {
  Rng rng(20);
  Tensor q = trand({1, 8}, rng);
  Tensor k = trand({1, 8}, rng);
  Tensor v = trand({1, 8}, rng);
  Tensor rel = trand({5, 4}, rng);
  std::vector<Tensor> weights;
  Tensor out = relative_attention(q, k, v, rel, 2, &weights);
  REQUIRE(out.shape() == Shape{1, 8});
  for (int i = 0; i < 8; i++) {
    CHECK(out.values()[i] == doctest::Approx(v.values()[i]));
  }
  REQUIRE(weights.size() == 2);  // one matrix per head
  for (const auto& w : weights) {
    REQUIRE(w.shape() == Shape{1, 1});
    CHECK(w.values()[0] == doctest::Approx(1.0));
  }
}

TEST_CASE("zero relative embeddings reduce to standard attention") {
  Rng rng(21);
  const int rows = 5;
  const int dim = 8;
  const int heads = 2;
  Tensor q = trand({rows, dim}, rng);
  Tensor k = trand({rows, dim}, rng);
  Tensor v = trand({rows, dim}, rng);
  Tensor rel = Tensor::zeros({7, dim / heads});
  Tensor out = relative_attention(q, k, v, rel, heads);
  auto want = oracles::reference_attention(q.values(), k.values(), v.values(),
                                           rows, dim, heads);
  REQUIRE(out.size() == static_cast<int64_t>(want.size()));
  for (size_t i = 0; i < want.size(); i++) {
    CHECK(out.values()[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("attention rows are probability distributions") {
  Rng rng(22);
  Tensor q = trand({6, 8}, rng, -2.0, 2.0);
  Tensor k = trand({6, 8}, rng, -2.0, 2.0);
  Tensor v = trand({6, 8}, rng);
  Tensor rel = trand({7, 4}, rng);
  std::vector<Tensor> weights;
  relative_attention(q, k, v, rel, 2, &weights);
  for (const auto& w : weights) {
    REQUIRE(w.shape() == Shape{6, 6});
    for (int i = 0; i < 6; i++) {
      double row_sum = 0.0;
      for (int j = 0; j < 6; j++) {
        const double p = w.values()[i * 6 + j];
        CHECK(p >= 0.0);
        row_sum += p;
      }
      CHECK(std::abs(row_sum - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("crf nll with zero transitions is per-position cross-entropy") {
  Rng rng(23);
  Tensor emissions = trand({4, 3}, rng, -2.0, 2.0);
  Tensor transitions = Tensor::zeros({3, 3});
  const std::vector<int> gold = {2, 0, 1, 0};
  double want = 0.0;
  for (int t = 0; t < 4; t++) {
    double m = -1e300;
    for (int k = 0; k < 3; k++) m = std::max(m, emissions.values()[t * 3 + k]);
    double z = 0.0;
    for (int k = 0; k < 3; k++) z += std::exp(emissions.values()[t * 3 + k] - m);
    want += m + std::log(z) - emissions.values()[t * 3 + gold[t]];
  }
  CHECK(crf_nll(emissions, transitions, gold).item() == doctest::Approx(want));
}

TEST_CASE("crf nll matches brute-force enumeration") {
  Rng rng(24);
  for (int rep = 0; rep < 20; rep++) {
    const int steps = 1 + rng.uniform_int(4);
    const int tags = 2 + rng.uniform_int(3);
    Tensor emissions = trand({steps, tags}, rng, -3.0, 3.0);
    Tensor transitions = trand({tags, tags}, rng, -2.0, 2.0);
    std::vector<int> gold(steps);
    for (int& g : gold) g = rng.uniform_int(tags);
    const double got = crf_nll(emissions, transitions, gold).item();
    const double want =
        oracles::brute_force_nll(to_instance(emissions, transitions), gold);
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("crf probabilities over all paths sum to one") {
  Rng rng(25);
  Tensor emissions = trand({3, 3}, rng, -2.0, 2.0);
  Tensor transitions = trand({3, 3}, rng, -1.0, 1.0);
  double total = 0.0;
  for (const auto& path : oracles::all_paths(3, 3)) {
    total += std::exp(-crf_nll(emissions, transitions, path).item());
  }
  CHECK(std::abs(total - 1.0) < 1e-9);
}

TEST_CASE("crf nll gradient matches finite differences") {
  Rng rng(26);
  Tensor emissions = trand({3, 4}, rng, -1.0, 1.0, true);
  Tensor transitions = trand({4, 4}, rng, -1.0, 1.0, true);
  const std::vector<int> gold = {1, 3, 0};
  auto loss = [&] { return crf_nll(emissions, transitions, gold); };
  GradCheckReport report = gradient_check(
      loss, {{"emissions", emissions}, {"transitions", transitions}});
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("crf nll validates its inputs") {
  Tensor emissions = Tensor::zeros({2, 3});
  Tensor transitions = Tensor::zeros({3, 3});
  CHECK_THROWS(crf_nll(emissions, transitions, {0}));      // length mismatch
  CHECK_THROWS(crf_nll(emissions, transitions, {0, 7}));   // tag out of range
  CHECK_THROWS(crf_nll(emissions, Tensor::zeros({2, 2}), {0, 1}));
}

TEST_CASE("viterbi with zero transitions is the per-position argmax") {
  Tensor emissions = Tensor::from_values(
      {3, 3}, {0.1, 0.9, 0.3, 0.8, 0.2, 0.4, 0.0, 0.1, 0.7}, false);
  Tensor transitions = Tensor::zeros({3, 3});
  auto [path, score] = crf_viterbi(emissions, transitions);
  CHECK(path == std::vector<int>{1, 0, 2});
  CHECK(score == doctest::Approx(0.9 + 0.8 + 0.7));
}

TEST_CASE("viterbi matches brute-force argmax on random instances") {
  Rng rng(27);
  for (int rep = 0; rep < 30; rep++) {
    const int steps = 1 + rng.uniform_int(4);
    const int tags = 2 + rng.uniform_int(3);
    Tensor emissions = trand({steps, tags}, rng, -3.0, 3.0);
    Tensor transitions = trand({tags, tags}, rng, -2.0, 2.0);
    auto inst = to_instance(emissions, transitions);
    auto [path, score] = crf_viterbi(emissions, transitions);
    auto [want_path, want_score] = oracles::brute_force_viterbi(inst);
    CHECK(path == want_path);
    CHECK(score == doctest::Approx(want_score).epsilon(1e-12));
    // Internal consistency: the reported score is the path's score.
    CHECK(score == doctest::Approx(oracles::path_score(inst, path)));
  }
}

TEST_CASE("viterbi ties break toward the lowest tag index") {
  Tensor emissions = Tensor::zeros({3, 3});
  Tensor transitions = Tensor::zeros({3, 3});
  auto [path, score] = crf_viterbi(emissions, transitions);
  CHECK(path == std::vector<int>{0, 0, 0});
  CHECK(score == 0.0);
}

TEST_CASE("viterbi beats random paths") {
  Rng rng(28);
  Tensor emissions = trand({5, 4}, rng, -3.0, 3.0);
  Tensor transitions = trand({4, 4}, rng, -2.0, 2.0);
  auto inst = to_instance(emissions, transitions);
  auto [path, score] = crf_viterbi(emissions, transitions);
  for (int rep = 0; rep < 100; rep++) {
    std::vector<int> random_path(5);
    for (int& p : random_path) p = rng.uniform_int(4);
    CHECK(score >= oracles::path_score(inst, random_path));
  }
}

TEST_CASE("forward output has one position per token plus CLS") {
  Fixture fx;
  Rng rng(30);
  for (const std::string text : {"play ping pong", "hi", "a b c d e"}) {
    EncodedInput enc = fx.encode(text);
    Tensor merged = merge_features(fx.model, enc, false, rng);
    REQUIRE(merged.shape() == Shape{enc.positions(), 16});
    ForwardOutput out = transform(fx.model, merged, false, rng);
    CHECK(out.seq.shape() == Shape{enc.positions(), 16});
    CHECK(out.cls.shape() == Shape{1, 16});
    CHECK(out.emissions.shape() == Shape{enc.num_tokens, fx.model.num_tags()});
  }
}

TEST_CASE("eval-mode forward is deterministic") {
  Fixture fx;
  EncodedInput enc = fx.encode("play ping pong");
  Rng r1(31), r2(32);  // different rngs must not matter in eval mode
  ForwardOutput a = transform(fx.model, merge_features(fx.model, enc, false, r1),
                              false, r1);
  ForwardOutput b = transform(fx.model, merge_features(fx.model, enc, false, r2),
                              false, r2);
  CHECK(a.seq.values() == b.seq.values());
  CHECK(a.emissions.values() == b.emissions.values());
}

TEST_CASE("permuting tokens changes the forward output") {
  Fixture fx;
  Rng rng(33);
  EncodedInput ab = fx.encode("ping pong");
  EncodedInput ba = fx.encode("pong ping");
  Tensor out_ab =
      transform(fx.model, merge_features(fx.model, ab, false, rng), false, rng)
          .cls;
  Tensor out_ba =
      transform(fx.model, merge_features(fx.model, ba, false, rng), false, rng)
          .cls;
  double diff = 0.0;
  for (int i = 0; i < 16; i++) {
    diff += std::abs(out_ab.values()[i] - out_ba.values()[i]);
  }
  CHECK(diff > 1e-6);
}

TEST_CASE("intent similarities cover the inventory and ignore the CRF head") {
  Fixture fx;
  Rng rng(34);
  EncodedInput enc = fx.encode("play ping pong");
  ForwardOutput out = transform(
      fx.model, merge_features(fx.model, enc, false, rng), false, rng);
  Tensor sims = intent_similarities(fx.model, out.cls);
  REQUIRE(sims.shape() == Shape{1, 3});

  // Perturbing CRF transitions must not move the similarities.
  Tensor& trans = fx.model.param("crf.transitions");
  for (double& v : trans.mutable_values()) v += 3.5;
  Tensor sims2 = intent_similarities(fx.model, out.cls);
  CHECK(sims.values() == sims2.values());
}

TEST_CASE("equal intent embeddings tie and resolve to the first intent") {
  Fixture fx;
  Tensor& table = fx.model.param("embed.intent.table");
  const int ni = table.dim(0);
  const int e = table.dim(1);
  for (int i = 0; i < ni; i++) {
    for (int c = 0; c < e; c++) {
      table.mutable_values()[i * e + c] = 0.25;
    }
  }
  Prediction pred =
      predict_utterance(fx.model, fx.vocab, fx.no_dense, "play ping pong");
  REQUIRE(pred.ranking.size() == 3);
  CHECK(pred.ranking[0].second == doctest::Approx(pred.ranking[1].second));
  CHECK(pred.intent == fx.model.intents[0]);
}

TEST_CASE("single-intent inventory always predicts that intent") {
  ModelConfig cfg = small_config();
  Dataset data = make_dataset("one", {make_utterance("hello", "greet", {})});
  SparseVocab vocab = build_vocab(data);
  Rng rng(35);
  DietModel model =
      init_model(cfg, data.intents, data.entity_labels, vocab.size(), rng);
  DenseSource none;
  Prediction pred = predict_utterance(model, vocab, none, "anything at all");
  CHECK(pred.intent == "greet");
  CHECK(pred.ranking.size() == 1);
}

TEST_CASE("prediction on empty text still ranks intents") {
  Fixture fx;
  Prediction pred = predict_utterance(fx.model, fx.vocab, fx.no_dense, "");
  CHECK(pred.ranking.size() == 3);
  CHECK(pred.entities.empty());
  CHECK(pred.tags.empty());
}

TEST_CASE("prediction on an unknown token uses the OOV path") {
  Fixture fx;
  Prediction pred =
      predict_utterance(fx.model, fx.vocab, fx.no_dense, "xylophone");
  CHECK(pred.ranking.size() == 3);
  CHECK(pred.tags.size() == 1);
}

TEST_CASE("ranking is sorted by descending similarity") {
  Fixture fx;
  Prediction pred =
      predict_utterance(fx.model, fx.vocab, fx.no_dense, "fly to paris");
  for (size_t i = 1; i < pred.ranking.size(); i++) {
    CHECK(pred.ranking[i - 1].second >= pred.ranking[i].second);
  }
  CHECK(pred.intent == pred.ranking[0].first);
}

TEST_CASE("model parameters have deterministic names and shapes") {
  Fixture fx;
  CHECK(fx.model.param("merge.W").shape() == Shape{16, 16});
  CHECK(fx.model.param("mask_vector").shape() == Shape{1, 16});
  CHECK(fx.model.param("crf.transitions").shape() ==
        Shape{fx.model.num_tags(), fx.model.num_tags()});
  // CRF transitions start at zero: early training is per-token classification.
  for (double v : fx.model.param("crf.transitions").values()) CHECK(v == 0.0);
  CHECK(fx.model.param("embed.intent.table").shape() == Shape{3, 8});
  CHECK_THROWS(fx.model.param("no.such.parameter"));

  // Same seed, same init.
  Rng r1(555), r2(555);
  DietModel m1 = init_model(small_config(), fx.model.intents,
                            fx.model.entity_labels, fx.vocab.size(), r1);
  DietModel m2 = init_model(small_config(), fx.model.intents,
                            fx.model.entity_labels, fx.vocab.size(), r2);
  REQUIRE(m1.params.size() == m2.params.size());
  for (size_t i = 0; i < m1.params.size(); i++) {
    CHECK(m1.params[i].first == m2.params[i].first);
    CHECK(m1.params[i].second.values() == m2.params[i].second.values());
  }
}

TEST_CASE("tag inventory is the BILOU expansion with O first") {
  Fixture fx;
  CHECK(fx.model.tags == bilou_tag_set(fx.model.entity_labels));
  CHECK(fx.model.tags[0] == "O");
  CHECK(fx.model.num_tags() == 1 + 4 * 2);
}
