#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "dietnlu/data.hpp"
#include "dietnlu/featurizer.hpp"

using namespace dietnlu;

namespace {

std::set<int> indices(const SparseRow& row) {
  std::set<int> out;
  for (const auto& [idx, w] : row) out.insert(idx);
  return out;
}

Dataset one_liner(const std::string& text) {
  return make_dataset("t", {make_utterance(text, "intent", {})});
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name, const std::string& content)
      : path(name) {
    std::ofstream out(path);
    out << content;
  }
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("char n-grams of ab") {
  auto grams = char_ngrams("ab", 5);
  CHECK(std::set<std::string>(grams.begin(), grams.end()) ==
        std::set<std::string>{"a", "b", "ab"});
}

TEST_CASE("char n-grams of play have 10 members") {
  auto grams = char_ngrams("play", 5);
  CHECK(std::set<std::string>(grams.begin(), grams.end()) ==
        std::set<std::string>{"p", "l", "a", "y", "pl", "la", "ay", "pla",
                              "lay", "play"});
  CHECK(grams.size() == 10);
}

TEST_CASE("char n-grams of a single char") {
  auto grams = char_ngrams("a", 5);
  CHECK(grams == std::vector<std::string>{"a"});
}

TEST_CASE("char n-grams are lowercased and capped at n_max") {
  auto grams = char_ngrams("ABCD", 2);
  CHECK(std::set<std::string>(grams.begin(), grams.end()) ==
        std::set<std::string>{"a", "b", "c", "d", "ab", "bc", "cd"});
}

TEST_CASE("vocab from a one-word dataset holds the token, its n-grams, and reserved slots") {
  SparseVocab vocab = build_vocab(one_liner("hi"));
  CHECK(vocab.token_index.size() == 1);
  CHECK(vocab.token_index.count("hi") == 1);
  CHECK(vocab.ngram_index.size() == 3);  // h, i, hi
  CHECK(vocab.ngram_index.count("h") == 1);
  CHECK(vocab.ngram_index.count("i") == 1);
  CHECK(vocab.ngram_index.count("hi") == 1);
  CHECK(vocab.size() == 2 + 1 + 3);
  // No index collides with the reserved slots and they tile densely.
  std::set<int> used = {SparseVocab::kOovIndex, SparseVocab::kClsIndex};
  for (const auto& [_, i] : vocab.token_index) used.insert(i);
  for (const auto& [_, i] : vocab.ngram_index) used.insert(i);
  CHECK(static_cast<int>(used.size()) == vocab.size());
  CHECK(*used.rbegin() == vocab.size() - 1);
}

TEST_CASE("building the vocab twice gives identical mappings") {
  Dataset data = make_dataset(
      "t", {make_utterance("play ping pong", "a", {}),
            make_utterance("who's on at 8pm?", "b", {})});
  SparseVocab v1 = build_vocab(data);
  SparseVocab v2 = build_vocab(data);
  CHECK(v1.token_index == v2.token_index);
  CHECK(v1.ngram_index == v2.ngram_index);
}

TEST_CASE("empty dataset cannot build a vocab") {
  Dataset empty;
  CHECK_THROWS(build_vocab(empty));
}

TEST_CASE("featurize_sparse activates token plus n-gram indices, CLS takes the union") {
  SparseVocab vocab = build_vocab(one_liner("hi"));
  auto rows = featurize_sparse(tokenize("hi"), vocab);
  REQUIRE(rows.size() == 2);  // token + __CLS__
  CHECK(indices(rows[0]).size() == 4);
  CHECK(indices(rows[1]) == indices(rows[0]));
  for (const auto& [_, w] : rows[0]) CHECK(w == 1.0);
}

TEST_CASE("unseen token maps to OOV plus whatever n-grams exist") {
  SparseVocab vocab = build_vocab(one_liner("you"));
  auto rows = featurize_sparse(tokenize("yo"), vocab);
  REQUIRE(rows.size() == 2);
  auto active = indices(rows[0]);
  CHECK(active.count(SparseVocab::kOovIndex) == 1);
  // "yo" n-grams {y, o, yo} all occur inside "you".
  CHECK(active.size() == 4);
  // A token with entirely novel characters gets only the OOV index.
  auto alien = featurize_sparse(tokenize("zzz"), vocab);
  CHECK(indices(alien[0]) == std::set<int>{SparseVocab::kOovIndex});
}

TEST_CASE("active sparse indices never exceed one plus the n-gram count") {
  Dataset data = make_dataset(
      "t", {make_utterance("play ping pong again", "a", {}),
            make_utterance("playing along", "b", {})});
  SparseVocab vocab = build_vocab(data);
  for (const auto& u : data.utterances) {
    auto rows = featurize_sparse(u.tokens, vocab);
    for (size_t p = 0; p < u.tokens.size(); p++) {
      size_t cap = 1 + char_ngrams(u.tokens[p].text, vocab.n_max).size();
      CHECK(rows[p].size() <= cap);
    }
  }
}

TEST_CASE("featurization is deterministic") {
  SparseVocab vocab = build_vocab(one_liner("play ping pong"));
  auto toks = tokenize("play ping pong");
  auto a = featurize_sparse(toks, vocab);
  auto b = featurize_sparse(toks, vocab);
  CHECK(a == b);
}

TEST_CASE("sparse feature dropout rescales survivors and is skipped at rate 0") {
  SparseVocab vocab = build_vocab(one_liner("play ping pong"));
  auto rows = featurize_sparse(tokenize("play ping pong"), vocab);
  Rng rng(11);
  auto kept = sparse_feature_dropout(rows, 0.0, rng);
  CHECK(kept == rows);

  // Statistical: survival rate ~ 1-rate, surviving weight = 1/(1-rate).
  const double rate = 0.5;
  int64_t survived = 0;
  int64_t total = 0;
  for (int rep = 0; rep < 400; rep++) {
    auto dropped = sparse_feature_dropout(rows, rate, rng);
    for (size_t p = 0; p < rows.size(); p++) {
      total += static_cast<int64_t>(rows[p].size());
      for (const auto& [_, w] : dropped[p]) {
        CHECK(w == doctest::Approx(2.0));
        survived++;
      }
    }
  }
  const double frac = static_cast<double>(survived) / static_cast<double>(total);
  CHECK(frac == doctest::Approx(0.5).epsilon(0.05));
  CHECK_THROWS(sparse_feature_dropout(rows, 1.0, rng));
}

TEST_CASE("dense table loads fixed-dimension vectors") {
  TempFile f("test_vec.txt", "hello 1.0 0.0 2.0\nworld 0.5 -0.5 1.5\n");
  DenseTable table = load_dense_table(f.path);
  CHECK(table.dim == 3);
  CHECK(table.vectors.size() == 2);
  CHECK(table.vectors.at("world") == std::vector<double>{0.5, -0.5, 1.5});
}

TEST_CASE("ragged dense table is an error naming the line") {
  TempFile f("test_vec_bad.txt", "hello 1.0 0.0 2.0\nworld 0.5 -0.5\n");
  CHECK_THROWS_WITH_AS(load_dense_table(f.path), doctest::Contains("line 2"),
                       std::runtime_error);
}

TEST_CASE("duplicate word in dense table: last wins with a warning") {
  TempFile f("test_vec_dup.txt", "w 1.0 2.0\nw 3.0 4.0\n");
  std::vector<std::string> warnings;
  DenseTable table = load_dense_table(f.path, &warnings);
  CHECK(table.vectors.at("w") == std::vector<double>{3.0, 4.0});
  CHECK(!warnings.empty());
}

TEST_CASE("dense featurization: CLS is the mean of token vectors") {
  DenseTable table;
  table.dim = 2;
  table.vectors["aa"] = {1.0, 0.0};
  table.vectors["bb"] = {0.0, 1.0};
  auto rows = featurize_dense(tokenize("aa bb"), table);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == std::vector<double>{1.0, 0.0});
  CHECK(rows[1] == std::vector<double>{0.0, 1.0});
  CHECK(rows[2] == std::vector<double>{0.5, 0.5});
}

TEST_CASE("dense featurization: OOV tokens are zero vectors") {
  DenseTable table;
  table.dim = 2;
  table.vectors["aa"] = {1.0, 1.0};
  auto rows = featurize_dense(tokenize("xx yy"), table);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == std::vector<double>{0.0, 0.0});
  CHECK(rows[1] == std::vector<double>{0.0, 0.0});
  CHECK(rows[2] == std::vector<double>{0.0, 0.0});

  auto single = featurize_dense(tokenize("aa"), table);
  REQUIRE(single.size() == 2);
  CHECK(single[1] == std::vector<double>{1.0, 1.0});  // mean of one
}

TEST_CASE("sidecar supplies an explicit sentence vector") {
  TempFile f("test_side.jsonl",
             R"({"text":"hi there","cls_vector":[9.0,9.0],)"
             R"("token_vectors":[[1.0,2.0],[3.0,4.0]]})"
             "\n");
  SentenceSidecar side = load_sidecar(f.path);
  CHECK(side.dim == 2);
  std::vector<std::string> warnings;
  auto rows = featurize_dense_sidecar("hi there", tokenize("hi there"), side,
                                      &warnings);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == std::vector<double>{1.0, 2.0});
  CHECK(rows[1] == std::vector<double>{3.0, 4.0});
  CHECK(rows[2] == std::vector<double>{9.0, 9.0});
  CHECK(warnings.empty());

  auto missing = featurize_dense_sidecar("unknown text", tokenize("unknown text"),
                                         side, &warnings);
  REQUIRE(missing.size() == 3);
  for (const auto& r : missing) CHECK(r == std::vector<double>{0.0, 0.0});
  CHECK(!warnings.empty());
}

TEST_CASE("encode_utterance assembles sparse and dense channels") {
  Dataset data = one_liner("aa bb");
  SparseVocab vocab = build_vocab(data);
  DenseSource dense;
  dense.kind = DenseKind::kTable;
  dense.table.dim = 2;
  dense.table.vectors["aa"] = {1.0, 0.0};
  dense.table.vectors["bb"] = {0.0, 1.0};

  EncodedInput enc = encode_utterance(data.utterances[0], true, vocab, dense);
  CHECK(enc.num_tokens == 2);
  CHECK(enc.positions() == 3);
  CHECK(enc.sparse.size() == 3);
  CHECK(enc.dense.size() == 3);

  DenseSource none;
  EncodedInput sparse_only =
      encode_utterance(data.utterances[0], true, vocab, none);
  CHECK(sparse_only.dense.empty());
  CHECK(sparse_only.sparse.size() == 3);

  EncodedInput dense_only =
      encode_utterance(data.utterances[0], false, vocab, dense);
  CHECK(dense_only.sparse.empty());
  CHECK(dense_only.dense.size() == 3);
}
