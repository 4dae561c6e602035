#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "dietnlu/data.hpp"
#include "dietnlu/rng.hpp"
#include "dietnlu/tensor.hpp"

namespace dietnlu {

// Token one-hots and character n-gram multi-hots share one concatenated
// sparse dimension. Built from training data once, then frozen.
struct SparseVocab {
  static constexpr int kOovIndex = 0;  // unseen token
  static constexpr int kClsIndex = 1;  // reserved for the __CLS__ slot
  static constexpr int kReserved = 2;

  std::map<std::string, int> token_index;  // case-sensitive
  std::map<std::string, int> ngram_index;  // lowercased n-grams, n <= n_max
  int n_max = 5;

  int size() const {
    return kReserved + static_cast<int>(token_index.size() + ngram_index.size());
  }
};

// All contiguous substrings (in codepoints) of length 1..n_max of the
// lowercased token, unique and sorted.
std::vector<std::string> char_ngrams(const std::string& token, int n_max);

SparseVocab build_vocab(const Dataset& train, int n_max = 5);

// Per-position active index sets with weight 1, followed by the __CLS__
// position holding the union of all token positions' indices.
std::vector<SparseRow> featurize_sparse(const std::vector<Token>& tokens,
                                        const SparseVocab& vocab);

// Per-feature inverted dropout on sparse activations (training mode only;
// callers skip this in eval mode).
std::vector<SparseRow> sparse_feature_dropout(const std::vector<SparseRow>& rows,
                                              double rate, Rng& rng);

// --- dense features -------------------------------------------------------

// Word-vector text file: one line per word, word then d reals, space
// separated. The __CLS__ position takes the mean of the token vectors.
struct DenseTable {
  std::unordered_map<std::string, std::vector<double>> vectors;
  int dim = 0;
};

DenseTable load_dense_table(const std::string& path,
                            std::vector<std::string>* warnings = nullptr);

// Sentence sidecar for providers with native sentence encodings: JSON-lines
// of {"text", "cls_vector", "token_vectors"}.
struct SentenceSidecar {
  struct Entry {
    std::vector<double> cls;
    std::vector<std::vector<double>> tokens;
  };
  std::unordered_map<std::string, Entry> entries;
  int dim = 0;
};

SentenceSidecar load_sidecar(const std::string& path);

enum class DenseKind { kNone, kTable, kSidecar };

struct DenseSource {
  DenseKind kind = DenseKind::kNone;
  DenseTable table;
  SentenceSidecar sidecar;
  std::string path;  // as configured, recorded in checkpoints

  int dim() const {
    if (kind == DenseKind::kTable) return table.dim;
    if (kind == DenseKind::kSidecar) return sidecar.dim;
    return 0;
  }
};

// Per-position dense vectors including the __CLS__ position. Unknown words
// (or utterances missing from a sidecar) featurize to zero vectors.
std::vector<std::vector<double>> featurize_dense(
    const std::vector<Token>& tokens, const DenseTable& table);
std::vector<std::vector<double>> featurize_dense_sidecar(
    const std::string& text, const std::vector<Token>& tokens,
    const SentenceSidecar& sidecar, std::vector<std::string>* warnings = nullptr);

// Featurized utterance ready for the model: positions = tokens + __CLS__.
struct EncodedInput {
  std::vector<SparseRow> sparse;                // empty when sparse disabled
  std::vector<std::vector<double>> dense;       // empty when no dense source
  int num_tokens = 0;
  int positions() const { return num_tokens + 1; }
};

EncodedInput encode_utterance(const Utterance& u, bool use_sparse,
                              const SparseVocab& vocab, const DenseSource& dense,
                              std::vector<std::string>* warnings = nullptr);

}  // namespace dietnlu
