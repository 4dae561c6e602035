#include "dietnlu/featurizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace dietnlu {

namespace {

std::string lower_ascii(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

}  // namespace

std::vector<std::string> char_ngrams(const std::string& token, int n_max) {
  const std::string low = lower_ascii(token);
  std::set<std::string> grams;
  const int n_cp = codepoint_count(low);
  for (int start = 0; start < n_cp; start++) {
    for (int len = 1; len <= n_max && start + len <= n_cp; len++) {
      grams.insert(substring_cp(low, start, start + len));
    }
  }
  return std::vector<std::string>(grams.begin(), grams.end());
}

SparseVocab build_vocab(const Dataset& train, int n_max) {
  if (train.utterances.empty()) {
    throw std::runtime_error("build_vocab: dataset has no utterances");
  }
  SparseVocab vocab;
  vocab.n_max = n_max;
  std::set<std::string> tokens;
  std::set<std::string> grams;
  for (const Utterance& u : train.utterances) {
    for (const Token& t : u.tokens) {
      tokens.insert(t.text);
      for (const std::string& g : char_ngrams(t.text, n_max)) grams.insert(g);
    }
  }
  int next = SparseVocab::kReserved;
  for (const std::string& t : tokens) vocab.token_index[t] = next++;
  for (const std::string& g : grams) vocab.ngram_index[g] = next++;
  return vocab;
}

std::vector<SparseRow> featurize_sparse(const std::vector<Token>& tokens,
                                        const SparseVocab& vocab) {
  std::vector<SparseRow> rows;
  rows.reserve(tokens.size() + 1);
  std::set<int> cls_union;
  for (const Token& tok : tokens) {
    std::set<int> active;
    auto it = vocab.token_index.find(tok.text);
    active.insert(it != vocab.token_index.end() ? it->second
                                                : SparseVocab::kOovIndex);
    for (const std::string& g : char_ngrams(tok.text, vocab.n_max)) {
      auto git = vocab.ngram_index.find(g);
      if (git != vocab.ngram_index.end()) active.insert(git->second);
    }
    SparseRow row;
    row.reserve(active.size());
    for (int idx : active) {
      row.emplace_back(idx, 1.0);
      cls_union.insert(idx);
    }
    rows.push_back(std::move(row));
  }
  SparseRow cls_row;
  cls_row.reserve(cls_union.size());
  for (int idx : cls_union) cls_row.emplace_back(idx, 1.0);
  rows.push_back(std::move(cls_row));
  return rows;
}

std::vector<SparseRow> sparse_feature_dropout(const std::vector<SparseRow>& rows,
                                              double rate, Rng& rng) {
  if (rate <= 0.0) return rows;
  if (rate >= 1.0) {
    throw std::invalid_argument("sparse_feature_dropout: rate must be < 1");
  }
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<SparseRow> out;
  out.reserve(rows.size());
  for (const SparseRow& row : rows) {
    SparseRow kept;
    for (const auto& [idx, w] : row) {
      if (!rng.bernoulli(rate)) kept.emplace_back(idx, w * keep_scale);
    }
    out.push_back(std::move(kept));
  }
  return out;
}

DenseTable load_dense_table(const std::string& path,
                            std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("load_dense_table: cannot open " + path);
  }
  DenseTable table;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    line_no++;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string word;
    if (!(ss >> word)) continue;
    std::vector<double> vec;
    double v;
    while (ss >> v) vec.push_back(v);
    if (!ss.eof()) {
      throw std::runtime_error("load_dense_table: non-numeric value on line " +
                               std::to_string(line_no));
    }
    if (vec.empty()) {
      throw std::runtime_error("load_dense_table: no values on line " +
                               std::to_string(line_no));
    }
    if (table.dim == 0) {
      table.dim = static_cast<int>(vec.size());
    } else if (static_cast<int>(vec.size()) != table.dim) {
      throw std::runtime_error(
          "load_dense_table: line " + std::to_string(line_no) + " has " +
          std::to_string(vec.size()) + " values, expected " +
          std::to_string(table.dim));
    }
    if (warnings && table.vectors.count(word)) {
      warnings->push_back("load_dense_table: duplicate word '" + word +
                          "' on line " + std::to_string(line_no) +
                          ", keeping the later entry");
    }
    table.vectors[word] = std::move(vec);
  }
  return table;
}

SentenceSidecar load_sidecar(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("load_sidecar: cannot open " + path);
  }
  SentenceSidecar sc;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    line_no++;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error("load_sidecar: bad JSON on line " +
                               std::to_string(line_no) + ": " + e.what());
    }
    if (!j.contains("text") || !j.contains("cls_vector") ||
        !j.contains("token_vectors")) {
      throw std::runtime_error(
          "load_sidecar: line " + std::to_string(line_no) +
          " must contain text, cls_vector and token_vectors");
    }
    SentenceSidecar::Entry entry;
    entry.cls = j["cls_vector"].get<std::vector<double>>();
    entry.tokens = j["token_vectors"].get<std::vector<std::vector<double>>>();
    int d = static_cast<int>(entry.cls.size());
    for (const auto& tv : entry.tokens) {
      if (static_cast<int>(tv.size()) != d) {
        throw std::runtime_error("load_sidecar: ragged vectors on line " +
                                 std::to_string(line_no));
      }
    }
    if (sc.dim == 0) {
      sc.dim = d;
    } else if (d != sc.dim) {
      throw std::runtime_error("load_sidecar: line " + std::to_string(line_no) +
                               " has dimension " + std::to_string(d) +
                               ", expected " + std::to_string(sc.dim));
    }
    sc.entries[j["text"].get<std::string>()] = std::move(entry);
  }
  return sc;
}

std::vector<std::vector<double>> featurize_dense(
    const std::vector<Token>& tokens, const DenseTable& table) {
  const int d = table.dim;
  std::vector<std::vector<double>> rows;
  rows.reserve(tokens.size() + 1);
  std::vector<double> mean(d, 0.0);
  for (const Token& tok : tokens) {
    auto it = table.vectors.find(tok.text);
    std::vector<double> vec =
        it != table.vectors.end() ? it->second : std::vector<double>(d, 0.0);
    for (int i = 0; i < d; i++) mean[i] += vec[i];
    rows.push_back(std::move(vec));
  }
  if (!tokens.empty()) {
    for (double& m : mean) m /= static_cast<double>(tokens.size());
  }
  rows.push_back(std::move(mean));
  return rows;
}

std::vector<std::vector<double>> featurize_dense_sidecar(
    const std::string& text, const std::vector<Token>& tokens,
    const SentenceSidecar& sidecar, std::vector<std::string>* warnings) {
  const int d = sidecar.dim;
  std::vector<std::vector<double>> rows;
  rows.reserve(tokens.size() + 1);
  auto it = sidecar.entries.find(text);
  if (it == sidecar.entries.end()) {
    if (warnings) {
      warnings->push_back("dense sidecar has no entry for \"" + text +
                          "\"; using zero vectors");
    }
    rows.assign(tokens.size() + 1, std::vector<double>(d, 0.0));
    return rows;
  }
  const SentenceSidecar::Entry& entry = it->second;
  for (size_t i = 0; i < tokens.size(); i++) {
    if (i < entry.tokens.size()) {
      rows.push_back(entry.tokens[i]);
    } else {
      if (warnings) {
        warnings->push_back("dense sidecar entry for \"" + text +
                            "\" is short by " +
                            std::to_string(tokens.size() - entry.tokens.size()) +
                            " token vectors; padding with zeros");
      }
      rows.push_back(std::vector<double>(d, 0.0));
    }
  }
  rows.push_back(entry.cls);
  return rows;
}

EncodedInput encode_utterance(const Utterance& u, bool use_sparse,
                              const SparseVocab& vocab, const DenseSource& dense,
                              std::vector<std::string>* warnings) {
  EncodedInput enc;
  enc.num_tokens = static_cast<int>(u.tokens.size());
  if (use_sparse) enc.sparse = featurize_sparse(u.tokens, vocab);
  if (dense.kind == DenseKind::kTable) {
    enc.dense = featurize_dense(u.tokens, dense.table);
  } else if (dense.kind == DenseKind::kSidecar) {
    enc.dense = featurize_dense_sidecar(u.text, u.tokens, dense.sidecar, warnings);
  }
  return enc;
}

}  // namespace dietnlu
