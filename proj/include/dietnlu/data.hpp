#pragma once

#include <string>
#include <vector>

namespace dietnlu {

// Offsets throughout are Unicode codepoint offsets into the utterance text.
struct Token {
  std::string text;
  int start = 0;
  int end = 0;  // exclusive

  bool operator==(const Token&) const = default;
};

struct EntitySpan {
  int start = 0;
  int end = 0;  // exclusive
  std::string label;
  std::string value;  // text[start:end]

  bool operator==(const EntitySpan&) const = default;
};

struct Utterance {
  std::string text;
  std::vector<Token> tokens;
  std::string intent;
  std::vector<EntitySpan> entities;
};

// BILOU tags aligned 1:1 with tokens (the trailing __CLS__ position is not
// tagged).
using TagSequence = std::vector<std::string>;

struct Dataset {
  std::string name;
  std::vector<Utterance> utterances;
  std::vector<std::string> intents;        // sorted, unique
  std::vector<std::string> entity_labels;  // sorted, unique

  size_t size() const { return utterances.size(); }
};

// --- text utilities -------------------------------------------------------

int codepoint_count(const std::string& text);
std::string substring_cp(const std::string& text, int start, int end);

// Whitespace split, then leading/trailing ASCII punctuation becomes its own
// token and an apostrophe starts a new token that keeps the apostrophe
// ("who's" -> "who", "'s").
std::vector<Token> tokenize(const std::string& text);

// --- dataset I/O ----------------------------------------------------------

struct LoadReport {
  std::vector<std::string> warnings;
};

// Canonical JSON-lines format: one {"text", "intent", "entities":[{"start",
// "end","label"}]} object per line. Spans that do not land on token
// boundaries are snapped outward with a warning; out-of-bounds or
// overlapping spans are errors naming the offending record.
Dataset load_dataset(const std::string& path, LoadReport* report = nullptr);
Dataset parse_dataset(std::istream& in, const std::string& name,
                      LoadReport* report = nullptr);
void save_dataset(const Dataset& data, const std::string& path);

// Rebuilds tokens/inventories for programmatically constructed records.
Utterance make_utterance(const std::string& text, const std::string& intent,
                         std::vector<EntitySpan> entities);
Dataset make_dataset(std::string name, std::vector<Utterance> utterances);

// --- BILOU conversion -----------------------------------------------------

// Single-token entity -> U-label; multi-token -> B-label I-label* L-label;
// everything else O. Spans must align with token boundaries and not overlap.
TagSequence spans_to_bilou(const Utterance& u);

// Total decoding with repair: a run starting with I-/L- is promoted to B-,
// and a run that ends without L- closes at the last contiguous same-label
// tag.
std::vector<EntitySpan> bilou_to_spans(const std::string& text,
                                       const std::vector<Token>& tokens,
                                       const TagSequence& tags);

// O + {B-,I-,L-,U-} x labels, in deterministic order (O first).
std::vector<std::string> bilou_tag_set(const std::vector<std::string>& entity_labels);

}  // namespace dietnlu
