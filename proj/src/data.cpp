#include "dietnlu/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace dietnlu {

namespace {

bool is_utf8_continuation(unsigned char c) { return (c & 0xC0) == 0x80; }

// Byte offset of each codepoint, plus one past-the-end entry.
std::vector<size_t> codepoint_offsets(const std::string& text) {
  std::vector<size_t> offs;
  for (size_t i = 0; i < text.size(); ++i) {
    if (!is_utf8_continuation(static_cast<unsigned char>(text[i]))) offs.push_back(i);
  }
  offs.push_back(text.size());
  return offs;
}

bool is_space_cp(const std::string& text, size_t byte0, size_t byte1) {
  return byte1 - byte0 == 1 &&
         std::isspace(static_cast<unsigned char>(text[byte0]));
}

// ASCII punctuation except the apostrophe, which has its own splitting rule.
bool is_strip_punct(const std::string& text, size_t byte0, size_t byte1) {
  if (byte1 - byte0 != 1) return false;
  const unsigned char c = static_cast<unsigned char>(text[byte0]);
  return c != '\'' && std::ispunct(c);
}

bool is_apostrophe(const std::string& text, size_t byte0, size_t byte1) {
  return byte1 - byte0 == 1 && text[byte0] == '\'';
}

}  // namespace

int codepoint_count(const std::string& text) {
  int n = 0;
  for (unsigned char c : text)
    if (!is_utf8_continuation(c)) ++n;
  return n;
}

std::string substring_cp(const std::string& text, int start, int end) {
  const auto offs = codepoint_offsets(text);
  const int n = static_cast<int>(offs.size()) - 1;
  if (start < 0 || end > n || start > end)
    throw std::out_of_range("substring_cp: [" + std::to_string(start) + "," +
                            std::to_string(end) + ") out of range for length " +
                            std::to_string(n));
  return text.substr(offs[start], offs[end] - offs[start]);
}

std::vector<Token> tokenize(const std::string& text) {
  const auto offs = codepoint_offsets(text);
  const int n = static_cast<int>(offs.size()) - 1;
  std::vector<Token> tokens;
  auto emit = [&](int s, int e) {
    if (s < e) tokens.push_back({text.substr(offs[s], offs[e] - offs[s]), s, e});
  };

  int i = 0;
  while (i < n) {
    if (is_space_cp(text, offs[i], offs[i + 1])) {
      ++i;
      continue;
    }
    int j = i;
    while (j < n && !is_space_cp(text, offs[j], offs[j + 1])) ++j;
    // chunk [i, j); peel leading punctuation
    int s = i;
    while (s < j && is_strip_punct(text, offs[s], offs[s + 1])) {
      emit(s, s + 1);
      ++s;
    }
    // peel trailing punctuation, emitted after the core in order
    int e = j;
    while (e > s && is_strip_punct(text, offs[e - 1], offs[e])) --e;
    // core [s, e): split at apostrophes, apostrophe attaches to the suffix
    int seg = s;
    for (int p = s; p < e; ++p) {
      if (p > seg && is_apostrophe(text, offs[p], offs[p + 1])) {
        emit(seg, p);
        seg = p;
      }
    }
    emit(seg, e);
    for (int p = e; p < j; ++p) emit(p, p + 1);
    i = j;
  }
  return tokens;
}

namespace {

void collect_inventories(Dataset& data) {
  std::set<std::string> intents, labels;
  for (const auto& u : data.utterances) {
    intents.insert(u.intent);
    for (const auto& e : u.entities) labels.insert(e.label);
  }
  data.intents.assign(intents.begin(), intents.end());
  data.entity_labels.assign(labels.begin(), labels.end());
}

// Snap a span outward to token boundaries; returns false when no token
// overlaps the span at all.
bool snap_span(const std::vector<Token>& tokens, EntitySpan& span, bool* snapped) {
  int new_start = -1, new_end = -1;
  for (const auto& t : tokens) {
    if (t.end > span.start && t.start < span.end) {
      if (new_start < 0) new_start = t.start;
      new_end = t.end;
    }
  }
  if (new_start < 0) return false;
  *snapped = (new_start != span.start || new_end != span.end);
  span.start = new_start;
  span.end = new_end;
  return true;
}

}  // namespace

Utterance make_utterance(const std::string& text, const std::string& intent,
                         std::vector<EntitySpan> entities) {
  Utterance u;
  u.text = text;
  u.intent = intent;
  u.tokens = tokenize(text);
  const int n = codepoint_count(text);
  std::sort(entities.begin(), entities.end(),
            [](const EntitySpan& a, const EntitySpan& b) { return a.start < b.start; });
  int prev_end = 0;
  for (auto& e : entities) {
    if (e.start < 0 || e.end > n || e.start >= e.end)
      throw std::runtime_error("entity span [" + std::to_string(e.start) + "," +
                               std::to_string(e.end) + ") out of bounds for \"" +
                               text + "\" (length " + std::to_string(n) + ")");
    if (e.start < prev_end)
      throw std::runtime_error("overlapping entity spans in \"" + text + "\"");
    prev_end = e.end;
    e.value = substring_cp(text, e.start, e.end);
  }
  u.entities = std::move(entities);
  return u;
}

Dataset make_dataset(std::string name, std::vector<Utterance> utterances) {
  Dataset d;
  d.name = std::move(name);
  d.utterances = std::move(utterances);
  collect_inventories(d);
  return d;
}

Dataset parse_dataset(std::istream& in, const std::string& name,
                      LoadReport* report) {
  Dataset data;
  data.name = name;
  std::string line;
  int record = 0;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error("record " + std::to_string(record) + " (line " +
                               std::to_string(line_no) + "): " + e.what());
    }
    if (!j.is_object() || !j.contains("text") || !j.contains("intent"))
      throw std::runtime_error("record " + std::to_string(record) +
                               ": expected an object with text and intent");
    for (const auto& [key, _] : j.items()) {
      if (key != "text" && key != "intent" && key != "entities" && report)
        report->warnings.push_back("record " + std::to_string(record) +
                                   ": unknown field \"" + key + "\"");
    }
    Utterance u;
    u.text = j.at("text").get<std::string>();
    u.intent = j.at("intent").get<std::string>();
    u.tokens = tokenize(u.text);
    const int n = codepoint_count(u.text);
    if (j.contains("entities")) {
      for (const auto& ej : j.at("entities")) {
        EntitySpan span;
        span.start = ej.at("start").get<int>();
        span.end = ej.at("end").get<int>();
        span.label = ej.at("label").get<std::string>();
        if (span.start < 0 || span.end > n || span.start >= span.end)
          throw std::runtime_error(
              "record " + std::to_string(record) + ": entity span [" +
              std::to_string(span.start) + "," + std::to_string(span.end) +
              ") out of bounds (text length " + std::to_string(n) + ")");
        bool snapped = false;
        if (!snap_span(u.tokens, span, &snapped))
          throw std::runtime_error("record " + std::to_string(record) +
                                   ": entity span covers no token");
        if (snapped && report)
          report->warnings.push_back(
              "record " + std::to_string(record) +
              ": entity span snapped to token boundaries [" +
              std::to_string(span.start) + "," + std::to_string(span.end) + ")");
        span.value = substring_cp(u.text, span.start, span.end);
        u.entities.push_back(span);
      }
    }
    std::sort(u.entities.begin(), u.entities.end(),
              [](const EntitySpan& a, const EntitySpan& b) { return a.start < b.start; });
    for (size_t k = 1; k < u.entities.size(); ++k) {
      if (u.entities[k].start < u.entities[k - 1].end)
        throw std::runtime_error("record " + std::to_string(record) +
                                 ": overlapping entity spans");
    }
    data.utterances.push_back(std::move(u));
    ++record;
  }
  collect_inventories(data);
  return data;
}

Dataset load_dataset(const std::string& path, LoadReport* report) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);
  return parse_dataset(in, path, report);
}

void save_dataset(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path);
  for (const auto& u : data.utterances) {
    nlohmann::json j;
    j["text"] = u.text;
    j["intent"] = u.intent;
    j["entities"] = nlohmann::json::array();
    for (const auto& e : u.entities)
      j["entities"].push_back({{"start", e.start}, {"end", e.end}, {"label", e.label}});
    out << j.dump() << "\n";
  }
}

TagSequence spans_to_bilou(const Utterance& u) {
  TagSequence tags(u.tokens.size(), "O");
  std::vector<int> owner(u.tokens.size(), -1);
  for (size_t s = 0; s < u.entities.size(); ++s) {
    const auto& span = u.entities[s];
    std::vector<int> covered;
    for (size_t t = 0; t < u.tokens.size(); ++t) {
      if (u.tokens[t].end > span.start && u.tokens[t].start < span.end) {
        if (owner[t] >= 0)
          throw std::runtime_error("overlapping entity spans at token " +
                                   std::to_string(t));
        owner[t] = static_cast<int>(s);
        covered.push_back(static_cast<int>(t));
      }
    }
    if (covered.empty())
      throw std::runtime_error("entity span [" + std::to_string(span.start) +
                               "," + std::to_string(span.end) +
                               ") covers no token");
    if (covered.size() == 1) {
      tags[covered[0]] = "U-" + span.label;
    } else {
      tags[covered.front()] = "B-" + span.label;
      for (size_t k = 1; k + 1 < covered.size(); ++k)
        tags[covered[k]] = "I-" + span.label;
      tags[covered.back()] = "L-" + span.label;
    }
  }
  return tags;
}

std::vector<EntitySpan> bilou_to_spans(const std::string& text,
                                       const std::vector<Token>& tokens,
                                       const TagSequence& tags) {
  if (tokens.size() != tags.size())
    throw std::invalid_argument("bilou_to_spans: " + std::to_string(tokens.size()) +
                                " tokens vs " + std::to_string(tags.size()) +
                                " tags");
  std::vector<EntitySpan> spans;
  const int n = static_cast<int>(tags.size());
  auto label_of = [](const std::string& tag) { return tag.substr(2); };
  auto emit = [&](int first, int last, const std::string& label) {
    EntitySpan s;
    s.start = tokens[first].start;
    s.end = tokens[last].end;
    s.label = label;
    s.value = substring_cp(text, s.start, s.end);
    spans.push_back(std::move(s));
  };
  int i = 0;
  while (i < n) {
    const std::string& tag = tags[i];
    if (tag == "O") {
      ++i;
      continue;
    }
    const std::string label = label_of(tag);
    if (tag[0] == 'U') {
      emit(i, i, label);
      ++i;
      continue;
    }
    // B-, or a promoted I-/L- run start
    int k = i;
    if (tag[0] != 'L') {
      while (k + 1 < n) {
        const std::string& next = tags[k + 1];
        if (next == "I-" + label) {
          ++k;
        } else if (next == "L-" + label) {
          ++k;
          break;
        } else {
          break;
        }
      }
    }
    emit(i, k, label);
    i = k + 1;
  }
  return spans;
}

std::vector<std::string> bilou_tag_set(const std::vector<std::string>& entity_labels) {
  // Canonical order regardless of how the inventory was collected.
  std::set<std::string> labels(entity_labels.begin(), entity_labels.end());
  std::vector<std::string> tags{"O"};
  for (const auto& label : labels)
    for (const char* prefix : {"B-", "I-", "L-", "U-"})
      tags.push_back(prefix + label);
  return tags;
}

}  // namespace dietnlu
