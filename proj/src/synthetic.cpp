#include "dietnlu/synthetic.hpp"

#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "dietnlu/rng.hpp"

namespace dietnlu {

namespace {

struct IntentTemplate {
  const char* name;
  int slot;  // index into kSlotTypes, -1 for none
  std::vector<const char*> prefixes;
  std::vector<const char*> suffixes;  // "" = no tail
  std::vector<const char*> slotless;  // carriers used when the slot type is
                                      // outside the requested inventory
};

const std::vector<const char*> kSlotTypes = {"game_name", "city", "artist",
                                             "dish", "duration"};

const std::vector<std::vector<const char*>> kSlotValues = {
    {"ping pong", "chess", "checkers", "go fish", "poker", "tic tac toe",
     "darts", "dominoes"},
    {"london", "paris", "berlin", "tokyo", "madrid", "oslo", "dublin",
     "vienna"},
    {"the beatles", "queen", "adele", "coldplay", "madonna", "nirvana", "abba",
     "blur"},
    {"pizza", "sushi", "tacos", "ramen", "pasta", "curry", "salad", "burgers"},
    {"five minutes", "one hour", "ten minutes", "half an hour", "two hours",
     "ninety seconds", "one minute", "three hours"},
};

const std::vector<IntentTemplate>& intent_templates() {
  static const std::vector<IntentTemplate> t = {
      {"play_game",
       0,
       {"play", "start a game of", "lets play", "i want to play",
        "can we play", "set up a round of"},
       {"", "now", "please", "with me", "tonight", "after dinner"},
       {"start a new game", "i want to play something", "lets play a game",
        "set up the board", "deal me in", "game time"}},
      {"book_flight",
       1,
       {"book a flight to", "fly me to", "i need a ticket to",
        "get me a plane to", "reserve a seat to", "find flights to"},
       {"", "tomorrow", "next week", "on friday", "this weekend", "in march"},
       {"book me a flight", "i need a plane ticket", "find me any flight",
        "reserve my usual seat", "get me on a plane", "arrange my travel"}},
      {"play_music",
       2,
       {"play some", "put on", "i want to hear", "start playing",
        "queue up", "shuffle songs by"},
       {"", "now", "please", "for me", "on the speakers", "while i cook"},
       {"play some music", "put on my playlist", "start the radio",
        "shuffle my songs", "turn up the music", "resume playback"}},
      {"weather_query",
       1,
       {"whats the weather in", "will it rain in", "hows the forecast for",
        "is it sunny in", "temperature in", "give me the weather for"},
       {"", "today", "tomorrow", "this week", "right now", "on sunday"},
       {"whats the weather like", "will it rain today", "hows the forecast",
        "is it cold outside", "do i need an umbrella", "give me the weather"}},
      {"greet",
       -1,
       {"hi", "hello", "hey there", "good morning", "good evening", "hiya",
        "howdy", "greetings"},
       {"", "there", "friend", "to you", "everyone", "again"},
       {}},
      {"order_food",
       3,
       {"order me some", "i want to eat", "get me", "deliver some",
        "im craving", "can i get"},
       {"", "now", "please", "for lunch", "for dinner", "tonight"},
       {"order my usual", "im hungry", "get me something to eat",
        "find me food", "whats for dinner", "feed me"}},
      {"set_timer",
       4,
       {"set a timer for", "remind me in", "count down", "start a timer for",
        "wake me in", "give me"},
       {"", "please", "from now", "starting now", "ok", "thanks"},
       {"set a timer", "start the countdown", "remind me later",
        "start the stopwatch", "time me", "set my alarm"}},
      {"cancel_timer",
       4,
       {"cancel the timer for", "stop the timer for", "drop the reminder for",
        "clear the countdown of", "forget the timer for", "kill the timer for"},
       {"", "please", "now", "thanks", "ok", "right away"},
       {"cancel the timer", "stop the countdown", "clear my reminders",
        "stop the stopwatch", "forget that alarm", "cancel it"}},
  };
  return t;
}

const std::vector<const char*> kFillers = {"please", "now",   "today",
                                           "for me", "again", "thanks"};

template <typename T>
const T& choose(const std::vector<T>& v, Rng& rng) {
  return v[rng.uniform_int(static_cast<int>(v.size()))];
}

std::string apply_noise(const std::string& text, double noise, Rng& rng) {
  if (noise <= 0.0 || !rng.bernoulli(noise)) return text;
  // substitute one letter; length-preserving so offsets stay valid
  std::vector<int> letters;
  for (int i = 0; i < static_cast<int>(text.size()); i++) {
    if (text[i] >= 'a' && text[i] <= 'z') letters.push_back(i);
  }
  if (letters.empty()) return text;
  std::string out = text;
  const int at = choose(letters, rng);
  char repl = static_cast<char>('a' + rng.uniform_int(26));
  while (repl == out[at]) repl = static_cast<char>('a' + rng.uniform_int(26));
  out[at] = repl;
  return out;
}

}  // namespace

std::pair<Dataset, Dataset> generate_synthetic(const SyntheticSpec& spec) {
  const auto& templates = intent_templates();
  if (spec.num_intents < 1 ||
      spec.num_intents > static_cast<int>(templates.size())) {
    throw std::invalid_argument("generate_synthetic: num_intents must be 1.." +
                                std::to_string(templates.size()));
  }
  if (spec.num_entity_types < 0 ||
      spec.num_entity_types > static_cast<int>(kSlotTypes.size())) {
    throw std::invalid_argument(
        "generate_synthetic: num_entity_types must be 0.." +
        std::to_string(kSlotTypes.size()));
  }
  if (spec.train_count < 1 || spec.test_count < 1) {
    throw std::invalid_argument("generate_synthetic: split sizes must be >= 1");
  }
  Rng rng(spec.seed);
  std::set<std::string> seen;
  std::vector<Utterance> all;
  const int total = spec.train_count + spec.test_count;
  for (int idx = 0; idx < total; idx++) {
    const IntentTemplate& tpl = templates[idx % spec.num_intents];
    const bool slotted = tpl.slot >= 0 && tpl.slot < spec.num_entity_types;
    std::string text;
    std::vector<EntitySpan> spans;
    bool accepted = false;
    for (int attempt = 0; attempt < 64 && !accepted; attempt++) {
      std::string prefix;
      std::string value;
      if (slotted) {
        prefix = choose(tpl.prefixes, rng);
        value = choose(kSlotValues[tpl.slot], rng);
        text = prefix + " " + value;
      } else if (!tpl.slotless.empty()) {
        text = choose(tpl.slotless, rng);
      } else {
        text = choose(tpl.prefixes, rng);
      }
      const std::string suffix = choose(tpl.suffixes, rng);
      if (!suffix.empty()) text += " " + suffix;
      // pools can run dry for slotless intents; pad with filler words
      for (int pad = 0; pad < 8 && seen.count(text); pad++) {
        text += " ";
        text += choose(kFillers, rng);
      }
      if (seen.count(text)) continue;
      seen.insert(text);
      std::string noised = apply_noise(text, spec.noise, rng);
      if (noised != text) {
        if (seen.count(noised)) {
          noised = text;  // keep the clean unique form
        } else {
          seen.insert(noised);
        }
      }
      if (slotted) {
        const int start = codepoint_count(prefix) + 1;
        const int end = start + codepoint_count(value);
        spans.push_back({start, end, kSlotTypes[tpl.slot],
                         substring_cp(noised, start, end)});
      }
      text = noised;
      accepted = true;
    }
    if (!accepted) {
      throw std::runtime_error(
          "generate_synthetic: could not produce a fresh utterance for " +
          std::string(tpl.name) + "; shrink the request or change the seed");
    }
    all.push_back(make_utterance(text, tpl.name, spans));
  }
  std::vector<Utterance> train(all.begin(), all.begin() + spec.train_count);
  std::vector<Utterance> test(all.begin() + spec.train_count, all.end());
  const std::string tag = std::to_string(spec.seed);
  return {make_dataset("synthetic-train-" + tag, std::move(train)),
          make_dataset("synthetic-test-" + tag, std::move(test))};
}

}  // namespace dietnlu
