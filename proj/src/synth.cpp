#include "pcp/harness.hpp"

namespace pcp {

namespace {

// Wide planted vocabularies: a 16-per-class labelled sample cannot cover
// them, while the unlabelled pool sees every word many times. That coverage
// gap is what continued pre-training exploits.
const std::vector<std::string> kPositiveWords = {
    "great",      "wonderful", "excellent",  "amazing",   "delightful", "superb",
    "fantastic",  "charming",  "brilliant",  "lovely",    "enjoyable",  "thrilling",
    "beautiful",  "touching",  "clever",     "gripping",  "fresh",      "perfect",
    "inspired",   "memorable", "stunning",   "graceful",  "radiant",    "splendid",
    "marvelous",  "engaging",  "vibrant",    "heartfelt", "playful",    "luminous",
    "masterful",  "tender",    "witty",      "soulful",   "glowing",    "uplifting",
    "rewarding",  "polished",  "crisp",      "elegant",   "warm",       "joyful",
    "spirited",   "rich",      "captivating", "vivid",    "sharp",      "sincere",
    "magnetic",   "dazzling",  "refreshing", "stirring",  "sublime",    "winning",
    "absorbing",  "generous",  "bright",     "daring",    "bold",       "alive"};

const std::vector<std::string> kNegativeWords = {
    "terrible",  "awful",      "horrible",   "boring",     "dreadful",  "lousy",
    "weak",      "messy",      "bland",      "painful",    "dull",      "annoying",
    "stupid",    "tedious",    "flat",       "clumsy",     "tired",     "broken",
    "shallow",   "forgettable", "sloppy",    "hollow",     "grating",   "lifeless",
    "miserable", "pointless",  "stale",      "crude",      "labored",   "muddled",
    "wooden",    "dreary",     "cheap",      "soggy",      "torpid",    "vapid",
    "grim",      "lame",       "limp",       "murky",      "plodding",  "shabby",
    "sour",      "stiff",      "strained",   "tasteless",  "thin",      "tiresome",
    "trite",     "ugly",       "unpleasant", "useless",    "vacant",    "weary",
    "wretched",  "sluggish",   "leaden",     "banal",      "drab",      "inept"};

const std::vector<std::string> kFillerWords = {
    "the",     "a",       "this",    "that",   "movie",   "film",    "story",
    "plot",    "scene",   "actor",   "actress", "director", "script", "dialogue",
    "music",   "camera",  "picture", "show",   "drama",   "comedy",  "cast",
    "crew",    "set",     "screen",  "stage",  "role",    "character", "ending",
    "moment",  "minute",  "hour",    "night",  "day",     "week",    "year",
    "city",    "town",    "house",   "road",   "river",   "garden",  "window",
    "door",    "light",   "shadow",  "sound",  "voice",   "word",    "line",
    "page",    "book",    "idea",    "theme",  "style",   "tone",    "pace",
    "mood",    "color",   "image",   "frame",  "cut",     "take",    "shot",
    "angle",   "view",    "crowd",   "family", "friend",  "hero",    "journey",
    "morning", "evening", "winter",  "summer", "rain",    "wind",    "storm",
    "was",     "is",      "seems",   "feels",  "looks"};

const std::vector<std::string> kPairKeywords = {
    "anchor", "basket", "candle", "dagger", "engine", "falcon",
    "garnet", "hammer", "island", "jacket", "kettle", "ladder"};

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

// Filler text follows a fixed bigram chain (each word has four possible
// successors) so that masked-token prediction has real local structure to
// learn, the way natural text does.
std::vector<std::string> filler(int n, Rng& rng) {
  const int size = static_cast<int>(kFillerWords.size());
  std::vector<std::string> words;
  int cur = rng.uniform_int(size);
  for (int w = 0; w < n; ++w) {
    words.push_back(kFillerWords[static_cast<size_t>(cur)]);
    cur = (cur * 5 + 3 + 11 * rng.uniform_int(4)) % size;
  }
  return words;
}

}  // namespace

std::vector<Example> make_synth_sentiment(int count, uint64_t seed) {
  Rng rng(seed);
  std::vector<Example> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int polarity = rng.uniform_int(2);  // 0 negative, 1 positive
    const auto& planted = polarity == 1 ? kPositiveWords : kNegativeWords;
    std::vector<std::string> words = filler(4 + rng.uniform_int(5), rng);
    const int plant_count = 3 + rng.uniform_int(3);
    for (int p = 0; p < plant_count; ++p) {
      const auto& word =
          planted[static_cast<size_t>(rng.uniform_int(static_cast<int>(planted.size())))];
      words.insert(words.begin() + rng.uniform_int(static_cast<int>(words.size()) + 1), word);
    }
    Example ex;
    ex.text_a = join(words);
    int label = polarity;
    if (rng.uniform() < 0.10) label = 1 - label;  // 10% label noise
    ex.label = label == 1 ? "positive" : "negative";
    ex.origin = LabelOrigin::kGold;
    out.push_back(std::move(ex));
  }
  return out;
}

TaskSpec synth_sentiment_task() {
  return parse_task(R"({
    "name": "synth-sentiment",
    "labels": ["negative", "positive"],
    "template": "{text_a} it was {mask} .",
    "soft_template": "{text_a} {soft:0} {soft:1} {mask} {soft:2}",
    "verbalizer": {"negative": "terrible", "positive": "great"},
    "metric": "accuracy",
    "is_pair": false
  })",
                    "synth_sentiment_task");
}

std::vector<Example> make_synth_pair(int count, uint64_t seed) {
  Rng rng(seed);
  std::vector<Example> out;
  out.reserve(static_cast<size_t>(count));
  const int nkeys = static_cast<int>(kPairKeywords.size());
  for (int i = 0; i < count; ++i) {
    const int key = rng.uniform_int(nkeys);
    std::vector<std::string> a = filler(3 + rng.uniform_int(4), rng);
    a.insert(a.begin() + rng.uniform_int(static_cast<int>(a.size()) + 1),
             kPairKeywords[static_cast<size_t>(key)]);
    if (rng.uniform() < 0.5) {  // sometimes a second keyword in text_a
      const int extra = rng.uniform_int(nkeys);
      a.insert(a.begin() + rng.uniform_int(static_cast<int>(a.size()) + 1),
               kPairKeywords[static_cast<size_t>(extra)]);
    }
    const bool match = rng.uniform_int(2) == 1;
    std::vector<std::string> b = filler(3 + rng.uniform_int(3), rng);
    if (match)  // text_b repeats a keyword of text_a
      b.insert(b.begin() + rng.uniform_int(static_cast<int>(b.size()) + 1),
               kPairKeywords[static_cast<size_t>(key)]);
    else  // no keyword of text_a appears in text_b
      b.push_back(kFillerWords[static_cast<size_t>(
          rng.uniform_int(static_cast<int>(kFillerWords.size())))]);
    Example ex;
    ex.text_a = join(a);
    ex.text_b = join(b);
    ex.label = match ? "yes" : "no";
    ex.origin = LabelOrigin::kGold;
    out.push_back(std::move(ex));
  }
  return out;
}

TaskSpec synth_pair_task() {
  return parse_task(R"({
    "name": "synth-pair",
    "labels": ["no", "yes"],
    "template": "{text_a} ? {mask} , {text_b}",
    "soft_template": "{text_a} {mask} {soft:0} {text_b}",
    "verbalizer": {"no": "wrong", "yes": "right"},
    "metric": "accuracy",
    "is_pair": true
  })",
                    "synth_pair_task");
}

}  // namespace pcp
