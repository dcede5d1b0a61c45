#include "calm/synth.hpp"

#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

#include "calm/labels.hpp"
#include "calm/rng.hpp"
#include "json.hpp"

namespace calm {

namespace {

// Weight map flattened to index order for discrete sampling. std::map keys
// are sorted, so the layout is independent of insertion order.
struct IndexedDist {
  std::vector<std::string> words;
  std::vector<double> weights;
};

IndexedDist index_dist(const std::map<std::string, double>& m) {
  IndexedDist d;
  d.words.reserve(m.size());
  d.weights.reserve(m.size());
  for (const auto& [w, p] : m) {
    d.words.push_back(w);
    d.weights.push_back(p);
  }
  return d;
}

const std::string& sample_word(const IndexedDist& d, Rng& rng) {
  return d.words[rng.discrete(d.weights)];
}

}  // namespace

std::size_t SynthSpec::topic_index(const std::string& name) const {
  for (std::size_t i = 0; i < topics.size(); ++i)
    if (topics[i].name == name) return i;
  throw std::invalid_argument("synth spec: unknown topic '" + name + "'");
}

void SynthSpec::validate() const {
  if (topics.size() < 2)
    throw std::invalid_argument("synth spec: need at least 2 topics");
  const auto& inv = topic_labels();
  std::set<std::string> seen_names;
  std::set<std::string> entity_owner;
  for (const auto& t : topics) {
    if (!is_topic_label(t.name))
      throw std::invalid_argument("synth spec: topic name '" + t.name +
                                  "' is not in the topic inventory");
    if (!seen_names.insert(t.name).second)
      throw std::invalid_argument("synth spec: duplicate topic '" + t.name + "'");
    if (t.prompt_templates.empty())
      throw std::invalid_argument("synth spec: topic '" + t.name +
                                  "' has no prompt templates");
    for (const auto& p : t.prompt_templates)
      if (tokenize(p).empty())
        throw std::invalid_argument("synth spec: topic '" + t.name +
                                    "' has an empty prompt template");
    if (t.reply_unigram.empty())
      throw std::invalid_argument("synth spec: topic '" + t.name +
                                  "' has an empty reply distribution");
    for (const auto& [w, p] : t.reply_unigram)
      if (!(p > 0.0))
        throw std::invalid_argument("synth spec: topic '" + t.name +
                                    "' has non-positive weight for '" + w + "'");
    for (const auto& [prev, row] : t.reply_bigram) {
      if (row.empty())
        throw std::invalid_argument("synth spec: topic '" + t.name +
                                    "' has an empty bigram row for '" + prev + "'");
      for (const auto& [w, p] : row)
        if (!(p > 0.0))
          throw std::invalid_argument("synth spec: topic '" + t.name +
                                      "' has non-positive bigram weight for '" +
                                      prev + " " + w + "'");
    }
    for (const auto& e : t.entity_words)
      if (!entity_owner.insert(e).second)
        throw std::invalid_argument("synth spec: entity word '" + e +
                                    "' is claimed by more than one topic");
  }
  (void)inv;

  const std::size_t k = topics.size();
  if (transition.size() != k)
    throw std::invalid_argument("synth spec: transition matrix must have one row per topic");
  for (std::size_t i = 0; i < k; ++i) {
    if (transition[i].size() != k)
      throw std::invalid_argument("synth spec: transition row " + std::to_string(i) +
                                  " must have one entry per topic");
    double sum = 0.0;
    for (double p : transition[i]) {
      if (p < 0.0)
        throw std::invalid_argument("synth spec: negative transition probability in row " +
                                    std::to_string(i));
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("synth spec: transition row " + std::to_string(i) +
                                  " sums to " + std::to_string(sum) + ", expected 1");
  }
  if (!initial.empty()) {
    if (initial.size() != k)
      throw std::invalid_argument("synth spec: initial distribution must have one entry per topic");
    double sum = 0.0;
    for (double p : initial) {
      if (p < 0.0)
        throw std::invalid_argument("synth spec: negative initial probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("synth spec: initial distribution sums to " +
                                  std::to_string(sum) + ", expected 1");
  }

  if (bots.empty())
    throw std::invalid_argument("synth spec: need at least one bot id");
  if (num_conversations <= 0)
    throw std::invalid_argument("synth spec: num_conversations must be positive");
  if (min_turns < 1 || max_turns < min_turns)
    throw std::invalid_argument("synth spec: bad turn count range");
  if (min_len < 1 || max_len < min_len)
    throw std::invalid_argument("synth spec: bad utterance length range");
  if (p_neutral < 0.0 || p_neutral > 1.0)
    throw std::invalid_argument("synth spec: p_neutral must be in [0,1]");
  if (p_neutral > 0.0 && neutral_unigram.empty())
    throw std::invalid_argument("synth spec: p_neutral > 0 needs a neutral distribution");
  for (const auto& [w, p] : neutral_unigram)
    if (!(p > 0.0))
      throw std::invalid_argument("synth spec: non-positive neutral weight for '" + w + "'");
}

std::string act_for_reply(const std::vector<std::string>& reply) {
  if (reply.empty()) return "Other";
  const std::string& f = reply.front();
  static const std::set<std::string> wh = {"what", "who", "when", "where", "how", "why"};
  static const std::set<std::string> imp = {"tell", "give", "show", "play"};
  static const std::set<std::string> ack = {"yes", "no", "sure", "okay", "yeah"};
  static const std::set<std::string> chat = {"hmm", "hello", "hi", "thanks", "bye", "haha"};
  if (wh.count(f)) return "Information Request";
  if (imp.count(f)) return "User Instruction";
  if (ack.count(f)) return "Interactive";
  if (chat.count(f)) return "General Chat";
  if (f == "i" || f == "my") return "Opinion Expression";
  return "Information Delivery";
}

std::vector<Conversation> synth_generate(const SynthSpec& spec, uint64_t seed) {
  spec.validate();
  const std::size_t k = spec.topics.size();

  std::vector<IndexedDist> uni(k);
  std::vector<std::map<std::string, IndexedDist>> bi(k);
  std::vector<std::vector<std::vector<std::string>>> prompts(k);
  for (std::size_t t = 0; t < k; ++t) {
    uni[t] = index_dist(spec.topics[t].reply_unigram);
    for (const auto& [prev, row] : spec.topics[t].reply_bigram)
      bi[t].emplace(prev, index_dist(row));
    for (const auto& p : spec.topics[t].prompt_templates)
      prompts[t].push_back(tokenize(p));
  }
  IndexedDist neutral = index_dist(spec.neutral_unigram);
  std::vector<double> init = spec.initial;
  if (init.empty()) init.assign(k, 1.0 / static_cast<double>(k));

  std::map<std::string, std::string> entity_owner;
  for (const auto& t : spec.topics)
    for (const auto& e : t.entity_words) entity_owner.emplace(e, t.name);

  Rng base(seed);
  std::vector<Conversation> out;
  out.reserve(static_cast<std::size_t>(spec.num_conversations));
  for (int c = 0; c < spec.num_conversations; ++c) {
    Rng rng = base.substream("synth.conv", static_cast<uint64_t>(c));
    Conversation conv;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "synth-%05d", c);
    conv.id = idbuf;
    const std::string& bot = spec.bots[static_cast<std::size_t>(c) % spec.bots.size()];

    int n_turns = spec.min_turns +
                  static_cast<int>(rng.uniform_int(
                      static_cast<uint64_t>(spec.max_turns - spec.min_turns + 1)));
    std::size_t topic = 0;
    for (int i = 0; i < n_turns; ++i) {
      bool is_neutral = false;
      if (i == 0) {
        topic = rng.discrete(init);
      } else {
        is_neutral = spec.p_neutral > 0.0 && rng.uniform() < spec.p_neutral;
        if (!is_neutral) topic = rng.discrete(spec.transition[topic]);
      }

      Turn turn;
      turn.index = i;
      const auto& tmpl = prompts[topic];
      turn.system_prompt = tmpl[rng.uniform_int(static_cast<uint64_t>(tmpl.size()))];

      int len = spec.min_len +
                static_cast<int>(rng.uniform_int(
                    static_cast<uint64_t>(spec.max_len - spec.min_len + 1)));
      turn.user_utterance.reserve(static_cast<std::size_t>(len));
      for (int j = 0; j < len; ++j) {
        if (is_neutral) {
          turn.user_utterance.push_back(sample_word(neutral, rng));
          continue;
        }
        if (j > 0) {
          auto it = bi[topic].find(turn.user_utterance.back());
          if (it != bi[topic].end()) {
            turn.user_utterance.push_back(sample_word(it->second, rng));
            continue;
          }
        }
        turn.user_utterance.push_back(sample_word(uni[topic], rng));
      }

      turn.metadata["bot_id"] = bot;
      if (is_neutral && spec.neutral_label == NeutralLabel::Phatic)
        turn.metadata["topic"] = "Phatic";
      else
        turn.metadata["topic"] = spec.topics[topic].name;
      turn.metadata["act"] = act_for_reply(turn.user_utterance);

      std::vector<std::string> tags(turn.user_utterance.size());
      for (std::size_t j = 0; j < turn.user_utterance.size(); ++j) {
        auto it = entity_owner.find(turn.user_utterance[j]);
        if (it != entity_owner.end()) tags[j] = it->second;
      }
      turn.entity_tags = std::move(tags);
      conv.turns.push_back(std::move(turn));
    }
    out.push_back(std::move(conv));
  }
  return out;
}

namespace {

std::map<std::string, double> weighted(std::initializer_list<std::pair<const char*, double>> xs) {
  std::map<std::string, double> m;
  for (const auto& [w, p] : xs) m[w] = p;
  return m;
}

TopicSpec sports_topic() {
  TopicSpec t;
  t.name = "Sports";
  t.prompt_templates = {
      "do you want to talk about sports",
      "let's chat about sports and the big game",
      "tell me about your favorite team in sports",
  };
  t.reply_unigram = weighted({
      {"the", 3.0},   {"a", 1.5},     {"i", 2.0},      {"you", 1.0},
      {"we", 1.0},    {"is", 1.5},    {"was", 1.0},    {"really", 1.0},
      {"about", 1.0}, {"think", 1.0}, {"love", 1.0},   {"my", 1.5},
      {"what", 0.8},  {"how", 0.6},   {"tell", 0.5},   {"yes", 0.6},
      {"sports", 2.0},
      {"game", 2.5},  {"team", 2.5},  {"score", 1.8},  {"season", 1.5},
      {"coach", 1.5}, {"play", 1.8},  {"win", 1.8},    {"league", 1.5},
      {"ball", 1.2},  {"match", 1.5}, {"fans", 1.2},   {"field", 1.2},
      {"championship", 1.0},          {"player", 1.5},
      {"lakers", 1.0},{"yankees", 1.0},{"messi", 1.0}, {"lebron", 1.0},
      {"serena", 0.8},{"patriots", 0.8},
  });
  t.reply_bigram["the"] = weighted({{"game", 3.0}, {"team", 3.0}, {"score", 2.0},
                                    {"season", 1.5}, {"coach", 1.5}, {"league", 1.5},
                                    {"lakers", 1.0}, {"yankees", 1.0}, {"patriots", 0.8}});
  t.reply_bigram["my"] = weighted({{"team", 3.0}, {"coach", 1.0}, {"league", 0.8}});
  t.reply_bigram["about"] = weighted({{"the", 2.0}, {"sports", 1.5}, {"lebron", 0.8}});
  t.reply_bigram["sports"] = weighted({{"fans", 1.5}, {"is", 1.0}, {"season", 1.0}});
  t.entity_words = {"lakers", "yankees", "messi", "lebron", "serena", "patriots"};
  return t;
}

TopicSpec music_topic() {
  TopicSpec t;
  t.name = "Entertainment_Music";
  t.prompt_templates = {
      "do you want to talk about music",
      "let's chat about music and your favorite song",
      "tell me about the music you love",
  };
  t.reply_unigram = weighted({
      {"the", 3.0},   {"a", 1.5},     {"i", 2.0},      {"you", 1.0},
      {"we", 1.0},    {"is", 1.5},    {"was", 1.0},    {"really", 1.0},
      {"about", 1.0}, {"think", 1.0}, {"love", 1.2},   {"my", 1.5},
      {"what", 0.8},  {"how", 0.6},   {"play", 0.8},   {"yes", 0.6},
      {"music", 2.0},
      {"song", 2.5},  {"album", 2.2}, {"band", 2.0},   {"concert", 1.5},
      {"singer", 1.5},{"melody", 1.2},{"guitar", 1.5}, {"lyrics", 1.5},
      {"tour", 1.2},  {"playlist", 1.2},               {"record", 1.2},
      {"stage", 1.0}, {"dance", 1.2},
      {"beyonce", 1.0},{"drake", 1.0},{"beatles", 1.0},{"adele", 1.0},
      {"coldplay", 0.8},{"rihanna", 0.8},
  });
  t.reply_bigram["the"] = weighted({{"song", 3.0}, {"album", 2.5}, {"band", 2.0},
                                    {"concert", 1.5}, {"lyrics", 1.5}, {"stage", 1.0},
                                    {"beatles", 1.2}});
  t.reply_bigram["my"] = weighted({{"playlist", 2.5}, {"band", 1.0}, {"guitar", 1.0}});
  t.reply_bigram["about"] = weighted({{"the", 2.0}, {"music", 1.5}, {"beyonce", 0.8}});
  t.reply_bigram["music"] = weighted({{"is", 1.5}, {"tour", 0.8}, {"you", 0.8}});
  t.entity_words = {"beyonce", "drake", "beatles", "adele", "coldplay", "rihanna"};
  return t;
}

TopicSpec politics_topic() {
  TopicSpec t;
  t.name = "Politics";
  t.prompt_templates = {
      "do you want to talk about politics",
      "let's chat about politics and the election",
      "tell me about politics today",
  };
  t.reply_unigram = weighted({
      {"the", 3.0},   {"a", 1.5},      {"i", 2.0},      {"you", 1.0},
      {"we", 1.0},    {"is", 1.5},     {"was", 1.0},    {"really", 1.0},
      {"about", 1.0}, {"think", 1.2},  {"love", 0.6},   {"my", 1.2},
      {"what", 0.8},  {"how", 0.6},    {"tell", 0.5},   {"no", 0.6},
      {"politics", 2.0},
      {"election", 2.5},{"senate", 2.0},{"policy", 2.0},{"vote", 2.2},
      {"campaign", 1.5},{"president", 1.8},             {"congress", 1.5},
      {"debate", 1.5},{"bill", 1.2},   {"party", 1.5},  {"poll", 1.2},
      {"governor", 1.2},{"law", 1.2},  {"speech", 1.2},
      {"washington", 1.0},{"lincoln", 1.0},{"obama", 1.0},
      {"merkel", 0.8},{"churchill", 0.8},{"roosevelt", 0.8},
  });
  t.reply_bigram["the"] = weighted({{"election", 3.0}, {"senate", 2.0}, {"vote", 2.0},
                                    {"debate", 1.5}, {"president", 1.8}, {"poll", 1.0},
                                    {"governor", 1.0}});
  t.reply_bigram["my"] = weighted({{"vote", 2.5}, {"party", 1.2}, {"governor", 0.6}});
  t.reply_bigram["about"] = weighted({{"the", 2.0}, {"politics", 1.5}, {"obama", 0.8}});
  t.reply_bigram["politics"] = weighted({{"is", 1.5}, {"you", 0.8}, {"today", 0.8}});
  t.entity_words = {"washington", "lincoln", "obama", "merkel", "churchill", "roosevelt"};
  return t;
}

std::map<std::string, double> phatic_unigram() {
  return weighted({
      {"hmm", 1.5},   {"okay", 2.0}, {"yeah", 2.0},  {"sure", 1.5},
      {"thanks", 1.2},{"hello", 1.0},{"cool", 1.5},  {"nice", 1.5},
      {"right", 1.2}, {"well", 1.2}, {"oh", 1.2},    {"haha", 1.0},
      {"i", 1.0},     {"see", 1.0},  {"good", 1.5},  {"fine", 1.0},
  });
}

}  // namespace

SynthSpec default_synth_spec() {
  SynthSpec s;
  s.topics = {sports_topic(), music_topic(), politics_topic()};
  s.transition = {{0.6, 0.2, 0.2}, {0.2, 0.6, 0.2}, {0.2, 0.2, 0.6}};
  s.initial = {};
  s.bots = {"alpha", "bravo", "charlie"};
  s.num_conversations = 400;
  s.min_turns = 6;
  s.max_turns = 12;
  s.min_len = 4;
  s.max_len = 9;
  s.p_neutral = 0.25;
  s.neutral_unigram = phatic_unigram();
  s.neutral_label = NeutralLabel::Phatic;
  return s;
}

SynthSpec context_carry_spec() {
  SynthSpec s = default_synth_spec();
  s.transition = {{0.85, 0.075, 0.075}, {0.075, 0.85, 0.075}, {0.075, 0.075, 0.85}};
  s.num_conversations = 300;
  s.p_neutral = 0.5;
  s.neutral_label = NeutralLabel::Carry;
  return s;
}

SynthSpec disjoint_synth_spec() {
  SynthSpec s;
  TopicSpec a;
  a.name = "Sports";
  a.prompt_templates = {"sports prompt"};
  a.reply_unigram = weighted({{"game", 1.0}, {"team", 1.0}, {"score", 1.0},
                              {"win", 1.0}, {"coach", 1.0}});
  TopicSpec b;
  b.name = "Entertainment_Music";
  b.prompt_templates = {"music prompt"};
  b.reply_unigram = weighted({{"song", 1.0}, {"album", 1.0}, {"band", 1.0},
                              {"guitar", 1.0}, {"lyrics", 1.0}});
  TopicSpec c;
  c.name = "Politics";
  c.prompt_templates = {"politics prompt"};
  c.reply_unigram = weighted({{"vote", 1.0}, {"senate", 1.0}, {"policy", 1.0},
                              {"election", 1.0}, {"debate", 1.0}});
  s.topics = {a, b, c};
  s.transition = {{1.0 / 3, 1.0 / 3, 1.0 / 3},
                  {1.0 / 3, 1.0 / 3, 1.0 / 3},
                  {1.0 / 3, 1.0 / 3, 1.0 / 3}};
  s.bots = {"alpha"};
  s.num_conversations = 60;
  s.min_turns = 4;
  s.max_turns = 8;
  s.min_len = 4;
  s.max_len = 8;
  s.p_neutral = 0.0;
  return s;
}

std::string synth_spec_to_json(const SynthSpec& spec) {
  nlohmann::json j;
  for (const auto& t : spec.topics) {
    nlohmann::json jt;
    jt["name"] = t.name;
    jt["prompt_templates"] = t.prompt_templates;
    jt["reply_unigram"] = t.reply_unigram;
    if (!t.reply_bigram.empty()) jt["reply_bigram"] = t.reply_bigram;
    if (!t.entity_words.empty()) jt["entity_words"] = t.entity_words;
    j["topics"].push_back(std::move(jt));
  }
  j["transition"] = spec.transition;
  if (!spec.initial.empty()) j["initial"] = spec.initial;
  j["bots"] = spec.bots;
  j["num_conversations"] = spec.num_conversations;
  j["min_turns"] = spec.min_turns;
  j["max_turns"] = spec.max_turns;
  j["min_len"] = spec.min_len;
  j["max_len"] = spec.max_len;
  j["p_neutral"] = spec.p_neutral;
  if (!spec.neutral_unigram.empty()) j["neutral_unigram"] = spec.neutral_unigram;
  j["neutral_label"] = spec.neutral_label == NeutralLabel::Phatic ? "phatic" : "carry";
  return j.dump(2);
}

SynthSpec synth_spec_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("synth spec: bad json: ") + e.what());
  }
  SynthSpec s;
  try {
    for (const auto& jt : j.at("topics")) {
      TopicSpec t;
      t.name = jt.at("name").get<std::string>();
      t.prompt_templates = jt.at("prompt_templates").get<std::vector<std::string>>();
      t.reply_unigram = jt.at("reply_unigram").get<std::map<std::string, double>>();
      if (jt.contains("reply_bigram"))
        t.reply_bigram =
            jt["reply_bigram"].get<std::map<std::string, std::map<std::string, double>>>();
      if (jt.contains("entity_words"))
        t.entity_words = jt["entity_words"].get<std::vector<std::string>>();
      s.topics.push_back(std::move(t));
    }
    s.transition = j.at("transition").get<std::vector<std::vector<double>>>();
    if (j.contains("initial")) s.initial = j["initial"].get<std::vector<double>>();
    if (j.contains("bots")) s.bots = j["bots"].get<std::vector<std::string>>();
    if (j.contains("num_conversations")) s.num_conversations = j["num_conversations"].get<int>();
    if (j.contains("min_turns")) s.min_turns = j["min_turns"].get<int>();
    if (j.contains("max_turns")) s.max_turns = j["max_turns"].get<int>();
    if (j.contains("min_len")) s.min_len = j["min_len"].get<int>();
    if (j.contains("max_len")) s.max_len = j["max_len"].get<int>();
    if (j.contains("p_neutral")) s.p_neutral = j["p_neutral"].get<double>();
    if (j.contains("neutral_unigram"))
      s.neutral_unigram = j["neutral_unigram"].get<std::map<std::string, double>>();
    if (j.contains("neutral_label")) {
      std::string m = j["neutral_label"].get<std::string>();
      if (m == "phatic")
        s.neutral_label = NeutralLabel::Phatic;
      else if (m == "carry")
        s.neutral_label = NeutralLabel::Carry;
      else
        throw std::invalid_argument("synth spec: neutral_label must be 'phatic' or 'carry'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("synth spec: ") + e.what());
  }
  return s;
}

}  // namespace calm
