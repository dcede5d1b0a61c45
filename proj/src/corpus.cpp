#include "calm/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "calm/labels.hpp"
#include "calm/rng.hpp"
#include "json.hpp"

namespace calm {

using nlohmann::json;

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&]() {
    // Apostrophes survive only between kept characters.
    std::size_t b = 0, e = cur.size();
    while (b < e && cur[b] == '\'') ++b;
    while (e > b && cur[e - 1] == '\'') --e;
    if (e > b) out.emplace_back(cur.substr(b, e - b));
    cur.clear();
  };
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c == '\'') {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

const std::string& Vocabulary::bos_token() {
  static const std::string s = "<s>";
  return s;
}
const std::string& Vocabulary::eos_token() {
  static const std::string s = "</s>";
  return s;
}
const std::string& Vocabulary::unk_token() {
  static const std::string s = "<unk>";
  return s;
}

Vocabulary::Vocabulary() {
  add(bos_token());
  add(eos_token());
  add(unk_token());
}

TokenId Vocabulary::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  TokenId id = static_cast<TokenId>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

TokenId Vocabulary::id_of(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.find(std::string(token)) != index_.end();
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("Vocabulary::token: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

Vocabulary build_vocab(const std::vector<Conversation>& corpus, int min_count,
                       std::size_t max_size) {
  if (min_count < 1) throw std::invalid_argument("build_vocab: min_count must be >= 1");
  std::unordered_map<std::string, std::size_t> freq;
  for (const auto& conv : corpus) {
    for (const auto& turn : conv.turns) {
      for (const auto& t : turn.system_prompt) ++freq[t];
      for (const auto& t : turn.user_utterance) ++freq[t];
    }
  }
  freq.erase(Vocabulary::bos_token());
  freq.erase(Vocabulary::eos_token());
  freq.erase(Vocabulary::unk_token());

  std::vector<std::pair<std::string, std::size_t>> items(freq.begin(), freq.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary vocab;
  for (const auto& [tok, count] : items) {
    if (count < static_cast<std::size_t>(min_count)) break;
    if (vocab.size() >= max_size) break;
    vocab.add(tok);
  }
  return vocab;
}

std::vector<TokenId> to_ids(const Vocabulary& vocab, const std::vector<std::string>& tokens) {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab.id_of(t));
  return ids;
}

std::vector<std::string> to_tokens(const Vocabulary& vocab, std::span<const TokenId> ids) {
  std::vector<std::string> toks;
  toks.reserve(ids.size());
  for (TokenId id : ids) toks.push_back(vocab.token(id));
  return toks;
}

namespace {

std::string join(const std::vector<std::string>& toks) {
  std::string s;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) s += ' ';
    s += toks[i];
  }
  return s;
}

void validate_turn_labels(const Turn& turn, const std::string& conv_id) {
  auto topic = turn.metadata.find("topic");
  if (topic != turn.metadata.end() && !is_topic_label(topic->second)) {
    throw std::runtime_error("conversation " + conv_id + ": unknown topic label '" +
                             topic->second + "'");
  }
  auto act = turn.metadata.find("act");
  if (act != turn.metadata.end() && !is_dialog_act_label(act->second)) {
    throw std::runtime_error("conversation " + conv_id + ": unknown dialog act label '" +
                             act->second + "'");
  }
  if (turn.entity_tags) {
    if (turn.entity_tags->size() != turn.user_utterance.size()) {
      throw std::runtime_error("conversation " + conv_id + ": entity tag count " +
                               std::to_string(turn.entity_tags->size()) +
                               " does not match user token count " +
                               std::to_string(turn.user_utterance.size()));
    }
    for (const auto& tag : *turn.entity_tags) {
      if (!tag.empty() && !is_topic_label(tag)) {
        throw std::runtime_error("conversation " + conv_id + ": unknown entity tag '" + tag + "'");
      }
    }
  }
}

}  // namespace

std::vector<Conversation> load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_jsonl: cannot open " + path);
  std::vector<Conversation> corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error("load_jsonl: " + path + " line " + std::to_string(line_no) +
                               ": " + e.what());
    }
    try {
      Conversation conv;
      conv.id = j.at("id").get<std::string>();
      int idx = 0;
      for (const auto& jt : j.at("turns")) {
        Turn turn;
        turn.index = idx++;
        turn.system_prompt = tokenize(jt.at("sys").get<std::string>());
        turn.user_utterance = tokenize(jt.at("user").get<std::string>());
        if (jt.contains("meta")) {
          for (const auto& [k, v] : jt.at("meta").items()) {
            turn.metadata[k] = v.get<std::string>();
          }
        }
        if (jt.contains("tags")) {
          turn.entity_tags = jt.at("tags").get<std::vector<std::string>>();
        }
        validate_turn_labels(turn, conv.id);
        conv.turns.push_back(std::move(turn));
      }
      corpus.push_back(std::move(conv));
    } catch (const json::exception& e) {
      throw std::runtime_error("load_jsonl: " + path + " line " + std::to_string(line_no) +
                               ": " + e.what());
    }
  }
  return corpus;
}

void save_jsonl(const std::vector<Conversation>& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_jsonl: cannot open " + path + " for writing");
  for (const auto& conv : corpus) {
    json jturns = json::array();
    for (const auto& turn : conv.turns) {
      validate_turn_labels(turn, conv.id);
      json jt;
      jt["sys"] = join(turn.system_prompt);
      jt["user"] = join(turn.user_utterance);
      if (!turn.metadata.empty()) {
        json meta = json::object();
        for (const auto& [k, v] : turn.metadata) meta[k] = v;
        jt["meta"] = meta;
      }
      if (turn.entity_tags) jt["tags"] = *turn.entity_tags;
      jturns.push_back(std::move(jt));
    }
    json j;
    j["id"] = conv.id;
    j["turns"] = std::move(jturns);
    out << j.dump() << '\n';
  }
}

SplitResult split_corpus(const std::vector<Conversation>& corpus,
                         const std::array<double, 3>& ratios, uint64_t seed) {
  double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument("split_corpus: ratios sum to " + std::to_string(sum) +
                                ", expected 1");
  }
  for (double r : ratios) {
    if (r < 0.0) throw std::invalid_argument("split_corpus: negative ratio");
  }
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.substream("split").shuffle(order);

  const auto n = static_cast<double>(corpus.size());
  std::size_t b1 = static_cast<std::size_t>(std::llround(ratios[0] * n));
  std::size_t b2 = static_cast<std::size_t>(std::llround((ratios[0] + ratios[1]) * n));
  b1 = std::min(b1, corpus.size());
  b2 = std::min(std::max(b2, b1), corpus.size());

  SplitResult result;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Conversation& c = corpus[order[i]];
    if (i < b1) {
      result.train.push_back(c);
    } else if (i < b2) {
      result.dev.push_back(c);
    } else {
      result.test.push_back(c);
    }
  }
  return result;
}

}  // namespace calm
