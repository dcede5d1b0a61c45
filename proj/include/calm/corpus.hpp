#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace calm {

using TokenId = int32_t;

// Token conventions: lowercased, no whitespace, punctuation stripped except
// internal apostrophes. tokenize() is the only producer.
std::vector<std::string> tokenize(std::string_view text);

// Token/id bijection with dense ids. The three reserved markers are always
// present and pinned to the lowest ids; everything else maps to kUnk.
class Vocabulary {
 public:
  static constexpr TokenId kBos = 0;  // sentence start, never predicted
  static constexpr TokenId kEos = 1;  // sentence end
  static constexpr TokenId kUnk = 2;

  static const std::string& bos_token();
  static const std::string& eos_token();
  static const std::string& unk_token();

  Vocabulary();

  // Returns the id, inserting if absent. Reserved tokens keep their ids.
  TokenId add(const std::string& token);

  // kUnk for unknown tokens.
  TokenId id_of(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;

  std::size_t size() const { return tokens_.size(); }
  // Number of predictable tokens: everything except the start marker.
  std::size_t pred_size() const { return tokens_.size() - 1; }

  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

struct Turn {
  int index = 0;
  std::vector<std::string> system_prompt;   // system response preceding the user turn
  std::vector<std::string> user_utterance;
  std::map<std::string, std::string> metadata;  // bot_id, optional topic / act gold labels
  // When present: one tag per user_utterance token; "" marks an untagged
  // token, anything else must be a topic label.
  std::optional<std::vector<std::string>> entity_tags;
};

struct Conversation {
  std::string id;
  std::vector<Turn> turns;
};

using Corpus = std::vector<Conversation>;

// min_count >= 1. Tokens with corpus frequency >= min_count are kept in
// (frequency desc, token asc) order until the vocabulary reaches max_size
// entries including the three reserved markers.
Vocabulary build_vocab(const std::vector<Conversation>& corpus, int min_count,
                       std::size_t max_size = SIZE_MAX);

std::vector<TokenId> to_ids(const Vocabulary& vocab, const std::vector<std::string>& tokens);
std::vector<std::string> to_tokens(const Vocabulary& vocab, std::span<const TokenId> ids);

// JSONL schema, one conversation per line:
//   {"id": str, "turns": [{"sys": str, "user": str,
//                          "meta": {"bot_id": str, "topic": str?, "act": str?},
//                          "tags": [str]?}]}
// Text fields are re-tokenized on load; tags align 1:1 with user tokens.
std::vector<Conversation> load_jsonl(const std::string& path);
void save_jsonl(const std::vector<Conversation>& corpus, const std::string& path);

struct SplitResult {
  std::vector<Conversation> train, dev, test;
};

// Disjoint partition at conversation granularity, deterministic given seed.
// ratios must sum to 1 within 1e-9.
SplitResult split_corpus(const std::vector<Conversation>& corpus,
                         const std::array<double, 3>& ratios, uint64_t seed);

}  // namespace calm
