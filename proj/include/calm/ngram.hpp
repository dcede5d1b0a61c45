#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "calm/corpus.hpp"

namespace calm {

enum class Smoothing { KneserNey, Additive };

struct NGramConfig {
  int order = 3;
  Smoothing smoothing = Smoothing::KneserNey;
  double discount = 0.75;  // Kneser-Ney absolute discount, in (0, 1)
  double alpha = 1.0;      // additive pseudo-count, > 0

  void validate() const;  // throws std::invalid_argument
};

// Raw windowed n-gram counts, orders 1..order, over <s> ... </s> padded
// sentences. Every contiguous window is counted, so "<s>" carries a unigram
// count equal to the number of sentences even though it is never predicted.
class CountTable {
 public:
  explicit CountTable(int order);

  // words are the scored tokens of one sentence, without markers.
  void add_sentence(std::span<const TokenId> words);

  int order() const { return order_; }
  uint64_t sentences() const { return sentences_; }
  uint64_t count(std::span<const TokenId> gram) const;

  using GramMap = std::map<std::vector<TokenId>, uint64_t>;
  const GramMap& grams(int k) const;  // k in [1, order]

 private:
  int order_;
  uint64_t sentences_ = 0;
  std::vector<GramMap> tables_;
};

// One user turn = one sentence; system prompts are conditioning-only and
// never produce counts or scored tokens.
std::vector<std::vector<TokenId>> corpus_sentences(const std::vector<Conversation>& corpus,
                                                   const Vocabulary& vocab);

CountTable count_corpus(const std::vector<Conversation>& corpus, const Vocabulary& vocab,
                        int order);

// Backoff n-gram model. Canonical internal scale is log10 (what the model
// file stores); natural log appears only in aggregate scores. Probabilities
// are over the predictable vocabulary (everything but "<s>").
class NGramModel {
 public:
  struct Entry {
    double logp = 0.0;     // log10 probability; -99 marks a context-only entry
    double bow = 0.0;      // log10 backoff weight
    bool has_bow = false;  // absent bow backs off with weight 1
  };
  using Table = std::map<std::vector<TokenId>, Entry>;

  NGramModel() = default;

  static NGramModel train(const CountTable& counts, const Vocabulary& vocab,
                          const NGramConfig& config);

  int order() const { return order_; }
  const Vocabulary& vocab() const { return vocab_; }
  std::size_t num_grams(int k) const { return tables_.at(std::size_t(k) - 1).size(); }
  const Table& table(int k) const { return tables_.at(std::size_t(k) - 1); }

  // Backoff-walk probability, log10, no floor. history is the preceding
  // tokens of the sentence including the leading "<s>"; only the last
  // order-1 are consulted.
  double log10_prob(std::span<const TokenId> history, TokenId word) const;

  // Linear probability with the 1e-12 evaluation floor applied.
  double prob(std::span<const TokenId> history, TokenId word) const;

  // ln P(words </s> | <s>), floored per token.
  double sentence_logprob(std::span<const TokenId> words) const;

  // ARPA-style model file, bit-exact across a write/read/write cycle.
  void write_arpa(const std::string& path) const;
  static NGramModel read_arpa(const std::string& path);

  static constexpr double kProbFloor = 1e-12;
  static constexpr double kLogPseudo = -99.0;  // log10 stand-in for "no probability"

 private:
  int order_ = 0;
  Vocabulary vocab_;
  std::vector<Table> tables_;
};

// exp(-sum ln p / tokens) with one </s> per sentence; sentence scores are
// computed in parallel and reduced in index order.
double corpus_perplexity(const NGramModel& model,
                         const std::vector<std::vector<TokenId>>& sentences);

}  // namespace calm
