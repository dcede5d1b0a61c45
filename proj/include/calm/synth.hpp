#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "calm/corpus.hpp"

namespace calm {

// One topic's generative configuration. Replies are drawn from a first-order
// chain: first token from reply_unigram, then reply_bigram[prev] when that
// row exists, else reply_unigram again. Weights need not be normalized.
struct TopicSpec {
  std::string name;  // must be a member of the 12-topic inventory
  std::vector<std::string> prompt_templates;
  std::map<std::string, double> reply_unigram;
  std::map<std::string, std::map<std::string, double>> reply_bigram;
  std::vector<std::string> entity_words;
};

// What gold topic label a neutral (phatic) turn carries:
//   Phatic — labeled with the "Phatic" inventory topic (LM grouping view),
//   Carry  — labeled with the conversation topic it continues (classifier view).
enum class NeutralLabel { Phatic, Carry };

struct SynthSpec {
  std::vector<TopicSpec> topics;                // >= 2
  std::vector<std::vector<double>> transition;  // row-stochastic, topic index order
  std::vector<double> initial;                  // empty = uniform
  std::vector<std::string> bots = {"alpha", "bravo"};
  int num_conversations = 100;
  int min_turns = 6, max_turns = 12;
  int min_len = 4, max_len = 9;
  // Probability that a turn (after the first) is a neutral reply that stays
  // on the previous topic and draws from neutral_unigram.
  double p_neutral = 0.0;
  std::map<std::string, double> neutral_unigram;
  NeutralLabel neutral_label = NeutralLabel::Phatic;

  // Throws std::invalid_argument describing the first problem found.
  void validate() const;

  std::size_t topic_index(const std::string& name) const;
};

// Deterministic corpus given (spec, seed). Per-turn metadata carries bot_id,
// a gold topic label, and a gold dialog act label; entity words in user
// utterances carry entity tags.
std::vector<Conversation> synth_generate(const SynthSpec& spec, uint64_t seed);

// Dialog act assigned to a reply, a fixed function of its first token so the
// act is recoverable from text.
std::string act_for_reply(const std::vector<std::string>& reply);

// Built-in worlds.
// Three-topic world (Sports / Entertainment_Music / Politics) with shared
// carrier words, per-topic content and entity words, and phatic turns.
SynthSpec default_synth_spec();
// High topic persistence and 50% neutral turns labeled with the carried
// topic, for context-sensitive classification experiments.
SynthSpec context_carry_spec();
// Tiny world with fully disjoint per-topic vocabularies; a unigram Bayes
// classifier recovers topics exactly.
SynthSpec disjoint_synth_spec();

// JSON (de)serialization for configs.
std::string synth_spec_to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const std::string& text);

}  // namespace calm
