#ifndef CALM_TOPIC_HPP
#define CALM_TOPIC_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "calm/corpus.hpp"
#include "calm/labels.hpp"
#include "calm/nn.hpp"

namespace calm {

// Deep-averaging classifier over turn text. Predicts a label from the fixed
// topic or dialog-act inventory; the mixture adapter consumes its posteriors
// as a feature block, so the output dimension always equals the inventory
// size even when the training corpus covers only part of it.
struct TopicNetConfig {
  LabelKind target = LabelKind::Topic;
  // When set, the previous turn's user utterance and system prompt are
  // averaged into a second feature block. First turns use zero context.
  bool contextual = false;
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 32;
  std::size_t epochs = 30;
  std::size_t patience = 3;
  double lr = 0.01;
  uint64_t seed = 1;

  void validate() const;
};

// Token ids for one classification target. `current` is whatever text the
// caller wants labeled (a user utterance, or a system prompt when deriving
// adapter features before the user speaks). Context fields may be empty.
struct ClassifierInput {
  std::vector<TokenId> current;
  std::vector<TokenId> prev_user;
  std::vector<TokenId> prev_sys;
};

struct TopicExample {
  ClassifierInput input;
  std::size_t label = 0;
};

struct TopicTrainLog {
  std::vector<double> train_loss;
  std::vector<double> dev_loss;
  std::vector<double> dev_accuracy;
  std::size_t best_epoch = 0;
  double best_dev_accuracy = 0.0;
};

class TopicClassifier {
 public:
  TopicClassifier(const Vocabulary& vocab, const TopicNetConfig& config);

  const TopicNetConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  const LabelInventory& inventory() const { return inventory_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::size_t feature_dim() const;

  std::vector<double> posterior(const ClassifierInput& input) const;
  // Argmax over the posterior; ties resolve to the lowest label index.
  std::size_t predict(const ClassifierInput& input) const;

  double example_loss(const TopicExample& ex) const;
  // Accumulates gradients for one example into params(). Returns the loss.
  double example_backward(const TopicExample& ex);

  void save(const std::string& path) const;
  static TopicClassifier load(const std::string& path);

 private:
  TopicNetConfig config_;
  Vocabulary vocab_;
  LabelInventory inventory_;
  ParamStore params_;
};

// Extracts one example per user turn. The label comes from turn metadata
// ("topic" or "act" depending on the target); any conversation with a missing
// or unknown label aborts the extraction with a single error naming the
// offenders.
std::vector<TopicExample> topic_examples(const Corpus& corpus, const Vocabulary& vocab,
                                         const TopicNetConfig& config);

// Adam training with per-epoch shuffling and early stopping on dev accuracy
// (patience epochs without improvement). The returned classifier carries the
// parameters of the earliest best dev epoch, not the last one.
TopicClassifier train_topic(const Corpus& train, const Corpus& dev, const Vocabulary& vocab,
                            const TopicNetConfig& config, TopicTrainLog* log = nullptr);

double classifier_accuracy(const TopicClassifier& clf, const std::vector<TopicExample>& examples);

// Posterior for the turn's system prompt, with the previous turn as context
// when the classifier is contextual. This is the adapter's TOPIC_DERIVED
// feature source; it never reads the turn's user utterance, so it works in
// 1-pass decoding where no hypothesis exists yet.
std::vector<double> derived_feature(const TopicClassifier& clf, const Conversation& conv,
                                    std::size_t turn_index);

}  // namespace calm

#endif  // CALM_TOPIC_HPP
