#ifndef CALM_MIXTURE_HPP
#define CALM_MIXTURE_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "calm/corpus.hpp"
#include "calm/ngram.hpp"
#include "calm/nn.hpp"
#include "calm/topic.hpp"

namespace calm {

// Whether the current utterance's first-pass hypothesis may inform adaptation
// (2-pass) or only prior context may (1-pass).
enum class PassMode { OnePass, TwoPass };

enum class AdapterLoss { Xent, Ppl };

// Which context signals feed the weight adapter. Feature blocks always
// concatenate in the fixed order PREV_USER | PREV_SYS | CURR | META |
// TOPIC_DERIVED regardless of construction order.
struct FeatureDescriptor {
  bool prev_user = false;  // previous turn's user utterance, mean-embedded
  bool prev_sys = false;   // system prompt the user is replying to, mean-embedded
  bool curr = false;       // current first-pass hypothesis, 2-pass only
  bool meta = false;       // bot one-hot + turn bucket one-hot
  bool topic_derived = false;  // topic classifier posterior, length 12

  bool any() const { return prev_user || prev_sys || curr || meta || topic_derived; }
  bool any_text() const { return prev_user || prev_sys || curr; }

  // Lower-case block names in fixed order, e.g. {"prev_user", "meta"}.
  std::vector<std::string> names() const;
  static FeatureDescriptor from_names(const std::vector<std::string>& names);
};

// Turn-index buckets for the META block: {0}, {1,2}, {3,4,5}, {6+}.
inline constexpr std::size_t kTurnBuckets = 4;
std::size_t turn_bucket(std::size_t turn_index);

struct AdapterConfig {
  FeatureDescriptor features;
  std::vector<std::string> bots;  // META bot inventory, one-hot in this order
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 32;
  std::size_t epochs = 30;
  std::size_t patience = 3;
  double lr = 0.01;
  uint64_t seed = 1;

  void validate() const;
};

// p(w|h) = sum_k weights[k] * p_k(w|h) over frozen components.
double mixture_prob(std::span<const NGramModel* const> components, std::span<const double> weights,
                    std::span<const TokenId> history, TokenId word);

// One component per listed topic, trained on the user utterances whose gold
// topic label matches it. Other labels are skipped. A topic with no training
// sentences is an error: its model would be degenerate.
std::vector<NGramModel> train_topic_components(const Corpus& corpus, const Vocabulary& vocab,
                                               const std::vector<std::string>& topics,
                                               const NGramConfig& config);

struct EmResult {
  std::vector<double> weights;
  // Tuning-corpus log-likelihood of the weights entering each iteration;
  // non-decreasing by EM's ascent property.
  std::vector<double> log_likelihood;
  std::size_t iterations = 0;
};

// Static interpolation weights by EM over token-level responsibilities.
// Component probabilities are evaluated once; iteration stops when the
// relative log-likelihood gain drops below tol or after max_iters.
EmResult em_static_weights(std::span<const NGramModel* const> components, const Corpus& tuning,
                           std::span<const double> init, double tol = 1e-6,
                           std::size_t max_iters = 100);

// Per-turn oracle weights for XENT targets: EM on the turn's reference tokens
// (EOS included), uniform init, tol 1e-8, max 200 iterations.
std::vector<double> oracle_turn_weights(std::span<const NGramModel* const> components,
                                        std::span<const TokenId> user_tokens);

// One turn's training view with everything that never changes across epochs:
// token ids for the active text blocks, the constant META/TOPIC_DERIVED tail,
// component probabilities for the scored tokens, and the XENT oracle target.
struct AdapterTurn {
  std::vector<std::vector<TokenId>> text_blocks;
  Vec static_tail;
  Matrix probs;        // scored tokens x K, constants during adapter training
  Vec oracle;          // empty unless built for XENT
};

class WeightAdapter {
 public:
  WeightAdapter(const Vocabulary& vocab, std::vector<std::string> component_names,
                const AdapterConfig& config);

  const AdapterConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  const std::vector<std::string>& component_names() const { return component_names_; }
  std::size_t num_components() const { return component_names_.size(); }
  std::size_t feature_dim() const;
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Assembles the feature vector for a turn. curr is the current first-pass
  // hypothesis; pass nullptr in 1-pass settings, which is an error when the
  // descriptor requests CURR. topic may be nullptr unless TOPIC_DERIVED is
  // requested.
  Vec featurize(const Conversation& conv, std::size_t turn_index,
                const std::vector<TokenId>* curr, const TopicClassifier* topic) const;

  // softmax(affine(tanh(affine(features)))): interpolation weights on the
  // K-simplex.
  std::vector<double> forward(std::span<const double> features) const;
  std::vector<double> turn_weights(const Conversation& conv, std::size_t turn_index,
                                   const std::vector<TokenId>* curr,
                                   const TopicClassifier* topic) const;
  std::vector<double> forward_turn(const AdapterTurn& turn) const;

  // Loss of one cached turn under either training objective; _backward
  // accumulates parameter gradients (component probabilities are constants,
  // gradients flow only through the predicted weights).
  double turn_loss(const AdapterTurn& turn, AdapterLoss loss) const;
  double turn_backward(const AdapterTurn& turn, AdapterLoss loss);

  void save(const std::string& path) const;
  static WeightAdapter load(const std::string& path);

 private:
  std::pair<std::vector<std::vector<TokenId>>, Vec> collect_context(
      const Conversation& conv, std::size_t turn_index, const std::vector<TokenId>* curr,
      const TopicClassifier* topic) const;
  Vec assemble_features(const std::vector<std::vector<TokenId>>& text_blocks,
                        std::span<const double> tail) const;

  friend std::vector<AdapterTurn> make_adapter_turns(std::span<const NGramModel* const> components,
                                                     const Corpus& corpus,
                                                     const WeightAdapter& adapter,
                                                     const TopicClassifier* topic,
                                                     AdapterLoss loss);

  AdapterConfig config_;
  Vocabulary vocab_;
  std::vector<std::string> component_names_;
  ParamStore params_;
};

// Builds the per-turn training views for a corpus. Reference utterances stand
// in for the first-pass hypothesis when the descriptor requests CURR. XENT
// skips turns with empty utterances (no oracle exists for them).
std::vector<AdapterTurn> make_adapter_turns(std::span<const NGramModel* const> components,
                                            const Corpus& corpus, const WeightAdapter& adapter,
                                            const TopicClassifier* topic, AdapterLoss loss);

struct AdapterTrainLog {
  std::vector<double> train_loss;      // per-epoch mean per-turn loss
  std::vector<double> dev_perplexity;  // per-epoch, drives early stopping
  std::size_t best_epoch = 0;
  double best_dev_perplexity = 0.0;
};

// Adam over per-turn losses with per-epoch shuffling; early stopping on dev
// perplexity with the given patience, keeping the earliest best epoch.
WeightAdapter train_adapter(std::span<const NGramModel* const> components,
                            const std::vector<std::string>& component_names, const Corpus& train,
                            const Corpus& dev, const Vocabulary& vocab,
                            const AdapterConfig& config, AdapterLoss loss,
                            const TopicClassifier* topic, AdapterTrainLog* log = nullptr);

// A mixture to evaluate: static weights or a trained adapter over shared
// frozen components.
struct MixtureRef {
  std::span<const NGramModel* const> components;
  std::span<const double> weights;         // static mode when non-empty
  const WeightAdapter* adapter = nullptr;  // dynamic mode otherwise
  const TopicClassifier* topic = nullptr;
};

// Perplexity over user-utterance tokens plus end-of-sentence; system prompts
// only condition. Weights are recomputed once per turn in dynamic mode; 2-pass
// supplies the reference utterance as the CURR hypothesis stand-in.
double turn_perplexity(const MixtureRef& mix, const Corpus& corpus, PassMode mode);

}  // namespace calm

#endif  // CALM_MIXTURE_HPP
