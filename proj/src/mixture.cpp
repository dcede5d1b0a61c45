#include "calm/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "calm/parallel.hpp"
#include "calm/rng.hpp"
#include "json.hpp"
#include "json_util.hpp"

namespace calm {

namespace {

constexpr double kTokenFloor = 1e-12;

const char* kBlockNames[] = {"prev_user", "prev_sys", "curr", "meta", "topic_derived"};

std::size_t topic_block_size() { return LabelInventory::topics().size(); }

// K >= 2, shared vocabulary, shared order. Everything downstream assumes it.
void validate_components(std::span<const NGramModel* const> components) {
  if (components.size() < 2)
    throw std::invalid_argument("mixture: need at least 2 components, got " +
                                std::to_string(components.size()));
  for (const NGramModel* m : components)
    if (m == nullptr) throw std::invalid_argument("mixture: null component");
  for (std::size_t k = 1; k < components.size(); ++k) {
    if (components[k]->order() != components[0]->order())
      throw std::invalid_argument("mixture: components disagree on order");
    if (!(components[k]->vocab() == components[0]->vocab()))
      throw std::invalid_argument("mixture: components disagree on vocabulary");
  }
}

void validate_simplex(std::span<const double> w, const char* what) {
  double sum = 0.0;
  for (double v : w) {
    if (!(v >= 0.0))
      throw std::invalid_argument(std::string(what) + ": negative or non-finite weight");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument(std::string(what) + ": weights sum to " + std::to_string(sum) +
                                ", expected 1");
}

// Component probabilities for one scored turn: user tokens then EOS, each
// conditioned on BOS plus the reference prefix.
void append_turn_probs(std::span<const NGramModel* const> components,
                       std::span<const TokenId> ids, std::vector<Vec>& rows) {
  std::vector<TokenId> hist{Vocabulary::kBos};
  hist.reserve(ids.size() + 1);
  auto push = [&](TokenId w) {
    Vec row(components.size());
    for (std::size_t k = 0; k < components.size(); ++k) row[k] = components[k]->prob(hist, w);
    rows.push_back(std::move(row));
  };
  for (TokenId w : ids) {
    push(w);
    hist.push_back(w);
  }
  push(Vocabulary::kEos);
}

EmResult em_core(const std::vector<Vec>& probs, std::span<const double> init, double tol,
                 std::size_t max_iters) {
  const std::size_t K = init.size();
  EmResult r;
  r.weights.assign(init.begin(), init.end());
  double prev = 0.0;
  bool have_prev = false;
  Vec acc(K);
  for (std::size_t it = 0; it < max_iters; ++it) {
    std::fill(acc.begin(), acc.end(), 0.0);
    double ll = 0.0;
    for (const Vec& row : probs) {
      double mix = 0.0;
      for (std::size_t k = 0; k < K; ++k) mix += r.weights[k] * row[k];
      mix = std::max(mix, kTokenFloor);
      ll += std::log(mix);
      for (std::size_t k = 0; k < K; ++k) acc[k] += r.weights[k] * row[k] / mix;
    }
    r.log_likelihood.push_back(ll);
    r.iterations = it + 1;
    if (have_prev) {
      double scale = std::abs(prev) > 0.0 ? std::abs(prev) : 1.0;
      if (ll - prev < tol * scale) break;
    }
    prev = ll;
    have_prev = true;
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) total += acc[k];
    for (std::size_t k = 0; k < K; ++k) r.weights[k] = acc[k] / total;
  }
  return r;
}

}  // namespace

std::vector<std::string> FeatureDescriptor::names() const {
  std::vector<std::string> out;
  const bool flags[] = {prev_user, prev_sys, curr, meta, topic_derived};
  for (std::size_t i = 0; i < 5; ++i)
    if (flags[i]) out.push_back(kBlockNames[i]);
  return out;
}

FeatureDescriptor FeatureDescriptor::from_names(const std::vector<std::string>& names) {
  FeatureDescriptor d;
  for (const std::string& n : names) {
    if (n == "prev_user") {
      d.prev_user = true;
    } else if (n == "prev_sys") {
      d.prev_sys = true;
    } else if (n == "curr") {
      d.curr = true;
    } else if (n == "meta") {
      d.meta = true;
    } else if (n == "topic_derived") {
      d.topic_derived = true;
    } else {
      throw std::invalid_argument("feature descriptor: unknown block '" + n +
                                  "' (expected prev_user, prev_sys, curr, meta, topic_derived)");
    }
  }
  return d;
}

std::size_t turn_bucket(std::size_t turn_index) {
  if (turn_index == 0) return 0;
  if (turn_index <= 2) return 1;
  if (turn_index <= 5) return 2;
  return 3;
}

void AdapterConfig::validate() const {
  std::vector<std::string> errs;
  if (!features.any()) errs.push_back("feature descriptor selects no blocks");
  if (embed_dim == 0) errs.push_back("embed_dim must be positive");
  if (hidden_dim == 0) errs.push_back("hidden_dim must be positive");
  if (epochs == 0) errs.push_back("epochs must be positive");
  if (patience == 0) errs.push_back("patience must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) errs.push_back("lr must be positive and finite");
  if (features.meta) {
    if (bots.empty()) errs.push_back("META block requires a bot inventory");
    for (std::size_t i = 0; i < bots.size(); ++i) {
      if (bots[i].empty()) errs.push_back("empty bot id in inventory");
      for (std::size_t j = i + 1; j < bots.size(); ++j)
        if (bots[i] == bots[j]) errs.push_back("duplicate bot id '" + bots[i] + "'");
    }
  }
  if (errs.empty()) return;
  std::string msg = "adapter config:";
  for (const auto& e : errs) msg += " " + e + ";";
  msg.pop_back();
  throw std::invalid_argument(msg);
}

double mixture_prob(std::span<const NGramModel* const> components, std::span<const double> weights,
                    std::span<const TokenId> history, TokenId word) {
  if (components.empty() || components.size() != weights.size())
    throw std::invalid_argument("mixture_prob: " + std::to_string(weights.size()) +
                                " weights for " + std::to_string(components.size()) +
                                " components");
  double p = 0.0;
  for (std::size_t k = 0; k < components.size(); ++k)
    p += weights[k] * components[k]->prob(history, word);
  return p;
}

std::vector<NGramModel> train_topic_components(const Corpus& corpus, const Vocabulary& vocab,
                                               const std::vector<std::string>& topics,
                                               const NGramConfig& config) {
  config.validate();
  if (topics.size() < 2)
    throw std::invalid_argument("train_topic_components: need at least 2 topics");
  std::vector<CountTable> counts(topics.size(), CountTable(config.order));
  for (const Conversation& conv : corpus) {
    for (const Turn& turn : conv.turns) {
      auto it = turn.metadata.find("topic");
      if (it == turn.metadata.end()) continue;
      auto pos = std::find(topics.begin(), topics.end(), it->second);
      if (pos == topics.end()) continue;
      std::vector<TokenId> ids = to_ids(vocab, turn.user_utterance);
      counts[std::size_t(pos - topics.begin())].add_sentence(ids);
    }
  }
  std::vector<NGramModel> models;
  models.reserve(topics.size());
  for (std::size_t k = 0; k < topics.size(); ++k) {
    if (counts[k].sentences() == 0)
      throw std::runtime_error("train_topic_components: no training sentences for '" + topics[k] +
                               "'");
    models.push_back(NGramModel::train(counts[k], vocab, config));
  }
  return models;
}

EmResult em_static_weights(std::span<const NGramModel* const> components, const Corpus& tuning,
                           std::span<const double> init, double tol, std::size_t max_iters) {
  validate_components(components);
  if (init.size() != components.size())
    throw std::invalid_argument("em_static_weights: init size mismatch");
  validate_simplex(init, "em_static_weights");
  if (!(tol > 0.0)) throw std::invalid_argument("em_static_weights: tol must be positive");
  if (max_iters == 0) throw std::invalid_argument("em_static_weights: max_iters must be positive");

  const Vocabulary& vocab = components[0]->vocab();
  std::vector<Vec> probs;
  for (const Conversation& conv : tuning)
    for (const Turn& turn : conv.turns)
      append_turn_probs(components, to_ids(vocab, turn.user_utterance), probs);
  if (probs.empty()) throw std::invalid_argument("em_static_weights: empty tuning corpus");
  return em_core(probs, init, tol, max_iters);
}

std::vector<double> oracle_turn_weights(std::span<const NGramModel* const> components,
                                        std::span<const TokenId> user_tokens) {
  validate_components(components);
  if (user_tokens.empty())
    throw std::invalid_argument("oracle_turn_weights: empty utterance");
  std::vector<Vec> probs;
  append_turn_probs(components, user_tokens, probs);
  Vec init(components.size(), 1.0 / double(components.size()));
  return em_core(probs, init, 1e-8, 200).weights;
}

WeightAdapter::WeightAdapter(const Vocabulary& vocab, std::vector<std::string> component_names,
                             const AdapterConfig& config)
    : config_(config), vocab_(vocab), component_names_(std::move(component_names)),
      params_(config.seed) {
  config_.validate();
  if (component_names_.size() < 2)
    throw std::invalid_argument("weight adapter: need at least 2 component names");
  for (std::size_t i = 0; i < component_names_.size(); ++i) {
    if (component_names_[i].empty())
      throw std::invalid_argument("weight adapter: empty component name");
    for (std::size_t j = i + 1; j < component_names_.size(); ++j)
      if (component_names_[i] == component_names_[j])
        throw std::invalid_argument("weight adapter: duplicate component name '" +
                                    component_names_[i] + "'");
  }
  params_.add("emb", vocab_.size(), config_.embed_dim);
  params_.add("w1", config_.hidden_dim, feature_dim());
  params_.add("b1", 1, config_.hidden_dim, ParamInit::Zero);
  params_.add("w2", component_names_.size(), config_.hidden_dim);
  params_.add("b2", 1, component_names_.size(), ParamInit::Zero);
}

std::size_t WeightAdapter::feature_dim() const {
  const FeatureDescriptor& d = config_.features;
  std::size_t n = 0;
  if (d.prev_user) n += config_.embed_dim;
  if (d.prev_sys) n += config_.embed_dim;
  if (d.curr) n += config_.embed_dim;
  if (d.meta) n += config_.bots.size() + kTurnBuckets;
  if (d.topic_derived) n += topic_block_size();
  return n;
}

// Token ids for the active text blocks plus the constant non-text tail, the
// parts of featurization that do not depend on trainable parameters.
std::pair<std::vector<std::vector<TokenId>>, Vec> WeightAdapter::collect_context(
    const Conversation& conv, std::size_t turn_index, const std::vector<TokenId>* curr,
    const TopicClassifier* topic) const {
  const FeatureDescriptor& d = config_.features;
  if (turn_index >= conv.turns.size())
    throw std::invalid_argument("featurize: turn index out of range");
  if (d.curr && curr == nullptr)
    throw std::invalid_argument(
        "featurize: CURR requires a first-pass hypothesis and is not available in 1-pass mode");
  if (d.topic_derived && topic == nullptr)
    throw std::invalid_argument("featurize: TOPIC_DERIVED requires a topic classifier");
  if (d.topic_derived && topic->inventory().kind != LabelKind::Topic)
    throw std::invalid_argument("featurize: TOPIC_DERIVED requires a topic-target classifier");

  std::vector<std::vector<TokenId>> blocks;
  if (d.prev_user)
    blocks.push_back(turn_index > 0 ? to_ids(vocab_, conv.turns[turn_index - 1].user_utterance)
                                    : std::vector<TokenId>{});
  if (d.prev_sys) blocks.push_back(to_ids(vocab_, conv.turns[turn_index].system_prompt));
  if (d.curr) blocks.push_back(*curr);

  Vec tail;
  if (d.meta) {
    Vec bot(config_.bots.size(), 0.0);
    auto it = conv.turns[turn_index].metadata.find("bot_id");
    if (it != conv.turns[turn_index].metadata.end())
      for (std::size_t j = 0; j < config_.bots.size(); ++j)
        if (config_.bots[j] == it->second) {
          bot[j] = 1.0;
          break;
        }
    // Unknown bots leave the block zero, like any other absent context.
    tail.insert(tail.end(), bot.begin(), bot.end());
    Vec bucket(kTurnBuckets, 0.0);
    bucket[turn_bucket(turn_index)] = 1.0;
    tail.insert(tail.end(), bucket.begin(), bucket.end());
  }
  if (d.topic_derived) {
    std::vector<double> post = derived_feature(*topic, conv, turn_index);
    tail.insert(tail.end(), post.begin(), post.end());
  }
  return {std::move(blocks), std::move(tail)};
}

Vec WeightAdapter::assemble_features(const std::vector<std::vector<TokenId>>& text_blocks,
                                     std::span<const double> tail) const {
  const FeatureDescriptor& d = config_.features;
  const std::size_t text_count =
      std::size_t(d.prev_user) + std::size_t(d.prev_sys) + std::size_t(d.curr);
  if (text_blocks.size() != text_count)
    throw std::invalid_argument("adapter features: expected " + std::to_string(text_count) +
                                " text blocks, got " + std::to_string(text_blocks.size()));
  Vec x(feature_dim(), 0.0);
  std::span<double> xs(x);
  std::size_t off = 0;
  const Matrix& emb = params_.value("emb");
  for (const std::vector<TokenId>& ids : text_blocks) {
    mean_embedding(emb, ids, xs.subspan(off, config_.embed_dim));
    off += config_.embed_dim;
  }
  if (tail.size() != x.size() - off)
    throw std::invalid_argument("adapter features: tail length mismatch");
  std::copy(tail.begin(), tail.end(), x.begin() + off);
  return x;
}

Vec WeightAdapter::featurize(const Conversation& conv, std::size_t turn_index,
                             const std::vector<TokenId>* curr,
                             const TopicClassifier* topic) const {
  auto [blocks, tail] = collect_context(conv, turn_index, curr, topic);
  return assemble_features(blocks, tail);
}

std::vector<double> WeightAdapter::forward(std::span<const double> features) const {
  if (features.size() != feature_dim())
    throw std::invalid_argument("adapter forward: " + std::to_string(features.size()) +
                                " features, expected " + std::to_string(feature_dim()));
  const Matrix& w1 = params_.value("w1");
  Vec pre(w1.rows());
  affine(w1, params_.value("b1"), features, pre);
  Vec hidden(pre.size());
  tanh_forward(pre, hidden);
  Vec logits(num_components());
  affine(params_.value("w2"), params_.value("b2"), hidden, logits);
  std::vector<double> lambda(logits.size());
  softmax(logits, lambda);
  return lambda;
}

std::vector<double> WeightAdapter::turn_weights(const Conversation& conv, std::size_t turn_index,
                                                const std::vector<TokenId>* curr,
                                                const TopicClassifier* topic) const {
  return forward(featurize(conv, turn_index, curr, topic));
}

std::vector<double> WeightAdapter::forward_turn(const AdapterTurn& turn) const {
  return forward(assemble_features(turn.text_blocks, turn.static_tail));
}

namespace {

double ppl_turn_loss(std::span<const double> lambda, const Matrix& probs) {
  double loss = 0.0;
  for (std::size_t t = 0; t < probs.rows(); ++t) {
    double mix = 0.0;
    for (std::size_t k = 0; k < probs.cols(); ++k) mix += lambda[k] * probs(t, k);
    loss -= std::log(std::max(mix, kTokenFloor));
  }
  return loss;
}

double xent_turn_loss(std::span<const double> lambda, std::span<const double> oracle) {
  double loss = 0.0;
  for (std::size_t k = 0; k < lambda.size(); ++k)
    loss -= oracle[k] * std::log(std::max(lambda[k], 1e-300));
  return loss;
}

}  // namespace

double WeightAdapter::turn_loss(const AdapterTurn& turn, AdapterLoss loss) const {
  std::vector<double> lambda = forward_turn(turn);
  if (loss == AdapterLoss::Xent) {
    if (turn.oracle.size() != lambda.size())
      throw std::invalid_argument("adapter: turn has no XENT oracle target");
    return xent_turn_loss(lambda, turn.oracle);
  }
  if (turn.probs.cols() != lambda.size())
    throw std::invalid_argument("adapter: component probability table width mismatch");
  return ppl_turn_loss(lambda, turn.probs);
}

double WeightAdapter::turn_backward(const AdapterTurn& turn, AdapterLoss loss) {
  Vec x = assemble_features(turn.text_blocks, turn.static_tail);
  const Matrix& w1 = params_.value("w1");
  Vec pre(w1.rows());
  affine(w1, params_.value("b1"), x, pre);
  Vec hidden(pre.size());
  tanh_forward(pre, hidden);
  Vec logits(num_components());
  affine(params_.value("w2"), params_.value("b2"), hidden, logits);
  Vec lambda(logits.size());
  softmax(logits, lambda);

  const std::size_t K = lambda.size();
  double loss_value = 0.0;
  Vec dlogits(K, 0.0);
  if (loss == AdapterLoss::Xent) {
    if (turn.oracle.size() != K)
      throw std::invalid_argument("adapter: turn has no XENT oracle target");
    loss_value = xent_turn_loss(lambda, turn.oracle);
    for (std::size_t k = 0; k < K; ++k) dlogits[k] = lambda[k] - turn.oracle[k];
  } else {
    if (turn.probs.cols() != K)
      throw std::invalid_argument("adapter: component probability table width mismatch");
    loss_value = ppl_turn_loss(lambda, turn.probs);
    // d loss / d lambda_k = -sum_t P_tk / mix_t, then through the softmax.
    Vec dlambda(K, 0.0);
    for (std::size_t t = 0; t < turn.probs.rows(); ++t) {
      double mix = 0.0;
      for (std::size_t k = 0; k < K; ++k) mix += lambda[k] * turn.probs(t, k);
      mix = std::max(mix, kTokenFloor);
      for (std::size_t k = 0; k < K; ++k) dlambda[k] -= turn.probs(t, k) / mix;
    }
    double inner = 0.0;
    for (std::size_t k = 0; k < K; ++k) inner += dlambda[k] * lambda[k];
    for (std::size_t k = 0; k < K; ++k) dlogits[k] = lambda[k] * (dlambda[k] - inner);
  }

  Vec dhidden(hidden.size(), 0.0);
  affine_backward(params_.value("w2"), hidden, dlogits, params_.grad("w2"), params_.grad("b2"),
                  dhidden);
  Vec dpre(hidden.size(), 0.0);
  tanh_backward(hidden, dhidden, dpre);
  Vec dx(x.size(), 0.0);
  affine_backward(w1, x, dpre, params_.grad("w1"), params_.grad("b1"), dx);

  std::span<const double> dxs(dx);
  Matrix& demb = params_.grad("emb");
  std::size_t off = 0;
  for (const std::vector<TokenId>& ids : turn.text_blocks) {
    mean_embedding_backward(ids, dxs.subspan(off, config_.embed_dim), demb);
    off += config_.embed_dim;
  }
  // The static tail carries no parameters; its gradient slice is discarded.
  return loss_value;
}

void WeightAdapter::save(const std::string& path) const {
  nlohmann::json j;
  j["kind"] = "weight_adapter";
  j["components"] = component_names_;
  j["features"] = config_.features.names();
  j["bots"] = config_.bots;
  j["embed_dim"] = config_.embed_dim;
  j["hidden_dim"] = config_.hidden_dim;
  j["epochs"] = config_.epochs;
  j["patience"] = config_.patience;
  j["lr"] = config_.lr;
  j["seed"] = config_.seed;
  j["vocab"] = detail::vocab_to_json(vocab_);
  j["params"] = detail::params_to_json(params_);
  detail::save_json_file(j, path);
}

WeightAdapter WeightAdapter::load(const std::string& path) {
  nlohmann::json j = detail::load_json_file(path);
  try {
    if (!j.is_object() || j.value("kind", "") != std::string("weight_adapter"))
      throw std::runtime_error("adapter load: " + path + ": not a weight adapter file");
    AdapterConfig cfg;
    cfg.features = FeatureDescriptor::from_names(j.at("features").get<std::vector<std::string>>());
    cfg.bots = j.at("bots").get<std::vector<std::string>>();
    cfg.embed_dim = j.at("embed_dim").get<std::size_t>();
    cfg.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    cfg.epochs = j.at("epochs").get<std::size_t>();
    cfg.patience = j.at("patience").get<std::size_t>();
    cfg.lr = j.at("lr").get<double>();
    cfg.seed = j.at("seed").get<uint64_t>();
    Vocabulary vocab = detail::vocab_from_json(j.at("vocab"));
    WeightAdapter adapter(vocab, j.at("components").get<std::vector<std::string>>(), cfg);
    ParamStore loaded = detail::params_from_json(j.at("params"));
    for (const auto& name : adapter.params_.names()) {
      if (!loaded.has(name))
        throw std::runtime_error("adapter load: " + path + ": missing parameter '" + name + "'");
      const Matrix& src = loaded.value(name);
      Matrix& dst = adapter.params_.value(name);
      if (!src.same_shape(dst))
        throw std::runtime_error("adapter load: " + path + ": parameter '" + name +
                                 "' has shape " + shape_str(src.rows(), src.cols()) +
                                 ", expected " + shape_str(dst.rows(), dst.cols()));
      dst = src;
    }
    if (loaded.names().size() != adapter.params_.names().size())
      throw std::runtime_error("adapter load: " + path + ": unexpected extra parameters");
    return adapter;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("adapter load: " + path + ": " + e.what());
  }
}

std::vector<AdapterTurn> make_adapter_turns(std::span<const NGramModel* const> components,
                                            const Corpus& corpus, const WeightAdapter& adapter,
                                            const TopicClassifier* topic, AdapterLoss loss) {
  validate_components(components);
  if (components.size() != adapter.num_components())
    throw std::invalid_argument("make_adapter_turns: adapter expects " +
                                std::to_string(adapter.num_components()) + " components, got " +
                                std::to_string(components.size()));
  if (!(components[0]->vocab() == adapter.vocab()))
    throw std::invalid_argument("make_adapter_turns: adapter and components disagree on vocabulary");

  std::vector<AdapterTurn> out;
  for (const Conversation& conv : corpus) {
    for (std::size_t i = 0; i < conv.turns.size(); ++i) {
      std::vector<TokenId> ids = to_ids(adapter.vocab(), conv.turns[i].user_utterance);
      if (loss == AdapterLoss::Xent && ids.empty()) continue;  // no oracle for an empty turn
      AdapterTurn t;
      auto [blocks, tail] = adapter.collect_context(conv, i, &ids, topic);
      t.text_blocks = std::move(blocks);
      t.static_tail = std::move(tail);
      std::vector<Vec> rows;
      append_turn_probs(components, ids, rows);
      t.probs = Matrix(rows.size(), components.size());
      for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t k = 0; k < components.size(); ++k) t.probs(r, k) = rows[r][k];
      if (loss == AdapterLoss::Xent) {
        std::vector<double> oracle = oracle_turn_weights(components, ids);
        t.oracle.assign(oracle.begin(), oracle.end());
      }
      out.push_back(std::move(t));
    }
  }
  return out;
}

namespace {

// Dev perplexity from cached turns: the component probabilities are fixed, so
// each epoch only recomputes the per-turn weights.
double cached_dev_perplexity(const WeightAdapter& adapter,
                             const std::vector<AdapterTurn>& turns) {
  double total = 0.0;
  std::size_t tokens = 0;
  for (const AdapterTurn& t : turns) {
    std::vector<double> lambda = adapter.forward_turn(t);
    for (std::size_t r = 0; r < t.probs.rows(); ++r) {
      double mix = 0.0;
      for (std::size_t k = 0; k < t.probs.cols(); ++k) mix += lambda[k] * t.probs(r, k);
      total += std::log(std::max(mix, kTokenFloor));
    }
    tokens += t.probs.rows();
  }
  return std::exp(-total / double(tokens));
}

}  // namespace

WeightAdapter train_adapter(std::span<const NGramModel* const> components,
                            const std::vector<std::string>& component_names, const Corpus& train,
                            const Corpus& dev, const Vocabulary& vocab,
                            const AdapterConfig& config, AdapterLoss loss,
                            const TopicClassifier* topic, AdapterTrainLog* log) {
  config.validate();
  if (component_names.size() != components.size())
    throw std::invalid_argument("train_adapter: component name count mismatch");
  WeightAdapter adapter(vocab, component_names, config);
  std::vector<AdapterTurn> train_turns = make_adapter_turns(components, train, adapter, topic, loss);
  std::vector<AdapterTurn> dev_turns =
      make_adapter_turns(components, dev, adapter, topic, AdapterLoss::Ppl);
  if (train_turns.empty()) throw std::runtime_error("train_adapter: no training turns");
  if (dev_turns.empty()) throw std::runtime_error("train_adapter: no dev turns");

  Adam opt{AdamConfig{config.lr, 0.9, 0.999, 1e-8}};
  Rng base(config.seed);
  std::vector<std::size_t> order(train_turns.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  AdapterTrainLog local;
  AdapterTrainLog& tl = log ? *log : local;
  tl = AdapterTrainLog{};

  ParamStore best = adapter.params();
  double best_ppl = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng erng = base.substream("adapter.epoch", epoch);
    erng.shuffle(order);
    double total = 0.0;
    for (std::size_t idx : order) {
      double l = adapter.turn_backward(train_turns[idx], loss);
      if (!std::isfinite(l))
        throw std::runtime_error("train_adapter: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", turn " + std::to_string(idx));
      total += l;
      opt.step(adapter.params());
    }
    tl.train_loss.push_back(total / double(train_turns.size()));

    double ppl = cached_dev_perplexity(adapter, dev_turns);
    if (!std::isfinite(ppl))
      throw std::runtime_error("train_adapter: non-finite dev perplexity at epoch " +
                               std::to_string(epoch));
    tl.dev_perplexity.push_back(ppl);
    if (ppl < best_ppl) {
      best_ppl = ppl;
      tl.best_epoch = epoch;
      best = adapter.params();
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  tl.best_dev_perplexity = best_ppl;
  adapter.params() = best;
  return adapter;
}

double turn_perplexity(const MixtureRef& mix, const Corpus& corpus, PassMode mode) {
  validate_components(mix.components);
  const bool is_static = !mix.weights.empty();
  if (is_static == (mix.adapter != nullptr))
    throw std::invalid_argument("turn_perplexity: provide exactly one of weights or adapter");
  if (is_static) {
    if (mix.weights.size() != mix.components.size())
      throw std::invalid_argument("turn_perplexity: weight count mismatch");
    validate_simplex(mix.weights, "turn_perplexity");
  } else {
    if (mix.adapter->num_components() != mix.components.size())
      throw std::invalid_argument("turn_perplexity: adapter component count mismatch");
    if (!(mix.adapter->vocab() == mix.components[0]->vocab()))
      throw std::invalid_argument("turn_perplexity: adapter and components disagree on vocabulary");
  }

  struct TurnKey {
    const Conversation* conv;
    std::size_t index;
  };
  std::vector<TurnKey> keys;
  for (const Conversation& conv : corpus)
    for (std::size_t i = 0; i < conv.turns.size(); ++i) keys.push_back({&conv, i});
  if (keys.empty()) throw std::invalid_argument("turn_perplexity: empty corpus");

  const Vocabulary& vocab = mix.components[0]->vocab();
  auto contrib = par::map_indexed<std::pair<double, std::size_t>>(keys.size(), [&](std::size_t i) {
    const Conversation& conv = *keys[i].conv;
    const std::size_t turn = keys[i].index;
    std::vector<TokenId> ids = to_ids(vocab, conv.turns[turn].user_utterance);
    std::vector<double> lambda;
    std::span<const double> w = mix.weights;
    if (!is_static) {
      lambda = mix.adapter->turn_weights(conv, turn, mode == PassMode::TwoPass ? &ids : nullptr,
                                         mix.topic);
      w = lambda;
    }
    std::vector<TokenId> hist{Vocabulary::kBos};
    double sum = 0.0;
    auto score = [&](TokenId word) {
      double p = mixture_prob(mix.components, w, hist, word);
      sum += std::log(std::max(p, kTokenFloor));
    };
    for (TokenId id : ids) {
      score(id);
      hist.push_back(id);
    }
    score(Vocabulary::kEos);
    return std::make_pair(sum, ids.size() + 1);
  });
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& [s, n] : contrib) {
    total += s;
    tokens += n;
  }
  return std::exp(-total / double(tokens));
}

}  // namespace calm
