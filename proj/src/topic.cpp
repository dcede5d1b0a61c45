#include "calm/topic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "calm/parallel.hpp"
#include "calm/rng.hpp"
#include "json.hpp"
#include "json_util.hpp"

namespace calm {

void TopicNetConfig::validate() const {
  std::vector<std::string> errs;
  if (embed_dim == 0) errs.push_back("embed_dim must be positive");
  if (hidden_dim == 0) errs.push_back("hidden_dim must be positive");
  if (epochs == 0) errs.push_back("epochs must be positive");
  if (patience == 0) errs.push_back("patience must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) errs.push_back("lr must be positive and finite");
  if (errs.empty()) return;
  std::string msg = "topic config:";
  for (const auto& e : errs) msg += " " + e + ";";
  msg.pop_back();
  throw std::invalid_argument(msg);
}

namespace {

LabelInventory inventory_for(LabelKind kind) {
  return kind == LabelKind::Topic ? LabelInventory::topics() : LabelInventory::dialog_acts();
}

const char* label_key(LabelKind kind) { return kind == LabelKind::Topic ? "topic" : "act"; }

}  // namespace

TopicClassifier::TopicClassifier(const Vocabulary& vocab, const TopicNetConfig& config)
    : config_(config), vocab_(vocab), inventory_(inventory_for(config.target)),
      params_(config.seed) {
  config_.validate();
  params_.add("emb", vocab_.size(), config_.embed_dim);
  params_.add("w1", config_.hidden_dim, feature_dim());
  params_.add("b1", 1, config_.hidden_dim, ParamInit::Zero);
  params_.add("w2", inventory_.size(), config_.hidden_dim);
  params_.add("b2", 1, inventory_.size(), ParamInit::Zero);
}

std::size_t TopicClassifier::feature_dim() const {
  return config_.embed_dim * (config_.contextual ? 2u : 1u);
}

namespace {

// Scratch for one forward pass; the backward pass reuses the activations.
struct TopicForward {
  Vec x;       // feature vector, one or two averaged embedding blocks
  Vec hidden;  // tanh output
  Vec probs;
};

std::vector<TokenId> concat_ids(const ClassifierInput& in) {
  std::vector<TokenId> ctx = in.prev_user;
  ctx.insert(ctx.end(), in.prev_sys.begin(), in.prev_sys.end());
  return ctx;
}

TopicForward topic_forward(const ParamStore& params, const TopicNetConfig& cfg,
                           std::size_t n_labels, const ClassifierInput& in) {
  const Matrix& emb = params.value("emb");
  const Matrix& w1 = params.value("w1");
  const Matrix& b1 = params.value("b1");
  const Matrix& w2 = params.value("w2");
  const Matrix& b2 = params.value("b2");
  TopicForward f;
  f.x.assign(w1.cols(), 0.0);
  std::span<double> x(f.x);
  mean_embedding(emb, in.current, x.subspan(0, cfg.embed_dim));
  if (cfg.contextual) {
    std::vector<TokenId> ctx = concat_ids(in);
    mean_embedding(emb, ctx, x.subspan(cfg.embed_dim, cfg.embed_dim));
  }
  Vec pre(w1.rows());
  affine(w1, b1, f.x, pre);
  f.hidden.resize(pre.size());
  tanh_forward(pre, f.hidden);
  Vec logits(n_labels);
  affine(w2, b2, f.hidden, logits);
  f.probs.resize(n_labels);
  softmax(logits, f.probs);
  return f;
}

}  // namespace

std::vector<double> TopicClassifier::posterior(const ClassifierInput& input) const {
  return topic_forward(params_, config_, inventory_.size(), input).probs;
}

std::size_t TopicClassifier::predict(const ClassifierInput& input) const {
  Vec p = posterior(input);
  return std::size_t(std::max_element(p.begin(), p.end()) - p.begin());
}

double TopicClassifier::example_loss(const TopicExample& ex) const {
  if (ex.label >= inventory_.size())
    throw std::invalid_argument("topic example: label index out of range");
  TopicForward f = topic_forward(params_, config_, inventory_.size(), ex.input);
  return xent_loss(f.probs, ex.label, {});
}

double TopicClassifier::example_backward(const TopicExample& ex) {
  if (ex.label >= inventory_.size())
    throw std::invalid_argument("topic example: label index out of range");
  TopicForward f = topic_forward(params_, config_, inventory_.size(), ex.input);
  Vec dlogits(f.probs.size(), 0.0);
  double loss = xent_loss(f.probs, ex.label, dlogits);

  Vec dhidden(f.hidden.size(), 0.0);
  affine_backward(params_.value("w2"), f.hidden, dlogits, params_.grad("w2"), params_.grad("b2"),
                  dhidden);
  Vec dpre(f.hidden.size(), 0.0);
  tanh_backward(f.hidden, dhidden, dpre);
  Vec dx(f.x.size(), 0.0);
  affine_backward(params_.value("w1"), f.x, dpre, params_.grad("w1"), params_.grad("b1"), dx);

  std::span<const double> dxs(dx);
  Matrix& demb = params_.grad("emb");
  mean_embedding_backward(ex.input.current, dxs.subspan(0, config_.embed_dim), demb);
  if (config_.contextual) {
    std::vector<TokenId> ctx = concat_ids(ex.input);
    mean_embedding_backward(ctx, dxs.subspan(config_.embed_dim, config_.embed_dim), demb);
  }
  return loss;
}

void TopicClassifier::save(const std::string& path) const {
  nlohmann::json j;
  j["kind"] = "topic_classifier";
  j["target"] = label_key(config_.target);
  j["contextual"] = config_.contextual;
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

TopicClassifier TopicClassifier::load(const std::string& path) {
  nlohmann::json j = detail::load_json_file(path);
  try {
    if (!j.is_object() || j.value("kind", "") != std::string("topic_classifier"))
      throw std::runtime_error("topic load: " + path + ": not a topic classifier file");
    TopicNetConfig cfg;
    std::string target = j.at("target").get<std::string>();
    if (target == "topic") {
      cfg.target = LabelKind::Topic;
    } else if (target == "act") {
      cfg.target = LabelKind::DialogAct;
    } else {
      throw std::runtime_error("topic load: " + path + ": unknown target '" + target + "'");
    }
    cfg.contextual = j.at("contextual").get<bool>();
    cfg.embed_dim = j.at("embed_dim").get<std::size_t>();
    cfg.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    cfg.epochs = j.at("epochs").get<std::size_t>();
    cfg.patience = j.at("patience").get<std::size_t>();
    cfg.lr = j.at("lr").get<double>();
    cfg.seed = j.at("seed").get<uint64_t>();
    Vocabulary vocab = detail::vocab_from_json(j.at("vocab"));
    TopicClassifier clf(vocab, cfg);
    ParamStore loaded = detail::params_from_json(j.at("params"));
    for (const auto& name : clf.params_.names()) {
      if (!loaded.has(name))
        throw std::runtime_error("topic load: " + path + ": missing parameter '" + name + "'");
      const Matrix& src = loaded.value(name);
      Matrix& dst = clf.params_.value(name);
      if (!src.same_shape(dst))
        throw std::runtime_error("topic load: " + path + ": parameter '" + name +
                                 "' has shape " + shape_str(src.rows(), src.cols()) +
                                 ", expected " + shape_str(dst.rows(), dst.cols()));
      dst = src;
    }
    if (loaded.names().size() != clf.params_.names().size())
      throw std::runtime_error("topic load: " + path + ": unexpected extra parameters");
    return clf;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("topic load: " + path + ": " + e.what());
  }
}

std::vector<TopicExample> topic_examples(const Corpus& corpus, const Vocabulary& vocab,
                                         const TopicNetConfig& config) {
  const LabelInventory inv = inventory_for(config.target);
  const char* key = label_key(config.target);

  auto label_of = [&](const Turn& turn) -> std::optional<std::size_t> {
    auto it = turn.metadata.find(key);
    if (it == turn.metadata.end()) return std::nullopt;
    return inv.index_of(it->second);
  };

  std::vector<std::string> bad;
  for (const Conversation& conv : corpus)
    for (const Turn& turn : conv.turns)
      if (!label_of(turn)) {
        bad.push_back(conv.id);
        break;
      }
  if (!bad.empty()) {
    std::string msg = "topic_examples: missing or unknown '" + std::string(key) +
                      "' labels in conversations:";
    const std::size_t shown = std::min<std::size_t>(bad.size(), 10);
    for (std::size_t i = 0; i < shown; ++i) msg += " " + bad[i];
    if (bad.size() > shown) msg += " (and " + std::to_string(bad.size() - shown) + " more)";
    throw std::runtime_error(msg);
  }

  std::vector<TopicExample> out;
  for (const Conversation& conv : corpus) {
    for (std::size_t i = 0; i < conv.turns.size(); ++i) {
      const Turn& turn = conv.turns[i];
      TopicExample ex;
      ex.label = *label_of(turn);
      ex.input.current = to_ids(vocab, turn.user_utterance);
      if (i > 0) {
        ex.input.prev_user = to_ids(vocab, conv.turns[i - 1].user_utterance);
        ex.input.prev_sys = to_ids(vocab, conv.turns[i - 1].system_prompt);
      }
      out.push_back(std::move(ex));
    }
  }
  return out;
}

TopicClassifier train_topic(const Corpus& train, const Corpus& dev, const Vocabulary& vocab,
                            const TopicNetConfig& config, TopicTrainLog* log) {
  config.validate();
  std::vector<TopicExample> train_ex = topic_examples(train, vocab, config);
  std::vector<TopicExample> dev_ex = topic_examples(dev, vocab, config);
  if (train_ex.empty()) throw std::runtime_error("train_topic: no training examples");
  if (dev_ex.empty()) throw std::runtime_error("train_topic: no dev examples");

  TopicClassifier clf(vocab, config);
  Adam opt{AdamConfig{config.lr, 0.9, 0.999, 1e-8}};
  Rng base(config.seed);
  std::vector<std::size_t> order(train_ex.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TopicTrainLog local;
  TopicTrainLog& tl = log ? *log : local;
  tl = TopicTrainLog{};

  ParamStore best = clf.params();
  double best_acc = -1.0;
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng erng = base.substream("topic.epoch", epoch);
    erng.shuffle(order);
    double total = 0.0;
    for (std::size_t idx : order) {
      total += clf.example_backward(train_ex[idx]);
      opt.step(clf.params());
    }
    tl.train_loss.push_back(total / double(train_ex.size()));

    double dev_total = 0.0;
    for (const TopicExample& ex : dev_ex) dev_total += clf.example_loss(ex);
    tl.dev_loss.push_back(dev_total / double(dev_ex.size()));
    double acc = classifier_accuracy(clf, dev_ex);
    tl.dev_accuracy.push_back(acc);

    if (acc > best_acc) {
      best_acc = acc;
      tl.best_epoch = epoch;
      best = clf.params();
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  tl.best_dev_accuracy = best_acc;
  clf.params() = best;
  return clf;
}

double classifier_accuracy(const TopicClassifier& clf, const std::vector<TopicExample>& examples) {
  if (examples.empty()) throw std::invalid_argument("classifier_accuracy: no examples");
  std::vector<int> hits = par::map_indexed<int>(examples.size(), [&](std::size_t i) {
    return clf.predict(examples[i].input) == examples[i].label ? 1 : 0;
  });
  int64_t correct = 0;
  for (int h : hits) correct += h;
  return double(correct) / double(examples.size());
}

std::vector<double> derived_feature(const TopicClassifier& clf, const Conversation& conv,
                                    std::size_t turn_index) {
  if (turn_index >= conv.turns.size())
    throw std::invalid_argument("derived_feature: turn index out of range");
  ClassifierInput in;
  in.current = to_ids(clf.vocab(), conv.turns[turn_index].system_prompt);
  if (clf.config().contextual && turn_index > 0) {
    in.prev_user = to_ids(clf.vocab(), conv.turns[turn_index - 1].user_utterance);
    in.prev_sys = to_ids(clf.vocab(), conv.turns[turn_index - 1].system_prompt);
  }
  return clf.posterior(in);
}

}  // namespace calm
