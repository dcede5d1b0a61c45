#pragma once

// Independent reference implementations used to validate library output.
// Each oracle recomputes its quantity from raw inputs by the most direct
// method available (recursion, enumeration, brute force) and deliberately
// avoids the library's own representations: the n-gram oracle interpolates
// top-down with no backoff tables, perplexity is a plain per-token loop,
// and so on. Agreement is then a real check, not a tautology.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <vector>

#include "calm/corpus.hpp"
#include "calm/ngram.hpp"
#include "calm/synth.hpp"

namespace oracle {

using calm::CountTable;
using calm::NGramConfig;
using calm::TokenId;
using calm::Vocabulary;
using Gram = std::vector<TokenId>;

// Interpolated Kneser-Ney computed by literal top-down recursion:
//   p_k(w|h) = max(a(hw)-D,0)/a(h.) + D*types(h.)/a(h.) * p_{k-1}(w|h')
// over adjusted counts a (continuation counts below the top order, raw
// counts at the top and for <s>-initial grams), with the unigram level
// interpolated against the uniform distribution.
class KnOracle {
 public:
  KnOracle(const CountTable& counts, const Vocabulary& vocab, const NGramConfig& cfg)
      : vocab_(vocab), cfg_(cfg) {
    const int n = cfg.order;
    adj_.resize(std::size_t(n));
    for (int k = 1; k <= n; ++k) {
      if (k == n) {
        for (const auto& [g, c] : counts.grams(k)) adj_[std::size_t(k) - 1][g] = double(c);
        continue;
      }
      std::map<Gram, std::set<TokenId>> preds;
      for (const auto& [g, c] : counts.grams(k + 1)) {
        (void)c;
        preds[Gram(g.begin() + 1, g.end())].insert(g[0]);
      }
      for (const auto& [g, s] : preds) adj_[std::size_t(k) - 1][g] = double(s.size());
      for (const auto& [g, c] : counts.grams(k))
        if (g[0] == Vocabulary::kBos) adj_[std::size_t(k) - 1][g] = double(c);
    }
  }

  double prob(std::span<const TokenId> ctx, TokenId w) const {
    std::size_t max_ctx = std::size_t(cfg_.order) - 1;
    if (ctx.size() > max_ctx) ctx = ctx.subspan(ctx.size() - max_ctx);
    return rec(ctx, w);
  }

 private:
  double rec(std::span<const TokenId> ctx, TokenId w) const {
    const double d = cfg_.discount;
    const double v = double(vocab_.pred_size());
    if (ctx.empty()) {
      double total = 0.0, types = 0.0, cw = 0.0;
      for (const auto& [g, a] : adj_[0]) {
        if (g[0] == Vocabulary::kBos) continue;
        total += a;
        types += 1.0;
        if (g[0] == w) cw = a;
      }
      return (std::max(cw - d, 0.0) + d * types / v) / total;
    }
    double denom = 0.0, types = 0.0, cw = 0.0;
    for (const auto& [g, a] : adj_[ctx.size()]) {
      if (!std::equal(ctx.begin(), ctx.end(), g.begin(), g.end() - 1)) continue;
      denom += a;
      types += 1.0;
      if (g.back() == w) cw = a;
    }
    double lower = rec(ctx.subspan(1), w);
    if (denom == 0.0) return lower;
    return std::max(cw - d, 0.0) / denom + (d * types / denom) * lower;
  }

  const Vocabulary& vocab_;
  NGramConfig cfg_;
  std::vector<std::map<Gram, double>> adj_;
};

// Closed-form additive probability for a gram whose context was observed:
// (c + alpha) / (context continuations + alpha * |V_pred|).
inline double additive_seen_prob(const CountTable& counts, const Vocabulary& vocab, double alpha,
                                 std::span<const TokenId> gram) {
  double c = double(counts.count(gram));
  double left = 0.0;
  if (gram.size() == 1) {
    for (const auto& [g, cnt] : counts.grams(1))
      if (g[0] != Vocabulary::kBos) left += double(cnt);
  } else {
    for (const auto& [g, cnt] : counts.grams(int(gram.size())))
      if (std::equal(gram.begin(), gram.end() - 1, g.begin(), g.end() - 1)) left += double(cnt);
  }
  return (c + alpha) / (left + alpha * double(vocab.pred_size()));
}

// Log-likelihood of a reply under one topic's generative chain: first token
// from the unigram, later tokens from the bigram row for the previous token
// when that row exists, else the unigram. -inf outside the support.
inline double reply_log_prob(const calm::TopicSpec& topic, const std::vector<std::string>& reply) {
  const double kNegInf = -std::numeric_limits<double>::infinity();
  double uni_total = 0.0;
  for (const auto& [w, p] : topic.reply_unigram) uni_total += p;
  auto uni_lp = [&](const std::string& w) {
    auto it = topic.reply_unigram.find(w);
    return it == topic.reply_unigram.end() ? kNegInf : std::log(it->second / uni_total);
  };
  double total = 0.0;
  for (std::size_t i = 0; i < reply.size(); ++i) {
    if (i == 0) {
      total += uni_lp(reply[0]);
      continue;
    }
    auto row = topic.reply_bigram.find(reply[i - 1]);
    if (row == topic.reply_bigram.end()) {
      total += uni_lp(reply[i]);
      continue;
    }
    double row_total = 0.0;
    for (const auto& [w, p] : row->second) row_total += p;
    auto it = row->second.find(reply[i]);
    total += it == row->second.end() ? kNegInf : std::log(it->second / row_total);
  }
  return total;
}

// Bayes-optimal topic index for a reply given the generator's distributions
// and a topic prior; ties and all-impossible replies resolve to the lowest
// index. Uniform prior when none is given.
inline std::size_t bayes_topic(const calm::SynthSpec& spec, const std::vector<std::string>& reply,
                               std::span<const double> prior = {}) {
  std::size_t best = 0;
  double best_lp = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < spec.topics.size(); ++t) {
    double lp = reply_log_prob(spec.topics[t], reply);
    if (!prior.empty()) lp += std::log(prior[t]);
    if (lp > best_lp) {
      best_lp = lp;
      best = t;
    }
  }
  return best;
}

// Independent per-token component probability rows for scored sentences
// (tokens then EOS, histories from BOS), for EM and grid-search oracles.
inline std::vector<calm::Vec> component_prob_rows(
    const std::vector<const calm::NGramModel*>& components,
    const std::vector<std::vector<TokenId>>& sentences) {
  std::vector<calm::Vec> rows;
  for (const auto& s : sentences) {
    std::vector<TokenId> hist = {Vocabulary::kBos};
    auto push = [&](TokenId w) {
      calm::Vec row(components.size());
      for (std::size_t k = 0; k < components.size(); ++k)
        row[k] = components[k]->prob(hist, w);
      rows.push_back(row);
    };
    for (TokenId w : s) {
      push(w);
      hist.push_back(w);
    }
    push(Vocabulary::kEos);
  }
  return rows;
}

inline double mixture_log_likelihood(const std::vector<calm::Vec>& rows,
                                     std::span<const double> lambda) {
  double ll = 0.0;
  for (const calm::Vec& row : rows) {
    double mix = 0.0;
    for (std::size_t k = 0; k < lambda.size(); ++k) mix += lambda[k] * row[k];
    ll += std::log(std::max(mix, 1e-12));
  }
  return ll;
}

// Exhaustive simplex search at the given step for the interpolation weights
// maximizing corpus log-likelihood. K = 2 or 3 only; ties keep the first
// maximizer found.
inline std::vector<double> grid_search_weights(const std::vector<calm::Vec>& rows, double step) {
  const std::size_t K = rows.empty() ? 0 : rows[0].size();
  const int n = int(std::lround(1.0 / step));
  std::vector<double> best;
  double best_ll = -std::numeric_limits<double>::infinity();
  auto consider = [&](std::vector<double> lambda) {
    double ll = mixture_log_likelihood(rows, lambda);
    if (ll > best_ll) {
      best_ll = ll;
      best = std::move(lambda);
    }
  };
  if (K == 2) {
    for (int i = 0; i <= n; ++i) consider({i * step, 1.0 - i * step});
  } else if (K == 3) {
    for (int i = 0; i <= n; ++i)
      for (int j = 0; i + j <= n; ++j) consider({i * step, j * step, 1.0 - (i + j) * step});
  }
  return best;
}

// Perplexity as a plain serial loop over floored token probabilities.
template <typename ProbFn>
double perplexity(const std::vector<std::vector<TokenId>>& sentences, ProbFn&& prob) {
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& s : sentences) {
    Gram hist = {Vocabulary::kBos};
    for (TokenId w : s) {
      total += std::log(std::max(prob(hist, w), 1e-12));
      hist.push_back(w);
    }
    total += std::log(std::max(prob(hist, Vocabulary::kEos), 1e-12));
    tokens += s.size() + 1;
  }
  return std::exp(-total / double(tokens));
}

}  // namespace oracle
