#include "calm/ngram.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <stdexcept>

#include "calm/parallel.hpp"

namespace calm {

void NGramConfig::validate() const {
  if (order < 1 || order > 9)
    throw std::invalid_argument("ngram config: order must be in [1, 9], got " +
                                std::to_string(order));
  if (!(discount > 0.0) || !(discount < 1.0))
    throw std::invalid_argument("ngram config: discount must be in (0, 1), got " +
                                std::to_string(discount));
  if (!(alpha > 0.0))
    throw std::invalid_argument("ngram config: alpha must be positive, got " +
                                std::to_string(alpha));
}

CountTable::CountTable(int order) : order_(order), tables_(std::size_t(order)) {
  if (order < 1 || order > 9)
    throw std::invalid_argument("count table: order must be in [1, 9], got " +
                                std::to_string(order));
}

void CountTable::add_sentence(std::span<const TokenId> words) {
  std::vector<TokenId> padded;
  padded.reserve(words.size() + 2);
  padded.push_back(Vocabulary::kBos);
  padded.insert(padded.end(), words.begin(), words.end());
  padded.push_back(Vocabulary::kEos);
  for (int k = 1; k <= order_; ++k) {
    for (std::size_t i = 0; i + std::size_t(k) <= padded.size(); ++i) {
      std::vector<TokenId> gram(padded.begin() + long(i), padded.begin() + long(i) + k);
      ++tables_[std::size_t(k) - 1][std::move(gram)];
    }
  }
  ++sentences_;
}

uint64_t CountTable::count(std::span<const TokenId> gram) const {
  if (gram.empty() || gram.size() > std::size_t(order_))
    throw std::invalid_argument("count: gram length out of range");
  const GramMap& t = tables_[gram.size() - 1];
  auto it = t.find(std::vector<TokenId>(gram.begin(), gram.end()));
  return it == t.end() ? 0 : it->second;
}

const CountTable::GramMap& CountTable::grams(int k) const {
  if (k < 1 || k > order_) throw std::out_of_range("grams: order out of range");
  return tables_[std::size_t(k) - 1];
}

std::vector<std::vector<TokenId>> corpus_sentences(const std::vector<Conversation>& corpus,
                                                   const Vocabulary& vocab) {
  std::vector<std::vector<TokenId>> out;
  for (const auto& conv : corpus)
    for (const auto& turn : conv.turns) out.push_back(to_ids(vocab, turn.user_utterance));
  return out;
}

CountTable count_corpus(const std::vector<Conversation>& corpus, const Vocabulary& vocab,
                        int order) {
  CountTable counts(order);
  for (const auto& s : corpus_sentences(corpus, vocab)) counts.add_sentence(s);
  return counts;
}

namespace {

using Gram = std::vector<TokenId>;
using ProbMap = std::map<Gram, double>;

// Backoff walk over partially built linear-probability tables. Levels are
// filled bottom-up, so by the time a context length is queried all tables
// and backoff weights it can reach are final.
double query_linear(const std::vector<ProbMap>& probs, const std::vector<ProbMap>& bows,
                    std::span<const TokenId> ctx, TokenId w) {
  double scale = 1.0;
  while (true) {
    Gram gram(ctx.begin(), ctx.end());
    gram.push_back(w);
    const ProbMap& tbl = probs[ctx.size()];
    auto it = tbl.find(gram);
    if (it != tbl.end()) return scale * it->second;
    if (ctx.empty()) return 0.0;  // token outside the stored unigram support
    auto b = bows[ctx.size() - 1].find(Gram(ctx.begin(), ctx.end()));
    if (b != bows[ctx.size() - 1].end()) scale *= b->second;
    ctx = ctx.subspan(1);
  }
}

}  // namespace

NGramModel NGramModel::train(const CountTable& counts, const Vocabulary& vocab,
                             const NGramConfig& config) {
  config.validate();
  if (counts.order() != config.order)
    throw std::invalid_argument("train: count table order " + std::to_string(counts.order()) +
                                " does not match config order " + std::to_string(config.order));
  for (const auto& [g, c] : counts.grams(1)) {
    (void)c;
    if (g[0] < 0 || std::size_t(g[0]) >= vocab.size())
      throw std::invalid_argument("train: count table references token id " +
                                  std::to_string(g[0]) + " outside the vocabulary");
  }

  const int N = config.order;
  const double V = double(vocab.pred_size());
  const bool kn = config.smoothing == Smoothing::KneserNey;
  const double D = config.discount;
  const double A = config.alpha;

  // Kneser-Ney estimates lower orders from continuation counts: the adjusted
  // count of a gram is the number of distinct tokens that precede it at the
  // next order up. Grams starting with "<s>" keep raw counts since nothing
  // can precede the start marker. Additive smoothing uses raw counts at all
  // orders.
  std::vector<CountTable::GramMap> adj;
  adj.resize(std::size_t(N));
  adj[std::size_t(N) - 1] = counts.grams(N);
  for (int k = N - 1; k >= 1; --k) {
    if (!kn) {
      adj[std::size_t(k) - 1] = counts.grams(k);
      continue;
    }
    CountTable::GramMap m;
    for (const auto& [g, c] : counts.grams(k + 1)) {
      (void)c;
      ++m[Gram(g.begin() + 1, g.end())];
    }
    for (const auto& [g, c] : counts.grams(k))
      if (g[0] == Vocabulary::kBos) m[g] = c;
    adj[std::size_t(k) - 1] = std::move(m);
  }

  std::vector<ProbMap> probs;
  probs.resize(std::size_t(N));
  std::vector<ProbMap> bows;
  bows.resize(N > 1 ? std::size_t(N) - 1 : 0);

  // Unigram level covers every predictable token, so backoff always
  // terminates with real mass: Kneser-Ney spreads the discount as a uniform
  // share, additive gives unseen tokens their pseudo-count.
  double total = 0.0;
  std::size_t seen_types = 0;
  for (const auto& [g, c] : adj[0]) {
    if (g[0] == Vocabulary::kBos) continue;
    total += double(c);
    ++seen_types;
  }
  if (total <= 0.0) throw std::runtime_error("train: no training tokens");
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    TokenId w = TokenId(id);
    if (w == Vocabulary::kBos) continue;
    auto it = adj[0].find(Gram{w});
    double c = it == adj[0].end() ? 0.0 : double(it->second);
    double pv = kn ? (std::max(c - D, 0.0) + D * double(seen_types) / V) / total
                   : (c + A) / (total + A * V);
    probs[0][Gram{w}] = pv;
  }

  for (int k = 2; k <= N; ++k) {
    const CountTable::GramMap& level = adj[std::size_t(k) - 1];
    auto same_ctx = [](const Gram& a, const Gram& b) {
      return std::equal(a.begin(), a.end() - 1, b.begin(), b.end() - 1);
    };
    for (auto it = level.begin(); it != level.end();) {
      auto run_end = it;
      double denom = 0.0;
      std::size_t types = 0;
      while (run_end != level.end() && same_ctx(it->first, run_end->first)) {
        denom += double(run_end->second);
        ++types;
        ++run_end;
      }
      for (auto j = it; j != run_end; ++j) {
        double c = double(j->second);
        double pv;
        if (kn) {
          std::span<const TokenId> low_ctx(j->first.data() + 1, j->first.size() - 2);
          double p_low = query_linear(probs, bows, low_ctx, j->first.back());
          pv = std::max(c - D, 0.0) / denom + (D * double(types) / denom) * p_low;
        } else {
          pv = (c + A) / (denom + A * V);
        }
        probs[std::size_t(k) - 1][j->first] = pv;
      }
      it = run_end;
    }

    // Backoff weights for the contexts of this level: the discounted mass
    // divided by the lower-order mass outside the seen set. A lower order
    // that already saturates the seen set leaves nothing to back off to;
    // the seen probabilities are renormalized and the weight is zero.
    ProbMap& built = probs[std::size_t(k) - 1];
    for (auto it = built.begin(); it != built.end();) {
      Gram ctx(it->first.begin(), it->first.end() - 1);
      auto run_end = it;
      double s_seen = 0.0, s_low = 0.0;
      while (run_end != built.end() &&
             std::equal(ctx.begin(), ctx.end(), run_end->first.begin(),
                        run_end->first.end() - 1)) {
        s_seen += run_end->second;
        s_low += query_linear(probs, bows, std::span<const TokenId>(ctx).subspan(1),
                              run_end->first.back());
        ++run_end;
      }
      double den = 1.0 - s_low;
      if (den < 1e-12) {
        for (auto j = it; j != run_end; ++j) j->second /= s_seen;
        bows[ctx.size() - 1][ctx] = 0.0;
      } else {
        bows[ctx.size() - 1][ctx] = std::max(1.0 - s_seen, 0.0) / den;
      }
      it = run_end;
    }
  }

  NGramModel m;
  m.order_ = N;
  m.vocab_ = vocab;
  m.tables_.resize(std::size_t(N));
  for (int k = 1; k <= N; ++k) {
    for (const auto& [g, pv] : probs[std::size_t(k) - 1])
      m.tables_[std::size_t(k) - 1][g] = Entry{std::log10(pv), 0.0, false};
    if (k < N) {
      for (const auto& [g, bv] : bows[std::size_t(k) - 1]) {
        auto [slot, inserted] = m.tables_[std::size_t(k) - 1].try_emplace(g);
        if (inserted) slot->second.logp = kLogPseudo;  // context-only entry
        slot->second.bow = bv > 0.0 ? std::log10(bv) : kLogPseudo;
        slot->second.has_bow = true;
      }
    }
  }
  return m;
}

double NGramModel::log10_prob(std::span<const TokenId> history, TokenId word) const {
  if (order_ < 1) throw std::runtime_error("log10_prob: model is empty");
  std::size_t max_ctx = std::size_t(order_) - 1;
  std::span<const TokenId> ctx =
      history.size() > max_ctx ? history.subspan(history.size() - max_ctx) : history;
  double acc = 0.0;
  Gram gram;
  while (true) {
    gram.assign(ctx.begin(), ctx.end());
    gram.push_back(word);
    const Table& tbl = tables_[ctx.size()];
    auto it = tbl.find(gram);
    if (it != tbl.end()) return acc + it->second.logp;
    if (ctx.empty()) return acc + kLogPseudo;
    const Table& ctab = tables_[ctx.size() - 1];
    auto c = ctab.find(Gram(ctx.begin(), ctx.end()));
    if (c != ctab.end() && c->second.has_bow) acc += c->second.bow;
    ctx = ctx.subspan(1);
  }
}

double NGramModel::prob(std::span<const TokenId> history, TokenId word) const {
  return std::max(std::pow(10.0, log10_prob(history, word)), kProbFloor);
}

double NGramModel::sentence_logprob(std::span<const TokenId> words) const {
  constexpr double kLog10Floor = -12.0;  // log10 of the evaluation floor
  std::vector<TokenId> hist;
  hist.reserve(words.size() + 1);
  hist.push_back(Vocabulary::kBos);
  double total = 0.0;
  for (TokenId w : words) {
    total += std::max(log10_prob(hist, w), kLog10Floor);
    hist.push_back(w);
  }
  total += std::max(log10_prob(hist, Vocabulary::kEos), kLog10Floor);
  return total * M_LN10;
}

double corpus_perplexity(const NGramModel& model,
                         const std::vector<std::vector<TokenId>>& sentences) {
  if (sentences.empty()) throw std::invalid_argument("corpus_perplexity: no sentences");
  std::vector<double> lp = par::map_indexed<double>(
      sentences.size(), [&](std::size_t i) { return model.sentence_logprob(sentences[i]); });
  double total = 0.0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    total += lp[i];
    tokens += sentences[i].size() + 1;
  }
  return std::exp(-total / double(tokens));
}

namespace {

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

void NGramModel::write_arpa(const std::string& path) const {
  if (order_ < 1) throw std::runtime_error("write_arpa: model is empty");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_arpa: cannot open " + path + " for writing");
  out << "\n\\data\\\n";
  for (int k = 1; k <= order_; ++k)
    out << "ngram " << k << "=" << tables_[std::size_t(k) - 1].size() << "\n";
  for (int k = 1; k <= order_; ++k) {
    out << "\n\\" << k << "-grams:\n";
    for (const auto& [g, e] : tables_[std::size_t(k) - 1]) {
      out << fmt17(e.logp) << '\t';
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (i) out << ' ';
        out << vocab_.token(g[i]);
      }
      if (e.has_bow) out << '\t' << fmt17(e.bow);
      out << '\n';
    }
  }
  out << "\n\\end\\\n";
  out.flush();
  if (!out) throw std::runtime_error("write_arpa: write to " + path + " failed");
}

namespace {

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

NGramModel NGramModel::read_arpa(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_arpa: cannot open " + path);
  std::string line;
  std::size_t ln = 0;

  auto fail = [&](const std::string& msg) -> void {
    throw std::runtime_error("read_arpa: " + path + " line " + std::to_string(ln) + ": " + msg);
  };
  auto next_nonblank = [&]() -> bool {
    while (std::getline(in, line)) {
      ++ln;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) return true;
    }
    return false;
  };
  auto parse_num = [&](const std::string& s) -> double {
    const char* c = s.c_str();
    char* end = nullptr;
    double v = std::strtod(c, &end);
    if (end != c + s.size()) fail("bad number '" + s + "'");
    return v;
  };

  if (!next_nonblank() || line != "\\data\\") fail("expected \\data\\ header");

  std::vector<std::size_t> declared;
  while (true) {
    if (!next_nonblank()) fail("unexpected end of file after \\data\\");
    if (line.rfind("ngram ", 0) != 0) break;
    int k = 0;
    long long n = -1;
    if (std::sscanf(line.c_str(), "ngram %d=%lld", &k, &n) != 2 || n < 0)
      fail("malformed count line '" + line + "'");
    if (k != int(declared.size()) + 1) fail("ngram counts must be declared in order 1..N");
    declared.push_back(std::size_t(n));
  }
  if (declared.empty()) fail("no ngram counts declared");

  const int N = int(declared.size());
  NGramModel m;
  m.order_ = N;
  m.tables_.resize(std::size_t(N));

  for (int k = 1; k <= N; ++k) {
    std::string want = "\\" + std::to_string(k) + "-grams:";
    if (line != want) fail("expected section header " + want);
    std::size_t got = 0;
    while (true) {
      if (!next_nonblank()) fail("unexpected end of file inside " + want);
      if (line[0] == '\\') break;
      std::vector<std::string> f = split_ws(line);
      if (f.size() != std::size_t(k) + 1 && f.size() != std::size_t(k) + 2)
        fail("expected " + std::to_string(k + 1) + " or " + std::to_string(k + 2) +
             " fields, found " + std::to_string(f.size()));
      Entry e;
      e.logp = parse_num(f[0]);
      if (f.size() == std::size_t(k) + 2) {
        if (k == N) fail("highest-order entry cannot carry a backoff weight");
        e.bow = parse_num(f.back());
        e.has_bow = true;
      }
      Gram g(std::size_t(k), 0);
      for (int i = 0; i < k; ++i) {
        const std::string& tok = f[std::size_t(i) + 1];
        if (k == 1) {
          g[std::size_t(i)] = m.vocab_.add(tok);
        } else {
          if (!m.vocab_.contains(tok)) fail("token '" + tok + "' not in the unigram section");
          g[std::size_t(i)] = m.vocab_.id_of(tok);
        }
      }
      if (!m.tables_[std::size_t(k) - 1].emplace(std::move(g), e).second) fail("duplicate n-gram");
      ++got;
    }
    if (got != declared[std::size_t(k) - 1])
      fail(want + " section declares " + std::to_string(declared[std::size_t(k) - 1]) +
           " entries but contains " + std::to_string(got));
  }
  if (line != "\\end\\") fail("expected \\end\\");
  return m;
}

}  // namespace calm
