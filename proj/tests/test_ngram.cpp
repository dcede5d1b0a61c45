#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "calm/ngram.hpp"
#include "calm/parallel.hpp"
#include "calm/rng.hpp"
#include "calm/synth.hpp"
#include "oracles.hpp"

using namespace calm;

namespace {

std::vector<Conversation> single_conv(const std::vector<std::string>& user_turns) {
  Conversation c;
  c.id = "t0";
  for (std::size_t i = 0; i < user_turns.size(); ++i) {
    Turn t;
    t.index = int(i);
    t.system_prompt = tokenize("say something");
    t.user_utterance = tokenize(user_turns[i]);
    t.metadata["bot_id"] = "alpha";
    c.turns.push_back(t);
  }
  return {c};
}

struct SmallWorld {
  std::vector<Conversation> corpus;
  Vocabulary vocab;
  CountTable counts{3};
  SmallWorld() {
    SynthSpec spec = default_synth_spec();
    spec.num_conversations = 15;
    corpus = synth_generate(spec, 2024);
    vocab = build_vocab(corpus, 1);
    counts = count_corpus(corpus, vocab, 3);
  }
};

}  // namespace

TEST_CASE("count table windows over padded sentences") {
  auto corpus = single_conv({"a b", "a b c"});
  Vocabulary v = build_vocab(corpus, 1);
  CountTable counts = count_corpus(corpus, v, 3);
  CHECK(counts.sentences() == 2);
  TokenId a = v.id_of("a"), b = v.id_of("b"), c = v.id_of("c");
  TokenId bos = Vocabulary::kBos, eos = Vocabulary::kEos;

  CHECK(counts.count(std::vector<TokenId>{a}) == 2);
  CHECK(counts.count(std::vector<TokenId>{b}) == 2);
  CHECK(counts.count(std::vector<TokenId>{c}) == 1);
  CHECK(counts.count(std::vector<TokenId>{bos}) == 2);
  CHECK(counts.count(std::vector<TokenId>{eos}) == 2);

  CHECK(counts.count(std::vector<TokenId>{bos, a}) == 2);
  CHECK(counts.count(std::vector<TokenId>{a, b}) == 2);
  CHECK(counts.count(std::vector<TokenId>{b, c}) == 1);
  CHECK(counts.count(std::vector<TokenId>{b, eos}) == 1);
  CHECK(counts.count(std::vector<TokenId>{c, eos}) == 1);

  CHECK(counts.count(std::vector<TokenId>{bos, a, b}) == 2);
  CHECK(counts.count(std::vector<TokenId>{a, b, c}) == 1);
  CHECK(counts.count(std::vector<TokenId>{a, b, eos}) == 1);
  CHECK(counts.count(std::vector<TokenId>{b, c, eos}) == 1);
  CHECK(counts.count(std::vector<TokenId>{a, c}) == 0);
}

TEST_CASE("additive unigram matches the closed form") {
  // Four predictable types (x, y, </s>, <unk>), six scored tokens, so with
  // alpha=1 a token seen twice has probability (2+1)/(6+4).
  auto corpus = single_conv({"x x y", "y"});
  Vocabulary v;
  v.add("x");
  v.add("y");
  REQUIRE(v.pred_size() == 4);
  CountTable counts = count_corpus(corpus, v, 1);
  NGramConfig cfg;
  cfg.order = 1;
  cfg.smoothing = Smoothing::Additive;
  cfg.alpha = 1.0;
  NGramModel m = NGramModel::train(counts, v, cfg);

  std::vector<TokenId> hist = {Vocabulary::kBos};
  CHECK(m.prob(hist, v.id_of("x")) == doctest::Approx(3.0 / 10.0).epsilon(1e-12));
  CHECK(m.prob(hist, v.id_of("y")) == doctest::Approx(3.0 / 10.0).epsilon(1e-12));
  CHECK(m.prob(hist, Vocabulary::kEos) == doctest::Approx(3.0 / 10.0).epsilon(1e-12));
  CHECK(m.prob(hist, Vocabulary::kUnk) == doctest::Approx(1.0 / 10.0).epsilon(1e-12));
}

TEST_CASE("additive seen grams match the closed form at higher orders") {
  SmallWorld w;
  NGramConfig cfg;
  cfg.order = 3;
  cfg.smoothing = Smoothing::Additive;
  cfg.alpha = 0.5;
  NGramModel m = NGramModel::train(w.counts, w.vocab, cfg);

  for (int k = 1; k <= 3; ++k) {
    std::size_t checked = 0;
    for (const auto& [g, c] : w.counts.grams(k)) {
      (void)c;
      if (g.back() == Vocabulary::kBos || g[0] == Vocabulary::kBos) continue;
      double want = oracle::additive_seen_prob(w.counts, w.vocab, cfg.alpha, g);
      std::vector<TokenId> hist(g.begin(), g.end() - 1);
      double got = std::pow(10.0, m.log10_prob(hist, g.back()));
      CHECK(got == doctest::Approx(want).epsilon(1e-10));
      if (++checked >= 300) break;
    }
    CHECK(checked > 0);
  }
}

TEST_CASE("kneser-ney matches the interpolated recursion oracle") {
  SmallWorld w;
  NGramConfig cfg;
  cfg.order = 3;
  cfg.smoothing = Smoothing::KneserNey;
  cfg.discount = 0.75;
  NGramModel m = NGramModel::train(w.counts, w.vocab, cfg);
  oracle::KnOracle ok(w.counts, w.vocab, cfg);

  Rng rng(7);
  auto check_point = [&](const std::vector<TokenId>& hist, TokenId word) {
    double want = ok.prob(hist, word);
    double got = std::pow(10.0, m.log10_prob(hist, word));
    CHECK(got == doctest::Approx(want).epsilon(1e-9));
  };

  // Seen trigrams, their contexts with unseen continuations, and random
  // histories (mostly unseen contexts; the walk must agree everywhere).
  std::size_t n = 0;
  for (const auto& [g, c] : w.counts.grams(3)) {
    (void)c;
    if (g.back() == Vocabulary::kBos) continue;
    std::vector<TokenId> hist(g.begin(), g.end() - 1);
    check_point(hist, g.back());
    check_point(hist, TokenId(1 + rng.uniform_int(w.vocab.size() - 1)));
    if (++n >= 120) break;
  }
  for (int i = 0; i < 120; ++i) {
    std::vector<TokenId> hist;
    for (int j = 0; j < 2; ++j)
      hist.push_back(TokenId(1 + rng.uniform_int(w.vocab.size() - 1)));
    check_point(hist, TokenId(1 + rng.uniform_int(w.vocab.size() - 1)));
  }
  // Unigram level directly (empty history).
  for (int i = 0; i < 40; ++i)
    check_point({}, TokenId(1 + rng.uniform_int(w.vocab.size() - 1)));
}

TEST_CASE("distributions sum to one over the predictable vocabulary") {
  SmallWorld w;
  for (Smoothing s : {Smoothing::KneserNey, Smoothing::Additive}) {
    for (int order : {1, 2, 3}) {
      NGramConfig cfg;
      cfg.order = order;
      cfg.smoothing = s;
      CountTable counts = count_corpus(w.corpus, w.vocab, order);
      NGramModel m = NGramModel::train(counts, w.vocab, cfg);

      auto sum_over = [&](const std::vector<TokenId>& hist) {
        double total = 0.0;
        for (std::size_t id = 0; id < w.vocab.size(); ++id) {
          if (TokenId(id) == Vocabulary::kBos) continue;
          total += std::pow(10.0, m.log10_prob(hist, TokenId(id)));
        }
        return total;
      };

      CHECK(sum_over({Vocabulary::kBos}) == doctest::Approx(1.0).epsilon(1e-9));
      Rng rng(uint64_t(order) * 31 + (s == Smoothing::KneserNey ? 1 : 0));
      for (int i = 0; i < 12; ++i) {
        std::vector<TokenId> hist;
        std::size_t len = rng.uniform_int(3);
        for (std::size_t j = 0; j < len; ++j)
          hist.push_back(TokenId(rng.uniform_int(w.vocab.size())));
        CHECK(sum_over(hist) == doctest::Approx(1.0).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("query floor applies to impossible events") {
  SmallWorld w;
  NGramConfig cfg;
  NGramModel m = NGramModel::train(w.counts, w.vocab, cfg);
  std::vector<TokenId> hist = {Vocabulary::kBos};
  CHECK(m.prob(hist, Vocabulary::kBos) == NGramModel::kProbFloor);
  CHECK(m.log10_prob(hist, Vocabulary::kBos) <= -99.0);
}

TEST_CASE("perplexity matches an independent per-token loop") {
  SmallWorld w;
  SynthSpec dev_spec = default_synth_spec();
  dev_spec.num_conversations = 8;
  auto dev = synth_generate(dev_spec, 999);
  auto sentences = corpus_sentences(dev, w.vocab);

  NGramConfig cfg;
  cfg.order = 3;
  NGramModel m = NGramModel::train(w.counts, w.vocab, cfg);
  oracle::KnOracle ok(w.counts, w.vocab, cfg);

  double got = corpus_perplexity(m, sentences);
  double want = oracle::perplexity(
      sentences, [&](const std::vector<TokenId>& h, TokenId t) { return ok.prob(h, t); });
  CHECK(got == doctest::Approx(want).epsilon(1e-8));
}

TEST_CASE("perplexity is identical on serial and parallel paths") {
  SmallWorld w;
  NGramConfig cfg;
  NGramModel m = NGramModel::train(w.counts, w.vocab, cfg);
  auto sentences = corpus_sentences(w.corpus, w.vocab);
  par::set_serial(true);
  double serial = corpus_perplexity(m, sentences);
  par::set_serial(false);
  double parallel = corpus_perplexity(m, sentences);
  CHECK(serial == parallel);
}

TEST_CASE("kneser-ney beats additive smoothing on held-out text") {
  SynthSpec spec = default_synth_spec();
  spec.num_conversations = 120;
  auto corpus = synth_generate(spec, 55);
  auto split = split_corpus(corpus, {0.8, 0.1, 0.1}, 5);
  Vocabulary vocab = build_vocab(split.train, 1);
  CountTable counts = count_corpus(split.train, vocab, 3);
  auto dev = corpus_sentences(split.dev, vocab);

  NGramConfig kn;
  kn.smoothing = Smoothing::KneserNey;
  NGramConfig add;
  add.smoothing = Smoothing::Additive;
  double ppl_kn = corpus_perplexity(NGramModel::train(counts, vocab, kn), dev);
  double ppl_add = corpus_perplexity(NGramModel::train(counts, vocab, add), dev);
  CHECK(ppl_kn < ppl_add);
}

TEST_CASE("arpa write/read/write is byte-identical and query-identical") {
  SmallWorld w;
  for (Smoothing s : {Smoothing::KneserNey, Smoothing::Additive}) {
    NGramConfig cfg;
    cfg.smoothing = s;
    NGramModel m = NGramModel::train(w.counts, w.vocab, cfg);
    m.write_arpa("rt1.arpa");
    NGramModel back = NGramModel::read_arpa("rt1.arpa");
    back.write_arpa("rt2.arpa");

    std::ifstream f1("rt1.arpa", std::ios::binary), f2("rt2.arpa", std::ios::binary);
    std::stringstream b1, b2;
    b1 << f1.rdbuf();
    b2 << f2.rdbuf();
    REQUIRE(b1.str().size() > 0);
    CHECK(b1.str() == b2.str());

    CHECK(back.order() == m.order());
    for (int k = 1; k <= 3; ++k) CHECK(back.num_grams(k) == m.num_grams(k));
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
      std::vector<TokenId> hist;
      std::size_t len = rng.uniform_int(3);
      for (std::size_t j = 0; j < len; ++j)
        hist.push_back(TokenId(rng.uniform_int(w.vocab.size())));
      TokenId word = TokenId(rng.uniform_int(w.vocab.size()));
      CHECK(m.log10_prob(hist, word) == back.log10_prob(hist, word));
    }
    std::remove("rt1.arpa");
    std::remove("rt2.arpa");
  }
}

TEST_CASE("arpa file carries a pseudo-probability for the start marker") {
  SmallWorld w;
  NGramConfig cfg;
  NGramModel m = NGramModel::train(w.counts, w.vocab, cfg);
  const auto& uni = m.table(1);
  auto it = uni.find(std::vector<TokenId>{Vocabulary::kBos});
  REQUIRE(it != uni.end());
  CHECK(it->second.logp == NGramModel::kLogPseudo);
  CHECK(it->second.has_bow);
}

TEST_CASE("training is deterministic") {
  SmallWorld w;
  NGramConfig cfg;
  NGramModel a = NGramModel::train(w.counts, w.vocab, cfg);
  NGramModel b = NGramModel::train(w.counts, w.vocab, cfg);
  a.write_arpa("det1.arpa");
  b.write_arpa("det2.arpa");
  std::ifstream f1("det1.arpa", std::ios::binary), f2("det2.arpa", std::ios::binary);
  std::stringstream b1, b2;
  b1 << f1.rdbuf();
  b2 << f2.rdbuf();
  CHECK(b1.str() == b2.str());
  std::remove("det1.arpa");
  std::remove("det2.arpa");
}

TEST_CASE("arpa reader reports malformed files with line numbers") {
  auto write_file = [](const std::string& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    out << body;
  };
  auto expect_error = [&](const std::string& body, const std::string& needle) {
    write_file("bad.arpa", body);
    try {
      NGramModel::read_arpa("bad.arpa");
      FAIL_CHECK("expected read_arpa to reject: " << needle);
    } catch (const std::runtime_error& e) {
      std::string msg = e.what();
      CHECK(msg.find("line") != std::string::npos);
      CHECK(msg.find(needle) != std::string::npos);
    }
    std::remove("bad.arpa");
  };

  expect_error("not an arpa file\n", "\\data\\");
  expect_error("\\data\\\nngram 2=1\n\\2-grams:\n", "declared in order");
  expect_error("\\data\\\nngram 1=2\n\\1-grams:\n-0.5\ta\n\n\\end\\\n", "declares 2 entries");
  expect_error("\\data\\\nngram 1=1\n\\1-grams:\nnotanumber\ta\n\n\\end\\\n", "bad number");
  expect_error("\\data\\\nngram 1=1\n\\1-grams:\n-0.5\ta\n-0.5\ta extra junk here\n\\end\\\n",
               "fields");
  expect_error(
      "\\data\\\nngram 1=1\nngram 2=1\n\\1-grams:\n-0.5\ta\n\\2-grams:\n-0.5\ta b\n\\end\\\n",
      "not in the unigram section");
  expect_error("\\data\\\nngram 1=2\n\\1-grams:\n-0.5\ta\n-0.6\ta\n\n\\end\\\n", "duplicate");
  expect_error("\\data\\\nngram 1=1\n\\1-grams:\n-0.5\ta -0.3\n\\end\\\n",
               "cannot carry a backoff weight");
  expect_error("\\data\\\nngram 1=1\n\\1-grams:\n-0.5\ta\n", "unexpected end");
}

TEST_CASE("config validation") {
  NGramConfig cfg;
  cfg.order = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = NGramConfig{};
  cfg.discount = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = NGramConfig{};
  cfg.alpha = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  SmallWorld w;
  NGramConfig order2;
  order2.order = 2;
  CHECK_THROWS_AS(NGramModel::train(w.counts, w.vocab, order2), std::invalid_argument);
}
