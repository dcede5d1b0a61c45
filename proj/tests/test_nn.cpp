#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>

#include "calm/nn.hpp"
#include "calm/rng.hpp"

using namespace calm;

TEST_CASE("param store init is per-name deterministic") {
  ParamStore a(42), b(42);
  a.add("w", 4, 3);
  a.add("u", 2, 5);
  // Opposite insertion order must not change either tensor.
  b.add("u", 2, 5);
  b.add("w", 4, 3);
  CHECK(a.value("w") == b.value("w"));
  CHECK(a.value("u") == b.value("u"));

  ParamStore c(43);
  c.add("w", 4, 3);
  CHECK_FALSE(a.value("w") == c.value("w"));

  // Glorot bound.
  double limit = std::sqrt(6.0 / (4 + 3));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(a.value("w")(i, j) <= limit);
      CHECK(a.value("w")(i, j) >= -limit);
    }

  Matrix& z = a.add("b", 1, 4, ParamInit::Zero);
  for (std::size_t j = 0; j < 4; ++j) CHECK(z(0, j) == 0.0);

  CHECK_THROWS_AS(a.add("w", 2, 2), std::invalid_argument);
  CHECK_THROWS_AS(a.value("missing"), std::out_of_range);
}

TEST_CASE("param store json round trip is exact") {
  ParamStore a(7);
  a.add("emb", 5, 3);
  a.add("w", 2, 7);
  a.value("w")(1, 3) = 0.1 + 0.2;  // not exactly representable in decimal
  a.save_json("params_rt.json");
  ParamStore b = ParamStore::load_json("params_rt.json");
  CHECK(b.seed() == a.seed());
  CHECK(b.names() == a.names());
  CHECK(b.value("emb") == a.value("emb"));
  CHECK(b.value("w") == a.value("w"));
  std::remove("params_rt.json");

  a.value("w")(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(a.save_json("params_bad.json"), std::runtime_error);
}

TEST_CASE("softmax and cross entropy") {
  Vec logits = {1.0, 2.0, 3.0};
  Vec probs(3);
  softmax(logits, probs);
  CHECK(probs[0] + probs[1] + probs[2] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(probs[2] > probs[1]);

  // Max subtraction keeps huge logits finite.
  Vec big = {1000.0, 1001.0, 999.0};
  softmax(big, probs);
  CHECK(std::isfinite(probs[0]));
  CHECK(probs[1] > probs[0]);

  Vec dlogits(3, 0.0);
  double loss = xent_loss(probs, 1, dlogits);
  CHECK(loss == doctest::Approx(-std::log(probs[1])).epsilon(1e-12));
  CHECK(dlogits[0] == doctest::Approx(probs[0]).epsilon(1e-12));
  CHECK(dlogits[1] == doctest::Approx(probs[1] - 1.0).epsilon(1e-12));

  CHECK_THROWS_AS(xent_loss(probs, 3, dlogits), std::invalid_argument);
}

TEST_CASE("sigmoid is stable at extremes") {
  CHECK(sigmoid(0.0) == doctest::Approx(0.5));
  CHECK(sigmoid(800.0) == doctest::Approx(1.0));
  CHECK(sigmoid(-800.0) == doctest::Approx(0.0));
  CHECK(std::isfinite(sigmoid(-800.0)));
  CHECK(sigmoid(2.0) + sigmoid(-2.0) == doctest::Approx(1.0).epsilon(1e-12));
}

namespace {

// Two-layer net used for gradient checking: softmax(W2 tanh(W1 x + b1) + b2).
struct TinyNet {
  ParamStore params{11};
  Vec x = {0.3, -0.7, 1.2};
  std::size_t target = 1;

  TinyNet() {
    params.add("w1", 4, 3);
    params.add("b1", 1, 4, ParamInit::Zero);
    params.add("w2", 2, 4);
    params.add("b2", 1, 2, ParamInit::Zero);
    params.value("b1")(0, 2) = 0.05;  // move biases off the zero point
    params.value("b2")(0, 0) = -0.02;
  }

  double forward() const {
    Vec a1(4), h(4), logits(2), probs(2);
    affine(params.value("w1"), params.value("b1"), x, a1);
    tanh_forward(a1, h);
    affine(params.value("w2"), params.value("b2"), h, logits);
    softmax(logits, probs);
    return -std::log(probs[target]);
  }

  double backward() {
    Vec a1(4), h(4), logits(2), probs(2);
    affine(params.value("w1"), params.value("b1"), x, a1);
    tanh_forward(a1, h);
    affine(params.value("w2"), params.value("b2"), h, logits);
    softmax(logits, probs);
    Vec dlogits(2, 0.0);
    double loss = xent_loss(probs, target, dlogits);
    Vec dh(4, 0.0), da1(4, 0.0);
    affine_backward(params.value("w2"), h, dlogits, params.grad("w2"), params.grad("b2"), dh);
    tanh_backward(h, dh, da1);
    affine_backward(params.value("w1"), x, da1, params.grad("w1"), params.grad("b1"), {});
    return loss;
  }
};

}  // namespace

TEST_CASE("gradient check validates backward passes") {
  TinyNet net;
  net.params.zero_grads();
  net.backward();
  auto report = grad_check(
      net.params, [&]() { return net.forward(); }, 12, 1e-5, 3);
  CHECK(report.checked > 0);
  CHECK(report.max_rel_err < 1e-4);
  CHECK(report.max_rel_err < 1e-6);  // doubles give far better than the gate
}

TEST_CASE("gradient check flags a corrupted gradient") {
  TinyNet net;
  net.params.zero_grads();
  net.backward();
  // Doubling one healthy coordinate must produce relative error near 1.
  Matrix& g = net.params.grad("w2");
  std::size_t worst = 0;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (std::abs(g.data()[i]) > std::abs(g.data()[worst])) worst = i;
  REQUIRE(std::abs(g.data()[worst]) > 1e-3);
  g.data()[worst] *= 2.0;
  auto report = grad_check(
      net.params, [&]() { return net.forward(); }, 8, 1e-5, 3);
  CHECK(report.max_rel_err > 0.5);
  CHECK(report.max_rel_err < 1.5);
  CHECK(report.worst_param == "w2");
}

TEST_CASE("mean embedding forward and backward") {
  Matrix emb(5, 3);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) emb(i, j) = double(i) + 0.1 * double(j);
  std::vector<TokenId> ids = {1, 3, 3};
  Vec out(3);
  mean_embedding(emb, ids, out);
  for (std::size_t j = 0; j < 3; ++j)
    CHECK(out[j] == doctest::Approx((emb(1, j) + 2 * emb(3, j)) / 3.0).epsilon(1e-12));

  mean_embedding(emb, {}, out);
  CHECK(out == Vec{0.0, 0.0, 0.0});

  Matrix demb(5, 3);
  Vec dout = {0.3, -0.6, 0.9};
  mean_embedding_backward(ids, dout, demb);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(demb(1, j) == doctest::Approx(dout[j] / 3.0).epsilon(1e-12));
    CHECK(demb(3, j) == doctest::Approx(2.0 * dout[j] / 3.0).epsilon(1e-12));
    CHECK(demb(0, j) == 0.0);
  }

  std::vector<TokenId> bad = {7};
  CHECK_THROWS_AS(mean_embedding(emb, bad, out), std::invalid_argument);
}

TEST_CASE("sgd steps down a quadratic and zeroes gradients") {
  ParamStore p(1);
  p.add("w", 1, 2, ParamInit::Zero);
  p.value("w")(0, 0) = 3.0;
  p.value("w")(0, 1) = -2.0;
  // loss = 0.5 ||w||^2, grad = w
  p.grad("w")(0, 0) = 3.0;
  p.grad("w")(0, 1) = -2.0;
  Sgd opt(SgdConfig{0.1});
  opt.step(p);
  CHECK(p.value("w")(0, 0) == doctest::Approx(2.7).epsilon(1e-12));
  CHECK(p.value("w")(0, 1) == doctest::Approx(-1.8).epsilon(1e-12));
  CHECK(p.grad("w")(0, 0) == 0.0);
}

TEST_CASE("adam first step moves by about lr in the gradient direction") {
  ParamStore p(1);
  p.add("w", 1, 2, ParamInit::Zero);
  p.value("w")(0, 0) = 1.0;
  p.value("w")(0, 1) = -1.0;
  p.grad("w")(0, 0) = 0.5;
  p.grad("w")(0, 1) = -4.0;
  AdamConfig cfg;
  cfg.lr = 0.01;
  Adam opt(cfg);
  opt.step(p);
  // With bias correction the first update is lr * g/|g| up to eps effects.
  CHECK(p.value("w")(0, 0) == doctest::Approx(1.0 - 0.01).epsilon(1e-4));
  CHECK(p.value("w")(0, 1) == doctest::Approx(-1.0 + 0.01).epsilon(1e-4));
  CHECK(opt.steps() == 1);
}

TEST_CASE("optimizers reject non-finite gradients and leave values untouched") {
  ParamStore p(1);
  p.add("w", 1, 1, ParamInit::Zero);
  p.value("w")(0, 0) = 5.0;
  p.grad("w")(0, 0) = std::numeric_limits<double>::quiet_NaN();
  Sgd sgd(SgdConfig{0.1});
  CHECK_THROWS_AS(sgd.step(p), std::runtime_error);
  CHECK(p.value("w")(0, 0) == 5.0);
  Adam adam{AdamConfig{}};
  CHECK_THROWS_AS(adam.step(p), std::runtime_error);
  CHECK(p.value("w")(0, 0) == 5.0);
}

TEST_CASE("gradient clipping scales only above the threshold") {
  ParamStore p(1);
  p.add("w", 1, 2, ParamInit::Zero);
  p.grad("w")(0, 0) = 3.0;
  p.grad("w")(0, 1) = 4.0;  // norm 5
  double pre = clip_grad_norm(p, 10.0);
  CHECK(pre == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(p.grad("w")(0, 0) == doctest::Approx(3.0).epsilon(1e-12));

  pre = clip_grad_norm(p, 1.0);
  CHECK(pre == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(p.grad("w")(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(p.grad("w")(0, 1) == doctest::Approx(0.8).epsilon(1e-12));
}
