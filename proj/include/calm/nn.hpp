#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "calm/corpus.hpp"
#include "calm/matrix.hpp"

namespace calm {

enum class ParamInit { Glorot, Zero };

struct Param {
  Matrix value;
  Matrix grad;  // same shape, accumulated by backward passes
};

// Named parameter store. Initialization draws from a substream keyed by the
// parameter's name, so adding or removing a parameter never shifts another
// one's initial values, and the same (seed, name, shape) always produces the
// same tensor.
class ParamStore {
 public:
  explicit ParamStore(uint64_t seed) : seed_(seed) {}

  Matrix& add(const std::string& name, std::size_t rows, std::size_t cols,
              ParamInit init = ParamInit::Glorot);

  bool has(const std::string& name) const { return params_.count(name) > 0; }
  Matrix& value(const std::string& name);
  const Matrix& value(const std::string& name) const;
  Matrix& grad(const std::string& name);

  void zero_grads();
  double grad_norm() const;  // global L2 over all parameters, in name order

  uint64_t seed() const { return seed_; }
  std::vector<std::string> names() const;

  // f(name, param) in sorted name order.
  template <typename F>
  void for_each(F&& f) {
    for (auto& [name, p] : params_) f(name, p);
  }
  template <typename F>
  void for_each(F&& f) const {
    for (const auto& [name, p] : params_) f(name, p);
  }

  // Exact round trip: values are written with shortest-round-trip precision
  // and parse back bit-identical. Gradients are not persisted.
  void save_json(const std::string& path) const;
  static ParamStore load_json(const std::string& path);

 private:
  uint64_t seed_;
  std::map<std::string, Param> params_;
};

// y = W x + b. b has shape 1 x rows; pass an empty matrix for no bias.
void affine(const Matrix& w, const Matrix& b, std::span<const double> x, std::span<double> y);

// Accumulates dW += dy x^T, db += dy, and (when dx is non-empty) dx += W^T dy.
void affine_backward(const Matrix& w, std::span<const double> x, std::span<const double> dy,
                     Matrix& dw, Matrix& db, std::span<double> dx);

double sigmoid(double x);
void tanh_forward(std::span<const double> x, std::span<double> y);
// dx += dy * (1 - y^2), with y the forward output.
void tanh_backward(std::span<const double> y, std::span<const double> dy, std::span<double> dx);

// probs = softmax(logits), computed with max subtraction.
void softmax(std::span<const double> logits, std::span<double> probs);

// Returns -ln probs[target] and accumulates dlogits += probs - onehot(target).
// Pass an empty dlogits to skip the gradient.
double xent_loss(std::span<const double> probs, std::size_t target, std::span<double> dlogits);

// out = mean of embedding rows for ids; zero vector when ids is empty.
void mean_embedding(const Matrix& emb, std::span<const TokenId> ids, std::span<double> out);
// demb rows receive dout / |ids|.
void mean_embedding_backward(std::span<const TokenId> ids, std::span<const double> dout,
                             Matrix& demb);

struct SgdConfig {
  double lr = 0.1;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Both optimizers walk parameters in name order, abort on non-finite
// gradients, and zero the gradients after a successful step.
class Sgd {
 public:
  explicit Sgd(SgdConfig cfg) : cfg_(cfg) {}
  void step(ParamStore& params);

 private:
  SgdConfig cfg_;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}
  void step(ParamStore& params);
  int64_t steps() const { return t_; }

 private:
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::map<std::string, Matrix> m_, v_;
};

// Scales all gradients so the global L2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_grad_norm(ParamStore& params, double max_norm);

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Central-difference check of the analytic gradients already accumulated in
// params against the loss function. loss must be a deterministic pure
// forward pass. Relative error per coordinate is |a - n| / max(|n|, 1e-4).
GradCheckReport grad_check(ParamStore& params, const std::function<double()>& loss,
                           std::size_t samples_per_param, double eps, uint64_t seed);

}  // namespace calm
