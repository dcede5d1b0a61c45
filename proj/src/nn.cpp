#include "calm/nn.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "calm/rng.hpp"
#include "json.hpp"
#include "json_util.hpp"

namespace calm {

Matrix& ParamStore::add(const std::string& name, std::size_t rows, std::size_t cols,
                        ParamInit init) {
  if (name.empty()) throw std::invalid_argument("param store: empty parameter name");
  if (rows == 0 || cols == 0)
    throw std::invalid_argument("param store: parameter '" + name + "' has a zero dimension");
  auto [it, inserted] = params_.try_emplace(name);
  if (!inserted) throw std::invalid_argument("param store: duplicate parameter '" + name + "'");
  Param& p = it->second;
  p.value = Matrix(rows, cols);
  p.grad = Matrix(rows, cols);
  if (init == ParamInit::Glorot) {
    Rng rng = Rng(seed_).substream("init", name, 0);
    double limit = std::sqrt(6.0 / double(rows + cols));
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) p.value(i, j) = rng.uniform(-limit, limit);
  }
  return p.value;
}

Matrix& ParamStore::value(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("param store: no parameter '" + name + "'");
  return it->second.value;
}

const Matrix& ParamStore::value(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("param store: no parameter '" + name + "'");
  return it->second.value;
}

Matrix& ParamStore::grad(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("param store: no parameter '" + name + "'");
  return it->second.grad;
}

void ParamStore::zero_grads() {
  for (auto& [name, p] : params_) {
    (void)name;
    p.grad.fill(0.0);
  }
}

double ParamStore::grad_norm() const {
  double total = 0.0;
  for (const auto& [name, p] : params_) {
    (void)name;
    const double* g = p.grad.data();
    for (std::size_t i = 0; i < p.grad.size(); ++i) total += g[i] * g[i];
  }
  return std::sqrt(total);
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, p] : params_) {
    (void)p;
    out.push_back(name);
  }
  return out;
}

void ParamStore::save_json(const std::string& path) const {
  detail::save_json_file(detail::params_to_json(*this), path);
}

ParamStore ParamStore::load_json(const std::string& path) {
  try {
    return detail::params_from_json(detail::load_json_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("param store: " + path + ": " + e.what());
  }
}

void affine(const Matrix& w, const Matrix& b, std::span<const double> x, std::span<double> y) {
  matvec(w, x, y);
  if (b.size() == 0) return;
  if (b.rows() != 1 || b.cols() != w.rows())
    throw std::invalid_argument("affine: bias shape " + shape_str(b.rows(), b.cols()) +
                                " does not match " + std::to_string(w.rows()) + " outputs");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b(0, i);
}

void affine_backward(const Matrix& w, std::span<const double> x, std::span<const double> dy,
                     Matrix& dw, Matrix& db, std::span<double> dx) {
  outer_acc(dy, x, dw);
  if (db.size() != 0) {
    if (db.rows() != 1 || db.cols() != dy.size())
      throw std::invalid_argument("affine_backward: bias gradient shape mismatch");
    for (std::size_t i = 0; i < dy.size(); ++i) db(0, i) += dy[i];
  }
  if (!dx.empty()) matvec_t_acc(w, dy, dx);
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

void tanh_forward(std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("tanh_forward: size mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
}

void tanh_backward(std::span<const double> y, std::span<const double> dy, std::span<double> dx) {
  if (y.size() != dy.size() || y.size() != dx.size())
    throw std::invalid_argument("tanh_backward: size mismatch");
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] += dy[i] * (1.0 - y[i] * y[i]);
}

void softmax(std::span<const double> logits, std::span<double> probs) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  if (logits.size() != probs.size()) throw std::invalid_argument("softmax: size mismatch");
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - mx);
    sum += probs[i];
  }
  for (std::size_t i = 0; i < probs.size(); ++i) probs[i] /= sum;
}

double xent_loss(std::span<const double> probs, std::size_t target, std::span<double> dlogits) {
  if (target >= probs.size())
    throw std::invalid_argument("xent_loss: target " + std::to_string(target) +
                                " out of range for " + std::to_string(probs.size()) + " classes");
  if (!dlogits.empty()) {
    if (dlogits.size() != probs.size()) throw std::invalid_argument("xent_loss: size mismatch");
    for (std::size_t i = 0; i < probs.size(); ++i) dlogits[i] += probs[i];
    dlogits[target] -= 1.0;
  }
  return -std::log(std::max(probs[target], 1e-300));
}

void mean_embedding(const Matrix& emb, std::span<const TokenId> ids, std::span<double> out) {
  if (out.size() != emb.cols()) throw std::invalid_argument("mean_embedding: size mismatch");
  std::fill(out.begin(), out.end(), 0.0);
  if (ids.empty()) return;
  for (TokenId id : ids) {
    if (id < 0 || std::size_t(id) >= emb.rows())
      throw std::invalid_argument("mean_embedding: token id " + std::to_string(id) +
                                  " outside the embedding table");
    std::span<const double> row = emb.row(std::size_t(id));
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += row[j];
  }
  double inv = 1.0 / double(ids.size());
  for (double& v : out) v *= inv;
}

void mean_embedding_backward(std::span<const TokenId> ids, std::span<const double> dout,
                             Matrix& demb) {
  if (ids.empty()) return;
  double inv = 1.0 / double(ids.size());
  for (TokenId id : ids) {
    std::span<double> row = demb.row(std::size_t(id));
    for (std::size_t j = 0; j < dout.size(); ++j) row[j] += dout[j] * inv;
  }
}

namespace {

void check_finite_grads(ParamStore& params) {
  params.for_each([](const std::string& name, Param& p) {
    const double* g = p.grad.data();
    for (std::size_t i = 0; i < p.grad.size(); ++i)
      if (!std::isfinite(g[i]))
        throw std::runtime_error("optimizer: non-finite gradient in '" + name + "'");
  });
}

}  // namespace

void Sgd::step(ParamStore& params) {
  check_finite_grads(params);
  params.for_each([&](const std::string& name, Param& p) {
    (void)name;
    double* w = p.value.data();
    const double* g = p.grad.data();
    for (std::size_t i = 0; i < p.value.size(); ++i) w[i] -= cfg_.lr * g[i];
    p.grad.fill(0.0);
  });
}

void Adam::step(ParamStore& params) {
  check_finite_grads(params);
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  params.for_each([&](const std::string& name, Param& p) {
    Matrix& m = m_[name];
    Matrix& v = v_[name];
    if (!m.same_shape(p.value)) m = Matrix(p.value.rows(), p.value.cols());
    if (!v.same_shape(p.value)) v = Matrix(p.value.rows(), p.value.cols());
    double* w = p.value.data();
    const double* g = p.grad.data();
    double* md = m.data();
    double* vd = v.data();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      md[i] = cfg_.beta1 * md[i] + (1.0 - cfg_.beta1) * g[i];
      vd[i] = cfg_.beta2 * vd[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      double mhat = md[i] / bc1;
      double vhat = vd[i] / bc2;
      w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    p.grad.fill(0.0);
  });
}

double clip_grad_norm(ParamStore& params, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_grad_norm: max_norm must be positive");
  double norm = params.grad_norm();
  if (norm > max_norm) {
    double scale = max_norm / norm;
    params.for_each([&](const std::string& name, Param& p) {
      (void)name;
      double* g = p.grad.data();
      for (std::size_t i = 0; i < p.grad.size(); ++i) g[i] *= scale;
    });
  }
  return norm;
}

GradCheckReport grad_check(ParamStore& params, const std::function<double()>& loss,
                           std::size_t samples_per_param, double eps, uint64_t seed) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  GradCheckReport report;
  Rng base(seed);
  params.for_each([&](const std::string& name, Param& p) {
    Rng rng = base.substream("gradcheck", name, 0);
    std::size_t n = p.value.size();
    std::size_t take = std::min(samples_per_param, n);
    for (std::size_t s = 0; s < take; ++s) {
      std::size_t i = take == n ? s : std::size_t(rng.uniform_int(n));
      double saved = p.value.data()[i];
      p.value.data()[i] = saved + eps;
      double up = loss();
      p.value.data()[i] = saved - eps;
      double down = loss();
      p.value.data()[i] = saved;
      double numeric = (up - down) / (2.0 * eps);
      double analytic = p.grad.data()[i];
      double rel = std::abs(analytic - numeric) / std::max(std::abs(numeric), 1e-4);
      ++report.checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = name;
        report.worst_index = i;
      }
    }
  });
  return report;
}

}  // namespace calm
