#include "ocds/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ocds/vec.hpp"

namespace ocds {
namespace {

// One softmax row with max-shifted exponentials.
void softmax_row(std::span<const double> logits, std::span<double> out) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(logits[k] - mx);
    z += out[k];
  }
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] /= z;
}

double logsumexp_row(std::span<const double> logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  return mx + std::log(z);
}

}  // namespace

void Model::accumulate_hvp(const Instance&, std::span<const double>,
                           std::span<const double>, double,
                           std::span<double>) const {
  throw NumericalError("model has no exact Hessian-vector product");
}

double Model::grad_dot(const Instance& x, std::span<const double> theta,
                       std::span<const double> w) const {
  ParamVector g(param_count(), 0.0);
  accumulate_grad(x, theta, 1.0, g);
  double s = 0.0;
  for (std::size_t j = 0; j < g.size(); ++j) s += g[j] * w[j];
  return s;
}

void QuadraticModel::check_instance(const Instance& x) const {
  if (x.values.size() != dim_) {
    throw ConfigError("quadratic model expects a " + std::to_string(dim_) +
                      "-dim value payload; instance " + std::to_string(x.id) +
                      " has " + std::to_string(x.values.size()));
  }
}

double QuadraticModel::loss(const Instance& x, std::span<const double> theta) const {
  double s = 0.0;
  for (std::size_t j = 0; j < dim_; ++j) {
    double d = theta[j] - x.values[j];
    s += d * d;
  }
  return 0.5 * s;
}

void QuadraticModel::accumulate_grad(const Instance& x,
                                     std::span<const double> theta, double coeff,
                                     std::span<double> out) const {
  for (std::size_t j = 0; j < dim_; ++j) {
    out[j] += coeff * (theta[j] - x.values[j]);
  }
}

void QuadraticModel::accumulate_hvp(const Instance&, std::span<const double>,
                                    std::span<const double> v, double coeff,
                                    std::span<double> out) const {
  // Per-instance Hessian is the identity.
  for (std::size_t j = 0; j < dim_; ++j) out[j] += coeff * v[j];
}

double QuadraticModel::grad_dot(const Instance& x, std::span<const double> theta,
                                std::span<const double> w) const {
  double s = 0.0;
  for (std::size_t j = 0; j < dim_; ++j) s += (theta[j] - x.values[j]) * w[j];
  return s;
}

BigramModel::BigramModel(std::uint32_t vocab_size) : vocab_(vocab_size) {
  if (vocab_size == 0) throw ConfigError("bigram model needs vocab size >= 1");
}

std::size_t BigramModel::param_count() const {
  return static_cast<std::size_t>(vocab_) * vocab_;
}

void BigramModel::check_instance(const Instance& x) const {
  for (std::uint32_t t : x.tokens) {
    if (t >= vocab_) {
      throw ConfigError("token id " + std::to_string(t) + " in instance " +
                        std::to_string(x.id) + " exceeds vocab size " +
                        std::to_string(vocab_));
    }
  }
}

double BigramModel::loss(const Instance& x, std::span<const double> theta) const {
  const std::size_t v = vocab_;
  double s = 0.0;
  std::uint32_t ctx = 0;
  for (std::uint32_t tok : x.tokens) {
    auto row = theta.subspan(static_cast<std::size_t>(ctx) * v, v);
    s += logsumexp_row(row) - row[tok];
    ctx = tok;
  }
  return s;
}

void BigramModel::accumulate_grad(const Instance& x,
                                  std::span<const double> theta, double coeff,
                                  std::span<double> out) const {
  const std::size_t v = vocab_;
  std::vector<double> p(v);
  std::uint32_t ctx = 0;
  for (std::uint32_t tok : x.tokens) {
    auto row = theta.subspan(static_cast<std::size_t>(ctx) * v, v);
    softmax_row(row, p);
    auto grow = out.subspan(static_cast<std::size_t>(ctx) * v, v);
    for (std::size_t k = 0; k < v; ++k) grow[k] += coeff * p[k];
    grow[tok] -= coeff;
    ctx = tok;
  }
}

void BigramModel::accumulate_hvp(const Instance& x, std::span<const double> theta,
                                 std::span<const double> vvec, double coeff,
                                 std::span<double> out) const {
  // The Hessian is block-diagonal over rows: each position with context r
  // contributes diag(p) - p p^T on row r, where p = softmax(theta[r,:]).
  const std::size_t v = vocab_;
  std::vector<std::uint32_t> row_count(v, 0);
  std::uint32_t ctx = 0;
  for (std::uint32_t tok : x.tokens) {
    ++row_count[ctx];
    ctx = tok;
  }
  std::vector<double> p(v);
  for (std::size_t r = 0; r < v; ++r) {
    if (row_count[r] == 0) continue;
    auto row = theta.subspan(r * v, v);
    softmax_row(row, p);
    auto vrow = vvec.subspan(r * v, v);
    double pv = dot(p, vrow);
    double c = coeff * row_count[r];
    auto orow = out.subspan(r * v, v);
    for (std::size_t k = 0; k < v; ++k) {
      orow[k] += c * p[k] * (vrow[k] - pv);
    }
  }
}

double BigramModel::grad_dot(const Instance& x, std::span<const double> theta,
                             std::span<const double> w) const {
  const std::size_t v = vocab_;
  std::vector<double> p(v);
  double s = 0.0;
  std::uint32_t ctx = 0;
  for (std::uint32_t tok : x.tokens) {
    auto row = theta.subspan(static_cast<std::size_t>(ctx) * v, v);
    softmax_row(row, p);
    auto wrow = w.subspan(static_cast<std::size_t>(ctx) * v, v);
    s += dot(p, wrow) - wrow[tok];
    ctx = tok;
  }
  return s;
}

double instance_loss(const Model& model, const Instance& x,
                     std::span<const double> theta) {
  model.check_instance(x);
  return model.loss(x, theta);
}

ParamVector instance_grad(const Model& model, const Instance& x,
                          std::span<const double> theta) {
  model.check_instance(x);
  ParamVector g(model.param_count(), 0.0);
  model.accumulate_grad(x, theta, 1.0, g);
  return g;
}

double weighted_loss(const Model& model, const Dataset& data,
                     std::span<const std::int64_t> ids,
                     std::span<const double> weights,
                     std::span<const double> theta) {
  double s = 0.0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    s += weights[i] * model.loss(data[static_cast<std::size_t>(ids[i])], theta);
  }
  return s;
}

double weighted_loss(const Model& model, const Dataset& data,
                     std::span<const double> gamma,
                     std::span<const double> theta) {
  double s = 0.0;
  for (std::size_t n = 0; n < data.size(); ++n) {
    s += gamma[n] * model.loss(data[n], theta);
  }
  return s;
}

ParamVector weighted_grad(const Model& model, const Dataset& data,
                          std::span<const std::int64_t> ids,
                          std::span<const double> weights,
                          std::span<const double> theta) {
  ParamVector g(model.param_count(), 0.0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    model.accumulate_grad(data[static_cast<std::size_t>(ids[i])], theta,
                          weights[i], g);
  }
  return g;
}

ParamVector weighted_grad(const Model& model, const Dataset& data,
                          std::span<const double> gamma,
                          std::span<const double> theta) {
  ParamVector g(model.param_count(), 0.0);
  for (std::size_t n = 0; n < data.size(); ++n) {
    model.accumulate_grad(data[n], theta, gamma[n], g);
  }
  return g;
}

namespace {

ParamVector fd_hvp(const Model& model, const Dataset& data,
                   std::span<const std::int64_t> ids,
                   std::span<const double> weights,
                   std::span<const double> theta, std::span<const double> v) {
  const std::size_t d = model.param_count();
  double vn = norm2(v);
  if (vn == 0.0) return ParamVector(d, 0.0);
  double eps = 1e-4 * (1.0 + norm2(theta)) / vn;
  ParamVector tp(theta.begin(), theta.end());
  ParamVector tm(theta.begin(), theta.end());
  axpy(eps, v, tp);
  axpy(-eps, v, tm);
  ParamVector gp = weighted_grad(model, data, ids, weights, tp);
  ParamVector gm = weighted_grad(model, data, ids, weights, tm);
  ParamVector out(d);
  for (std::size_t j = 0; j < d; ++j) out[j] = (gp[j] - gm[j]) / (2.0 * eps);
  return out;
}

}  // namespace

ParamVector weighted_hvp(const Model& model, const Dataset& data,
                         std::span<const std::int64_t> ids,
                         std::span<const double> weights,
                         std::span<const double> theta,
                         std::span<const double> v, HvpPath path) {
  bool exact = path == HvpPath::kExact ||
               (path == HvpPath::kAuto && model.has_exact_hvp());
  if (exact) {
    ParamVector out(model.param_count(), 0.0);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      model.accumulate_hvp(data[static_cast<std::size_t>(ids[i])], theta, v,
                           weights[i], out);
    }
    return out;
  }
  return fd_hvp(model, data, ids, weights, theta, v);
}

ParamVector weighted_hvp(const Model& model, const Dataset& data,
                         std::span<const double> gamma,
                         std::span<const double> theta,
                         std::span<const double> v, HvpPath path) {
  std::vector<std::int64_t> ids(data.size());
  for (std::size_t n = 0; n < data.size(); ++n) ids[n] = static_cast<std::int64_t>(n);
  return weighted_hvp(model, data, ids, gamma, theta, v, path);
}

double downstream_loss(const Model& model, const Dataset& downstream,
                       std::span<const double> theta) {
  if (downstream.empty()) throw ConfigError("downstream set is empty");
  double s = 0.0;
  for (std::size_t n = 0; n < downstream.size(); ++n) {
    s += model.loss(downstream[n], theta);
  }
  return s / static_cast<double>(downstream.size());
}

ParamVector downstream_grad(const Model& model, const Dataset& downstream,
                            std::span<const double> theta) {
  if (downstream.empty()) throw ConfigError("downstream set is empty");
  ParamVector g(model.param_count(), 0.0);
  double w = 1.0 / static_cast<double>(downstream.size());
  for (std::size_t n = 0; n < downstream.size(); ++n) {
    model.accumulate_grad(downstream[n], theta, w, g);
  }
  return g;
}

}  // namespace ocds
