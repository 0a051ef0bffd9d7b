// Differentiable models over weighted datasets.
//
// A Model exposes per-instance loss, gradient accumulation, and (optionally)
// an exact Hessian-vector product. Aggregate ops combine instances with
// explicit weights in a fixed order so results are bit-reproducible.
#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "ocds/types.hpp"

namespace ocds {

class Model {
 public:
  virtual ~Model() = default;

  virtual std::size_t param_count() const = 0;

  // Throws ConfigError when the instance payload does not fit the model.
  virtual void check_instance(const Instance& x) const = 0;

  virtual double loss(const Instance& x, std::span<const double> theta) const = 0;

  // out += coeff * grad_theta loss(x, theta)
  virtual void accumulate_grad(const Instance& x, std::span<const double> theta,
                               double coeff, std::span<double> out) const = 0;

  virtual bool has_exact_hvp() const = 0;

  // out += coeff * H_x(theta) * v. Only valid when has_exact_hvp().
  virtual void accumulate_hvp(const Instance& x, std::span<const double> theta,
                              std::span<const double> v, double coeff,
                              std::span<double> out) const;

  // <grad loss(x, theta), w>, without materializing the gradient.
  virtual double grad_dot(const Instance& x, std::span<const double> theta,
                          std::span<const double> w) const;
};

// Toy model: loss(x, theta) = 0.5 * ||theta - x||^2 over a dense payload.
// Closed forms for trajectories and co-states make it the primary oracle model.
class QuadraticModel final : public Model {
 public:
  explicit QuadraticModel(std::size_t dim) : dim_(dim) {}

  std::size_t param_count() const override { return dim_; }
  void check_instance(const Instance& x) const override;
  double loss(const Instance& x, std::span<const double> theta) const override;
  void accumulate_grad(const Instance& x, std::span<const double> theta,
                       double coeff, std::span<double> out) const override;
  bool has_exact_hvp() const override { return true; }
  void accumulate_hvp(const Instance& x, std::span<const double> theta,
                      std::span<const double> v, double coeff,
                      std::span<double> out) const override;
  double grad_dot(const Instance& x, std::span<const double> theta,
                  std::span<const double> w) const override;

 private:
  std::size_t dim_;
};

// Softmax bigram language model. Parameters are a vocab x vocab logit matrix
// (row-major); row r holds the next-token logits after token r. Position 0
// conditions on token id 0, which doubles as the BOS marker. The sequence
// loss is the sum of per-position cross-entropies.
class BigramModel final : public Model {
 public:
  explicit BigramModel(std::uint32_t vocab_size);

  std::uint32_t vocab_size() const { return vocab_; }
  std::size_t param_count() const override;
  void check_instance(const Instance& x) const override;
  double loss(const Instance& x, std::span<const double> theta) const override;
  void accumulate_grad(const Instance& x, std::span<const double> theta,
                       double coeff, std::span<double> out) const override;
  bool has_exact_hvp() const override { return true; }
  void accumulate_hvp(const Instance& x, std::span<const double> theta,
                      std::span<const double> v, double coeff,
                      std::span<double> out) const override;
  double grad_dot(const Instance& x, std::span<const double> theta,
                  std::span<const double> w) const override;

 private:
  std::uint32_t vocab_;
};

enum class HvpPath { kAuto, kExact, kFiniteDifference };

double instance_loss(const Model& model, const Instance& x,
                     std::span<const double> theta);
ParamVector instance_grad(const Model& model, const Instance& x,
                          std::span<const double> theta);

// Weighted aggregates over (ids, weights) pairs into data. The full-dataset
// overloads use weights aligned with instance ids.
double weighted_loss(const Model& model, const Dataset& data,
                     std::span<const std::int64_t> ids,
                     std::span<const double> weights,
                     std::span<const double> theta);
double weighted_loss(const Model& model, const Dataset& data,
                     std::span<const double> gamma,
                     std::span<const double> theta);
ParamVector weighted_grad(const Model& model, const Dataset& data,
                          std::span<const std::int64_t> ids,
                          std::span<const double> weights,
                          std::span<const double> theta);
ParamVector weighted_grad(const Model& model, const Dataset& data,
                          std::span<const double> gamma,
                          std::span<const double> theta);

// Hessian-vector product of the weighted loss. kAuto prefers the exact path
// and falls back to central differences of the gradient with step
// eps = 1e-4 * (1 + ||theta||) / ||v||  (zero v returns a zero vector).
ParamVector weighted_hvp(const Model& model, const Dataset& data,
                         std::span<const std::int64_t> ids,
                         std::span<const double> weights,
                         std::span<const double> theta,
                         std::span<const double> v,
                         HvpPath path = HvpPath::kAuto);
ParamVector weighted_hvp(const Model& model, const Dataset& data,
                         std::span<const double> gamma,
                         std::span<const double> theta,
                         std::span<const double> v,
                         HvpPath path = HvpPath::kAuto);

// Downstream objective J: mean instance loss over the evaluation set.
double downstream_loss(const Model& model, const Dataset& downstream,
                       std::span<const double> theta);
ParamVector downstream_grad(const Model& model, const Dataset& downstream,
                            std::span<const double> theta);

}  // namespace ocds
