#include "ocds/optim.hpp"

#include <cmath>
#include <string>

#include "ocds/io.hpp"
#include "ocds/rng.hpp"
#include "ocds/vec.hpp"

namespace ocds {

Trajectory::Trajectory(std::size_t param_count,
                       std::optional<std::filesystem::path> spill_dir)
    : param_count_(param_count), spill_dir_(std::move(spill_dir)) {
  if (spill_dir_) std::filesystem::create_directories(*spill_dir_);
}

void Trajectory::append_checkpoint(const ParamVector& theta) {
  if (theta.size() != param_count_) {
    throw ConfigError("checkpoint size mismatch: expected " +
                      std::to_string(param_count_) + ", got " +
                      std::to_string(theta.size()));
  }
  if (spill_dir_) {
    write_checkpoint(*spill_dir_ / checkpoint_filename(count_), theta);
  } else {
    memory_.push_back(theta);
  }
  ++count_;
}

ParamVector Trajectory::checkpoint(std::size_t t) const {
  if (t >= count_) {
    throw ConfigError("checkpoint index " + std::to_string(t) +
                      " out of range (have " + std::to_string(count_) + ")");
  }
  if (spill_dir_) return read_checkpoint(*spill_dir_ / checkpoint_filename(t));
  return memory_[t];
}

std::size_t Trajectory::num_checkpoints() const { return count_; }

ParamVector gd_step_from_grad(std::span<const double> theta,
                              std::span<const double> grad, double eta) {
  ParamVector next(theta.begin(), theta.end());
  axpy(-eta, grad, next);
  return next;
}

ParamVector gd_step(const Model& model, const Dataset& data,
                    std::span<const double> gamma, std::span<const double> theta,
                    double eta) {
  ParamVector g = weighted_grad(model, data, gamma, theta);
  return gd_step_from_grad(theta, g, eta);
}

ParamVector adam_step_from_grad(std::span<const double> theta,
                                std::span<const double> grad, AdamState& state) {
  const std::size_t d = theta.size();
  const double b1 = state.config.beta1;
  const double b2 = state.config.beta2;
  state.t += 1;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  ParamVector next(d);
  for (std::size_t j = 0; j < d; ++j) {
    state.m[j] = b1 * state.m[j] + (1.0 - b1) * grad[j];
    state.v[j] = b2 * state.v[j] + (1.0 - b2) * (grad[j] * grad[j]);
    double mhat = state.m[j] / bc1;
    double vhat = state.v[j] / bc2;
    next[j] = theta[j] - state.eta * mhat / (std::sqrt(vhat) + state.config.eps);
  }
  return next;
}

ParamVector adam_step(const Model& model, const Dataset& data,
                      std::span<const double> gamma,
                      std::span<const double> theta, AdamState& state) {
  ParamVector g = weighted_grad(model, data, gamma, theta);
  return adam_step_from_grad(theta, g, state);
}

namespace {

// On a non-finite aggregate gradient, identify one offending instance for
// the error message.
std::int64_t find_nonfinite_instance(const Model& model, const Dataset& data,
                                     std::span<const std::int64_t> ids,
                                     std::span<const double> theta) {
  ParamVector g(model.param_count());
  for (std::int64_t id : ids) {
    std::fill(g.begin(), g.end(), 0.0);
    model.accumulate_grad(data[static_cast<std::size_t>(id)], theta, 1.0, g);
    if (!all_finite(g)) return id;
  }
  return -1;
}

}  // namespace

Trajectory train(const Model& model, const Dataset& data,
                 std::span<const double> gamma, const ParamVector& theta0,
                 int steps, const OptimizerConfig& optimizer,
                 const BatchConfig& batch,
                 const std::optional<std::filesystem::path>& spill_dir) {
  const std::size_t n = data.size();
  if (n == 0) throw ConfigError("train: empty dataset");
  if (gamma.size() != n) {
    throw ConfigError("train: gamma size " + std::to_string(gamma.size()) +
                      " does not match dataset size " + std::to_string(n));
  }
  if (theta0.size() != model.param_count()) {
    throw ConfigError("train: theta0 size mismatch");
  }
  if (steps < 0) throw ConfigError("train: negative step count");
  for (std::size_t i = 0; i < n; ++i) model.check_instance(data[i]);

  const bool full_batch = batch.batch_size == 0 || batch.batch_size >= n;
  std::vector<std::int64_t> order;
  if (!full_batch) {
    order.resize(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<std::int64_t>(i);
    Rng rng(batch.seed);
    rng.shuffle(order);
  }
  const std::size_t num_chunks =
      full_batch ? 1 : (n + batch.batch_size - 1) / batch.batch_size;

  const bool is_adam = optimizer.kind == OptimizerKind::kAdam;
  AdamState state =
      AdamState::init(model.param_count(), optimizer.eta, optimizer.adam);

  Trajectory traj(model.param_count(), spill_dir);
  traj.append_checkpoint(theta0);
  ParamVector theta = theta0;
  std::vector<std::int64_t> all_ids;

  for (int t = 0; t < steps; ++t) {
    StepMeta meta;
    ParamVector g;
    if (full_batch) {
      g = weighted_grad(model, data, gamma, theta);
    } else {
      std::size_t chunk = static_cast<std::size_t>(t) % num_chunks;
      std::size_t lo = chunk * batch.batch_size;
      std::size_t hi = std::min(lo + batch.batch_size, n);
      meta.batch_ids.assign(order.begin() + lo, order.begin() + hi);
      std::vector<double> weights(meta.batch_ids.size());
      double rescale = static_cast<double>(n) / static_cast<double>(hi - lo);
      for (std::size_t i = 0; i < meta.batch_ids.size(); ++i) {
        weights[i] = gamma[static_cast<std::size_t>(meta.batch_ids[i])] * rescale;
      }
      g = weighted_grad(model, data, meta.batch_ids, weights, theta);
    }
    if (!all_finite(g)) {
      std::span<const std::int64_t> ids;
      if (full_batch) {
        if (all_ids.empty()) {
          all_ids.resize(n);
          for (std::size_t i = 0; i < n; ++i) all_ids[i] = static_cast<std::int64_t>(i);
        }
        ids = all_ids;
      } else {
        ids = meta.batch_ids;
      }
      std::int64_t bad = find_nonfinite_instance(model, data, ids, theta);
      throw NumericalError("non-finite gradient at training step " +
                           std::to_string(t) + " (instance " +
                           std::to_string(bad) + ")");
    }
    if (is_adam) {
      theta = adam_step_from_grad(theta, g, state);
      const double bc1 = 1.0 - std::pow(state.config.beta1,
                                        static_cast<double>(state.t));
      const double bc2 = 1.0 - std::pow(state.config.beta2,
                                        static_cast<double>(state.t));
      ParamVector mh(state.m.size()), vh(state.v.size());
      for (std::size_t j = 0; j < state.m.size(); ++j) {
        mh[j] = state.m[j] / bc1;
        vh[j] = state.v[j] / bc2;
      }
      traj.mhat.push_back(std::move(mh));
      traj.vhat.push_back(std::move(vh));
    } else {
      theta = gd_step_from_grad(theta, g, optimizer.eta);
    }
    traj.steps.push_back(std::move(meta));
    traj.append_checkpoint(theta);
  }
  return traj;
}

}  // namespace ocds
