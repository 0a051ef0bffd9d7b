// Forward training dynamics: plain gradient descent and Adam, with a
// recorded trajectory that the reverse (co-state) pass can replay exactly.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "ocds/model.hpp"
#include "ocds/types.hpp"

namespace ocds {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  ParamVector m;
  ParamVector v;
  std::int64_t t = 0;  // completed steps
  double eta = 1e-3;
  AdamConfig config;

  static AdamState init(std::size_t dim, double eta, const AdamConfig& config) {
    AdamState s;
    s.m.assign(dim, 0.0);
    s.v.assign(dim, 0.0);
    s.eta = eta;
    s.config = config;
    return s;
  }
};

enum class OptimizerKind { kGd, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kGd;
  double eta = 0.008;
  AdamConfig adam;
};

// Batch schedule. batch_size 0 (or >= dataset size) means full batch.
// Mini-batch mode shuffles ids once per train() call with the given seed and
// walks the order in contiguous chunks, reusing it across epochs; batch
// weights are the restricted gamma entries rescaled by |D| / |B|.
struct BatchConfig {
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
};

// Per-step record. Empty batch_ids means the step used the full dataset.
struct StepMeta {
  std::vector<std::int64_t> batch_ids;
};

// Checkpoints theta_0..theta_T plus per-step metadata. With a spill
// directory, checkpoints go to disk ("ckpt_%06d.bin") instead of memory;
// reads return bit-identical vectors either way. Adam runs also record the
// bias-corrected moments (mhat[t], vhat[t] belong to step t -> t+1).
class Trajectory {
 public:
  Trajectory() = default;
  Trajectory(std::size_t param_count,
             std::optional<std::filesystem::path> spill_dir);

  void append_checkpoint(const ParamVector& theta);
  ParamVector checkpoint(std::size_t t) const;
  std::size_t num_checkpoints() const;
  // T, the number of completed steps.
  std::size_t num_steps() const { return steps.size(); }
  std::size_t param_count() const { return param_count_; }

  std::vector<StepMeta> steps;
  std::vector<ParamVector> mhat;
  std::vector<ParamVector> vhat;

 private:
  std::size_t param_count_ = 0;
  std::optional<std::filesystem::path> spill_dir_;
  std::vector<ParamVector> memory_;
  std::size_t count_ = 0;
};

// theta - eta * grad of the gamma-weighted loss (full batch).
ParamVector gd_step(const Model& model, const Dataset& data,
                    std::span<const double> gamma, std::span<const double> theta,
                    double eta);
ParamVector gd_step_from_grad(std::span<const double> theta,
                              std::span<const double> grad, double eta);

// Standard bias-corrected Adam. Mutates state (moments and step count).
ParamVector adam_step(const Model& model, const Dataset& data,
                      std::span<const double> gamma,
                      std::span<const double> theta, AdamState& state);
ParamVector adam_step_from_grad(std::span<const double> theta,
                                std::span<const double> grad, AdamState& state);

// Runs `steps` optimizer steps from theta0 and records every checkpoint.
// Throws NumericalError (naming the step and offending instance) if a
// gradient turns non-finite.
Trajectory train(const Model& model, const Dataset& data,
                 std::span<const double> gamma, const ParamVector& theta0,
                 int steps, const OptimizerConfig& optimizer,
                 const BatchConfig& batch = {},
                 const std::optional<std::filesystem::path>& spill_dir = {});

}  // namespace ocds
