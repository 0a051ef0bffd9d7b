// Maximum-principle data selection.
//
// The forward system is the recorded training trajectory; the reverse system
// propagates co-states from the final downstream gradient back through every
// step; the per-instance quality score is the accumulated inner product of
// co-states with instance gradients. A projected soft update on the simplex
// turns scores into data weights.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "ocds/model.hpp"
#include "ocds/optim.hpp"
#include "ocds/types.hpp"

namespace ocds {

struct SolverConfig {
  double eta = 0.008;        // inner learning rate
  double alpha = 1.0;        // outer (weight) update rate
  int inner_steps = 100;     // T
  int outer_epochs = 1;      // T_o
  int checkpoint_count = 5;  // M, used by the multi-checkpoint variant
  std::size_t batch_size = 256;  // 0 = full batch
  std::uint64_t seed = 0;
  HvpPath hvp_path = HvpPath::kAuto;
  int step_stride = 1;  // evaluate instance gradients every k-th step
  std::optional<std::filesystem::path> spill_dir;

  void validate() const;
};

// Euclidean projection onto the probability simplex. Exactly idempotent and
// exactly permutation-equivariant: inputs already on the simplex pass through
// unchanged, and the threshold is computed over value-sorted compensated
// partial sums so coordinate order cannot influence it.
std::vector<double> project_simplex(std::span<const double> v);

// True when gamma is non-negative and sums to 1 within tol.
bool is_on_simplex(std::span<const double> gamma, double tol = 1e-9);

// Co-states lambda_1..lambda_T; lambda_T equals the downstream gradient at
// theta_T and each reverse step subtracts eta * H_t lambda_{t+1}. lambda_0 is
// never formed (no score term consumes it).
struct CoStates {
  std::vector<ParamVector> lam;  // lam[i] = lambda_{i+1}

  const ParamVector& at(std::size_t t) const { return lam[t - 1]; }  // lambda_t
  std::size_t horizon() const { return lam.size(); }                 // T
};

CoStates reverse_inner(const Model& model, const Dataset& data,
                       std::span<const double> gamma, const Trajectory& traj,
                       const Dataset& downstream, double eta,
                       HvpPath path = HvpPath::kAuto);

// s_n = sum over steps t of lambda_{t+1}^T grad l(x_n, theta_t), evaluated
// for every instance regardless of which batch the step used. A stride k > 1
// visits t = 0, k, 2k, ... and scales each term by k.
std::vector<double> gamma_gradient(const Model& model, const Dataset& data,
                                   const Trajectory& traj, const CoStates& cs,
                                   int step_stride = 1);

// One full solve: repeat (train, reverse, score, projected soft update)
// outer_epochs times from uniform weights.
std::vector<double> pmp_solve(const Model& model, const Dataset& proxy,
                              const Dataset& downstream,
                              const ParamVector& theta0,
                              const SolverConfig& config);

// Adam-dynamics variant. The reverse pass propagates three co-state blocks
// (parameter, first-moment, second-moment); the score uses the parameter and
// first-moment blocks only.
struct AdamCoStates {
  std::vector<ParamVector> l1;  // [i] = Lambda^1_{i+1}
  std::vector<ParamVector> l2;
  std::vector<ParamVector> l3;
};

AdamCoStates reverse_inner_adam(const Model& model, const Dataset& data,
                                std::span<const double> gamma,
                                const Trajectory& traj,
                                const Dataset& downstream, double eta,
                                const AdamConfig& adam,
                                HvpPath path = HvpPath::kAuto,
                                bool track_second_moment = true);

// Gradient of the accumulated downstream loss wrt gamma (approximate: the
// second-moment channel is frozen). Unlike gamma_gradient, which returns
// quality scores, larger values here mark weights worth decreasing; the
// solver steps against this direction.
std::vector<double> gamma_gradient_adam(const Model& model, const Dataset& data,
                                        const Trajectory& traj,
                                        const AdamCoStates& cs, double eta,
                                        const AdamConfig& adam,
                                        int step_stride = 1);

std::vector<double> pmp_solve_adam(const Model& model, const Dataset& proxy,
                                   const Dataset& downstream,
                                   const ParamVector& theta0,
                                   const SolverConfig& config,
                                   const AdamConfig& adam);

// Efficient variant: run the solver once per pretraining checkpoint and
// average the resulting weight vectors.
std::vector<double> multi_checkpoint_scores(const Model& model,
                                            const Dataset& proxy,
                                            const Dataset& downstream,
                                            const std::vector<ParamVector>& checkpoints,
                                            const SolverConfig& config);

}  // namespace ocds
