// Independent ground-truth computations used by tests: the area-under-curve
// training objective evaluated by brute force, finite-difference gradients
// with respect to data weights, and an exhaustive small-dimension simplex
// projection. Nothing here shares code with the reverse-pass implementation.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ocds/model.hpp"
#include "ocds/optim.hpp"
#include "ocds/types.hpp"

namespace ocds {

struct AucValue {
  double value = 0.0;
  std::uint64_t config_digest = 0;
};

// A(gamma) = sum over t = 1..T of the downstream loss at theta_t, where the
// trajectory is T full-batch gradient-descent steps from theta0. The digest
// fingerprints (T, eta, sizes, theta0, gamma) so stored values can be tied to
// the configuration that produced them.
AucValue auc_objective(const Model& model, const Dataset& data,
                       std::span<const double> gamma, const ParamVector& theta0,
                       const Dataset& downstream, int steps, double eta);

// Central-difference dA/dgamma_n with free (unprojected) coordinates.
std::vector<double> fd_gamma_gradient(const Model& model, const Dataset& data,
                                      std::span<const double> gamma,
                                      const ParamVector& theta0,
                                      const Dataset& downstream, int steps,
                                      double eta, double h = 1e-5);

// Same objective and derivative under Adam dynamics.
double auc_objective_adam(const Model& model, const Dataset& data,
                          std::span<const double> gamma,
                          const ParamVector& theta0, const Dataset& downstream,
                          int steps, double eta, const AdamConfig& adam);
std::vector<double> fd_gamma_gradient_adam(const Model& model,
                                           const Dataset& data,
                                           std::span<const double> gamma,
                                           const ParamVector& theta0,
                                           const Dataset& downstream, int steps,
                                           double eta, const AdamConfig& adam,
                                           double h = 1e-5);

// Exhaustive KKT search over support sets; dimensions up to 4 only.
std::vector<double> brute_simplex_projection(std::span<const double> v);

}  // namespace ocds
