// Scaling-law fitting and compute accounting.
//
// The parametric form is L(N, D) = E + A / N^alpha + B / D^beta, fit in log
// space with a Huber loss over a log-sum-exp of the three terms. Training
// curves are summarized by a reducible power law L(t) = C / t^c + L_irr and
// its exact area integral.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ocds/io.hpp"
#include "ocds/types.hpp"

namespace ocds {

struct ScalingFit {
  double a_coef = 0.0;   // A
  double b_coef = 0.0;   // B
  double e_irr = 0.0;    // E
  double alpha = 0.0;
  double beta = 0.0;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
};

double predict_loss(const ScalingFit& fit, double n, double d);

// Parameters in log space: {a, b, e, alpha, beta} with A = exp(a) etc.
using LogParams = std::array<double, 5>;

double huber_lse_objective(const LogParams& p, std::span<const LossPoint> points,
                           double delta);

struct ScalingFitOptions {
  double delta = 1e-3;
  int max_iterations = 10000;
  double objective_tol = 1e-10;
  // Multiplicative jitter applied to the staged initialization in log space;
  // 0 keeps the deterministic init.
  double init_jitter = 0.0;
  std::uint64_t seed = 0;
};

// Two-stage initialization (per-N data curves, then the N dependence of
// their intercepts) followed by quasi-Newton refinement of the Huber-LSE
// objective. The refined objective never exceeds the initial one.
ScalingFit fit_scaling_law(std::span<const LossPoint> points,
                           const ScalingFitOptions& options = {});

// Single-N helper: L(D) = E' + B0 / D^beta0 by least squares.
struct DataCurveFit {
  double e_prime = 0.0;
  double b0 = 0.0;
  double beta0 = 0.0;
  double rmse = 0.0;
};
DataCurveFit fit_data_curve(std::span<const LossPoint> points_same_n);

// Discrete area under a per-step loss curve (plain sum; losses[i] is the
// value after step i+1).
double compute_auc(std::span<const double> losses);

struct PowerLawFit {
  double c_coef = 0.0;       // C
  double exponent = 0.0;     // c
  double irreducible = 0.0;  // L_irr
  double rmse = 0.0;
  bool flagged = false;
  std::string note;
};

// Fits L(t) = C / t^c + L_irr on losses with t > warmup (t is 1-based).
// Degenerate curves (non-decaying, boundary exponents) come back flagged.
PowerLawFit fit_reducible_power_law(std::span<const double> losses,
                                    std::size_t warmup = 0);

// Integral of the reducible term C * t^-c from t0 to t1.
double reducible_auc(const PowerLawFit& fit, double t0, double t1);

struct FlopsInputs {
  double pretrain_params = 0.0;   // N
  double pretrain_tokens = 0.0;   // D
  double proxy_params = 0.0;      // N_prx
  double proxy_tokens = 0.0;      // D_prx
  double scorer_params = 0.0;     // N_score
  double checkpoints = 0.0;       // M
};

struct FlopsBreakdown {
  double solver = 0.0;
  double scorer = 0.0;
  double selection = 0.0;
  double pretraining = 0.0;
  double total = 0.0;
};

// solver      = 6 * N_prx * D + 24 * M * N_prx * D_prx
// scorer      = 6 * N_score * D_prx + 2 * N_score * D
// selection   = 0
// pretraining = 6 * N * D
FlopsBreakdown estimate_flops(const FlopsInputs& in);

void save_scaling_fit(const std::filesystem::path& path, const ScalingFit& fit);
ScalingFit load_scaling_fit(const std::filesystem::path& path);

}  // namespace ocds
