#include "ocds/oracle.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "ocds/rng.hpp"
#include "ocds/vec.hpp"

namespace ocds {
namespace {

std::uint64_t auc_config_digest(const Model& model, const Dataset& data,
                                std::span<const double> gamma,
                                const ParamVector& theta0,
                                const Dataset& downstream, int steps,
                                double eta) {
  std::string buf;
  auto put_u64 = [&buf](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  auto put_f64 = [&put_u64](double v) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, sizeof(bits));
    put_u64(bits);
  };
  put_u64(static_cast<std::uint64_t>(steps));
  put_f64(eta);
  put_u64(data.size());
  put_u64(downstream.size());
  put_u64(model.param_count());
  for (double g : gamma) put_f64(g);
  for (double t : theta0) put_f64(t);
  return fnv1a64(buf.data(), buf.size());
}

double run_auc(const Model& model, const Dataset& data,
               std::span<const double> gamma, const ParamVector& theta0,
               const Dataset& downstream, int steps, double eta,
               const AdamConfig* adam) {
  ParamVector theta = theta0;
  AdamState state;
  if (adam) state = AdamState::init(theta.size(), eta, *adam);
  double total = 0.0;
  for (int t = 0; t < steps; ++t) {
    ParamVector g = weighted_grad(model, data, gamma, theta);
    if (adam) {
      theta = adam_step_from_grad(theta, g, state);
    } else {
      theta = gd_step_from_grad(theta, g, eta);
    }
    total += downstream_loss(model, downstream, theta);
  }
  return total;
}

std::vector<double> fd_gradient(const Model& model, const Dataset& data,
                                std::span<const double> gamma,
                                const ParamVector& theta0,
                                const Dataset& downstream, int steps, double eta,
                                const AdamConfig* adam, double h) {
  if (!(h > 0.0)) throw ConfigError("fd_gamma_gradient: h must be positive");
  std::vector<double> grad(gamma.size());
  std::vector<double> probe(gamma.begin(), gamma.end());
  for (std::size_t n = 0; n < gamma.size(); ++n) {
    probe[n] = gamma[n] + h;
    double up = run_auc(model, data, probe, theta0, downstream, steps, eta, adam);
    probe[n] = gamma[n] - h;
    double down = run_auc(model, data, probe, theta0, downstream, steps, eta, adam);
    probe[n] = gamma[n];
    grad[n] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace

AucValue auc_objective(const Model& model, const Dataset& data,
                       std::span<const double> gamma, const ParamVector& theta0,
                       const Dataset& downstream, int steps, double eta) {
  if (steps < 1) throw ConfigError("auc_objective: steps must be >= 1");
  AucValue out;
  out.value = run_auc(model, data, gamma, theta0, downstream, steps, eta, nullptr);
  out.config_digest =
      auc_config_digest(model, data, gamma, theta0, downstream, steps, eta);
  return out;
}

std::vector<double> fd_gamma_gradient(const Model& model, const Dataset& data,
                                      std::span<const double> gamma,
                                      const ParamVector& theta0,
                                      const Dataset& downstream, int steps,
                                      double eta, double h) {
  return fd_gradient(model, data, gamma, theta0, downstream, steps, eta, nullptr, h);
}

double auc_objective_adam(const Model& model, const Dataset& data,
                          std::span<const double> gamma,
                          const ParamVector& theta0, const Dataset& downstream,
                          int steps, double eta, const AdamConfig& adam) {
  if (steps < 1) throw ConfigError("auc_objective: steps must be >= 1");
  return run_auc(model, data, gamma, theta0, downstream, steps, eta, &adam);
}

std::vector<double> fd_gamma_gradient_adam(const Model& model,
                                           const Dataset& data,
                                           std::span<const double> gamma,
                                           const ParamVector& theta0,
                                           const Dataset& downstream, int steps,
                                           double eta, const AdamConfig& adam,
                                           double h) {
  return fd_gradient(model, data, gamma, theta0, downstream, steps, eta, &adam, h);
}

std::vector<double> brute_simplex_projection(std::span<const double> v) {
  const std::size_t d = v.size();
  if (d == 0 || d > 4) {
    throw ConfigError("brute_simplex_projection: dimension must be 1..4");
  }
  const double tol = 1e-12;
  std::vector<double> best;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::uint32_t mask = 1; mask < (1u << d); ++mask) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < d; ++i) {
      if (mask & (1u << i)) {
        sum += v[i];
        ++count;
      }
    }
    double tau = (sum - 1.0) / static_cast<double>(count);
    bool feasible = true;
    for (std::size_t i = 0; i < d && feasible; ++i) {
      if (mask & (1u << i)) {
        if (v[i] - tau < -tol) feasible = false;
      } else {
        if (v[i] - tau > tol) feasible = false;
      }
    }
    if (!feasible) continue;
    std::vector<double> w(d, 0.0);
    double dist = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      if (mask & (1u << i)) w[i] = std::max(v[i] - tau, 0.0);
      double diff = w[i] - v[i];
      dist += diff * diff;
    }
    if (dist < best_dist) {
      best_dist = dist;
      best = std::move(w);
    }
  }
  if (best.empty()) {
    throw NumericalError("brute_simplex_projection: no KKT point found");
  }
  return best;
}

}  // namespace ocds
