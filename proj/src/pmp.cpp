#include "ocds/pmp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "ocds/rng.hpp"
#include "ocds/vec.hpp"

namespace ocds {
namespace {

constexpr double kCoStateNormLimit = 1e12;

// Compensated running sum (Neumaier).
struct CompSum {
  double s = 0.0;
  double c = 0.0;

  void add(double x) {
    double t = s + x;
    if (std::abs(s) >= std::abs(x)) {
      c += (s - t) + x;
    } else {
      c += (x - t) + s;
    }
    s = t;
  }

  double value() const { return s + c; }
};

// (ids, weights) view of one recorded step; full-batch steps use the whole
// dataset with plain gamma weights.
struct StepBatch {
  std::vector<std::int64_t> ids;
  std::vector<double> weights;
};

StepBatch step_batch(const Dataset& data, std::span<const double> gamma,
                     const StepMeta& meta) {
  StepBatch b;
  if (meta.batch_ids.empty()) {
    b.ids.resize(data.size());
    std::iota(b.ids.begin(), b.ids.end(), std::int64_t{0});
    b.weights.assign(gamma.begin(), gamma.end());
    return b;
  }
  b.ids = meta.batch_ids;
  double rescale = static_cast<double>(data.size()) /
                   static_cast<double>(meta.batch_ids.size());
  b.weights.resize(b.ids.size());
  for (std::size_t i = 0; i < b.ids.size(); ++i) {
    b.weights[i] = gamma[static_cast<std::size_t>(b.ids[i])] * rescale;
  }
  return b;
}

void check_reverse_args(const Dataset& data, std::span<const double> gamma,
                        const Trajectory& traj) {
  if (gamma.size() != data.size()) {
    throw ConfigError("reverse pass: gamma size mismatch");
  }
  if (traj.num_steps() == 0) {
    throw ConfigError("reverse pass: trajectory has no steps");
  }
  if (traj.num_checkpoints() != traj.num_steps() + 1) {
    throw ConfigError("reverse pass: trajectory is missing checkpoints");
  }
}

void check_costate_norm(std::span<const double> lam, std::size_t t) {
  double n = norm2(lam);
  if (!std::isfinite(n) || n > kCoStateNormLimit) {
    throw NumericalError("co-state norm " + std::to_string(n) +
                         " diverged at reverse step " + std::to_string(t));
  }
}

std::vector<std::size_t> strided_steps(std::size_t horizon, int stride) {
  std::vector<std::size_t> ts;
  for (std::size_t t = 0; t < horizon; t += static_cast<std::size_t>(stride)) {
    ts.push_back(t);
  }
  return ts;
}

}  // namespace

void SolverConfig::validate() const {
  if (!(eta > 0.0)) throw ConfigError("solver: eta must be positive");
  if (!(alpha > 0.0)) throw ConfigError("solver: alpha must be positive");
  if (inner_steps < 1) throw ConfigError("solver: inner_steps must be >= 1");
  if (outer_epochs < 0) throw ConfigError("solver: outer_epochs must be >= 0");
  if (checkpoint_count < 1) throw ConfigError("solver: checkpoint_count must be >= 1");
  if (step_stride < 1) throw ConfigError("solver: step_stride must be >= 1");
}

bool is_on_simplex(std::span<const double> gamma, double tol) {
  if (gamma.empty()) return false;
  for (double g : gamma) {
    if (!(g >= 0.0)) return false;
  }
  return std::abs(stable_sum(gamma) - 1.0) <= tol;
}

std::vector<double> project_simplex(std::span<const double> v) {
  const std::size_t d = v.size();
  if (d == 0) throw ConfigError("project_simplex: empty input");
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericalError("project_simplex: non-finite input");
    }
  }

  // Already on the simplex: return unchanged so the map is idempotent.
  bool nonneg = true;
  for (double x : v) {
    if (x < 0.0) {
      nonneg = false;
      break;
    }
  }
  if (nonneg) {
    double s = stable_sum(v);
    double slack = 64.0 * std::numeric_limits<double>::epsilon() *
                   static_cast<double>(d);
    if (std::abs(s - 1.0) <= slack) {
      return std::vector<double>(v.begin(), v.end());
    }
  }

  // Threshold from value-sorted coordinates; sorting by value makes every
  // quantity below invariant to the input permutation.
  std::vector<double> u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<double>());

  CompSum prefix;
  double tau = 0.0;
  std::size_t rho = 0;
  std::vector<double> prefix_at(d);
  for (std::size_t k = 0; k < d; ++k) {
    prefix.add(u[k]);
    prefix_at[k] = prefix.value();
    double candidate = (prefix_at[k] - 1.0) / static_cast<double>(k + 1);
    if (u[k] - candidate > 0.0) {
      rho = k;
      tau = candidate;
    }
  }

  // Normalizer computed over the sorted values, then applied per coordinate.
  CompSum mass;
  for (std::size_t k = 0; k <= rho; ++k) {
    double w = u[k] - tau;
    if (w > 0.0) mass.add(w);
  }
  double total = mass.value();
  if (!(total > 0.0)) {
    throw NumericalError("project_simplex: degenerate threshold");
  }

  std::vector<double> out(d);
  for (std::size_t i = 0; i < d; ++i) {
    double w = v[i] - tau;
    out[i] = w > 0.0 ? w / total : 0.0;
  }
  return out;
}

CoStates reverse_inner(const Model& model, const Dataset& data,
                       std::span<const double> gamma, const Trajectory& traj,
                       const Dataset& downstream, double eta, HvpPath path) {
  check_reverse_args(data, gamma, traj);
  const std::size_t T = traj.num_steps();

  CoStates cs;
  cs.lam.resize(T);
  cs.lam[T - 1] = downstream_grad(model, downstream, traj.checkpoint(T));
  check_costate_norm(cs.lam[T - 1], T);

  for (std::size_t t = T - 1; t >= 1; --t) {
    ParamVector theta_t = traj.checkpoint(t);
    StepBatch batch = step_batch(data, gamma, traj.steps[t]);
    ParamVector h = weighted_hvp(model, data, batch.ids, batch.weights, theta_t,
                                 cs.lam[t], path);
    ParamVector jg = downstream_grad(model, downstream, theta_t);
    ParamVector& lam_t = cs.lam[t - 1];
    lam_t = cs.lam[t];
    for (std::size_t j = 0; j < lam_t.size(); ++j) {
      lam_t[j] += jg[j] - eta * h[j];
    }
    check_costate_norm(lam_t, t);
  }
  return cs;
}

std::vector<double> gamma_gradient(const Model& model, const Dataset& data,
                                   const Trajectory& traj, const CoStates& cs,
                                   int step_stride) {
  if (step_stride < 1) throw ConfigError("gamma_gradient: stride must be >= 1");
  const std::size_t T = traj.num_steps();
  if (cs.lam.size() != T) {
    throw ConfigError("gamma_gradient: co-state horizon mismatch");
  }
  const std::size_t n = data.size();
  std::vector<CompSum> acc(n);
  const double scale = static_cast<double>(step_stride);
  for (std::size_t t : strided_steps(T, step_stride)) {
    ParamVector theta_t = traj.checkpoint(t);
    const ParamVector& w = cs.lam[t];  // lambda_{t+1}
    for (std::size_t i = 0; i < n; ++i) {
      acc[i].add(scale * model.grad_dot(data[i], theta_t, w));
    }
  }
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = acc[i].value();
  return s;
}

std::vector<double> pmp_solve(const Model& model, const Dataset& proxy,
                              const Dataset& downstream,
                              const ParamVector& theta0,
                              const SolverConfig& config) {
  config.validate();
  if (proxy.empty()) throw ConfigError("pmp_solve: empty proxy set");
  for (std::size_t i = 0; i < downstream.size(); ++i) {
    model.check_instance(downstream[i]);
  }

  std::vector<double> gamma = uniform_weights(proxy.size());
  OptimizerConfig opt;
  opt.kind = OptimizerKind::kGd;
  opt.eta = config.eta;

  for (int epoch = 0; epoch < config.outer_epochs; ++epoch) {
    BatchConfig batch{config.batch_size,
                      stage_seed(config.seed, "outer" + std::to_string(epoch))};
    Trajectory traj = train(model, proxy, gamma, theta0, config.inner_steps, opt,
                            batch, config.spill_dir);
    CoStates cs = reverse_inner(model, proxy, gamma, traj, downstream,
                                config.eta, config.hvp_path);
    std::vector<double> s =
        gamma_gradient(model, proxy, traj, cs, config.step_stride);
    for (std::size_t i = 0; i < gamma.size(); ++i) {
      gamma[i] += config.alpha * s[i];
    }
    gamma = project_simplex(gamma);
  }
  return gamma;
}

AdamCoStates reverse_inner_adam(const Model& model, const Dataset& data,
                                std::span<const double> gamma,
                                const Trajectory& traj,
                                const Dataset& downstream, double eta,
                                const AdamConfig& adam, HvpPath path,
                                bool track_second_moment) {
  check_reverse_args(data, gamma, traj);
  const std::size_t T = traj.num_steps();
  if (traj.mhat.size() != T || traj.vhat.size() != T) {
    throw ConfigError("reverse pass: trajectory lacks recorded Adam moments");
  }
  const std::size_t d = traj.param_count();

  AdamCoStates cs;
  cs.l1.resize(T);
  cs.l2.resize(T);
  cs.l3.resize(T);
  cs.l1[T - 1] = downstream_grad(model, downstream, traj.checkpoint(T));
  cs.l2[T - 1].assign(d, 0.0);
  cs.l3[T - 1].assign(d, 0.0);
  check_costate_norm(cs.l1[T - 1], T);

  for (std::size_t t = T - 1; t >= 1; --t) {
    // Coefficients of step t -> t+1 (exponent t+1, moments mhat/vhat[t]).
    const double p1 = std::pow(adam.beta1, static_cast<double>(t + 1));
    const double p2 = std::pow(adam.beta2, static_cast<double>(t + 1));
    const double c1 = (1.0 - adam.beta1) / (1.0 - p1);
    const double cm = adam.beta1 / (1.0 - p1);
    const double cv = adam.beta2 / (1.0 - p2);
    const ParamVector& mh = traj.mhat[t];
    const ParamVector& vh = traj.vhat[t];
    const ParamVector& l1_next = cs.l1[t];
    const ParamVector& l2_next = cs.l2[t];
    const ParamVector& l3_next = cs.l3[t];

    ParamVector theta_t = traj.checkpoint(t);
    ParamVector jg = downstream_grad(model, downstream, theta_t);

    // u = Lambda^1_{t+1} / (sqrt(vhat) + eps); one HVP covers both the
    // -eta*u and +Lambda^2 contributions.
    ParamVector u(d), hin(d);
    for (std::size_t j = 0; j < d; ++j) {
      u[j] = l1_next[j] / (std::sqrt(vh[j]) + adam.eps);
      hin[j] = l2_next[j] - eta * u[j];
    }
    StepBatch batch = step_batch(data, gamma, traj.steps[t]);
    ParamVector h = weighted_hvp(model, data, batch.ids, batch.weights, theta_t,
                                 hin, path);

    ParamVector& l1 = cs.l1[t - 1];
    ParamVector& l2 = cs.l2[t - 1];
    ParamVector& l3 = cs.l3[t - 1];
    l1.resize(d);
    l2.resize(d);
    l3.assign(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
      l1[j] = jg[j] + l1_next[j] + c1 * h[j];
      l2[j] = cm * (l2_next[j] - eta * u[j]);
    }
    if (track_second_moment) {
      for (std::size_t j = 0; j < d; ++j) {
        double root = std::sqrt(vh[j]);
        double denom = root + adam.eps;
        double pull = root > 0.0
                          ? eta * (mh[j] * l1_next[j]) / (root * denom * denom)
                          : 0.0;
        l3[j] = cv * (pull + l3_next[j]);
      }
    }
    check_costate_norm(l1, t);
  }
  return cs;
}

std::vector<double> gamma_gradient_adam(const Model& model, const Dataset& data,
                                        const Trajectory& traj,
                                        const AdamCoStates& cs, double eta,
                                        const AdamConfig& adam,
                                        int step_stride) {
  if (step_stride < 1) throw ConfigError("gamma_gradient: stride must be >= 1");
  const std::size_t T = traj.num_steps();
  if (cs.l1.size() != T || cs.l2.size() != T) {
    throw ConfigError("gamma_gradient: co-state horizon mismatch");
  }
  if (traj.vhat.size() != T) {
    throw ConfigError("gamma_gradient: trajectory lacks recorded Adam moments");
  }
  const std::size_t n = data.size();
  const std::size_t d = traj.param_count();
  std::vector<CompSum> acc(n);
  const double scale = static_cast<double>(step_stride);
  ParamVector omega(d);
  for (std::size_t t : strided_steps(T, step_stride)) {
    const double p1 = std::pow(adam.beta1, static_cast<double>(t + 1));
    const double c1 = (1.0 - adam.beta1) / (1.0 - p1);
    const ParamVector& vh = traj.vhat[t];
    const ParamVector& l1 = cs.l1[t];
    const ParamVector& l2 = cs.l2[t];
    for (std::size_t j = 0; j < d; ++j) {
      omega[j] = c1 * (l2[j] - eta * l1[j] / (std::sqrt(vh[j]) + adam.eps));
    }
    ParamVector theta_t = traj.checkpoint(t);
    for (std::size_t i = 0; i < n; ++i) {
      acc[i].add(scale * model.grad_dot(data[i], theta_t, omega));
    }
  }
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = acc[i].value();
  return s;
}

std::vector<double> pmp_solve_adam(const Model& model, const Dataset& proxy,
                                   const Dataset& downstream,
                                   const ParamVector& theta0,
                                   const SolverConfig& config,
                                   const AdamConfig& adam) {
  config.validate();
  if (proxy.empty()) throw ConfigError("pmp_solve: empty proxy set");
  for (std::size_t i = 0; i < downstream.size(); ++i) {
    model.check_instance(downstream[i]);
  }

  std::vector<double> gamma = uniform_weights(proxy.size());
  OptimizerConfig opt;
  opt.kind = OptimizerKind::kAdam;
  opt.eta = config.eta;
  opt.adam = adam;

  for (int epoch = 0; epoch < config.outer_epochs; ++epoch) {
    BatchConfig batch{config.batch_size,
                      stage_seed(config.seed, "outer" + std::to_string(epoch))};
    Trajectory traj = train(model, proxy, gamma, theta0, config.inner_steps, opt,
                            batch, config.spill_dir);
    AdamCoStates cs = reverse_inner_adam(model, proxy, gamma, traj, downstream,
                                         config.eta, adam, config.hvp_path);
    std::vector<double> s = gamma_gradient_adam(model, proxy, traj, cs,
                                                config.eta, adam,
                                                config.step_stride);
    for (std::size_t i = 0; i < gamma.size(); ++i) {
      gamma[i] -= config.alpha * s[i];
    }
    gamma = project_simplex(gamma);
  }
  return gamma;
}

std::vector<double> multi_checkpoint_scores(const Model& model,
                                            const Dataset& proxy,
                                            const Dataset& downstream,
                                            const std::vector<ParamVector>& checkpoints,
                                            const SolverConfig& config) {
  if (checkpoints.empty()) {
    throw ConfigError("multi_checkpoint_scores: no checkpoints");
  }
  const double inv = 1.0 / static_cast<double>(checkpoints.size());
  std::vector<double> mean(proxy.size(), 0.0);
  for (const ParamVector& theta0 : checkpoints) {
    std::vector<double> gamma = pmp_solve(model, proxy, downstream, theta0, config);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += inv * gamma[i];
  }
  return mean;
}

}  // namespace ocds
