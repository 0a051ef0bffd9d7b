#include "ocds/scaling.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "json.hpp"
#include "ocds/rng.hpp"
#include "ocds/vec.hpp"

namespace ocds {
namespace {

double huber(double r, double delta) {
  double a = std::abs(r);
  if (a <= delta) return 0.5 * r * r;
  return delta * (a - 0.5 * delta);
}

double huber_derivative(double r, double delta) {
  if (r > delta) return delta;
  if (r < -delta) return -delta;
  return r;
}

// Least squares y ~ c0 + c1 * u. Returns false when the system is singular.
bool line_fit(std::span<const double> u, std::span<const double> y, double* c0,
              double* c1) {
  const double n = static_cast<double>(u.size());
  double su = 0.0, suu = 0.0, sy = 0.0, suy = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    su += u[i];
    suu += u[i] * u[i];
    sy += y[i];
    suy += u[i] * y[i];
  }
  double det = n * suu - su * su;
  if (std::abs(det) < 1e-30 || !std::isfinite(det)) return false;
  *c1 = (n * suy - su * sy) / det;
  *c0 = (sy - *c1 * su) / n;
  return true;
}

struct CurveEval {
  double sse = std::numeric_limits<double>::infinity();
  double intercept = 0.0;
  double coef = 0.0;
};

// Best (intercept, coef) for y ~ intercept + coef * x^-exponent.
CurveEval eval_exponent(std::span<const double> x, std::span<const double> y,
                        double exponent) {
  std::vector<double> u(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) u[i] = std::pow(x[i], -exponent);
  CurveEval e;
  double c0 = 0.0, c1 = 0.0;
  if (!line_fit(u, y, &c0, &c1)) return e;
  double sse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double r = c0 + c1 * u[i] - y[i];
    sse += r * r;
  }
  e.sse = sse;
  e.intercept = c0;
  e.coef = c1;
  return e;
}

struct PowerFit3 {
  double intercept = 0.0;
  double coef = 0.0;
  double exponent = 0.0;
  double rmse = 0.0;
  bool ok = false;
};

// y ~ intercept + coef * x^-exponent via a coarse exponent grid plus
// golden-section refinement.
PowerFit3 fit_power_curve(std::span<const double> x, std::span<const double> y,
                          double lo, double hi) {
  constexpr int kGrid = 60;
  double best_e = lo;
  double best_sse = std::numeric_limits<double>::infinity();
  for (int i = 0; i < kGrid; ++i) {
    double e = lo * std::pow(hi / lo, static_cast<double>(i) / (kGrid - 1));
    CurveEval ev = eval_exponent(x, y, e);
    if (ev.sse < best_sse) {
      best_sse = ev.sse;
      best_e = e;
    }
  }
  double ratio = std::pow(hi / lo, 1.0 / (kGrid - 1));
  double a = std::max(lo, best_e / ratio);
  double b = std::min(hi, best_e * ratio);
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - gr * (b - a);
  double d = a + gr * (b - a);
  double fc = eval_exponent(x, y, c).sse;
  double fd = eval_exponent(x, y, d).sse;
  for (int it = 0; it < 80 && (b - a) > 1e-12 * (1.0 + b); ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - gr * (b - a);
      fc = eval_exponent(x, y, c).sse;
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + gr * (b - a);
      fd = eval_exponent(x, y, d).sse;
    }
  }
  double e = 0.5 * (a + b);
  CurveEval ev = eval_exponent(x, y, e);
  if (eval_exponent(x, y, best_e).sse < ev.sse) {
    e = best_e;
    ev = eval_exponent(x, y, e);
  }
  PowerFit3 fit;
  if (!std::isfinite(ev.sse)) return fit;
  fit.intercept = ev.intercept;
  fit.coef = ev.coef;
  fit.exponent = e;
  fit.rmse = std::sqrt(ev.sse / static_cast<double>(x.size()));
  fit.ok = true;
  return fit;
}

struct LsePoint {
  double log_n;
  double log_d;
  double log_l;
};

using Vec5 = Eigen::Matrix<double, 5, 1>;
using Mat5 = Eigen::Matrix<double, 5, 5>;

double lse_objective(const Vec5& p, std::span<const LsePoint> pts, double delta,
                     Vec5* grad) {
  // p = (a, b, e, alpha, beta)
  if (grad) grad->setZero();
  double total = 0.0;
  for (const auto& pt : pts) {
    double z1 = p[0] - p[3] * pt.log_n;
    double z2 = p[1] - p[4] * pt.log_d;
    double z3 = p[2];
    double m = std::max(z1, std::max(z2, z3));
    double e1 = std::exp(z1 - m);
    double e2 = std::exp(z2 - m);
    double e3 = std::exp(z3 - m);
    double zsum = e1 + e2 + e3;
    double lse = m + std::log(zsum);
    double r = lse - pt.log_l;
    total += huber(r, delta);
    if (grad) {
      double psi = huber_derivative(r, delta);
      double p1 = e1 / zsum;
      double p2 = e2 / zsum;
      double p3 = e3 / zsum;
      (*grad)[0] += psi * p1;
      (*grad)[1] += psi * p2;
      (*grad)[2] += psi * p3;
      (*grad)[3] += psi * p1 * (-pt.log_n);
      (*grad)[4] += psi * p2 * (-pt.log_d);
    }
  }
  return total;
}

std::vector<LsePoint> to_log_points(std::span<const LossPoint> points) {
  std::vector<LsePoint> pts;
  pts.reserve(points.size());
  for (const auto& p : points) {
    if (!(p.n > 0.0 && p.d > 0.0 && p.loss > 0.0)) {
      throw ConfigError("scaling fit: N, D, L must be positive");
    }
    pts.push_back({std::log(p.n), std::log(p.d), std::log(p.loss)});
  }
  return pts;
}

// Two-stage initialization: per-N data curves give (E'_N, B0_N, beta0_N),
// then the N dependence of E'_N gives (E0, A0, alpha0).
Vec5 staged_init(std::span<const LossPoint> points) {
  std::map<double, std::vector<LossPoint>> groups;
  for (const auto& p : points) groups[p.n].push_back(p);

  std::vector<double> ns, eprimes, b0s, beta0s;
  for (auto& [n, group] : groups) {
    if (group.size() < 3) continue;
    std::vector<double> d, l;
    for (const auto& p : group) {
      d.push_back(p.d);
      l.push_back(p.loss);
    }
    PowerFit3 f = fit_power_curve(d, l, 0.05, 2.5);
    if (!f.ok || f.coef <= 0.0 || f.intercept <= 0.0) continue;
    ns.push_back(n);
    eprimes.push_back(f.intercept);
    b0s.push_back(f.coef);
    beta0s.push_back(f.exponent);
  }

  Vec5 init;
  if (ns.size() >= 3) {
    PowerFit3 stage2 = fit_power_curve(ns, eprimes, 0.05, 2.5);
    if (stage2.ok && stage2.coef > 0.0 && stage2.intercept > 0.0) {
      double mean_b0 = 0.0, mean_beta0 = 0.0;
      for (double b : b0s) mean_b0 += b;
      for (double b : beta0s) mean_beta0 += b;
      mean_b0 /= static_cast<double>(b0s.size());
      mean_beta0 /= static_cast<double>(beta0s.size());
      init[0] = std::log(stage2.coef);       // a = log A0
      init[1] = std::log(mean_b0);           // b = log B0
      init[2] = std::log(stage2.intercept);  // e = log E0
      init[3] = stage2.exponent;             // alpha0
      init[4] = mean_beta0;                  // beta0
      return init;
    }
  }

  // Fallback when the staged fits are unusable: scale-aware heuristics.
  double min_l = std::numeric_limits<double>::infinity();
  double max_l = 0.0;
  for (const auto& p : points) {
    min_l = std::min(min_l, p.loss);
    max_l = std::max(max_l, p.loss);
  }
  init[2] = std::log(0.8 * min_l);
  init[3] = 0.4;
  init[4] = 0.4;
  double mid_log_n = std::log(points.front().n);
  double mid_log_d = std::log(points.front().d);
  init[0] = std::log(std::max(max_l - min_l, 1e-3)) + init[3] * mid_log_n;
  init[1] = std::log(std::max(max_l - min_l, 1e-3)) + init[4] * mid_log_d;
  return init;
}

struct MinimizeResult {
  double f = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Quasi-Newton descent with Armijo backtracking. Restarts with a fresh
// curvature model whenever a round stalls while the objective is still
// improving, which rescues stale Hessian approximations near Huber kinks.
MinimizeResult minimize_lse(Vec5& x, std::span<const LsePoint> pts, double delta,
                            int max_iterations, double objective_tol) {
  MinimizeResult res;
  Vec5 g;
  double f = lse_objective(x, pts, delta, &g);
  int iter = 0;
  for (int round = 0; round < 20 && iter < max_iterations; ++round) {
    const double f_round = f;
    Mat5 h = Mat5::Identity();
    bool tol_exit = false;
    for (; iter < max_iterations; ++iter) {
      if (g.cwiseAbs().maxCoeff() < 1e-12) {
        tol_exit = true;
        break;
      }
      Vec5 p = -(h * g);
      double slope = g.dot(p);
      if (slope >= 0.0) {  // reset a broken curvature model
        h = Mat5::Identity();
        p = -g;
        slope = -g.squaredNorm();
      }
      double t = 1.0;
      double f_new = 0.0;
      Vec5 x_new;
      bool accepted = false;
      for (int ls = 0; ls < 60; ++ls) {
        x_new = x + t * p;
        f_new = lse_objective(x_new, pts, delta, nullptr);
        if (std::isfinite(f_new) && f_new <= f + 1e-4 * t * slope) {
          accepted = true;
          break;
        }
        t *= 0.5;
      }
      if (!accepted) break;
      Vec5 g_new;
      lse_objective(x_new, pts, delta, &g_new);
      Vec5 s = x_new - x;
      Vec5 y = g_new - g;
      double sy = s.dot(y);
      if (sy > 1e-12 * s.norm() * y.norm()) {
        double rho = 1.0 / sy;
        Mat5 i_m = Mat5::Identity();
        h = (i_m - rho * s * y.transpose()) * h *
                (i_m - rho * y * s.transpose()) +
            rho * s * s.transpose();
      }
      double df = f - f_new;
      x = x_new;
      g = g_new;
      f = f_new;
      if (df >= 0.0 && df < objective_tol) {
        ++iter;
        tol_exit = true;
        break;
      }
    }
    res.converged = tol_exit;
    if (f_round - f < objective_tol) break;
  }
  res.f = f;
  res.iterations = iter;
  return res;
}

}  // namespace

double predict_loss(const ScalingFit& fit, double n, double d) {
  if (!(n > 0.0 && d > 0.0)) {
    throw ConfigError("predict_loss: N and D must be positive");
  }
  return fit.e_irr + fit.a_coef / std::pow(n, fit.alpha) +
         fit.b_coef / std::pow(d, fit.beta);
}

double huber_lse_objective(const LogParams& p, std::span<const LossPoint> points,
                           double delta) {
  if (!(delta > 0.0)) throw ConfigError("scaling fit: delta must be > 0");
  std::vector<LsePoint> pts = to_log_points(points);
  Vec5 v;
  for (int i = 0; i < 5; ++i) v[i] = p[static_cast<std::size_t>(i)];
  return lse_objective(v, pts, delta, nullptr);
}

DataCurveFit fit_data_curve(std::span<const LossPoint> points_same_n) {
  if (points_same_n.size() < 3) {
    throw ConfigError("data curve fit needs at least 3 points");
  }
  std::vector<double> d, l;
  for (const auto& p : points_same_n) {
    if (!(p.d > 0.0 && p.loss > 0.0)) {
      throw ConfigError("data curve fit: D and L must be positive");
    }
    d.push_back(p.d);
    l.push_back(p.loss);
  }
  std::vector<double> unique_d = d;
  std::sort(unique_d.begin(), unique_d.end());
  unique_d.erase(std::unique(unique_d.begin(), unique_d.end()), unique_d.end());
  if (unique_d.size() < 3) {
    throw ConfigError("data curve fit needs at least 3 distinct D values");
  }
  PowerFit3 f = fit_power_curve(d, l, 0.05, 2.5);
  if (!f.ok) throw NumericalError("data curve fit failed");
  DataCurveFit out;
  out.e_prime = f.intercept;
  out.b0 = f.coef;
  out.beta0 = f.exponent;
  out.rmse = f.rmse;
  return out;
}

ScalingFit fit_scaling_law(std::span<const LossPoint> points,
                           const ScalingFitOptions& options) {
  if (points.size() < 5) {
    throw ConfigError("scaling fit needs at least 5 points");
  }
  if (!(options.delta > 0.0)) throw ConfigError("scaling fit: delta must be > 0");
  std::vector<LsePoint> pts = to_log_points(points);

  const Vec5 x_staged = staged_init(points);
  Vec5 x = x_staged;
  if (options.init_jitter != 0.0) {
    Rng rng(options.seed);
    for (int i = 0; i < 5; ++i) {
      double u = rng.next_unit_open();
      x[i] *= 1.0 + options.init_jitter * (2.0 * u - 1.0);
    }
  }

  const double f_init = lse_objective(x, pts, options.delta, nullptr);

  // Each start gets a direct descent plus a Huber continuation pass: the
  // tight band leaves most residuals on the linear branch where the surface
  // is riddled with shallow basins, so minimizing with a wide quadratic band
  // first and polishing at the target band escapes them.
  auto refine = [&](Vec5& xs) {
    Vec5 xd = xs;
    MinimizeResult rd = minimize_lse(xd, pts, options.delta,
                                     options.max_iterations, options.objective_tol);
    if (options.delta < 0.1 && options.max_iterations > 0) {
      Vec5 xc = xs;
      MinimizeResult smooth = minimize_lse(xc, pts, 0.1, options.max_iterations,
                                           options.objective_tol);
      MinimizeResult rc = minimize_lse(xc, pts, options.delta,
                                       options.max_iterations, options.objective_tol);
      rc.iterations += smooth.iterations;
      if (rc.f < rd.f) {
        xs = xc;
        return rc;
      }
    }
    xs = xd;
    return rd;
  };

  // Multi-start: the requested (possibly jittered) initialization, always,
  // plus the deterministic staged initialization as a fallback basin.
  Vec5 best = x;
  MinimizeResult res = refine(best);
  if (options.init_jitter != 0.0 && options.max_iterations > 0) {
    Vec5 alt = x_staged;
    MinimizeResult r_alt = refine(alt);
    if (r_alt.f < res.f) {
      best = alt;
      res = r_alt;
    }
  }
  if (res.f > f_init) throw NumericalError("scaling fit: objective increased");

  ScalingFit fit;
  fit.a_coef = std::exp(best[0]);
  fit.b_coef = std::exp(best[1]);
  fit.e_irr = std::exp(best[2]);
  fit.alpha = best[3];
  fit.beta = best[4];
  fit.objective = res.f;
  fit.iterations = res.iterations;
  fit.converged = res.converged;
  return fit;
}

double compute_auc(std::span<const double> losses) {
  if (losses.empty()) throw ConfigError("compute_auc: empty curve");
  return stable_sum(losses);
}

PowerLawFit fit_reducible_power_law(std::span<const double> losses,
                                    std::size_t warmup) {
  if (losses.size() < warmup + 3) {
    throw ConfigError("power law fit needs at least 3 points after warmup");
  }
  std::vector<double> t, y;
  for (std::size_t i = warmup; i < losses.size(); ++i) {
    t.push_back(static_cast<double>(i + 1));
    y.push_back(losses[i]);
  }
  PowerLawFit fit;
  constexpr double kLo = 0.01, kHi = 3.0;
  PowerFit3 f = fit_power_curve(t, y, kLo, kHi);
  if (!f.ok) {
    fit.flagged = true;
    fit.note = "singular fit";
    return fit;
  }
  fit.c_coef = f.coef;
  fit.exponent = f.exponent;
  fit.irreducible = f.intercept;
  fit.rmse = f.rmse;
  double mean_y = 0.0;
  for (double v : y) mean_y += v;
  mean_y /= static_cast<double>(y.size());
  if (f.coef <= 0.0) {
    fit.flagged = true;
    fit.note = "curve does not decay";
  } else if (f.exponent <= kLo * 1.05 || f.exponent >= kHi * 0.98) {
    fit.flagged = true;
    fit.note = "exponent at search boundary";
  } else if (mean_y > 0.0 && fit.rmse > 0.05 * mean_y) {
    fit.flagged = true;
    fit.note = "poor fit (rmse above 5% of mean loss)";
  }
  return fit;
}

double reducible_auc(const PowerLawFit& fit, double t0, double t1) {
  if (!(t0 > 0.0 && t1 >= t0)) {
    throw ConfigError("reducible_auc: need 0 < t0 <= t1");
  }
  double c = fit.exponent;
  if (std::abs(1.0 - c) < 1e-9) return fit.c_coef * std::log(t1 / t0);
  double p = 1.0 - c;
  return fit.c_coef / p * (std::pow(t1, p) - std::pow(t0, p));
}

FlopsBreakdown estimate_flops(const FlopsInputs& in) {
  for (double v : {in.pretrain_params, in.pretrain_tokens, in.proxy_params,
                   in.proxy_tokens, in.scorer_params, in.checkpoints}) {
    if (!(v >= 0.0)) throw ConfigError("estimate_flops: inputs must be >= 0");
  }
  FlopsBreakdown out;
  out.solver = 6.0 * in.proxy_params * in.pretrain_tokens +
               24.0 * in.checkpoints * in.proxy_params * in.proxy_tokens;
  out.scorer = 6.0 * in.scorer_params * in.proxy_tokens +
               2.0 * in.scorer_params * in.pretrain_tokens;
  out.selection = 0.0;
  out.pretraining = 6.0 * in.pretrain_params * in.pretrain_tokens;
  out.total = out.solver + out.scorer + out.selection + out.pretraining;
  return out;
}

void save_scaling_fit(const std::filesystem::path& path, const ScalingFit& fit) {
  nlohmann::json j;
  j["A"] = fit.a_coef;
  j["B"] = fit.b_coef;
  j["E"] = fit.e_irr;
  j["alpha"] = fit.alpha;
  j["beta"] = fit.beta;
  j["objective"] = fit.objective;
  j["iterations"] = fit.iterations;
  j["converged"] = fit.converged;
  write_text_file(path, j.dump(2) + "\n");
}

ScalingFit load_scaling_fit(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": invalid fit file: " + e.what());
  }
  ScalingFit fit;
  try {
    fit.a_coef = j.at("A").get<double>();
    fit.b_coef = j.at("B").get<double>();
    fit.e_irr = j.at("E").get<double>();
    fit.alpha = j.at("alpha").get<double>();
    fit.beta = j.at("beta").get<double>();
    fit.objective = j.at("objective").get<double>();
    fit.iterations = j.at("iterations").get<int>();
    fit.converged = j.at("converged").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": invalid fit file: " + e.what());
  }
  return fit;
}

}  // namespace ocds
