#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"
#include "fixtures.hpp"
#include "ocds/io.hpp"
#include "ocds/rng.hpp"
#include "ocds/scaling.hpp"
#include "ocds/types.hpp"

using namespace ocds;

namespace {

const ScalingFit kConventional{8.09e2, 7.50e5, 2.829, 0.397, 0.651, 0.0, 0, true};
const ScalingFit kSelected{6.21e3, 1.76e5, 2.829, 0.518, 0.585, 0.0, 0, true};

std::vector<LossPoint> synthetic_surface(const ScalingFit& truth) {
  std::vector<LossPoint> pts;
  const std::vector<double> ns{160e6, 470e6, 1e9, 1.7e9};
  for (double n : ns) {
    for (int i = 0; i < 20; ++i) {
      double d = 2e9 * std::pow(1.35, i);
      pts.push_back({n, d, predict_loss(truth, n, d)});
    }
  }
  return pts;
}

double rel_err(double got, double want) { return std::abs(got - want) / std::abs(want); }

}  // namespace

TEST_CASE("predicted losses reproduce the published extrapolation table") {
  CHECK(predict_loss(kConventional, 175e9, 300e9) == doctest::Approx(2.882).epsilon(7e-4));
  CHECK(predict_loss(kSelected, 175e9, 300e9) == doctest::Approx(2.872).epsilon(7e-4));
  CHECK(predict_loss(kConventional, 6.7e9, 1e12) == doctest::Approx(2.942).epsilon(7e-4));
  CHECK(predict_loss(kSelected, 6.7e9, 1e12) == doctest::Approx(2.896).epsilon(7e-4));
}

TEST_CASE("predicted loss decreases toward the irreducible floor") {
  double base = predict_loss(kConventional, 1e9, 1e10);
  CHECK(predict_loss(kConventional, 2e9, 1e10) < base);
  CHECK(predict_loss(kConventional, 1e9, 2e10) < base);
  CHECK(predict_loss(kConventional, 1e15, 1e18) ==
        doctest::Approx(kConventional.e_irr).epsilon(1e-3));
  CHECK(predict_loss(kConventional, 1e9, 1e10) > kConventional.e_irr);
}

TEST_CASE("huber objective closed cases") {
  // Single point at N = D = 1 collapses the log-sum-exp to known logs.
  LogParams p{std::log(2.0), std::log(3.0), std::log(1.0), 0.4, 0.6};
  double predicted = 2.0 + 3.0 + 1.0;
  std::vector<LossPoint> exact{{1.0, 1.0, predicted}};
  CHECK(huber_lse_objective(p, exact, 1e-3) == doctest::Approx(0.0).epsilon(1e-15));

  // Small residual r stays in the quadratic regime: 0.5 r^2.
  const double delta = 1e-3;
  double r = 5e-4;
  std::vector<LossPoint> close{{1.0, 1.0, predicted * std::exp(r)}};
  CHECK(huber_lse_objective(p, close, delta) ==
        doctest::Approx(0.5 * r * r).epsilon(1e-9));

  // Residual 2 delta lands in the linear regime: delta (|r| - delta / 2).
  double r2 = 2.0 * delta;
  std::vector<LossPoint> far{{1.0, 1.0, predicted * std::exp(r2)}};
  CHECK(huber_lse_objective(p, far, delta) ==
        doctest::Approx(delta * (r2 - delta / 2.0)).epsilon(1e-9));
}

TEST_CASE("single-capacity data curves are recovered exactly") {
  std::vector<LossPoint> pts;
  const double e_prime = 3.1, b0 = 4.0e5, beta0 = 0.62;
  for (int i = 0; i < 12; ++i) {
    double d = 1e9 * std::pow(1.6, i);
    pts.push_back({1e9, d, e_prime + b0 / std::pow(d, beta0)});
  }
  DataCurveFit fit = fit_data_curve(pts);
  CHECK(rel_err(fit.e_prime, e_prime) < 1e-4);
  CHECK(rel_err(fit.b0, b0) < 1e-3);
  CHECK(rel_err(fit.beta0, beta0) < 1e-4);
  CHECK(fit.rmse < 1e-6);
}

TEST_CASE("scaling-law fit round trips noiseless data") {
  std::vector<LossPoint> pts = synthetic_surface(kConventional);
  ScalingFit fit = fit_scaling_law(pts);
  CHECK(fit.converged);
  CHECK(rel_err(fit.a_coef, kConventional.a_coef) < 0.05);
  CHECK(rel_err(fit.b_coef, kConventional.b_coef) < 0.05);
  CHECK(rel_err(fit.e_irr, kConventional.e_irr) < 0.05);
  CHECK(rel_err(fit.alpha, kConventional.alpha) < 0.05);
  CHECK(rel_err(fit.beta, kConventional.beta) < 0.05);
  for (const LossPoint& pt : pts) {
    CHECK(std::abs(predict_loss(fit, pt.n, pt.d) - pt.loss) < 0.005);
  }
}

TEST_CASE("fit is invariant to point order and jitter is reproducible") {
  std::vector<LossPoint> pts = synthetic_surface(kSelected);
  ScalingFit a = fit_scaling_law(pts);
  std::vector<LossPoint> reversed(pts.rbegin(), pts.rend());
  ScalingFit b = fit_scaling_law(reversed);
  CHECK(a.a_coef == doctest::Approx(b.a_coef).epsilon(1e-9));
  CHECK(a.objective == doctest::Approx(b.objective).epsilon(1e-12));

  ScalingFitOptions opt;
  opt.init_jitter = 0.2;
  opt.seed = 31;
  ScalingFit j1 = fit_scaling_law(pts, opt);
  ScalingFit j2 = fit_scaling_law(pts, opt);
  CHECK(j1.a_coef == j2.a_coef);
  CHECK(j1.objective == j2.objective);
}

TEST_CASE("auc is the plain sum of the loss curve") {
  CHECK(compute_auc(std::vector<double>{1.0, 1.0, 1.0}) == 3.0);
  CHECK(compute_auc(std::vector<double>{0.5, 0.25, 0.125}) ==
        doctest::Approx(0.875).epsilon(1e-15));
  std::vector<double> constant(11, 2.5);
  CHECK(compute_auc(constant) == doctest::Approx(27.5).epsilon(1e-15));
}

TEST_CASE("reducible power law round trips") {
  const double c_coef = 2.0, expo = 0.5, irr = 1.0;
  std::vector<double> losses(300);
  for (std::size_t i = 0; i < losses.size(); ++i) {
    double t = static_cast<double>(i + 1);
    losses[i] = c_coef / std::pow(t, expo) + irr;
  }
  PowerLawFit fit = fit_reducible_power_law(losses, 5);
  CHECK_FALSE(fit.flagged);
  CHECK(rel_err(fit.c_coef, c_coef) < 1e-4);
  CHECK(rel_err(fit.exponent, expo) < 1e-4);
  CHECK(rel_err(fit.irreducible, irr) < 1e-4);

  double auc = reducible_auc(fit, 10.0, 100.0);
  double want = c_coef / (1.0 - expo) *
                (std::pow(100.0, 1.0 - expo) - std::pow(10.0, 1.0 - expo));
  CHECK(auc == doctest::Approx(want).epsilon(1e-3));
}

TEST_CASE("increasing curves come back flagged") {
  std::vector<double> rising(100);
  for (std::size_t i = 0; i < rising.size(); ++i) rising[i] = 1.0 + 0.01 * static_cast<double>(i);
  PowerLawFit fit = fit_reducible_power_law(rising);
  CHECK(fit.flagged);
}

TEST_CASE("near-unit exponents integrate through the log branch") {
  PowerLawFit fit;
  fit.c_coef = 3.0;
  fit.exponent = 1.0;
  fit.irreducible = 0.0;
  double got = reducible_auc(fit, 2.0, 8.0);
  CHECK(got == doctest::Approx(3.0 * std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("flops accounting matches the published budget scale") {
  FlopsInputs in;
  in.pretrain_params = 1.7e9;
  in.pretrain_tokens = 50e9;
  in.proxy_params = 160e6;
  in.proxy_tokens = 1.64e8;
  in.scorer_params = 125e6;
  in.checkpoints = 5;
  FlopsBreakdown out = estimate_flops(in);

  CHECK(out.pretraining == doctest::Approx(5.1e20).epsilon(1e-9));
  CHECK(out.solver == doctest::Approx(6.0 * 160e6 * 50e9 + 24.0 * 5 * 160e6 * 1.64e8)
                          .epsilon(1e-12));
  CHECK(rel_err(out.solver, 0.49e20) < 0.10);
  CHECK(out.selection == 0.0);
  CHECK(out.total ==
        doctest::Approx(out.solver + out.scorer + out.selection + out.pretraining)
            .epsilon(1e-12));

  // Linear in each count holding the rest fixed.
  FlopsInputs doubled = in;
  doubled.checkpoints = 10;
  double delta = estimate_flops(doubled).solver - out.solver;
  CHECK(delta == doctest::Approx(24.0 * 5 * 160e6 * 1.64e8).epsilon(1e-9));

  FlopsInputs no_ckpt = in;
  no_ckpt.checkpoints = 0;
  CHECK(estimate_flops(no_ckpt).solver ==
        doctest::Approx(6.0 * 160e6 * 50e9).epsilon(1e-12));
}

TEST_CASE("scaling fit json round trip") {
  testutil::TempDir tmp("ocds_scaling");
  ScalingFit fit = kConventional;
  fit.objective = 1.25e-9;
  fit.iterations = 321;
  auto path = tmp.path() / "fit.json";
  save_scaling_fit(path, fit);
  ScalingFit back = load_scaling_fit(path);
  CHECK(back.a_coef == fit.a_coef);
  CHECK(back.b_coef == fit.b_coef);
  CHECK(back.e_irr == fit.e_irr);
  CHECK(back.alpha == fit.alpha);
  CHECK(back.beta == fit.beta);
  CHECK(back.objective == fit.objective);
  CHECK(back.iterations == fit.iterations);
  CHECK(back.converged == fit.converged);
}
