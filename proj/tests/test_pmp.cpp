#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"
#include "fixtures.hpp"
#include "ocds/model.hpp"
#include "ocds/optim.hpp"
#include "ocds/oracle.hpp"
#include "ocds/pmp.hpp"
#include "ocds/types.hpp"
#include "ocds/vec.hpp"

using namespace ocds;

namespace {

const std::vector<std::vector<double>> kToyData{{0.0}, {1.0}, {2.5}};
const std::vector<std::vector<double>> kToyDownstream{{1.2}, {0.4}};

struct ToySetup {
  QuadraticModel model{1};
  Dataset data = testutil::value_dataset(kToyData);
  Dataset downstream =
      testutil::value_dataset(kToyDownstream, DatasetRole::kDownstream);
  std::vector<double> gamma{0.5, 0.3, 0.2};
  ParamVector theta0{3.0};
  double eta = 0.1;
};

}  // namespace

TEST_CASE("co-state boundary equals the final downstream gradient") {
  ToySetup s;
  OptimizerConfig opt;
  opt.eta = s.eta;
  Trajectory traj = train(s.model, s.data, s.gamma, s.theta0, 8, opt);
  CoStates cs = reverse_inner(s.model, s.data, s.gamma, traj, s.downstream, s.eta);
  REQUIRE(cs.horizon() == 8);
  ParamVector want = downstream_grad(s.model, s.downstream, traj.checkpoint(8));
  CHECK(testutil::bitwise_equal(cs.at(8), want));
}

TEST_CASE("single-step reverse pass holds only the boundary") {
  ToySetup s;
  OptimizerConfig opt;
  opt.eta = s.eta;
  Trajectory traj = train(s.model, s.data, s.gamma, s.theta0, 1, opt);
  CoStates cs = reverse_inner(s.model, s.data, s.gamma, traj, s.downstream, s.eta);
  REQUIRE(cs.horizon() == 1);
  ParamVector want = downstream_grad(s.model, s.downstream, traj.checkpoint(1));
  CHECK(testutil::bitwise_equal(cs.at(1), want));
}

TEST_CASE("trajectory and co-states match geometric closed forms") {
  ToySetup s;
  const int T = 50;
  OptimizerConfig opt;
  opt.eta = s.eta;
  Trajectory traj = train(s.model, s.data, s.gamma, s.theta0, T, opt);
  CoStates cs = reverse_inner(s.model, s.data, s.gamma, traj, s.downstream, s.eta);
  std::vector<double> ybar = testutil::mean_point(kToyDownstream);

  for (int t = 0; t <= T; ++t) {
    auto want = testutil::quad_theta_t(kToyData, s.gamma, s.theta0, s.eta, t);
    REQUIRE(testutil::max_abs_diff(traj.checkpoint(t), want) < 1e-12);
  }
  for (int t = 1; t <= T; ++t) {
    auto want =
        testutil::quad_lambda_t(kToyData, s.gamma, s.theta0, ybar, s.eta, t, T);
    REQUIRE(testutil::max_abs_diff(cs.at(t), want) < 1e-12);
  }
}

TEST_CASE("minimal downstream loss along the trajectory zeroes all co-states") {
  QuadraticModel model(2);
  Dataset data = testutil::value_dataset({{0.7, -0.2}});
  Dataset downstream =
      testutil::value_dataset({{0.7, -0.2}}, DatasetRole::kDownstream);
  std::vector<double> gamma{1.0};
  ParamVector theta0{0.7, -0.2};
  OptimizerConfig opt;
  opt.eta = 0.1;
  Trajectory traj = train(model, data, gamma, theta0, 6, opt);
  CoStates cs = reverse_inner(model, data, gamma, traj, downstream, opt.eta);
  for (int t = 1; t <= 6; ++t) {
    for (double x : cs.at(t)) REQUIRE(x == 0.0);
  }
}

TEST_CASE("scores vanish when co-states are orthogonal to instance gradients") {
  QuadraticModel model(2);
  Dataset data = testutil::value_dataset({{0.0, 0.0}, {1.0, 0.0}});
  std::vector<double> gamma{0.5, 0.5};
  ParamVector theta0{0.5, 0.0};
  OptimizerConfig opt;
  opt.eta = 0.1;
  Trajectory traj = train(model, data, gamma, theta0, 4, opt);
  // Second components stay zero, so instance gradients live in the first
  // coordinate; a co-state along the second coordinate is orthogonal.
  CoStates cs;
  cs.lam.assign(4, ParamVector{0.0, 1.0});
  std::vector<double> s = gamma_gradient(model, data, traj, cs);
  for (double v : s) CHECK(v == 0.0);
}

TEST_CASE("adjoint scores match the finite-difference objective gradient") {
  ToySetup s;
  const int T = 12;
  OptimizerConfig opt;
  opt.eta = s.eta;
  Trajectory traj = train(s.model, s.data, s.gamma, s.theta0, T, opt);
  CoStates cs = reverse_inner(s.model, s.data, s.gamma, traj, s.downstream, s.eta);
  std::vector<double> scores = gamma_gradient(s.model, s.data, traj, cs);

  std::vector<double> fd = fd_gamma_gradient(s.model, s.data, s.gamma, s.theta0,
                                             s.downstream, T, s.eta);
  std::vector<double> adj(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) adj[i] = -s.eta * scores[i];
  CHECK(testutil::l2_rel_err(adj, fd) < 1e-6);
}

TEST_CASE("strided scores scale the sampled step contributions") {
  ToySetup s;
  const int T = 9;
  OptimizerConfig opt;
  opt.eta = s.eta;
  Trajectory traj = train(s.model, s.data, s.gamma, s.theta0, T, opt);
  CoStates cs = reverse_inner(s.model, s.data, s.gamma, traj, s.downstream, s.eta);

  // Per-step contribution built directly from instance gradients.
  auto term = [&](int t, std::size_t n) {
    ParamVector g = instance_grad(s.model, s.data[n], traj.checkpoint(t));
    return dot(cs.at(t + 1), g);
  };
  std::vector<double> full = gamma_gradient(s.model, s.data, traj, cs, 1);
  std::vector<double> strided = gamma_gradient(s.model, s.data, traj, cs, 3);
  for (std::size_t n = 0; n < s.data.size(); ++n) {
    double want_full = 0.0;
    for (int t = 0; t < T; ++t) want_full += term(t, n);
    CHECK(full[n] == doctest::Approx(want_full).epsilon(1e-12));
    double want_strided = 0.0;
    for (int t = 0; t < T; t += 3) want_strided += 3.0 * term(t, n);
    CHECK(strided[n] == doctest::Approx(want_strided).epsilon(1e-12));
  }
}

TEST_CASE("reverse pass replays recorded mini-batches exactly") {
  BigramModel model(4);
  Dataset data = testutil::token_dataset({{1, 2, 3}, {3, 1}, {2, 0, 1}, {1, 1}, {2, 3}});
  Dataset downstream = testutil::token_dataset({{1, 2, 3, 1}}, DatasetRole::kDownstream);
  std::vector<double> gamma{0.3, 0.2, 0.2, 0.2, 0.1};
  const double eta = 0.05;
  const int T = 6;
  OptimizerConfig opt;
  opt.eta = eta;
  BatchConfig batch;
  batch.batch_size = 2;
  batch.seed = 13;
  ParamVector theta0(model.param_count(), 0.0);
  Trajectory traj = train(model, data, gamma, theta0, T, opt, batch);

  CoStates cs = reverse_inner(model, data, gamma, traj, downstream, eta,
                              HvpPath::kExact);

  // Manual recursion using the recorded batch metadata.
  const std::size_t n = data.size();
  ParamVector lam = downstream_grad(model, downstream, traj.checkpoint(T));
  REQUIRE(testutil::bitwise_equal(cs.at(T), lam));
  for (int t = T - 1; t >= 1; --t) {
    const auto& ids = traj.steps[static_cast<std::size_t>(t)].batch_ids;
    REQUIRE(!ids.empty());
    std::vector<double> weights(ids.size());
    double rescale = static_cast<double>(n) / static_cast<double>(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      weights[i] = gamma[static_cast<std::size_t>(ids[i])] * rescale;
    }
    ParamVector hv = weighted_hvp(model, data, ids, weights, traj.checkpoint(t),
                                  lam, HvpPath::kExact);
    ParamVector gj = downstream_grad(model, downstream, traj.checkpoint(t));
    ParamVector next(lam.size());
    for (std::size_t j = 0; j < lam.size(); ++j) {
      next[j] = lam[j] + (gj[j] - eta * hv[j]);
    }
    lam = std::move(next);
    REQUIRE(testutil::max_abs_diff(cs.at(t), lam) == 0.0);
  }
}

TEST_CASE("diverging co-states abort with the reverse step index") {
  ToySetup s;
  const double eta = 3.0;
  OptimizerConfig opt;
  opt.eta = eta;
  Trajectory traj = train(s.model, s.data, s.gamma, s.theta0, 60, opt);
  bool threw = false;
  try {
    reverse_inner(s.model, s.data, s.gamma, traj, s.downstream, eta);
  } catch (const NumericalError& e) {
    threw = true;
    CHECK(std::string(e.what()).find("reverse step") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("one projected outer step equals the oracle update") {
  ToySetup s;
  SolverConfig cfg;
  cfg.eta = s.eta;
  cfg.alpha = 0.05;
  cfg.inner_steps = 10;
  cfg.outer_epochs = 1;
  cfg.batch_size = 0;
  std::vector<double> gamma =
      pmp_solve(s.model, s.data, s.downstream, s.theta0, cfg);

  std::vector<double> uniform(s.data.size(), 1.0 / 3);
  std::vector<double> fd = fd_gamma_gradient(s.model, s.data, uniform, s.theta0,
                                             s.downstream, cfg.inner_steps, s.eta);
  std::vector<double> moved(uniform.size());
  for (std::size_t i = 0; i < moved.size(); ++i) {
    moved[i] = uniform[i] - (cfg.alpha / cfg.eta) * fd[i];
  }
  std::vector<double> want = project_simplex(moved);
  CHECK(testutil::max_abs_diff(gamma, want) < 1e-6);
}

TEST_CASE("solver output lives on the simplex and is deterministic") {
  ToySetup s;
  SolverConfig cfg;
  cfg.eta = s.eta;
  cfg.alpha = 0.5;
  cfg.inner_steps = 8;
  cfg.outer_epochs = 3;
  cfg.batch_size = 2;
  cfg.seed = 5;
  std::vector<double> a = pmp_solve(s.model, s.data, s.downstream, s.theta0, cfg);
  std::vector<double> b = pmp_solve(s.model, s.data, s.downstream, s.theta0, cfg);
  CHECK(testutil::bitwise_equal(a, b));
  CHECK(is_on_simplex(a));
}

TEST_CASE("zero outer epochs keep the uniform weights") {
  ToySetup s;
  SolverConfig cfg;
  cfg.eta = s.eta;
  cfg.inner_steps = 5;
  cfg.outer_epochs = 0;
  std::vector<double> gamma = pmp_solve(s.model, s.data, s.downstream, s.theta0, cfg);
  for (double g : gamma) CHECK(g == doctest::Approx(1.0 / 3).epsilon(1e-15));
}

TEST_CASE("solver concentrates weight on downstream-aligned data") {
  QuadraticModel model(1);
  Dataset data = testutil::value_dataset({{0.0}, {1.0}});
  Dataset downstream = testutil::value_dataset({{1.0}}, DatasetRole::kDownstream);
  SolverConfig cfg;
  cfg.eta = 0.1;
  cfg.alpha = 50.0;
  cfg.inner_steps = 5;
  cfg.outer_epochs = 1;
  cfg.batch_size = 0;
  std::vector<double> gamma =
      pmp_solve(model, data, downstream, ParamVector{0.0}, cfg);
  CHECK(gamma[1] > gamma[0]);
}

TEST_CASE("averaging identical checkpoint solves changes nothing") {
  ToySetup s;
  SolverConfig cfg;
  cfg.eta = s.eta;
  cfg.alpha = 0.4;
  cfg.inner_steps = 6;
  cfg.outer_epochs = 1;
  cfg.batch_size = 0;
  std::vector<double> single = pmp_solve(s.model, s.data, s.downstream, s.theta0, cfg);

  std::vector<ParamVector> reps{s.theta0, s.theta0, s.theta0};
  std::vector<double> avg =
      multi_checkpoint_scores(s.model, s.data, s.downstream, reps, cfg);
  CHECK(testutil::max_abs_diff(avg, single) < 1e-15);

  std::vector<ParamVector> one{s.theta0};
  std::vector<double> m1 =
      multi_checkpoint_scores(s.model, s.data, s.downstream, one, cfg);
  CHECK(testutil::bitwise_equal(m1, single));
}

TEST_CASE("auc objective closed cases") {
  QuadraticModel model(1);
  Dataset data = testutil::value_dataset({{1.0}});
  Dataset downstream = testutil::value_dataset({{1.0}}, DatasetRole::kDownstream);
  std::vector<double> gamma{1.0};
  // theta0 at the joint minimizer: every step stays put, A = T * J(theta0).
  AucValue a = auc_objective(model, data, gamma, ParamVector{1.0}, downstream, 7, 0.1);
  CHECK(a.value == doctest::Approx(7.0 * 0.0).epsilon(1e-15));

  Dataset data2 = testutil::value_dataset({{0.0}, {2.0}});
  Dataset down2 = testutil::value_dataset({{1.0}}, DatasetRole::kDownstream);
  std::vector<double> g2{0.5, 0.5};
  AucValue a2 = auc_objective(model, data2, g2, ParamVector{1.0}, down2, 5, 0.2);
  CHECK(a2.value == doctest::Approx(0.0).epsilon(1e-15));

  // Permuting data together with gamma leaves the objective unchanged.
  Dataset perm = testutil::value_dataset({{2.0}, {0.0}});
  std::vector<double> gp{0.5, 0.5};
  AucValue a3 = auc_objective(model, perm, gp, ParamVector{1.0}, down2, 5, 0.2);
  CHECK(a3.value == a2.value);

  Dataset data3 = testutil::value_dataset({{0.0}, {3.0}});
  std::vector<double> g3{0.75, 0.25};
  AucValue a4 = auc_objective(model, data3, g3, ParamVector{2.0}, down2, 9, 0.1);
  std::vector<double> g3p{0.25, 0.75};
  Dataset data3p = testutil::value_dataset({{3.0}, {0.0}});
  AucValue a5 = auc_objective(model, data3p, g3p, ParamVector{2.0}, down2, 9, 0.1);
  CHECK(a4.value == a5.value);
  CHECK(a4.config_digest != a5.config_digest);
}
