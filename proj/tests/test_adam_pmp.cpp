#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"
#include "fixtures.hpp"
#include "ocds/model.hpp"
#include "ocds/optim.hpp"
#include "ocds/oracle.hpp"
#include "ocds/pmp.hpp"
#include "ocds/rng.hpp"
#include "ocds/types.hpp"
#include "ocds/vec.hpp"

using namespace ocds;

namespace {

struct AdamSetup {
  BigramModel model{4};
  Dataset data = testutil::token_dataset(
      {{1, 2, 3, 1}, {3, 3, 2}, {2, 1}, {1, 2, 2, 3}, {3, 1, 1}, {2, 3, 1}});
  Dataset downstream = testutil::token_dataset({{1, 2, 3}, {1, 2, 1}},
                                               DatasetRole::kDownstream);
  std::vector<double> gamma = uniform_weights(6);
  AdamConfig adam;
  double eta = 0.02;

  Trajectory run(int steps) const {
    OptimizerConfig opt;
    opt.kind = OptimizerKind::kAdam;
    opt.eta = eta;
    opt.adam = adam;
    ParamVector theta0(model.param_count(), 0.0);
    return train(model, data, gamma, theta0, steps, opt);
  }
};

}  // namespace

TEST_CASE("adam reverse boundary blocks") {
  AdamSetup s;
  Trajectory traj = s.run(6);
  AdamCoStates cs = reverse_inner_adam(s.model, s.data, s.gamma, traj,
                                       s.downstream, s.eta, s.adam);
  REQUIRE(cs.l1.size() == 6);
  ParamVector want = downstream_grad(s.model, s.downstream, traj.checkpoint(6));
  CHECK(testutil::bitwise_equal(cs.l1.back(), want));
  for (double x : cs.l2.back()) CHECK(x == 0.0);
  for (double x : cs.l3.back()) CHECK(x == 0.0);
}

TEST_CASE("second-moment co-state never feeds the scores") {
  AdamSetup s;
  Trajectory traj = s.run(8);
  AdamCoStates with = reverse_inner_adam(s.model, s.data, s.gamma, traj,
                                         s.downstream, s.eta, s.adam,
                                         HvpPath::kExact, true);
  AdamCoStates without = reverse_inner_adam(s.model, s.data, s.gamma, traj,
                                            s.downstream, s.eta, s.adam,
                                            HvpPath::kExact, false);
  for (std::size_t t = 0; t < with.l1.size(); ++t) {
    REQUIRE(testutil::bitwise_equal(with.l1[t], without.l1[t]));
    REQUIRE(testutil::bitwise_equal(with.l2[t], without.l2[t]));
  }
  std::vector<double> sa = gamma_gradient_adam(s.model, s.data, traj, with,
                                               s.eta, s.adam);
  std::vector<double> sb = gamma_gradient_adam(s.model, s.data, traj, without,
                                               s.eta, s.adam);
  CHECK(testutil::bitwise_equal(sa, sb));
}

namespace {

// Markov sequence favoring i -> i+1 (mod vocab); p is the follow probability.
std::vector<std::uint32_t> chain_seq(Rng& rng, std::size_t len,
                                     std::size_t vocab, double p) {
  std::vector<std::uint32_t> s(len);
  s[0] = static_cast<std::uint32_t>(rng.next_below(vocab));
  for (std::size_t i = 1; i < len; ++i) {
    if (rng.next_unit_open() < p) {
      s[i] = static_cast<std::uint32_t>((s[i - 1] + 1) % vocab);
    } else {
      s[i] = static_cast<std::uint32_t>(rng.next_below(vocab));
    }
  }
  return s;
}

}  // namespace

// The second-moment channel is frozen in the reverse pass, so only sign-level
// agreement with the finite-difference gradient holds. The fixture keeps
// denominators well conditioned: random theta0 (no exact-zero gradients) and
// a short horizon (no deep convergence). Half the proxy follows the
// downstream chain distribution, half is uniform noise, so gradient
// coordinates are decisively signed.
TEST_CASE("adam score signs track the finite-difference gradient") {
  const std::size_t V = 6, n = 12, len = 10;
  const double eta = 0.02;
  const int T = 20;
  AdamConfig adam;
  adam.beta1 = 0.5;
  adam.beta2 = 0.5;
  adam.eps = 1e-8;

  Rng rng(26 * 7);
  Dataset data;
  data.role = DatasetRole::kProxy;
  for (std::size_t i = 0; i < n; ++i) {
    Instance x;
    x.id = static_cast<std::int64_t>(i);
    if (i % 2 == 0) {
      x.tokens = chain_seq(rng, len, V, 0.9);
    } else {
      x.tokens.resize(len);
      for (auto& t : x.tokens) t = static_cast<std::uint32_t>(rng.next_below(V));
    }
    data.instances.push_back(x);
  }
  Dataset downstream;
  downstream.role = DatasetRole::kDownstream;
  for (std::size_t i = 0; i < 6; ++i) {
    Instance x;
    x.id = static_cast<std::int64_t>(i);
    x.tokens = data[2 * i].tokens;
    downstream.instances.push_back(x);
  }
  std::vector<double> gamma = uniform_weights(n);
  ParamVector theta0(V * V);
  for (auto& p : theta0) p = 0.8 * rng.next_unit_open() - 0.4;
  BigramModel model(V);

  OptimizerConfig opt;
  opt.kind = OptimizerKind::kAdam;
  opt.eta = eta;
  opt.adam = adam;
  Trajectory traj = train(model, data, gamma, theta0, T, opt);
  AdamCoStates cs = reverse_inner_adam(model, data, gamma, traj, downstream,
                                       eta, adam, HvpPath::kExact);
  std::vector<double> scores =
      gamma_gradient_adam(model, data, traj, cs, eta, adam);
  std::vector<double> fd = fd_gamma_gradient_adam(
      model, data, gamma, theta0, downstream, T, eta, adam, 1e-4);
  int agree = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if ((scores[i] > 0) == (fd[i] > 0)) ++agree;
  }
  CHECK(agree >= 11);
}

TEST_CASE("unused parameter rows keep the adam reverse pass finite") {
  BigramModel model(4);
  // Row 3 of the logit matrix is never touched: token 3 absent.
  Dataset data = testutil::token_dataset({{1, 2, 1}, {2, 2}, {1, 1, 2}});
  Dataset downstream = testutil::token_dataset({{1, 2}}, DatasetRole::kDownstream);
  std::vector<double> gamma = uniform_weights(3);
  OptimizerConfig opt;
  opt.kind = OptimizerKind::kAdam;
  opt.eta = 0.02;
  ParamVector theta0(model.param_count(), 0.0);
  Trajectory traj = train(model, data, gamma, theta0, 5, opt);

  for (const auto& vh : traj.vhat) {
    bool any_zero = false;
    for (double v : vh) any_zero = any_zero || v == 0.0;
    REQUIRE(any_zero);
  }
  AdamCoStates cs = reverse_inner_adam(model, data, gamma, traj, downstream,
                                       opt.eta, opt.adam);
  for (std::size_t t = 0; t < cs.l1.size(); ++t) {
    REQUIRE(all_finite(cs.l1[t]));
    REQUIRE(all_finite(cs.l2[t]));
    REQUIRE(all_finite(cs.l3[t]));
  }
  std::vector<double> scores =
      gamma_gradient_adam(model, data, traj, cs, opt.eta, opt.adam);
  for (double v : scores) REQUIRE(std::isfinite(v));
}

TEST_CASE("adam solver is deterministic and simplex-feasible") {
  AdamSetup s;
  SolverConfig cfg;
  cfg.eta = s.eta;
  cfg.alpha = 0.3;
  cfg.inner_steps = 6;
  cfg.outer_epochs = 2;
  cfg.batch_size = 0;
  ParamVector theta0(s.model.param_count(), 0.0);
  std::vector<double> a =
      pmp_solve_adam(s.model, s.data, s.downstream, theta0, cfg, s.adam);
  std::vector<double> b =
      pmp_solve_adam(s.model, s.data, s.downstream, theta0, cfg, s.adam);
  CHECK(testutil::bitwise_equal(a, b));
  CHECK(is_on_simplex(a));
}

TEST_CASE("reverse pass requires recorded moments") {
  AdamSetup s;
  OptimizerConfig opt;
  opt.kind = OptimizerKind::kGd;
  opt.eta = s.eta;
  ParamVector theta0(s.model.param_count(), 0.0);
  Trajectory gd_traj = train(s.model, s.data, s.gamma, theta0, 4, opt);
  CHECK_THROWS_AS(reverse_inner_adam(s.model, s.data, s.gamma, gd_traj,
                                     s.downstream, s.eta, s.adam),
                  ConfigError);
}
