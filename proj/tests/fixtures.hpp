// Shared test helpers: tiny dataset builders, closed-form references for the
// quadratic model, an independently written Adam reference, and a scoped
// temporary directory.
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "ocds/model.hpp"
#include "ocds/rng.hpp"
#include "ocds/types.hpp"

namespace testutil {

inline ocds::Dataset value_dataset(const std::vector<std::vector<double>>& points,
                                   ocds::DatasetRole role = ocds::DatasetRole::kProxy) {
  ocds::Dataset d;
  d.role = role;
  for (std::size_t i = 0; i < points.size(); ++i) {
    ocds::Instance x;
    x.id = static_cast<std::int64_t>(i);
    x.values = points[i];
    d.instances.push_back(std::move(x));
  }
  return d;
}

inline ocds::Dataset token_dataset(const std::vector<std::vector<std::uint32_t>>& seqs,
                                   ocds::DatasetRole role = ocds::DatasetRole::kProxy) {
  ocds::Dataset d;
  d.role = role;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    ocds::Instance x;
    x.id = static_cast<std::int64_t>(i);
    x.tokens = seqs[i];
    d.instances.push_back(std::move(x));
  }
  return d;
}

inline std::vector<double> weighted_mean(const std::vector<std::vector<double>>& xs,
                                         const std::vector<double>& gamma) {
  std::vector<double> m(xs[0].size(), 0.0);
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = 0; j < m.size(); ++j) m[j] += gamma[i] * xs[i][j];
  return m;
}

inline std::vector<double> mean_point(const std::vector<std::vector<double>>& ys) {
  std::vector<double> m(ys[0].size(), 0.0);
  for (const auto& y : ys)
    for (std::size_t j = 0; j < m.size(); ++j) m[j] += y[j] / static_cast<double>(ys.size());
  return m;
}

// Full-batch GD on the gamma-weighted quadratic loss contracts toward the
// weighted mean: theta_t = xbar + (1 - eta)^t (theta_0 - xbar).
inline std::vector<double> quad_theta_t(const std::vector<std::vector<double>>& xs,
                                        const std::vector<double>& gamma,
                                        const std::vector<double>& theta0,
                                        double eta, int t) {
  std::vector<double> xbar = weighted_mean(xs, gamma);
  double decay = std::pow(1.0 - eta, static_cast<double>(t));
  std::vector<double> out(theta0.size());
  for (std::size_t j = 0; j < out.size(); ++j)
    out[j] = xbar[j] + decay * (theta0[j] - xbar[j]);
  return out;
}

// Co-state closed form for the same dynamics with downstream mean ybar:
// lambda_t = sum_{s=t}^{T} (1 - eta)^(s - t) (theta_s - ybar).
inline std::vector<double> quad_lambda_t(const std::vector<std::vector<double>>& xs,
                                         const std::vector<double>& gamma,
                                         const std::vector<double>& theta0,
                                         const std::vector<double>& ybar,
                                         double eta, int t, int horizon) {
  std::vector<double> out(theta0.size(), 0.0);
  for (int s = t; s <= horizon; ++s) {
    std::vector<double> th = quad_theta_t(xs, gamma, theta0, eta, s);
    double w = std::pow(1.0 - eta, static_cast<double>(s - t));
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += w * (th[j] - ybar[j]);
  }
  return out;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double l2_rel_err(const std::vector<double>& got, const std::vector<double>& want) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    num += (got[i] - want[i]) * (got[i] - want[i]);
    den += want[i] * want[i];
  }
  return std::sqrt(num) / std::sqrt(den);
}

inline bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) return false;
  }
  return true;
}

// Written straight from the published Adam update laws; shares no code with
// the library implementation.
struct ReferenceAdam {
  std::vector<double> m, v;
  long t = 0;
  double lr, b1, b2, e;

  ReferenceAdam(std::size_t dim, double lr_, double b1_, double b2_, double e_)
      : m(dim, 0.0), v(dim, 0.0), lr(lr_), b1(b1_), b2(b2_), e(e_) {}

  void step(std::vector<double>& theta, const std::vector<double>& g) {
    t += 1;
    double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * (g[j] * g[j]);
      double mh = m[j] / c1;
      double vh = v[j] / c2;
      theta[j] -= lr * mh / (std::sqrt(vh) + e);
    }
  }
};

// Random scratch directory under the system temp root, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    ocds::Rng rng(ocds::fnv1a64(tag) ^ static_cast<std::uint64_t>(
                                           std::chrono::steady_clock::now()
                                               .time_since_epoch()
                                               .count()));
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(rng.next_u64()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testutil
